//! JSON document schemas and their conversions to library types.
//!
//! Matrices are row-major nested arrays.  A network document lists nodes
//! (roots carry a `prior`, others a `noise_cov`), links with their
//! matrices, and observed values.  A filter document carries the system
//! model — one object, or an array with one entry per step — the initial
//! estimate, per-step control inputs, and per-step sensor readings.

use anyhow::{bail, ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use vgbn::{
    Gaussian, ModelSequence, NetworkSpec, NodeId, NodeKind, Reading, Sensor, StepData, SystemModel,
};

// ---------------------------------------------------------------------------
// network documents

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<EvidenceDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<GaussianDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianDoc {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub from: String,
    pub to: String,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceDoc {
    pub node: String,
    pub value: Vec<f64>,
}

/// Checks that `rows` forms a proper rectangular matrix.
fn check_matrix(rows: &[Vec<f64>], what: &str) -> Result<()> {
    ensure!(!rows.is_empty(), "{what}: matrix has no rows");
    let c = rows[0].len();
    ensure!(c > 0, "{what}: matrix row 0 is empty");
    for (i, row) in rows.iter().enumerate() {
        ensure!(
            row.len() == c,
            "{what}: row {i} has {} entries but row 0 has {c}",
            row.len()
        );
        ensure!(
            row.iter().all(|x| x.is_finite()),
            "{what}: row {i} contains a non-finite number"
        );
    }
    Ok(())
}

fn check_vector(v: &[f64], what: &str) -> Result<()> {
    ensure!(!v.is_empty(), "{what}: vector is empty");
    ensure!(
        v.iter().all(|x| x.is_finite()),
        "{what}: vector contains a non-finite number"
    );
    Ok(())
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl GaussianDoc {
    fn check(&self, what: &str) -> Result<()> {
        check_vector(&self.mean, what)?;
        check_matrix(&self.cov, what)
    }

    pub fn to_gaussian(&self) -> Result<Gaussian> {
        self.check("distribution")?;
        Ok(Gaussian::new(
            DVector::from_vec(self.mean.clone()),
            to_matrix(&self.cov),
        )?)
    }

    pub fn from_gaussian(g: &Gaussian) -> GaussianDoc {
        GaussianDoc {
            mean: g.mean().iter().copied().collect(),
            cov: from_matrix(g.cov()),
        }
    }
}

impl NetworkDocument {
    /// Structural well-formedness: every matrix rectangular, every vector
    /// nonempty, all numbers finite.  Failures here are parse errors, not
    /// network-validation findings.
    pub fn check_well_formed(&self) -> Result<()> {
        for n in &self.nodes {
            if let Some(p) = &n.prior {
                p.check(&format!("prior of `{}`", n.id))?;
            }
            if let Some(q) = &n.noise_cov {
                check_matrix(q, &format!("noise_cov of `{}`", n.id))?;
            }
        }
        for l in &self.links {
            check_matrix(
                &l.matrix,
                &format!("matrix of link `{}` -> `{}`", l.from, l.to),
            )?;
        }
        for e in &self.evidence {
            check_vector(&e.value, &format!("evidence on `{}`", e.node))?;
        }
        Ok(())
    }

    /// Builds the network.  Errors here describe semantic problems in an
    /// otherwise well-formed document.
    pub fn to_network(&self) -> Result<NetworkSpec> {
        let mut net = NetworkSpec::new();
        for n in &self.nodes {
            match (&n.prior, &n.noise_cov) {
                (Some(p), None) => {
                    let g = p
                        .to_gaussian()
                        .with_context(|| format!("prior of `{}`", n.id))?;
                    ensure!(
                        g.dim() == n.dim,
                        "node `{}` declares dim {} but its prior has dimension {}",
                        n.id,
                        n.dim,
                        g.dim()
                    );
                    net.add_root(n.id.clone(), g)
                        .with_context(|| format!("node `{}`", n.id))?;
                }
                (None, Some(q)) => {
                    let m = to_matrix(q);
                    ensure!(
                        m.nrows() == n.dim && m.ncols() == n.dim,
                        "node `{}` declares dim {} but its noise_cov is {}x{}",
                        n.id,
                        n.dim,
                        m.nrows(),
                        m.ncols()
                    );
                    net.add_internal(n.id.clone(), m)
                        .with_context(|| format!("node `{}`", n.id))?;
                }
                (Some(_), Some(_)) => {
                    bail!("node `{}` has both a prior and a noise_cov", n.id)
                }
                (None, None) => {
                    bail!("node `{}` has neither a prior nor a noise_cov", n.id)
                }
            }
        }
        for l in &self.links {
            net.add_link(l.from.clone(), l.to.clone(), to_matrix(&l.matrix))
                .with_context(|| format!("link `{}` -> `{}`", l.from, l.to))?;
        }
        let mut out = net;
        for e in &self.evidence {
            out = out
                .attach_evidence(
                    &NodeId::from(e.node.as_str()),
                    DVector::from_vec(e.value.clone()),
                )
                .with_context(|| format!("evidence on `{}`", e.node))?;
        }
        Ok(out)
    }

    /// Inverse of [`to_network`], with nodes, links, and evidence in id
    /// order.  Only networks whose internal nodes carry no offsets — i.e.
    /// anything built from a document — can be written back.
    pub fn from_network(net: &NetworkSpec) -> Result<NetworkDocument> {
        let mut nodes = Vec::new();
        for id in net.node_ids() {
            let node = net.node(id).expect("listed id resolves");
            let (prior, noise_cov) = match &node.kind {
                NodeKind::Root { prior } => (Some(GaussianDoc::from_gaussian(prior)), None),
                NodeKind::Internal { noise_cov, offset } => {
                    ensure!(
                        offset.iter().all(|x| *x == 0.0),
                        "node `{id}` carries an offset, which the document format cannot express"
                    );
                    (None, Some(from_matrix(noise_cov)))
                }
            };
            nodes.push(NodeDoc {
                id: id.to_string(),
                dim: node.dim(),
                prior,
                noise_cov,
            });
        }
        let links = net
            .links()
            .map(|l| LinkDoc {
                from: l.from.to_string(),
                to: l.to.to_string(),
                matrix: from_matrix(&l.matrix),
            })
            .collect();
        let evidence = net
            .node_ids()
            .filter_map(|id| {
                net.evidence(id).map(|z| EvidenceDoc {
                    node: id.to_string(),
                    value: z.iter().copied().collect(),
                })
            })
            .collect();
        Ok(NetworkDocument {
            nodes,
            links,
            evidence,
        })
    }
}

// ---------------------------------------------------------------------------
// filter documents

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterDocument {
    pub model: ModelSection,
    pub init: GaussianDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub measurements: Vec<Vec<MeasurementDoc>>,
}

/// One model reused for every step, or an explicit per-step list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSection {
    Constant(ModelDoc),
    PerStep(Vec<ModelDoc>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub sensors: Vec<SensorDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorDoc {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementDoc {
    pub sensor_index: usize,
    pub z: Vec<f64>,
}

impl ModelDoc {
    fn check(&self, what: &str) -> Result<()> {
        check_matrix(&self.f, &format!("{what}: F"))?;
        if let Some(g) = &self.g {
            check_matrix(g, &format!("{what}: G"))?;
        }
        check_matrix(&self.q, &format!("{what}: Q"))?;
        for (i, s) in self.sensors.iter().enumerate() {
            check_matrix(&s.h, &format!("{what}: sensor {i} H"))?;
            check_matrix(&s.r, &format!("{what}: sensor {i} R"))?;
        }
        Ok(())
    }

    fn to_model(&self) -> Result<SystemModel> {
        let sensors = self
            .sensors
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Sensor::new(to_matrix(&s.h), to_matrix(&s.r)).with_context(|| format!("sensor {i}"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SystemModel::new(
            to_matrix(&self.f),
            self.g.as_ref().map(|g| to_matrix(g)),
            to_matrix(&self.q),
            sensors,
        )?)
    }
}

impl FilterDocument {
    /// Structural well-formedness of every matrix and vector; failures
    /// are parse errors.
    pub fn check_well_formed(&self) -> Result<()> {
        match &self.model {
            ModelSection::Constant(m) => m.check("model")?,
            ModelSection::PerStep(ms) => {
                ensure!(!ms.is_empty(), "model: per-step list is empty");
                for (k, m) in ms.iter().enumerate() {
                    m.check(&format!("model[{k}]"))?;
                }
            }
        }
        self.init.check("init")?;
        for (k, u) in self.inputs.iter().enumerate() {
            check_vector(u, &format!("inputs[{k}]"))?;
        }
        for (k, ms) in self.measurements.iter().enumerate() {
            for (i, m) in ms.iter().enumerate() {
                check_vector(&m.z, &format!("measurements[{k}][{i}]"))?;
            }
        }
        Ok(())
    }

    pub fn model_sequence(&self) -> Result<ModelSequence> {
        match &self.model {
            ModelSection::Constant(m) => Ok(ModelSequence::Constant(m.to_model()?)),
            ModelSection::PerStep(ms) => Ok(ModelSequence::PerStep(
                ms.iter()
                    .enumerate()
                    .map(|(k, m)| m.to_model().with_context(|| format!("model[{k}]")))
                    .collect::<Result<Vec<_>>>()?,
            )),
        }
    }

    pub fn initial(&self) -> Result<Gaussian> {
        self.init.to_gaussian().context("init")
    }

    pub fn controls(&self) -> Vec<DVector<f64>> {
        self.inputs
            .iter()
            .map(|u| DVector::from_vec(u.clone()))
            .collect()
    }

    /// Number of steps the document describes: inputs and measurements
    /// must agree when both are present.
    pub fn step_count(&self) -> Result<usize> {
        if !self.inputs.is_empty() && !self.measurements.is_empty() {
            ensure!(
                self.inputs.len() == self.measurements.len(),
                "{} inputs but {} measurement steps",
                self.inputs.len(),
                self.measurements.len()
            );
        }
        Ok(self.inputs.len().max(self.measurements.len()))
    }

    /// Assembles the per-step filter inputs, checking every shape against
    /// the step's model so problems carry their step index.
    pub fn steps(&self, seq: &ModelSequence) -> Result<Vec<StepData>> {
        let n = self.step_count()?;
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let model = seq.at(k).with_context(|| format!("step {k}"))?;
            let control = match (model.control_dim(), self.inputs.get(k)) {
                (Some(c), Some(u)) => {
                    ensure!(
                        u.len() == c,
                        "step {k}: input has length {} but G has {c} columns",
                        u.len()
                    );
                    Some(DVector::from_vec(u.clone()))
                }
                (Some(_), None) => {
                    bail!("step {k}: the model has a control matrix but no input is given")
                }
                (None, Some(_)) => {
                    bail!("step {k}: an input is given but the model has no control matrix")
                }
                (None, None) => None,
            };
            let mut readings = Vec::new();
            for (i, m) in self.measurements.get(k).into_iter().flatten().enumerate() {
                let sensor = model.sensors().get(m.sensor_index).with_context(|| {
                    format!(
                        "step {k}: reading {i} names sensor {} but the model has {}",
                        m.sensor_index,
                        model.sensors().len()
                    )
                })?;
                ensure!(
                    m.z.len() == sensor.dim(),
                    "step {k}: reading {i} has length {} but sensor {} measures {}",
                    m.z.len(),
                    m.sensor_index,
                    sensor.dim()
                );
                readings.push(Reading {
                    sensor_index: m.sensor_index,
                    value: DVector::from_vec(m.z.clone()),
                });
            }
            out.push(StepData { control, readings });
        }
        Ok(out)
    }
}
