//! Linear-Gaussian state estimation over time.
//!
//! A time step of the classic filter is a two-node slice of the same
//! model family the rest of the crate handles: the transition
//! `x_{k+1} = F x_k + G u_k + w` is a linear child, each sensor
//! `y_i = H_i x + v_i` an observed leaf.  The prediction is therefore a
//! plain linear marginalization, and the measurement update comes in the
//! same two flavors as network inference: a decentralized form that fuses
//! per-sensor potentials exactly as message propagation would, and a
//! centralized form that stacks all sensors into one observation and
//! applies the Joseph-stabilized gain update.  Both produce identical
//! posteriors; keeping them side by side makes that checkable.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::gaussian::{self, Gaussian, InfoForm};
use crate::linalg::{self, SpdFactor, PSD_TOL, SYM_TOL};
use crate::propagation;
use crate::{Error, Real, Result};

/// One sensor: `y = H x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensor<T = f64> {
    h: DMatrix<T>,
    noise_cov: DMatrix<T>,
}

impl<T: Real> Sensor<T> {
    pub fn new(h: DMatrix<T>, noise_cov: DMatrix<T>) -> Result<Self> {
        let m = h.nrows();
        if m == 0 {
            return Err(Error::EmptyDimension);
        }
        if noise_cov.nrows() != m || noise_cov.ncols() != m {
            return Err(Error::DimMismatch {
                expected: m,
                got: noise_cov.nrows().max(noise_cov.ncols()),
            });
        }
        if !linalg::all_finite_mat(&h) || !linalg::all_finite_mat(&noise_cov) {
            return Err(Error::NonFinite);
        }
        if !linalg::is_symmetric(&noise_cov, SYM_TOL) {
            return Err(Error::NotSymmetric);
        }
        linalg::check_psd(&noise_cov, PSD_TOL)?;
        Ok(Sensor {
            h,
            noise_cov: linalg::symmetrize(&noise_cov),
        })
    }

    pub fn h(&self) -> &DMatrix<T> {
        &self.h
    }

    pub fn noise_cov(&self) -> &DMatrix<T> {
        &self.noise_cov
    }

    /// Measurement dimension.
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

/// One step of the system: transition `x' = F x + G u + w`, `w ~ N(0, Q)`,
/// observed by a bank of sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel<T = f64> {
    f: DMatrix<T>,
    g: Option<DMatrix<T>>,
    q: DMatrix<T>,
    sensors: Vec<Sensor<T>>,
}

impl<T: Real> SystemModel<T> {
    pub fn new(
        f: DMatrix<T>,
        g: Option<DMatrix<T>>,
        q: DMatrix<T>,
        sensors: Vec<Sensor<T>>,
    ) -> Result<Self> {
        let d = f.nrows();
        if d == 0 {
            return Err(Error::EmptyDimension);
        }
        if f.ncols() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: f.ncols(),
            });
        }
        if q.nrows() != d || q.ncols() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: q.nrows().max(q.ncols()),
            });
        }
        if !linalg::all_finite_mat(&f) || !linalg::all_finite_mat(&q) {
            return Err(Error::NonFinite);
        }
        if let Some(g) = &g {
            if g.nrows() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: g.nrows(),
                });
            }
            if g.ncols() == 0 {
                return Err(Error::EmptyDimension);
            }
            if !linalg::all_finite_mat(g) {
                return Err(Error::NonFinite);
            }
        }
        if !linalg::is_symmetric(&q, SYM_TOL) {
            return Err(Error::NotSymmetric);
        }
        linalg::check_psd(&q, PSD_TOL)?;
        for s in &sensors {
            if s.h.ncols() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: s.h.ncols(),
                });
            }
        }
        Ok(SystemModel {
            f,
            g,
            q: linalg::symmetrize(&q),
            sensors,
        })
    }

    pub fn f(&self) -> &DMatrix<T> {
        &self.f
    }

    pub fn g(&self) -> Option<&DMatrix<T>> {
        self.g.as_ref()
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn sensors(&self) -> &[Sensor<T>] {
        &self.sensors
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn control_dim(&self) -> Option<usize> {
        self.g.as_ref().map(|g| g.ncols())
    }
}

/// Model per step: either one model reused forever or an explicit list.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSequence<T = f64> {
    Constant(SystemModel<T>),
    PerStep(Vec<SystemModel<T>>),
}

impl<T: Real> ModelSequence<T> {
    /// Model governing the transition into step `k` (zero-based).
    pub fn at(&self, k: usize) -> Result<&SystemModel<T>> {
        match self {
            ModelSequence::Constant(m) => Ok(m),
            ModelSequence::PerStep(v) => v.get(k).ok_or(Error::SequenceMismatch {
                expected: v.len(),
                got: k,
            }),
        }
    }

    pub fn state_dim(&self) -> Option<usize> {
        match self {
            ModelSequence::Constant(m) => Some(m.state_dim()),
            ModelSequence::PerStep(v) => v.first().map(|m| m.state_dim()),
        }
    }
}

/// One sensor reading: which sensor of the step's bank fired, and what it
/// reported.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading<T = f64> {
    pub sensor_index: usize,
    pub value: DVector<T>,
}

/// Inputs consumed by one filter step.  The readings may cover any subset
/// of the model's sensors; an empty list makes the step a pure prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct StepData<T = f64> {
    pub control: Option<DVector<T>>,
    pub readings: Vec<Reading<T>>,
}

/// Filter estimate after `k` completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T = f64> {
    pub k: usize,
    pub estimate: Gaussian<T>,
}

/// How the measurement update fuses the sensor bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Centralized,
    Decentralized,
}

/// Time update: `x' ~ N(F x̂ + G u, F P Fᵀ + Q)`.
pub fn predict<T: Real>(
    model: &SystemModel<T>,
    prior: &Gaussian<T>,
    control: Option<&DVector<T>>,
) -> Result<Gaussian<T>> {
    if prior.dim() != model.state_dim() {
        return Err(Error::DimMismatch {
            expected: model.state_dim(),
            got: prior.dim(),
        });
    }
    let moved = gaussian::marginalize_linear(&[(&model.f, prior)], &model.q)?;
    match (&model.g, control) {
        (Some(g), Some(u)) => {
            if u.len() != g.ncols() {
                return Err(Error::DimMismatch {
                    expected: g.ncols(),
                    got: u.len(),
                });
            }
            Ok(moved.translate(&(g * u)))
        }
        (None, None) => Ok(moved),
        (Some(g), None) => Err(Error::DimMismatch {
            expected: g.ncols(),
            got: 0,
        }),
        (None, Some(u)) => Err(Error::DimMismatch {
            expected: 0,
            got: u.len(),
        }),
    }
}

/// Measurement update in decentralized form: each reading `(sensor, z)`
/// becomes a potential over the state, the potentials are fused by
/// summation, and the result is combined with the prediction exactly as a
/// node combines its `π` with its children's `λ`.  No readings means no
/// information: the prediction is returned unchanged.
///
/// Requires an invertible predicted covariance; a degenerate prediction
/// is reported as `SingularPriorCovariance`.
pub fn update_decentralized<T: Real>(
    predicted: &Gaussian<T>,
    readings: &[(&Sensor<T>, &DVector<T>)],
) -> Result<Gaussian<T>> {
    check_readings(predicted, readings)?;
    if readings.is_empty() {
        return Ok(predicted.clone());
    }
    let d = predicted.dim();
    let mut terms: Vec<InfoForm<T>> = Vec::with_capacity(readings.len());
    for (s, z) in readings {
        let reading = Gaussian::new((*z).clone(), s.noise_cov.clone())?;
        terms.push(gaussian::pullback(
            &s.h,
            &reading,
            &DVector::zeros(s.dim()),
        )?);
    }
    let lam = gaussian::info_product(d, &terms)?;
    propagation::belief_precision_form(predicted, &lam).map_err(|e| match e {
        Error::SingularCovariance => Error::SingularPriorCovariance,
        other => other,
    })
}

/// Measurement update in centralized form, on an already-stacked
/// observation `z = H x + v`, `v ~ N(0, R)`: gain `K = P Hᵀ S⁻¹` with
/// `S = H P Hᵀ + R`, and the Joseph-form covariance
/// `(I−KH) P (I−KH)ᵀ + K R Kᵀ`.  A zero-row observation returns the
/// prediction unchanged.
pub fn update_centralized<T: Real>(
    predicted: &Gaussian<T>,
    h: &DMatrix<T>,
    r: &DMatrix<T>,
    z: &DVector<T>,
) -> Result<Gaussian<T>> {
    let d = predicted.dim();
    if h.ncols() != d {
        return Err(Error::DimMismatch {
            expected: d,
            got: h.ncols(),
        });
    }
    let m = h.nrows();
    if r.nrows() != m || r.ncols() != m {
        return Err(Error::DimMismatch {
            expected: m,
            got: r.nrows().max(r.ncols()),
        });
    }
    if z.len() != m {
        return Err(Error::DimMismatch {
            expected: m,
            got: z.len(),
        });
    }
    if m == 0 {
        return Ok(predicted.clone());
    }

    let p = predicted.cov();
    let s = linalg::symmetrize(&(h * p * h.transpose() + r));
    let f = SpdFactor::new(&s).ok_or(Error::SingularInnovationCovariance)?;
    let k = f.solve_mat(&(h * p)).transpose();
    let mean = predicted.mean() + &k * (z - h * predicted.mean());
    let i_kh = DMatrix::identity(d, d) - &k * h;
    let cov = linalg::symmetrize(&(&i_kh * p * i_kh.transpose() + &k * r * k.transpose()));
    Gaussian::new(mean, cov)
}

/// Stacks readings into one observation: block rows of `H`, a
/// block-diagonal `R`, and the concatenated values, ready for
/// [`update_centralized`].
pub fn stack_readings<T: Real>(
    state_dim: usize,
    readings: &[(&Sensor<T>, &DVector<T>)],
) -> Result<(DMatrix<T>, DMatrix<T>, DVector<T>)> {
    let mut m = 0;
    for (s, z) in readings {
        if s.h.ncols() != state_dim {
            return Err(Error::DimMismatch {
                expected: state_dim,
                got: s.h.ncols(),
            });
        }
        if z.len() != s.dim() {
            return Err(Error::DimMismatch {
                expected: s.dim(),
                got: z.len(),
            });
        }
        m += s.dim();
    }
    let mut h = DMatrix::zeros(m, state_dim);
    let mut r = DMatrix::zeros(m, m);
    let mut z = DVector::zeros(m);
    let mut row = 0;
    for (s, value) in readings {
        let mi = s.dim();
        h.view_mut((row, 0), (mi, state_dim)).copy_from(&s.h);
        r.view_mut((row, row), (mi, mi)).copy_from(&s.noise_cov);
        z.rows_mut(row, mi).copy_from(*value);
        row += mi;
    }
    Ok((h, r, z))
}

fn check_readings<T: Real>(
    predicted: &Gaussian<T>,
    readings: &[(&Sensor<T>, &DVector<T>)],
) -> Result<()> {
    for (s, z) in readings {
        if s.h.ncols() != predicted.dim() {
            return Err(Error::DimMismatch {
                expected: predicted.dim(),
                got: s.h.ncols(),
            });
        }
        if z.len() != s.dim() {
            return Err(Error::DimMismatch {
                expected: s.dim(),
                got: z.len(),
            });
        }
    }
    Ok(())
}

/// Resolves a step's indexed readings against the model's sensor bank.
fn resolve_readings<'a, T: Real>(
    model: &'a SystemModel<T>,
    readings: &'a [Reading<T>],
) -> Result<Vec<(&'a Sensor<T>, &'a DVector<T>)>> {
    readings
        .iter()
        .map(|r| {
            let s = model
                .sensors
                .get(r.sensor_index)
                .ok_or(Error::SequenceMismatch {
                    expected: model.sensors.len(),
                    got: r.sensor_index,
                })?;
            Ok((s, &r.value))
        })
        .collect()
}

/// Runs predict/update over all steps, returning the posterior after
/// every step.
pub fn run_filter<T: Real>(
    seq: &ModelSequence<T>,
    init: &Gaussian<T>,
    steps: &[StepData<T>],
    mode: UpdateMode,
) -> Result<Vec<FilterState<T>>> {
    let mut states = Vec::with_capacity(steps.len());
    let mut estimate = init.clone();
    for (k, step) in steps.iter().enumerate() {
        let model = seq.at(k)?;
        let predicted = predict(model, &estimate, step.control.as_ref())?;
        let readings = resolve_readings(model, &step.readings)?;
        estimate = match mode {
            UpdateMode::Centralized => {
                let (h, r, z) = stack_readings(model.state_dim(), &readings)?;
                update_centralized(&predicted, &h, &r, &z)?
            }
            UpdateMode::Decentralized => update_decentralized(&predicted, &readings)?,
        };
        states.push(FilterState {
            k: k + 1,
            estimate: estimate.clone(),
        });
    }
    Ok(states)
}

/// Ground truth and measurements drawn from the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation<T = f64> {
    /// The sampled initial state `x_0`.
    pub initial: DVector<T>,
    /// True states `x_1 .. x_n`, one per step.
    pub truths: Vec<DVector<T>>,
    /// Per-step sensor readings of the corresponding truth.
    pub measurements: Vec<Vec<DVector<T>>>,
}

impl<T: Real> Simulation<T> {
    /// Packages the sampled readings as filter inputs: every sensor read
    /// at every step, controls attached where given.
    pub fn to_steps(&self, controls: &[DVector<T>]) -> Vec<StepData<T>> {
        self.measurements
            .iter()
            .enumerate()
            .map(|(k, ms)| StepData {
                control: controls.get(k).cloned(),
                readings: ms
                    .iter()
                    .enumerate()
                    .map(|(j, z)| Reading {
                        sensor_index: j,
                        value: z.clone(),
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Samples a trajectory and its sensor readings with a seeded generator,
/// so runs are reproducible.
///
/// `controls` must contain one input per step when the model has a
/// control matrix, and must be empty otherwise.
pub fn simulate<T: Real>(
    seq: &ModelSequence<T>,
    init: &Gaussian<T>,
    steps: usize,
    controls: &[DVector<T>],
    seed: u64,
) -> Result<Simulation<T>>
where
    StandardNormal: Distribution<T>,
{
    let has_control = (0..steps).any(|k| seq.at(k).map(|m| m.g.is_some()).unwrap_or(false));
    if has_control && controls.len() != steps {
        return Err(Error::SequenceMismatch {
            expected: steps,
            got: controls.len(),
        });
    }
    if !has_control && !controls.is_empty() {
        return Err(Error::SequenceMismatch {
            expected: 0,
            got: controls.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = sample(init.mean(), init.cov(), &mut rng);
    let initial = x.clone();
    let mut truths = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    for k in 0..steps {
        let model = seq.at(k)?;
        if x.len() != model.state_dim() {
            return Err(Error::DimMismatch {
                expected: model.state_dim(),
                got: x.len(),
            });
        }
        let mut mean = &model.f * &x;
        if let Some(g) = &model.g {
            let u = &controls[k];
            if u.len() != g.ncols() {
                return Err(Error::DimMismatch {
                    expected: g.ncols(),
                    got: u.len(),
                });
            }
            mean += g * u;
        }
        x = sample(&mean, &model.q, &mut rng);
        let mut readings = Vec::with_capacity(model.sensors.len());
        for s in &model.sensors {
            readings.push(sample(&(&s.h * &x), &s.noise_cov, &mut rng));
        }
        truths.push(x.clone());
        measurements.push(readings);
    }
    Ok(Simulation {
        initial,
        truths,
        measurements,
    })
}

fn sample<T: Real>(mean: &DVector<T>, cov: &DMatrix<T>, rng: &mut ChaCha8Rng) -> DVector<T>
where
    StandardNormal: Distribution<T>,
{
    let root = linalg::psd_sqrt(cov);
    let xi = DVector::from_fn(mean.len(), |_, _| rng.sample(StandardNormal));
    mean + root * xi
}

/// Normalized estimation error squared: `(x̂ − x)ᵀ P⁻¹ (x̂ − x)`.
///
/// For a consistent filter this averages to the state dimension.
pub fn nees<T: Real>(truth: &DVector<T>, estimate: &Gaussian<T>) -> Result<T> {
    if truth.len() != estimate.dim() {
        return Err(Error::DimMismatch {
            expected: estimate.dim(),
            got: truth.len(),
        });
    }
    let e = estimate.mean() - truth;
    let f = SpdFactor::new(estimate.cov()).ok_or(Error::SingularCovariance)?;
    Ok(e.dot(&f.solve_vec(&e)))
}
