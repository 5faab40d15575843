//! `vgbn` — validate network documents, run exact inference with either
//! backend, and run Kalman filters over filter documents.
//!
//! Exit codes: 0 success, 1 invalid document or failed run, 2 parse error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use vgbn::{kalman, oracle, propagation, transform};
use vgbn::{Gaussian, NetworkSpec, NodeId, UpdateMode};

use vgbn_cli::document::{FilterDocument, NetworkDocument};

#[derive(Parser)]
#[command(
    name = "vgbn",
    version,
    about = "Exact inference in Gaussian belief networks and Kalman filtering"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a network document and print a validation report.
    Validate {
        /// Network document (JSON).
        path: PathBuf,
    },
    /// Print posterior means and covariances given the document's evidence.
    Infer {
        /// Network document (JSON).
        path: PathBuf,
        /// Inference backend.
        #[arg(long, value_enum, default_value_t = Backend::Propagation)]
        backend: Backend,
        /// Cross-check every printed belief against exact joint
        /// conditioning and report the deviations.  The run fails if the
        /// largest deviation exceeds the tolerance (1e-8, or `VGBN_TOL`).
        #[arg(long)]
        oracle: bool,
        /// Node to report (repeatable); all nodes when omitted.
        #[arg(long = "query", value_name = "ID")]
        queries: Vec<String>,
        /// Significant digits to print (1-17), or `full`.
        #[arg(long, default_value = "12")]
        precision: Precision,
    },
    /// Run a Kalman filter over a filter document and emit a trajectory CSV.
    Kf {
        /// Filter document (JSON).
        path: PathBuf,
        /// How each step fuses its sensor readings.
        #[arg(long, value_enum, default_value_t = ModeArg::Centralized)]
        mode: ModeArg,
        /// Write the CSV to this file instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Instead of the document's measurements, sample a ground-truth
        /// trajectory of this many steps from the model and filter its
        /// readings; fills the `nees` column.
        #[arg(long, value_name = "STEPS")]
        simulate: Option<usize>,
        /// Seed for --simulate.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Significant digits to print (1-17), or `full`.
        #[arg(long, default_value = "12")]
        precision: Precision,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Backend {
    Propagation,
    Transform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Centralized,
    Decentralized,
}

impl From<ModeArg> for UpdateMode {
    fn from(m: ModeArg) -> UpdateMode {
        match m {
            ModeArg::Centralized => UpdateMode::Centralized,
            ModeArg::Decentralized => UpdateMode::Decentralized,
        }
    }
}

#[derive(Clone, Debug)]
enum Precision {
    Sig(usize),
    Full,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(Precision::Full);
        }
        match s.parse::<usize>() {
            Ok(n) if (1..=17).contains(&n) => Ok(Precision::Sig(n)),
            _ => Err(format!(
                "expected a digit count (1-17) or `full`, got `{s}`"
            )),
        }
    }
}

/// What went wrong, mapped onto the exit codes.
enum Failure {
    /// The file is not a well-formed document (exit 2).
    Parse(anyhow::Error),
    /// The document parsed but does not describe a usable input (exit 1).
    Invalid(String),
    /// The run itself failed (exit 1).
    Run(anyhow::Error),
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(report)) => {
            println!("{report}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Parse(e)) => {
            eprintln!("parse error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.cmd {
        Cmd::Validate { path } => {
            load_network(&path)?;
            println!("valid");
            Ok(())
        }
        Cmd::Infer {
            path,
            backend,
            oracle,
            queries,
            precision,
        } => {
            let net = load_network(&path)?;
            cmd_infer(&net, backend, oracle, &queries, &precision).map_err(Failure::Run)
        }
        Cmd::Kf {
            path,
            mode,
            out,
            simulate,
            seed,
            precision,
        } => {
            let doc = load_filter(&path)?;
            cmd_kf(
                &doc,
                mode.into(),
                out.as_deref(),
                simulate,
                seed,
                &precision,
            )
            .map_err(Failure::Run)
        }
    }
}

fn read_to_string(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Run)
}

/// Loads, builds, and validates a network document; the returned network
/// is ready for any backend.
fn load_network(path: &Path) -> std::result::Result<NetworkSpec, Failure> {
    let text = read_to_string(path)?;
    let doc: NetworkDocument = serde_json::from_str(&text)
        .with_context(|| format!("{}", path.display()))
        .map_err(Failure::Parse)?;
    doc.check_well_formed().map_err(Failure::Parse)?;
    let net = doc
        .to_network()
        .map_err(|e| Failure::Invalid(format!("invalid: {e:#}")))?;
    let report = net.validate();
    if !report.is_empty() {
        return Err(Failure::Invalid(report.to_string()));
    }
    Ok(net)
}

fn load_filter(path: &Path) -> std::result::Result<FilterDocument, Failure> {
    let text = read_to_string(path)?;
    let doc: FilterDocument = serde_json::from_str(&text)
        .with_context(|| format!("{}", path.display()))
        .map_err(Failure::Parse)?;
    doc.check_well_formed().map_err(Failure::Parse)?;
    Ok(doc)
}

// ---------------------------------------------------------------------------
// number formatting

fn fmt_f(x: f64, p: &Precision) -> String {
    let x = if x == 0.0 { 0.0 } else { x }; // print -0 as 0
    match p {
        Precision::Full => format!("{x:?}"),
        Precision::Sig(n) => format!("{:.*e}", n - 1, x),
    }
}

fn fmt_vec(v: &DVector<f64>, p: &Precision) -> String {
    let parts: Vec<String> = v.iter().map(|x| fmt_f(*x, p)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_mat(m: &nalgebra::DMatrix<f64>, p: &Precision) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| {
            let cols: Vec<String> = (0..m.ncols()).map(|j| fmt_f(m[(i, j)], p)).collect();
            format!("[{}]", cols.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Scale-aware distance between two distributions, relative to the
/// reference `b`.
fn rel_err(a: &Gaussian, b: &Gaussian) -> f64 {
    let m = (a.mean() - b.mean()).norm() / (1.0 + b.mean().norm());
    let c = (a.cov() - b.cov()).norm() / (1.0 + b.cov().norm());
    m.max(c)
}

// ---------------------------------------------------------------------------
// infer

fn cmd_infer(
    net: &NetworkSpec,
    backend: Backend,
    oracle: bool,
    queries: &[String],
    precision: &Precision,
) -> Result<()> {
    let queries: Vec<NodeId> = if queries.is_empty() {
        net.node_ids().cloned().collect()
    } else {
        queries
            .iter()
            .map(|q| {
                let id = NodeId::from(q.as_str());
                if net.contains(&id) {
                    Ok(id)
                } else {
                    Err(anyhow!("unknown node `{q}`"))
                }
            })
            .collect::<Result<_>>()?
    };

    let beliefs: Vec<(NodeId, Gaussian)> = match backend {
        Backend::Propagation => {
            let prop = propagation::propagate(net)?;
            queries
                .iter()
                .map(|q| {
                    (
                        q.clone(),
                        prop.belief(q)
                            .expect("propagation covers every node")
                            .clone(),
                    )
                })
                .collect()
        }
        Backend::Transform => queries
            .iter()
            .map(|q| {
                let b = match net.evidence(q) {
                    Some(z) => Gaussian::point(z.clone()),
                    None => transform::posterior(net, q).with_context(|| format!("query `{q}`"))?,
                };
                Ok((q.clone(), b))
            })
            .collect::<Result<_>>()?,
    };

    let tol = oracle_tolerance()?;
    let mut max_dev = 0.0_f64;
    for (q, b) in &beliefs {
        println!("node {q}");
        println!("  mean {}", fmt_vec(b.mean(), precision));
        println!("  cov  {}", fmt_mat(b.cov(), precision));
        if oracle && !net.has_evidence(q) {
            let exact = oracle::exact_posterior(net, q)
                .with_context(|| format!("exact posterior of `{q}`"))?;
            let dev = rel_err(b, &exact);
            println!("  oracle deviation {dev:.3e}");
            max_dev = max_dev.max(dev);
        }
    }
    if oracle {
        println!("max oracle deviation {max_dev:.3e} (tolerance {tol:.1e})");
        if max_dev > tol {
            return Err(anyhow!(
                "oracle deviation {max_dev:.3e} exceeds tolerance {tol:.1e}"
            ));
        }
    }
    Ok(())
}

fn oracle_tolerance() -> Result<f64> {
    match std::env::var("VGBN_TOL") {
        Ok(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| anyhow!("VGBN_TOL must be a number, got `{s}`")),
        Err(_) => Ok(1e-8),
    }
}

// ---------------------------------------------------------------------------
// kf

fn cmd_kf(
    doc: &FilterDocument,
    mode: UpdateMode,
    out: Option<&Path>,
    simulate: Option<usize>,
    seed: u64,
    precision: &Precision,
) -> Result<()> {
    let seq = doc.model_sequence()?;
    let init = doc.initial()?;
    let (steps, truths) = match simulate {
        Some(n) => {
            let controls = doc.controls();
            let sim = kalman::simulate(&seq, &init, n, &controls, seed)
                .context("simulating ground truth")?;
            (sim.to_steps(&controls), Some(sim.truths))
        }
        None => (doc.steps(&seq)?, None),
    };
    let states = kalman::run_filter(&seq, &init, &steps, mode)?;

    let d = init.dim();
    let mut csv = String::new();
    csv.push('k');
    for i in 0..d {
        csv.push_str(&format!(",xhat_{i}"));
    }
    for i in 0..d {
        csv.push_str(&format!(",Pdiag_{i}"));
    }
    csv.push_str(",nees\n");
    for (idx, st) in states.iter().enumerate() {
        csv.push_str(&st.k.to_string());
        for i in 0..d {
            csv.push_str(&format!(",{}", fmt_f(st.estimate.mean()[i], precision)));
        }
        for i in 0..d {
            csv.push_str(&format!(",{}", fmt_f(st.estimate.cov()[(i, i)], precision)));
        }
        match &truths {
            Some(ts) => {
                let n = kalman::nees(&ts[idx], &st.estimate)
                    .with_context(|| format!("step {}", st.k))?;
                csv.push_str(&format!(",{}", fmt_f(n, precision)));
            }
            None => csv.push(','),
        }
        csv.push('\n');
    }

    match out {
        Some(path) => {
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{csv}"),
    }
    Ok(())
}
