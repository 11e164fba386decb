//! `run`, `resume` and `inspect`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use pem_core::gsgd::train::{BranchCounts, TrainError};
use pem_core::harness::{ConvNet, Mlp};
use pem_core::{Ensemble, Execution, TraceRecord, Trainer};

use crate::checkpoint::{Checkpoint, CheckpointLayer, LOAD_TOL};
use crate::config::{BuiltObjective, ExperimentConfig};
use crate::error::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.pemc";

/// Command-line values that replace config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub strict: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.iterations {
            cfg.iterations = t;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        cfg.strict |= self.strict;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub objective: String,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    /// Iterations run by this invocation.
    pub iterations: u64,
    pub start_iteration: u64,
    pub final_iteration: u64,
    pub max_constraint_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    pub wall_time_ms: u64,
    pub branch_counts: BranchCounts,
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    overrides.apply(&mut cfg);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

pub fn run(config: &Path, overrides: &Overrides) -> Result<Summary, CliError> {
    let (cfg, base) = load_config(config, overrides)?;
    execute(&cfg, &base, None)
}

pub fn resume(checkpoint: &Path, config: &Path, overrides: &Overrides) -> Result<Summary, CliError> {
    let (cfg, base) = load_config(config, overrides)?;
    let ck = Checkpoint::read(checkpoint)?;
    let (max, bad) = ck.feasibility()?;
    if bad > 0 {
        log::error!("checkpoint residual {max:e}");
        return Err(CliError::Infeasible { count: bad, tol: LOAD_TOL });
    }
    execute(&cfg, &base, Some(ck))
}

/// Runs the configured experiment, from scratch or from a checkpoint.
pub fn execute(cfg: &ExperimentConfig, base: &Path, start: Option<Checkpoint>) -> Result<Summary, CliError> {
    let exec = Execution {
        parallel: !cfg.sequential,
        strict: cfg.strict,
    };
    let objective = match cfg.build_objective(base)? {
        BuiltObjective::Conv(o) => BuiltObjective::Conv(ConvNet::with_execution(o, exec)),
        BuiltObjective::Mlp(o) => BuiltObjective::Mlp(Mlp::with_execution(o, exec)),
        o => o,
    };
    let obj = objective.as_objective();
    let plans = cfg.build_plans(obj.layers())?;
    cfg.optimizer.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let ensemble = Ensemble::new(obj.layers(), plans).map_err(|e| CliError::Config(e.to_string()))?;
    let layers: Vec<CheckpointLayer> = ensemble
        .layers()
        .iter()
        .map(|l| CheckpointLayer {
            shape: l.shape,
            plan: l.plan.clone(),
        })
        .collect();

    let trainer = match start {
        None => Trainer::new(obj, ensemble, cfg.optimizer, cfg.seed),
        Some(ck) => {
            if ck.layers != layers {
                return Err(CliError::Config(
                    "checkpoint layers or plans do not match the config".into(),
                ));
            }
            if ck.schedule != cfg.optimizer.schedule {
                return Err(CliError::Config(
                    "checkpoint schedule does not match the config".into(),
                ));
            }
            if ck.seed != cfg.seed {
                log::warn!("checkpoint seed {} differs from run seed {}", ck.seed, cfg.seed);
            }
            let mut params: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.shape.param_len()]).collect();
            ensemble.scatter(&ck.points, &mut params);
            Trainer::with_params(obj, ensemble, cfg.optimizer, params, ck.t, cfg.seed)
        }
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    let mut trainer = trainer.with_batch(cfg.batch).with_execution(exec);

    // output paths are checked before any compute
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let trace_path = cfg.out_dir.join(TRACE_FILE);
    let file = File::create(&trace_path)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", trace_path.display())))?;
    // header written by hand so an empty run still gets one
    let mut trace = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    trace
        .write_record(["iteration", "loss", "grad_norm_max", "constraint_residual_max", "learning_rate"])
        .map_err(csv_err)?;

    let start_t = trainer.iteration();
    let clock = Instant::now();
    let mut last: Option<TraceRecord> = None;
    let mut max_residual = trainer.state().max_residual();
    let mut write_err = None;
    let outcome = trainer.run_with(cfg.iterations, |r| {
        max_residual = max_residual.max(r.constraint_residual_max);
        last = Some(*r);
        if write_err.is_none() {
            write_err = trace.serialize(r).err();
        }
    });
    trace.flush()?;
    if let Some(e) = write_err {
        return Err(csv_err(e));
    }
    match outcome {
        Ok(()) => {}
        Err(TrainError::NonFinite { iteration }) => return Err(CliError::Numerical { iteration }),
        Err(e) => return Err(CliError::Io(e.to_string())),
    }
    let wall_time_ms = clock.elapsed().as_millis() as u64;

    let (final_loss, final_grad_norm) = match last {
        Some(r) => (r.loss, r.grad_norm_max),
        None => trainer.evaluate().map_err(|e| CliError::Io(e.to_string()))?,
    };
    let ck = Checkpoint {
        t: trainer.iteration(),
        seed: cfg.seed,
        schedule: cfg.optimizer.schedule,
        layers,
        points: trainer.state().points().to_vec(),
    };
    ck.write(&cfg.out_dir.join(CHECKPOINT_FILE))?;
    let summary = Summary {
        objective: obj.name().to_string(),
        final_loss,
        final_grad_norm,
        iterations: trainer.iteration() - start_t,
        start_iteration: start_t,
        final_iteration: trainer.iteration(),
        max_constraint_residual: max_residual,
        train_accuracy: objective.accuracy(trainer.params()),
        wall_time_ms,
        branch_counts: trainer.branch_counts(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(cfg.out_dir.join(SUMMARY_FILE), json + "\n")?;
    Ok(summary)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(format!("writing trace: {e}"))
}

/// Human-readable checkpoint report; `Err(Infeasible)` after printing when a
/// product has left its manifold.
pub fn inspect(checkpoint: &Path) -> Result<String, (String, CliError)> {
    let ck = Checkpoint::read(checkpoint).map_err(|e| (String::new(), e.into()))?;
    let report = ck.report().map_err(|e| (String::new(), e.into()))?;
    let mut out = String::new();
    let s = &ck.schedule;
    writeln!(out, "checkpoint {}", checkpoint.display()).unwrap();
    writeln!(out, "iteration {}  seed {}", ck.t, ck.seed).unwrap();
    writeln!(
        out,
        "schedule {:?} base_rate {} decay {} exponent {}",
        s.mode, s.base_rate, s.decay, s.exponent
    )
    .unwrap();
    writeln!(out, "{:>5} {:>5}  {:<10} {:>5} {:>9} {:>12} {:>12}", "layer", "group", "kind", "count", "shape", "residual", "norm").unwrap();
    let mut bad = 0;
    for r in &report {
        let flag = if r.residual < LOAD_TOL { "" } else { "  FLAGGED" };
        bad += usize::from(!flag.is_empty());
        writeln!(
            out,
            "{:>5} {:>5}  {:<10} {:>5} {:>9} {:>12.3e} {:>12.6}{flag}",
            r.layer,
            r.group,
            r.kind,
            r.components,
            format!("{}x{}", r.rows, r.cols),
            r.residual,
            r.norm
        )
        .unwrap();
    }
    let max = report.iter().map(|r| r.residual).fold(0.0, f64::max);
    writeln!(out, "{} products, max residual {max:.3e}", report.len()).unwrap();
    if bad > 0 {
        return Err((out, CliError::Infeasible { count: bad, tol: LOAD_TOL }));
    }
    Ok(out)
}
