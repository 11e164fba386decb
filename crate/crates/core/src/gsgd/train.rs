//! Training loop: evaluate the objective, step every product, record a trace.
//!
//! Each iteration evaluates the Euclidean gradient of every layer once at the
//! current kernels, then steps all products of all layers with the same
//! iteration index `t`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Branch, GsgdConfig, GsgdError, OptimizerState, StepDiagnostics};
use crate::ensemble::{self, build_whole, EnsembleError, EnsemblePlan, LayerShape};
use crate::exec::Execution;
use crate::harness::{Batch, HarnessError, Objective};
use crate::manifold::{ManifoldKind, INPUT_TOL};
use crate::product::ProductManifold;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient at iteration {iteration}")]
    NonFinite { iteration: u64 },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Gsgd(#[from] GsgdError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("invalid initial kernels: {0}")]
    InvalidInitial(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// One row of the training trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Schedule index `t` of the step; `loss` is evaluated at `ω^t`.
    pub iteration: u64,
    pub loss: f64,
    pub grad_norm_max: f64,
    /// Largest residual of `ω^{t+1}` over every product.
    pub constraint_residual_max: f64,
    pub learning_rate: f64,
}

/// How many product steps took each denominator branch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub floor: u64,
    pub distance: u64,
    pub curvature: u64,
}

impl BranchCounts {
    pub fn add(&mut self, b: Branch) {
        match b {
            Branch::Floor => self.floor += 1,
            Branch::Distance => self.distance += 1,
            Branch::Curvature => self.curvature += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    Full,
    /// Samples without replacement, reshuffled each epoch from the run seed.
    MiniBatch(usize),
}

/// The plan and products of one layer.
#[derive(Debug, Clone)]
pub struct LayerEnsemble {
    pub shape: LayerShape,
    pub plan: EnsemblePlan,
    pub products: Vec<ProductManifold>,
}

/// Products of every layer, in layer order then group order.
#[derive(Debug, Clone)]
pub struct Ensemble {
    layers: Vec<LayerEnsemble>,
}

impl Ensemble {
    /// Binds plans to layers by layer index; layers without a plan are left
    /// unconstrained as one Euclidean product.
    pub fn new(shapes: &[LayerShape], plans: Vec<EnsemblePlan>) -> Result<Self> {
        let mut plans: Vec<Option<EnsemblePlan>> = plans.into_iter().map(Some).collect();
        let mut layers = Vec::with_capacity(shapes.len());
        for shape in shapes {
            let found = plans
                .iter_mut()
                .find(|p| p.as_ref().is_some_and(|p| p.layer == shape.layer))
                .and_then(Option::take);
            let plan = match found {
                Some(p) => p,
                None => build_whole(shape, ManifoldKind::Euclidean.into())?,
            };
            let products = ensemble::plan_to_products(&plan, shape)?;
            layers.push(LayerEnsemble {
                shape: *shape,
                plan,
                products,
            });
        }
        if let Some(p) = plans.into_iter().flatten().next() {
            return Err(EnsembleError::InvalidShape(format!(
                "plan for layer {} matches no layer of the objective",
                p.layer
            ))
            .into());
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerEnsemble] {
        &self.layers
    }

    pub fn plans(&self) -> Vec<&EnsemblePlan> {
        self.layers.iter().map(|l| &l.plan).collect()
    }

    pub fn products(&self) -> Vec<ProductManifold> {
        self.layers.iter().flat_map(|l| l.products.iter().cloned()).collect()
    }

    pub fn pem_count(&self) -> usize {
        self.layers.iter().map(|l| l.products.len()).sum()
    }

    /// Per-product flat vectors taken from per-layer storage.
    pub fn gather(&self, params: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .zip(params)
            .flat_map(|(l, p)| l.plan.groups.iter().map(move |g| ensemble::gather(&l.shape, g, p)))
            .collect()
    }

    pub fn scatter(&self, points: &[Vec<f64>], params: &mut [Vec<f64>]) {
        let mut it = points.iter();
        for (l, p) in self.layers.iter().zip(params) {
            for g in &l.plan.groups {
                let point = it.next().expect("one point per product");
                ensemble::scatter(&l.shape, g, point, p);
            }
        }
    }

    /// Random feasible kernels; products draw from one stream in order.
    pub fn random_params(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = self
            .layers
            .iter()
            .flat_map(|l| l.products.iter())
            .map(|m| m.random_point_with(&mut rng))
            .collect();
        let mut params: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.shape.param_len()]).collect();
        self.scatter(&points, &mut params);
        params
    }
}

/// Epoch-wise shuffled batches, reproducible from `(seed, t)` alone.
#[derive(Debug, Clone)]
struct BatchSampler {
    n: usize,
    size: usize,
    seed: u64,
    epoch: Option<u64>,
    perm: Vec<usize>,
}

impl BatchSampler {
    fn new(n: usize, size: usize, seed: u64) -> Self {
        Self {
            n,
            size: size.clamp(1, n),
            seed,
            epoch: None,
            perm: Vec::new(),
        }
    }

    fn batch(&mut self, t: u64) -> &[usize] {
        let per_epoch = self.n.div_ceil(self.size) as u64;
        let (epoch, b) = (t / per_epoch, (t % per_epoch) as usize);
        if self.epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            self.perm = (0..self.n).collect();
            self.perm.shuffle(&mut rng);
            self.epoch = Some(epoch);
        }
        let start = b * self.size;
        &self.perm[start..(start + self.size).min(self.n)]
    }
}

pub struct Trainer<'a, O: Objective + ?Sized> {
    objective: &'a O,
    ensemble: Ensemble,
    state: OptimizerState,
    params: Vec<Vec<f64>>,
    sampler: Option<BatchSampler>,
    seed: u64,
    exec: Execution,
    branches: BranchCounts,
}

impl<'a, O: Objective + ?Sized> Trainer<'a, O> {
    /// Starts from random feasible kernels drawn from `seed`.
    pub fn new(objective: &'a O, ensemble: Ensemble, config: GsgdConfig, seed: u64) -> Result<Self> {
        let params = ensemble.random_params(seed);
        Self::with_params(objective, ensemble, config, params, 0, seed)
    }

    /// Starts from given kernels at iteration `t`, e.g. a checkpoint.
    pub fn with_params(
        objective: &'a O,
        ensemble: Ensemble,
        config: GsgdConfig,
        params: Vec<Vec<f64>>,
        t: u64,
        seed: u64,
    ) -> Result<Self> {
        let shapes = objective.layers();
        if shapes.len() != ensemble.layers.len()
            || shapes.iter().zip(&ensemble.layers).any(|(s, l)| *s != l.shape)
        {
            return Err(TrainError::InvalidInitial("ensemble does not match objective layers".into()));
        }
        if params.len() != shapes.len() || params.iter().zip(shapes).any(|(p, s)| p.len() != s.param_len()) {
            return Err(TrainError::InvalidInitial("kernel storage does not match layer shapes".into()));
        }
        let products = ensemble.products();
        let points = ensemble.gather(&params);
        for (i, (m, p)) in products.iter().zip(&points).enumerate() {
            let r = m.constraint_residual(p);
            if !(r < INPUT_TOL) {
                return Err(TrainError::InvalidInitial(format!(
                    "product {i} has constraint residual {r:e}"
                )));
            }
        }
        for w in config.schedule.warnings() {
            log::warn!("{w}");
        }
        let state = OptimizerState::new(config, products, points, t)?;
        Ok(Self {
            objective,
            ensemble,
            state,
            params,
            sampler: None,
            seed,
            exec: Execution::default(),
            branches: BranchCounts::default(),
        })
    }

    pub fn with_batch(mut self, mode: BatchMode) -> Self {
        self.sampler = match (mode, self.objective.num_samples()) {
            (BatchMode::MiniBatch(size), Some(n)) if size < n => Some(BatchSampler::new(n, size, self.seed)),
            _ => None,
        };
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn iteration(&self) -> u64 {
        self.state.iteration()
    }

    pub fn branch_counts(&self) -> BranchCounts {
        self.branches
    }

    /// Full-batch loss and largest projected-gradient norm at the current
    /// kernels, without stepping.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let (loss, grads) = self.objective.loss_and_grad(&self.params, Batch::Full)?;
        let pem = self.ensemble.gather(&grads);
        let r = self
            .state
            .products()
            .iter()
            .zip(self.state.points())
            .zip(&pem)
            .map(|((m, p), g)| -> Result<f64> {
                let pg = m.tangent_project(p, g).map_err(EnsembleError::Product)?;
                Ok(crate::manifold::norm(&pg))
            })
            .try_fold(0.0, |acc: f64, r| r.map(|r| acc.max(r)))?;
        Ok((loss, r))
    }

    /// One iteration over every layer and product.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let t = self.state.iteration();
        let batch = match &mut self.sampler {
            Some(s) => Batch::Indices(s.batch(t)),
            None => Batch::Full,
        };
        let (loss, grads) = match self.objective.loss_and_grad(&self.params, batch) {
            Err(HarnessError::NonFiniteGradient) => return Err(TrainError::NonFinite { iteration: t }),
            r => r?,
        };
        let pem = self.ensemble.gather(&grads);
        let diags: Vec<StepDiagnostics> = match self.state.step(&pem, self.exec) {
            Err(GsgdError::NonFiniteGradient { .. }) => return Err(TrainError::NonFinite { iteration: t }),
            r => r?,
        };
        self.ensemble.scatter(self.state.points(), &mut self.params);
        let mut rec = TraceRecord {
            iteration: t,
            loss,
            grad_norm_max: 0.0,
            constraint_residual_max: 0.0,
            learning_rate: self.state.config().schedule.learning_rate(t),
        };
        for d in &diags {
            self.branches.add(d.branch);
            rec.grad_norm_max = rec.grad_norm_max.max(d.r);
            rec.constraint_residual_max = rec.constraint_residual_max.max(d.residual);
        }
        Ok(rec)
    }

    /// Runs `iterations` steps, handing each record to `sink` as it is made.
    pub fn run_with<F>(&mut self, iterations: u64, mut sink: F) -> Result<()>
    where
        F: FnMut(&TraceRecord),
    {
        for _ in 0..iterations {
            let rec = self.step()?;
            sink(&rec);
        }
        Ok(())
    }

    pub fn run(&mut self, iterations: u64) -> Result<Vec<TraceRecord>> {
        let mut out = Vec::with_capacity(iterations as usize);
        self.run_with(iterations, |r| out.push(*r))?;
        Ok(out)
    }
}

/// Trains from a random start and returns the trace and final kernels.
pub fn train<O: Objective + ?Sized>(
    objective: &O,
    plans: Vec<EnsemblePlan>,
    config: GsgdConfig,
    iterations: u64,
    seed: u64,
) -> Result<(Vec<TraceRecord>, Vec<Vec<f64>>)> {
    let ensemble = Ensemble::new(objective.layers(), plans)?;
    let mut trainer = Trainer::new(objective, ensemble, config, seed)?;
    let trace = trainer.run(iterations)?;
    Ok((trace, trainer.params.clone()))
}
