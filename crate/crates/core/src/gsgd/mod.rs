//! Projected, curvature-regularised SGD over an ensemble of product manifolds.
//!
//! One step on a product manifold `𝕄` at `ω`:
//!
//! ```text
//! g  = Π_ω(∇_E 𝓛)                 tangent projection
//! R  = ‖g‖
//! 𝔤  = max{1, R²·Γ₂}^{1/2}         Γ₂ = max{(2ρ+R)², 1+ĉ(ρ+R)}
//! ω' = R_ω(−g(t,Θ)/𝔤 · g)         retraction
//! ```

pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::product::{ProductError, ProductManifold};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GsgdError {
    #[error("non-finite gradient entry in product {pem}")]
    NonFiniteGradient { pem: usize },
    #[error("expected {expected} gradients, got {got}")]
    GradientCount { expected: usize, got: usize },
    #[error("product {pem}: {source}")]
    Product {
        pem: usize,
        #[source]
        source: ProductError,
    },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, GsgdError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    InverseTime,
    Constant,
}

/// Learning-rate schedule `g(t, Θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_rate: f64,
    #[serde(default)]
    pub decay: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_mode")]
    pub mode: ScheduleMode,
}

fn default_exponent() -> f64 {
    1.0
}

fn default_mode() -> ScheduleMode {
    ScheduleMode::InverseTime
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_rate: 0.1,
            decay: 1e-3,
            exponent: 1.0,
            mode: ScheduleMode::InverseTime,
        }
    }
}

impl ScheduleConfig {
    pub fn inverse_time(base_rate: f64, decay: f64, exponent: f64) -> Self {
        Self {
            base_rate,
            decay,
            exponent,
            mode: ScheduleMode::InverseTime,
        }
    }

    pub fn constant(base_rate: f64) -> Self {
        Self {
            base_rate,
            decay: 0.0,
            exponent: 1.0,
            mode: ScheduleMode::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_rate.is_finite() && self.base_rate > 0.0) {
            return Err(GsgdError::InvalidConfig(format!(
                "base_rate must be positive, got {}",
                self.base_rate
            )));
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return Err(GsgdError::InvalidConfig(format!(
                "decay must be non-negative, got {}",
                self.decay
            )));
        }
        if self.mode == ScheduleMode::InverseTime && !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return Err(GsgdError::InvalidConfig(format!(
                "exponent must lie in (0.5, 1], got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    pub fn learning_rate(&self, t: u64) -> f64 {
        learning_rate(t, self)
    }

    /// Reasons the schedule does not have a divergent sum with a convergent
    /// sum of squares.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.mode {
            ScheduleMode::Constant => out.push(format!(
                "constant learning rate {} has a divergent sum of squares; convergence is not guaranteed",
                self.base_rate
            )),
            ScheduleMode::InverseTime if self.decay == 0.0 => out.push(
                "inverse-time schedule with zero decay is constant; convergence is not guaranteed".into(),
            ),
            ScheduleMode::InverseTime => {}
        }
        out
    }
}

/// `η/(1+λt)^α` for inverse-time schedules, `η` for constant ones.
pub fn learning_rate(t: u64, sched: &ScheduleConfig) -> f64 {
    match sched.mode {
        ScheduleMode::Constant => sched.base_rate,
        ScheduleMode::InverseTime => {
            let base = 1.0 + sched.decay * t as f64;
            if sched.exponent == 1.0 {
                sched.base_rate / base
            } else {
                sched.base_rate / base.powf(sched.exponent)
            }
        }
    }
}

/// Surrogate for the distance `ρ` to the unknown minimiser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoPolicy {
    /// `min(1/ĉ, cap)`; flat products (`ĉ = 0`) use the cap.
    CurvatureInverse,
    Fixed(f64),
    Zero,
}

impl RhoPolicy {
    pub fn rho(&self, c_hat: f64, cap: f64) -> f64 {
        match *self {
            RhoPolicy::CurvatureInverse if c_hat > 0.0 => (1.0 / c_hat).min(cap),
            RhoPolicy::CurvatureInverse => cap,
            RhoPolicy::Fixed(r) => r,
            RhoPolicy::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorRule {
    /// `(max{1, R²(2+R)²})^{1/2}` regardless of the product's geometry.
    Sphere,
    /// `max{1, R²·max{(2ρ+R)², 1+ĉ(ρ+R)}}^{1/2}` with `ρ` from the policy.
    Adaptive,
    /// `𝔤 = 1`: plain projected SGD.
    Unit,
}

/// Which term of the denominator was active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `max{1, ·}` floor, so `𝔤 = 1`.
    Floor,
    /// `(2ρ+R)²` dominated.
    Distance,
    /// `1+ĉ(ρ+R)` dominated.
    Curvature,
}

pub fn adaptive_denominator(r: f64, rho: f64, c_hat: f64) -> f64 {
    adaptive_denominator_with_branch(r, rho, c_hat).0
}

pub fn adaptive_denominator_with_branch(r: f64, rho: f64, c_hat: f64) -> (f64, Branch) {
    let distance = (2.0 * rho + r) * (2.0 * rho + r);
    let curvature = 1.0 + c_hat * (rho + r);
    let (gamma2, branch) = if distance >= curvature {
        (distance, Branch::Distance)
    } else {
        (curvature, Branch::Curvature)
    };
    let gamma1 = r * r * gamma2;
    if gamma1 > 1.0 {
        (gamma1.sqrt(), branch)
    } else {
        (1.0, Branch::Floor)
    }
}

pub fn sphere_denominator(r: f64) -> f64 {
    let gamma1 = r * r * (2.0 + r) * (2.0 + r);
    if gamma1 > 1.0 {
        gamma1.sqrt()
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsgdConfig {
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_rho_policy")]
    pub rho_policy: RhoPolicy,
    /// Upper cap on `ρ̂` under [`RhoPolicy::CurvatureInverse`].
    #[serde(default = "default_rho_cap")]
    pub rho_cap: f64,
    #[serde(default = "default_denominator")]
    pub denominator: DenominatorRule,
}

fn default_rho_policy() -> RhoPolicy {
    RhoPolicy::CurvatureInverse
}

fn default_rho_cap() -> f64 {
    1.0
}

fn default_denominator() -> DenominatorRule {
    DenominatorRule::Sphere
}

impl Default for GsgdConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            rho_policy: default_rho_policy(),
            rho_cap: default_rho_cap(),
            denominator: default_denominator(),
        }
    }
}

impl GsgdConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.rho_cap.is_finite() && self.rho_cap > 0.0) {
            return Err(GsgdError::InvalidConfig(format!(
                "rho_cap must be positive, got {}",
                self.rho_cap
            )));
        }
        if let RhoPolicy::Fixed(r) = self.rho_policy {
            if !(r.is_finite() && r >= 0.0) {
                return Err(GsgdError::InvalidConfig(format!(
                    "fixed rho must be non-negative, got {r}"
                )));
            }
        }
        Ok(())
    }

    /// `𝔤` and the active branch for a product with curvature bound `c_hat`.
    pub fn denominator(&self, r: f64, c_hat: f64) -> (f64, Branch) {
        match self.denominator {
            DenominatorRule::Unit => (1.0, Branch::Floor),
            DenominatorRule::Sphere => {
                let d = sphere_denominator(r);
                (d, if d > 1.0 { Branch::Distance } else { Branch::Floor })
            }
            DenominatorRule::Adaptive => {
                let rho = self.rho_policy.rho(c_hat, self.rho_cap);
                adaptive_denominator_with_branch(r, rho, c_hat)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Projected-gradient norm `R`.
    pub r: f64,
    pub learning_rate: f64,
    pub denom: f64,
    pub branch: Branch,
    /// Constraint residual of the new point.
    pub residual: f64,
}

/// Current points of every product, plus the iteration counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: GsgdConfig,
    products: Vec<ProductManifold>,
    c_hat: Vec<f64>,
    points: Vec<Vec<f64>>,
    t: u64,
}

impl OptimizerState {
    pub fn new(config: GsgdConfig, products: Vec<ProductManifold>, points: Vec<Vec<f64>>, t: u64) -> Result<Self> {
        config.validate()?;
        if points.len() != products.len() {
            return Err(GsgdError::GradientCount {
                expected: products.len(),
                got: points.len(),
            });
        }
        for (pem, (m, p)) in products.iter().zip(&points).enumerate() {
            if p.len() != m.total_ambient_dim() {
                return Err(GsgdError::Product {
                    pem,
                    source: ProductError::ShapeError {
                        expected: m.total_ambient_dim(),
                        got: p.len(),
                    },
                });
            }
        }
        let c_hat = products.iter().map(ProductManifold::curvature_upper_bound).collect();
        Ok(Self {
            config,
            products,
            c_hat,
            points,
            t,
        })
    }

    pub fn config(&self) -> &GsgdConfig {
        &self.config
    }

    pub fn products(&self) -> &[ProductManifold] {
        &self.products
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn max_residual(&self) -> f64 {
        self.products
            .iter()
            .zip(&self.points)
            .map(|(m, p)| m.constraint_residual(p))
            .fold(0.0, f64::max)
    }

    /// One G-SGD step on every product. On error the state is unchanged.
    pub fn step(&mut self, grads: &[Vec<f64>], exec: Execution) -> Result<Vec<StepDiagnostics>> {
        if grads.len() != self.products.len() {
            return Err(GsgdError::GradientCount {
                expected: self.products.len(),
                got: grads.len(),
            });
        }
        for (pem, (m, g)) in self.products.iter().zip(grads).enumerate() {
            if g.len() != m.total_ambient_dim() {
                return Err(GsgdError::Product {
                    pem,
                    source: ProductError::ShapeError {
                        expected: m.total_ambient_dim(),
                        got: g.len(),
                    },
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(GsgdError::NonFiniteGradient { pem });
            }
        }
        let lr = self.config.schedule.learning_rate(self.t);
        let idx: Vec<usize> = (0..self.products.len()).collect();
        let results = exec.map(&idx, |&pem| self.step_one(pem, &grads[pem], lr));
        let mut next = Vec::with_capacity(results.len());
        let mut diags = Vec::with_capacity(results.len());
        for r in results {
            let (p, d) = r?;
            next.push(p);
            diags.push(d);
        }
        self.points = next;
        self.t += 1;
        Ok(diags)
    }

    fn step_one(&self, pem: usize, grad: &[f64], lr: f64) -> Result<(Vec<f64>, StepDiagnostics)> {
        let m = &self.products[pem];
        let p = &self.points[pem];
        let mut g = grad.to_vec();
        m.project_in_place(p, &mut g);
        let r = crate::manifold::norm(&g);
        let (denom, branch) = self.config.denominator(r, self.c_hat[pem]);
        let scale = lr / denom;
        g.iter_mut().for_each(|x| *x *= -scale);
        let mut out = vec![0.0; p.len()];
        m.retract_into(p, &g, &mut out)
            .map_err(|source| GsgdError::Product { pem, source })?;
        let residual = m.constraint_residual(&out);
        Ok((
            out,
            StepDiagnostics {
                r,
                learning_rate: lr,
                denom,
                branch,
                residual,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::ManifoldSpec;

    #[test]
    fn schedule_values() {
        assert_eq!(learning_rate(0, &ScheduleConfig::inverse_time(0.1, 5.0, 0.7)), 0.1);
        assert_eq!(learning_rate(3, &ScheduleConfig::inverse_time(1.0, 1.0, 1.0)), 0.25);
        assert_eq!(learning_rate(1000, &ScheduleConfig::constant(0.3)), 0.3);
        assert!(ScheduleConfig::inverse_time(1.0, 1.0, 0.5).validate().is_err());
        assert!(ScheduleConfig::inverse_time(1.0, 1.0, 1.0).warnings().is_empty());
        assert_eq!(ScheduleConfig::constant(0.3).warnings().len(), 1);
    }

    #[test]
    fn harmonic_sum_diverges_square_sum_converges() {
        let s = ScheduleConfig::inverse_time(1.0, 1.0, 1.0);
        let partial = |n: u64| -> (f64, f64) {
            (0..n).map(|t| s.learning_rate(t)).fold((0.0, 0.0), |(a, b), g| (a + g, b + g * g))
        };
        let (s1, q1) = partial(10_000);
        let (s2, q2) = partial(100_000);
        assert!(s2 - s1 > 2.0);
        assert!(q2 - q1 < 1e-4);
        assert!((q2 - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-4);
    }

    #[test]
    fn denominators() {
        assert_eq!(adaptive_denominator(0.0, 1.0, 1.0), 1.0);
        assert_eq!(adaptive_denominator(1.0, 1.0, 1.0), 3.0);
        assert_eq!(sphere_denominator(0.0), 1.0);
        assert_eq!(sphere_denominator(1.0), 3.0);
        assert_eq!(sphere_denominator(0.2), 1.0);
        assert_eq!(adaptive_denominator_with_branch(0.2, 1.0, 1.0).1, Branch::Floor);
        // flat product with the default cap: (2+R)² vs 1+0
        assert_eq!(adaptive_denominator_with_branch(1.0, 1.0, 0.0), (3.0, Branch::Distance));
        // large curvature makes the second term win
        assert_eq!(adaptive_denominator_with_branch(1.0, 0.0, 10.0).1, Branch::Curvature);
    }

    #[test]
    fn rho_policies() {
        assert_eq!(RhoPolicy::CurvatureInverse.rho(1.0, 1.0), 1.0);
        assert_eq!(RhoPolicy::CurvatureInverse.rho(4.0, 1.0), 0.25);
        assert_eq!(RhoPolicy::CurvatureInverse.rho(0.0, 2.0), 2.0);
        assert_eq!(RhoPolicy::Fixed(0.3).rho(9.0, 1.0), 0.3);
        assert_eq!(RhoPolicy::Zero.rho(1.0, 1.0), 0.0);
    }

    fn single(spec: ManifoldSpec, point: Vec<f64>, config: GsgdConfig) -> OptimizerState {
        OptimizerState::new(config, vec![ProductManifold::new(vec![spec]).unwrap()], vec![point], 0).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let p = ManifoldSpec::stiefel(3, 2).unwrap().random_point(4);
        let mut s = single(ManifoldSpec::stiefel(3, 2).unwrap(), p.clone(), GsgdConfig::default());
        s.step(&[vec![0.0; 6]], Execution::SEQUENTIAL).unwrap();
        assert_eq!(s.points()[0], p);
        assert_eq!(s.iteration(), 1);
    }

    #[test]
    fn flat_unit_denominator_is_plain_sgd() {
        let config = GsgdConfig {
            schedule: ScheduleConfig::inverse_time(0.37, 0.1, 1.0),
            rho_policy: RhoPolicy::Zero,
            denominator: DenominatorRule::Unit,
            ..GsgdConfig::default()
        };
        let p = vec![0.3, -1.1, 2.5];
        let g = vec![0.01, 0.7, -3.0];
        let mut s = single(ManifoldSpec::euclidean(3, 1).unwrap(), p.clone(), config);
        s.step(std::slice::from_ref(&g), Execution::SEQUENTIAL).unwrap();
        let expect: Vec<f64> = p.iter().zip(&g).map(|(w, d)| w - 0.37 * d).collect();
        assert_eq!(s.points()[0], expect);
    }

    #[test]
    fn sphere_step_by_hand() {
        let lr = std::f64::consts::FRAC_PI_2;
        let config = GsgdConfig {
            schedule: ScheduleConfig::constant(lr),
            ..GsgdConfig::default()
        };
        let mut s = single(ManifoldSpec::sphere(2, 1).unwrap(), vec![1.0, 0.0], config);
        let d = s.step(&[vec![0.0, 1.0]], Execution::SEQUENTIAL).unwrap();
        // projection keeps (0,1); R = 1, 𝔤 = 3, step (0, −π/6), then normalize
        let step = lr / 3.0;
        let n = (1.0 + step * step).sqrt();
        assert_eq!(d[0].denom, 3.0);
        assert!((s.points()[0][0] - 1.0 / n).abs() < 1e-15);
        assert!((s.points()[0][1] + step / n).abs() < 1e-15);
        assert!(d[0].residual < 1e-12);
    }

    #[test]
    fn failed_step_leaves_state_untouched() {
        let spec = ManifoldSpec::sphere(2, 1).unwrap();
        let m = ProductManifold::new(vec![spec]).unwrap();
        let mut s = OptimizerState::new(
            GsgdConfig::default(),
            vec![m.clone(), m],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            7,
        )
        .unwrap();
        let before = s.points().to_vec();
        let err = s.step(&[vec![0.0, 1.0], vec![f64::NAN, 0.0]], Execution::SEQUENTIAL);
        assert_eq!(err.unwrap_err(), GsgdError::NonFiniteGradient { pem: 1 });
        assert_eq!(s.points(), before.as_slice());
        assert_eq!(s.iteration(), 7);
    }
}
