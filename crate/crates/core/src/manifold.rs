//! Component kernel submanifolds.
//!
//! A kernel `W ∈ ℝ^{A×B}` is stored row-major as a flat slice of length `A·B`.
//! Each [`ManifoldKind`] interprets that slice differently:
//!
//! * `Euclidean` – unconstrained `ℝ^{A×B}`.
//! * `Sphere` – the flattened kernel lies on the unit sphere `S^{AB−1}`.
//! * `Oblique` – every column of the `A×B` matrix has unit norm.
//! * `Stiefel` – `WᵀW = I_B`, which requires `A ≥ B`.
//!
//! All four carry the metric induced by the Frobenius inner product of the
//! ambient space.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum constraint residual of a point produced by retraction or projection.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Tolerance for metric identities (projection orthogonality, distances).
pub const METRIC_TOL: f64 = 1e-8;
/// Points whose residual exceeds this are rejected as inputs.
pub const INPUT_TOL: f64 = 1e-6;

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("point violates the manifold constraint (residual {residual:e})")]
    InvalidPoint { residual: f64 },
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeError { expected: usize, got: usize },
    #[error("retraction is degenerate: {0}")]
    DegenerateRetraction(&'static str),
    #[error("cannot project a degenerate input onto the manifold: {0}")]
    DegenerateInput(&'static str),
    #[error("operation `{op}` is not supported on the {kind:?} manifold")]
    Unsupported { op: &'static str, kind: ManifoldKind },
    #[error("tangent vectors are based at a different point")]
    BaseMismatch,
    #[error("invalid manifold specification: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, ManifoldError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifoldKind {
    Euclidean,
    Sphere,
    Oblique,
    Stiefel,
}

impl ManifoldKind {
    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Euclidean => "euclidean",
            ManifoldKind::Sphere => "sphere",
            ManifoldKind::Oblique => "oblique",
            ManifoldKind::Stiefel => "stiefel",
        }
    }

    /// Sectional curvature bound used when none is configured.
    pub fn default_curvature_bound(self) -> f64 {
        match self {
            ManifoldKind::Euclidean => 0.0,
            // Stiefel has no closed-form bound here; 1 is a configuration default.
            ManifoldKind::Sphere | ManifoldKind::Oblique | ManifoldKind::Stiefel => 1.0,
        }
    }
}

impl std::fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One component submanifold: kind, kernel shape and curvature bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldSpec {
    kind: ManifoldKind,
    rows: usize,
    cols: usize,
    curvature_bound: f64,
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(ManifoldError::InvalidSpec(format!(
                "{kind} kernel dimensions must be positive, got {rows}x{cols}"
            )));
        }
        match kind {
            ManifoldKind::Sphere if rows * cols < 2 => {
                return Err(ManifoldError::InvalidSpec(format!(
                    "sphere needs at least 2 ambient dimensions, got {rows}x{cols}"
                )))
            }
            ManifoldKind::Stiefel if rows < cols => {
                return Err(ManifoldError::InvalidSpec(format!(
                    "stiefel needs rows >= cols, got {rows}x{cols}"
                )))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            rows,
            cols,
            curvature_bound: kind.default_curvature_bound(),
        })
    }

    pub fn euclidean(rows: usize, cols: usize) -> Result<Self> {
        Self::new(ManifoldKind::Euclidean, rows, cols)
    }

    pub fn sphere(rows: usize, cols: usize) -> Result<Self> {
        Self::new(ManifoldKind::Sphere, rows, cols)
    }

    pub fn oblique(rows: usize, cols: usize) -> Result<Self> {
        Self::new(ManifoldKind::Oblique, rows, cols)
    }

    pub fn stiefel(rows: usize, cols: usize) -> Result<Self> {
        Self::new(ManifoldKind::Stiefel, rows, cols)
    }

    /// Overrides the curvature bound. Only Stiefel accepts a custom value; the
    /// sphere, oblique and Euclidean bounds are fixed by their geometry.
    pub fn with_curvature_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(ManifoldError::InvalidSpec(format!(
                "curvature bound must be finite and non-negative, got {bound}"
            )));
        }
        if self.kind != ManifoldKind::Stiefel && bound != self.kind.default_curvature_bound() {
            return Err(ManifoldError::InvalidSpec(format!(
                "curvature bound of the {} manifold is fixed at {}",
                self.kind,
                self.kind.default_curvature_bound()
            )));
        }
        self.curvature_bound = bound;
        Ok(self)
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn ambient_dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn curvature_upper_bound(&self) -> f64 {
        self.curvature_bound
    }

    pub fn intrinsic_dim(&self) -> usize {
        let (a, b) = (self.rows, self.cols);
        match self.kind {
            ManifoldKind::Euclidean => a * b,
            ManifoldKind::Sphere => a * b - 1,
            ManifoldKind::Oblique => b * (a - 1),
            ManifoldKind::Stiefel => a * b - b * (b + 1) / 2,
        }
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.ambient_dim() {
            return Err(ManifoldError::ShapeError {
                expected: self.ambient_dim(),
                got: values.len(),
            });
        }
        Ok(())
    }

    fn check_point(&self, p: &[f64]) -> Result<()> {
        self.check_len(p)?;
        let residual = self.constraint_residual(p);
        if !(residual <= INPUT_TOL) {
            return Err(ManifoldError::InvalidPoint { residual });
        }
        Ok(())
    }

    /// Distance of `p` from the constraint set, measured in the form natural
    /// to each kind (see [`ManifoldKind`]).
    pub fn constraint_residual(&self, p: &[f64]) -> f64 {
        if p.len() != self.ambient_dim() {
            return f64::INFINITY;
        }
        match self.kind {
            ManifoldKind::Euclidean => 0.0,
            ManifoldKind::Sphere => (norm(p) - 1.0).abs(),
            ManifoldKind::Oblique => (0..self.cols)
                .map(|j| (column_norm(p, self.cols, j) - 1.0).abs())
                .fold(0.0, f64::max),
            ManifoldKind::Stiefel => {
                let (a, b) = (self.rows, self.cols);
                let mut worst = 0.0f64;
                for i in 0..b {
                    for j in i..b {
                        let dot: f64 = (0..a).map(|r| p[r * b + i] * p[r * b + j]).sum();
                        let target = if i == j { 1.0 } else { 0.0 };
                        worst = worst.max((dot - target).abs());
                    }
                }
                worst
            }
        }
    }

    /// Orthogonal projection of an ambient vector onto the tangent space at `p`.
    pub fn tangent_project(&self, p: &[f64], ambient: &[f64]) -> Result<Vec<f64>> {
        self.check_point(p)?;
        self.check_len(ambient)?;
        let mut out = ambient.to_vec();
        self.project_in_place(p, &mut out);
        Ok(out)
    }

    /// Projection without validation; `p` and `v` must have the right length.
    pub(crate) fn project_in_place(&self, p: &[f64], v: &mut [f64]) {
        match self.kind {
            ManifoldKind::Euclidean => {}
            ManifoldKind::Sphere => {
                let c = dot(v, p);
                v.iter_mut().zip(p).for_each(|(vi, pi)| *vi -= c * pi);
            }
            ManifoldKind::Oblique => {
                let b = self.cols;
                for j in 0..b {
                    let c: f64 = (0..self.rows).map(|r| v[r * b + j] * p[r * b + j]).sum();
                    for r in 0..self.rows {
                        v[r * b + j] -= c * p[r * b + j];
                    }
                }
            }
            ManifoldKind::Stiefel => {
                let (a, b) = (self.rows, self.cols);
                // S = sym(pᵀ v), then v ← v − p S
                let mut s = vec![0.0; b * b];
                for i in 0..b {
                    for j in 0..b {
                        s[i * b + j] = (0..a).map(|r| p[r * b + i] * v[r * b + j]).sum();
                    }
                }
                for i in 0..b {
                    for j in (i + 1)..b {
                        let m = 0.5 * (s[i * b + j] + s[j * b + i]);
                        s[i * b + j] = m;
                        s[j * b + i] = m;
                    }
                }
                for r in 0..a {
                    for j in 0..b {
                        let corr: f64 = (0..b).map(|k| p[r * b + k] * s[k * b + j]).sum();
                        v[r * b + j] -= corr;
                    }
                }
            }
        }
    }

    /// Maps a tangent step back onto the manifold.
    ///
    /// Sphere and oblique normalize `p + v` (globally or per column), Stiefel
    /// takes the Q factor of the thin QR of `p + v` with a non-negative `R`
    /// diagonal, and Euclidean returns `p + v`.
    pub fn retract(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_point(p)?;
        self.check_len(v)?;
        let mut out = vec![0.0; p.len()];
        self.retract_into(p, v, &mut out)?;
        Ok(out)
    }

    pub(crate) fn retract_into(&self, p: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        // R_p(0) = p exactly; renormalizing would add rounding noise
        if v.iter().all(|&x| x == 0.0) {
            out.copy_from_slice(p);
            return Ok(());
        }
        out.iter_mut()
            .zip(p.iter().zip(v))
            .for_each(|(o, (pi, vi))| *o = pi + vi);
        match self.kind {
            ManifoldKind::Euclidean => Ok(()),
            ManifoldKind::Sphere => {
                let n = norm(out);
                if !(n > DEGENERATE_NORM) {
                    return Err(ManifoldError::DegenerateRetraction("p + v has zero norm"));
                }
                out.iter_mut().for_each(|x| *x /= n);
                Ok(())
            }
            ManifoldKind::Oblique => normalize_columns(out, self.cols)
                .map_err(|_| ManifoldError::DegenerateRetraction("p + v has a zero column")),
            ManifoldKind::Stiefel => qr_q_factor(out, self.rows, self.cols)
                .map_err(|_| ManifoldError::DegenerateRetraction("p + v is rank deficient")),
        }
    }

    /// Riemannian exponential map. Not provided for Stiefel, which uses
    /// [`ManifoldSpec::retract`] only.
    pub fn exp_map(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_point(p)?;
        self.check_len(v)?;
        match self.kind {
            ManifoldKind::Euclidean => Ok(p.iter().zip(v).map(|(a, b)| a + b).collect()),
            ManifoldKind::Sphere => Ok(sphere_exp(p, v)),
            ManifoldKind::Oblique => {
                let (a, b) = (self.rows, self.cols);
                let mut out = vec![0.0; p.len()];
                for j in 0..b {
                    let pc: Vec<f64> = (0..a).map(|r| p[r * b + j]).collect();
                    let vc: Vec<f64> = (0..a).map(|r| v[r * b + j]).collect();
                    for (r, x) in sphere_exp(&pc, &vc).into_iter().enumerate() {
                        out[r * b + j] = x;
                    }
                }
                Ok(out)
            }
            ManifoldKind::Stiefel => Err(ManifoldError::Unsupported {
                op: "exp_map",
                kind: self.kind,
            }),
        }
    }

    /// Frobenius inner product of two tangent vectors at the same base.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        self.check_len(v)?;
        Ok(dot(u, v))
    }

    /// Geodesic distance. For Stiefel this is the chordal Frobenius distance,
    /// a surrogate meant for diagnostics only.
    pub fn geodesic_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(match self.kind {
            ManifoldKind::Euclidean | ManifoldKind::Stiefel => {
                x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
            ManifoldKind::Sphere => arc(dot(x, y)),
            ManifoldKind::Oblique => {
                let b = self.cols;
                (0..b)
                    .map(|j| {
                        let c: f64 = (0..self.rows).map(|r| x[r * b + j] * y[r * b + j]).sum();
                        arc(c).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            }
        })
    }

    /// Deterministic random point for a seed.
    pub fn random_point(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.random_point_with(&mut rng)
    }

    pub(crate) fn random_point_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let mut x: Vec<f64> = (0..self.ambient_dim())
                .map(|_| StandardNormal.sample(rng))
                .collect();
            let ok = match self.kind {
                ManifoldKind::Euclidean => {
                    let s = 1.0 / (self.ambient_dim() as f64).sqrt();
                    x.iter_mut().for_each(|v| *v *= s);
                    true
                }
                ManifoldKind::Sphere => {
                    let n = norm(&x);
                    x.iter_mut().for_each(|v| *v /= n);
                    n > DEGENERATE_NORM
                }
                ManifoldKind::Oblique => normalize_columns(&mut x, self.cols).is_ok(),
                ManifoldKind::Stiefel => qr_q_factor(&mut x, self.rows, self.cols).is_ok(),
            };
            // A Gaussian draw is degenerate with probability zero.
            if ok {
                return x;
            }
        }
    }

    /// Maps an arbitrary ambient matrix onto the manifold. Idempotent.
    pub fn project_to_manifold(&self, ambient: &[f64]) -> Result<Vec<f64>> {
        self.check_len(ambient)?;
        let mut out = ambient.to_vec();
        match self.kind {
            ManifoldKind::Euclidean => {}
            ManifoldKind::Sphere => {
                let n = norm(&out);
                if !(n > DEGENERATE_NORM) {
                    return Err(ManifoldError::DegenerateInput("zero norm"));
                }
                out.iter_mut().for_each(|x| *x /= n);
            }
            ManifoldKind::Oblique => normalize_columns(&mut out, self.cols)
                .map_err(|_| ManifoldError::DegenerateInput("zero column"))?,
            ManifoldKind::Stiefel => qr_q_factor(&mut out, self.rows, self.cols)
                .map_err(|_| ManifoldError::DegenerateInput("rank deficient"))?,
        }
        Ok(out)
    }
}

/// A point on a component manifold, tagged with its spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    spec: ManifoldSpec,
    values: Vec<f64>,
}

impl Point {
    /// Wraps `values` after checking the constraint to [`INPUT_TOL`].
    pub fn new(spec: ManifoldSpec, values: Vec<f64>) -> Result<Self> {
        spec.check_point(&values)?;
        Ok(Self { spec, values })
    }

    pub fn random(spec: ManifoldSpec, seed: u64) -> Self {
        Self {
            values: spec.random_point(seed),
            spec,
        }
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn tangent(&self, ambient: &[f64]) -> Result<TangentVector> {
        Ok(TangentVector {
            values: self.spec.tangent_project(&self.values, ambient)?,
            base: self.clone(),
        })
    }

    pub fn zero_tangent(&self) -> TangentVector {
        TangentVector {
            values: vec![0.0; self.values.len()],
            base: self.clone(),
        }
    }

    pub fn retract(&self, v: &TangentVector) -> Result<Point> {
        self.ensure_base(v)?;
        Ok(Point {
            values: self.spec.retract(&self.values, &v.values)?,
            spec: self.spec,
        })
    }

    pub fn exp(&self, v: &TangentVector) -> Result<Point> {
        self.ensure_base(v)?;
        Ok(Point {
            values: self.spec.exp_map(&self.values, &v.values)?,
            spec: self.spec,
        })
    }

    pub fn inner(&self, u: &TangentVector, v: &TangentVector) -> Result<f64> {
        self.ensure_base(u)?;
        self.ensure_base(v)?;
        self.spec.inner(&u.values, &v.values)
    }

    pub fn distance(&self, other: &Point) -> Result<f64> {
        self.spec.geodesic_distance(&self.values, &other.values)
    }

    pub fn residual(&self) -> f64 {
        self.spec.constraint_residual(&self.values)
    }

    fn ensure_base(&self, v: &TangentVector) -> Result<()> {
        if v.base.spec != self.spec || v.base.values != self.values {
            return Err(ManifoldError::BaseMismatch);
        }
        Ok(())
    }
}

/// A tangent vector together with the point it is attached to.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    values: Vec<f64>,
    base: Point,
}

impl TangentVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector {
            values: self.values.iter().map(|x| s * x).collect(),
            base: self.base.clone(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn column_norm(m: &[f64], cols: usize, j: usize) -> f64 {
    m.iter().skip(j).step_by(cols).map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize_columns(m: &mut [f64], cols: usize) -> std::result::Result<(), ()> {
    for j in 0..cols {
        let n = column_norm(m, cols, j);
        if !(n > DEGENERATE_NORM) {
            return Err(());
        }
        m.iter_mut().skip(j).step_by(cols).for_each(|x| *x /= n);
    }
    Ok(())
}

/// Replaces the row-major `rows×cols` matrix `m` by the Q factor of its thin
/// QR decomposition, signs fixed so that `R` has a non-negative diagonal.
fn qr_q_factor(m: &mut [f64], rows: usize, cols: usize) -> std::result::Result<(), ()> {
    let mat = DMatrix::from_row_slice(rows, cols, m);
    let scale = mat.norm().max(1.0);
    let qr = mat.qr();
    let r = qr.r();
    let q = qr.q();
    for j in 0..cols {
        let d = r[(j, j)];
        if !(d.abs() > DEGENERATE_NORM * scale) {
            return Err(());
        }
        let sign = if d < 0.0 { -1.0 } else { 1.0 };
        for i in 0..rows {
            m[i * cols + j] = sign * q[(i, j)];
        }
    }
    Ok(())
}

fn arc(c: f64) -> f64 {
    c.clamp(-1.0, 1.0).acos()
}

fn sphere_exp(p: &[f64], v: &[f64]) -> Vec<f64> {
    let t = norm(v);
    if t == 0.0 {
        return p.to_vec();
    }
    let (s, c) = t.sin_cos();
    let mut out: Vec<f64> = p.iter().zip(v).map(|(pi, vi)| c * pi + s * vi / t).collect();
    // cos/sin rounding drifts the norm by a few ulps
    let n = norm(&out);
    out.iter_mut().for_each(|x| *x /= n);
    out
}
