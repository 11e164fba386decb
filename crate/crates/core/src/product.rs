//! Products of component submanifolds.
//!
//! A point of the product is the concatenation of its component points in
//! construction order. The metric is the sum of component metrics and the
//! curvature tensor is the sum of component tensors, so every operation here
//! is a loop over slices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::manifold::{dot, ManifoldError, ManifoldKind, ManifoldSpec};

/// Planes whose Gram determinant falls below this are rejected.
pub const PLANE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProductError {
    #[error("a product manifold needs at least one component")]
    EmptyProduct,
    #[error("layout mismatch: expected {expected} values, got {got}")]
    ShapeError { expected: usize, got: usize },
    #[error("component {index}: {source}")]
    Component {
        index: usize,
        #[source]
        source: ManifoldError,
    },
    #[error("tangent vectors span a degenerate plane (Gram determinant {gram:e})")]
    DegeneratePlane { gram: f64 },
    #[error("curvature tensor is not available for component {index} ({kind})")]
    Unsupported { index: usize, kind: ManifoldKind },
}

pub type Result<T> = std::result::Result<T, ProductError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ProductManifold {
    components: Vec<ManifoldSpec>,
    offsets: Vec<usize>,
    total_ambient_dim: usize,
}

impl ProductManifold {
    pub fn new(components: Vec<ManifoldSpec>) -> Result<Self> {
        if components.is_empty() {
            return Err(ProductError::EmptyProduct);
        }
        let mut offsets = Vec::with_capacity(components.len());
        let mut total = 0;
        for c in &components {
            offsets.push(total);
            total += c.ambient_dim();
        }
        Ok(Self {
            components,
            offsets,
            total_ambient_dim: total,
        })
    }

    pub fn components(&self) -> &[ManifoldSpec] {
        &self.components
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total_ambient_dim(&self) -> usize {
        self.total_ambient_dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.components.iter().map(|c| c.intrinsic_dim()).sum()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn range(&self, index: usize) -> std::ops::Range<usize> {
        let start = self.offsets[index];
        start..start + self.components[index].ambient_dim()
    }

    /// Iterates `(index, spec, slice)` over the components of `values`.
    pub fn slices<'a>(
        &'a self,
        values: &'a [f64],
    ) -> impl Iterator<Item = (usize, &'a ManifoldSpec, &'a [f64])> + 'a {
        self.components
            .iter()
            .enumerate()
            .map(move |(i, c)| (i, c, &values[self.range(i)]))
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.total_ambient_dim {
            return Err(ProductError::ShapeError {
                expected: self.total_ambient_dim,
                got: values.len(),
            });
        }
        Ok(())
    }

    /// Sum of component inner products.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        self.check_len(v)?;
        Ok((0..self.len())
            .map(|i| {
                let r = self.range(i);
                dot(&u[r.clone()], &v[r])
            })
            .sum())
    }

    pub fn tangent_project(&self, p: &[f64], ambient: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p)?;
        self.check_len(ambient)?;
        let mut out = Vec::with_capacity(self.total_ambient_dim);
        for (i, spec, pi) in self.slices(p) {
            let vi = spec
                .tangent_project(pi, &ambient[self.range(i)])
                .map_err(|source| ProductError::Component { index: i, source })?;
            out.extend_from_slice(&vi);
        }
        Ok(out)
    }

    /// Projects in place without validating `p`; used by the optimizer after
    /// it has already checked feasibility.
    pub(crate) fn project_in_place(&self, p: &[f64], v: &mut [f64]) {
        for (i, spec) in self.components.iter().enumerate() {
            let r = self.range(i);
            spec.project_in_place(&p[r.clone()], &mut v[r]);
        }
    }

    pub fn retract(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p)?;
        self.check_len(v)?;
        let mut out = vec![0.0; self.total_ambient_dim];
        for (i, spec, pi) in self.slices(p) {
            let r = self.range(i);
            let q = spec
                .retract(pi, &v[r.clone()])
                .map_err(|source| ProductError::Component { index: i, source })?;
            out[r].copy_from_slice(&q);
        }
        Ok(out)
    }

    pub(crate) fn retract_into(&self, p: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, spec) in self.components.iter().enumerate() {
            let r = self.range(i);
            spec.retract_into(&p[r.clone()], &v[r.clone()], &mut out[r])
                .map_err(|source| ProductError::Component { index: i, source })?;
        }
        Ok(())
    }

    pub fn exp_map(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p)?;
        self.check_len(v)?;
        let mut out = Vec::with_capacity(self.total_ambient_dim);
        for (i, spec, pi) in self.slices(p) {
            let q = spec
                .exp_map(pi, &v[self.range(i)])
                .map_err(|source| ProductError::Component { index: i, source })?;
            out.extend_from_slice(&q);
        }
        Ok(out)
    }

    /// `(Σ_ι ‖g_ι‖²)^{1/2}` over the component slices of `g`.
    pub fn grad_norm(&self, g: &[f64]) -> Result<f64> {
        Ok(self.inner(g, g)?.sqrt())
    }

    /// Largest component residual.
    pub fn constraint_residual(&self, p: &[f64]) -> f64 {
        if p.len() != self.total_ambient_dim {
            return f64::INFINITY;
        }
        self.slices(p)
            .map(|(_, spec, pi)| spec.constraint_residual(pi))
            .fold(0.0, f64::max)
    }

    pub fn random_point(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.random_point_with(&mut rng)
    }

    pub(crate) fn random_point_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.components
            .iter()
            .flat_map(|c| c.random_point_with(rng))
            .collect()
    }

    pub fn project_to_manifold(&self, ambient: &[f64]) -> Result<Vec<f64>> {
        self.check_len(ambient)?;
        let mut out = Vec::with_capacity(self.total_ambient_dim);
        for (i, spec, ai) in self.slices(ambient) {
            let q = spec
                .project_to_manifold(ai)
                .map_err(|source| ProductError::Component { index: i, source })?;
            out.extend_from_slice(&q);
        }
        Ok(out)
    }

    /// Evaluates the (0,4) curvature tensor `C̄(u, v, x, y)` as the sum of
    /// component tensors.
    ///
    /// For a unit-sphere slice the tensor is `⟨u,x⟩⟨v,y⟩ − ⟨u,y⟩⟨v,x⟩`; oblique
    /// slices apply it per column and Euclidean slices contribute zero. Stiefel
    /// slices are rejected with [`ProductError::Unsupported`].
    pub fn curvature_tensor(&self, u: &[f64], v: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
        for t in [u, v, x, y] {
            self.check_len(t)?;
        }
        let mut total = 0.0;
        for (i, spec) in self.components.iter().enumerate() {
            let r = self.range(i);
            let (us, vs, xs, ys) = (&u[r.clone()], &v[r.clone()], &x[r.clone()], &y[r]);
            total += match spec.kind() {
                ManifoldKind::Euclidean => 0.0,
                ManifoldKind::Sphere => unit_sphere_tensor(us, vs, xs, ys),
                ManifoldKind::Oblique => {
                    let (a, b) = (spec.rows(), spec.cols());
                    (0..b)
                        .map(|j| {
                            let col = |t: &[f64]| -> Vec<f64> { (0..a).map(|k| t[k * b + j]).collect() };
                            unit_sphere_tensor(&col(us), &col(vs), &col(xs), &col(ys))
                        })
                        .sum()
                }
                kind @ ManifoldKind::Stiefel => {
                    return Err(ProductError::Unsupported { index: i, kind })
                }
            };
        }
        Ok(total)
    }

    /// Sectional curvature of the plane spanned by `u` and `v`:
    /// `C̄(u, v, u, v) / (⟨u,u⟩⟨v,v⟩ − ⟨u,v⟩²)`.
    pub fn sectional_curvature(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let uu = self.inner(u, u)?;
        let vv = self.inner(v, v)?;
        let uv = self.inner(u, v)?;
        let gram = uu * vv - uv * uv;
        // relative test so that the plane's scale does not matter
        if !(gram > PLANE_TOL * (uu * vv).max(f64::MIN_POSITIVE)) {
            return Err(ProductError::DegeneratePlane { gram });
        }
        Ok(self.curvature_tensor(u, v, u, v)? / gram)
    }

    /// Largest component curvature bound; zero for an all-flat product.
    pub fn curvature_upper_bound(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.curvature_upper_bound())
            .fold(0.0, f64::max)
    }
}

fn unit_sphere_tensor(u: &[f64], v: &[f64], x: &[f64], y: &[f64]) -> f64 {
    dot(u, x) * dot(v, y) - dot(u, y) * dot(v, x)
}
