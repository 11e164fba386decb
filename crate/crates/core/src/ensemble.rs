//! Assignment of a layer's kernels to product manifolds.
//!
//! Kernel coordinates are 1-based `(c, d)` pairs: input channel `c ∈ 1..=C`,
//! output channel `d ∈ 1..=D`. An [`EnsemblePlan`] partitions the `C·D`
//! coordinates of one layer into groups, and each group becomes one product
//! manifold whose components are the group's kernels in lexicographic `(c, d)`
//! order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{ManifoldError, ManifoldKind, ManifoldSpec};
use crate::product::{ProductError, ProductManifold};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("cannot split {n} kernels into {m} non-empty groups")]
    TooManyGroups { n: usize, m: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid layer shape: {0}")]
    InvalidShape(String),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Product(#[from] ProductError),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

/// Kernel tensor shape of one layer: `A×B` kernels, `C` inputs, `D` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub layer: usize,
    pub kernel_rows: usize,
    pub kernel_cols: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerShape {
    pub fn new(
        layer: usize,
        kernel_rows: usize,
        kernel_cols: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let shape = Self {
            layer,
            kernel_rows,
            kernel_cols,
            in_channels,
            out_channels,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_rows == 0
            || self.kernel_cols == 0
            || self.in_channels == 0
            || self.out_channels == 0
        {
            return Err(EnsembleError::InvalidShape(format!(
                "all dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_rows * self.kernel_cols
    }

    pub fn num_kernels(&self) -> usize {
        self.in_channels * self.out_channels
    }

    /// Length of the flat parameter vector holding every kernel of the layer.
    pub fn param_len(&self) -> usize {
        self.num_kernels() * self.kernel_len()
    }

    /// Start of kernel `(c, d)` in the flat layer storage. Kernels are stored
    /// input-channel major: `((c−1)·D + (d−1))·A·B`.
    pub fn kernel_offset(&self, coord: KernelCoord) -> usize {
        ((coord.c - 1) * self.out_channels + (coord.d - 1)) * self.kernel_len()
    }

    pub fn contains(&self, coord: KernelCoord) -> bool {
        (1..=self.in_channels).contains(&coord.c) && (1..=self.out_channels).contains(&coord.d)
    }

    /// All coordinates in lexicographic `(c, d)` order.
    pub fn coords(&self) -> impl Iterator<Item = KernelCoord> + '_ {
        (1..=self.in_channels)
            .flat_map(move |c| (1..=self.out_channels).map(move |d| KernelCoord { c, d }))
    }
}

/// 1-based kernel coordinate `(input channel, output channel)`.
/// Serializes as a two-element array `[c, d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct KernelCoord {
    pub c: usize,
    pub d: usize,
}

impl KernelCoord {
    pub fn new(c: usize, d: usize) -> Self {
        Self { c, d }
    }
}

impl From<[usize; 2]> for KernelCoord {
    fn from([c, d]: [usize; 2]) -> Self {
        Self { c, d }
    }
}

impl From<KernelCoord> for [usize; 2] {
    fn from(k: KernelCoord) -> Self {
        [k.c, k.d]
    }
}

impl fmt::Display for KernelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.c, self.d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "PI")]
    Pi,
    #[serde(rename = "PO")]
    Po,
    #[serde(rename = "PIO")]
    Pio,
    Whole,
}

/// Manifold kind chosen for a group, plus an optional Stiefel curvature bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldChoice {
    pub kind: ManifoldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature_bound: Option<f64>,
}

impl From<ManifoldKind> for ManifoldChoice {
    fn from(kind: ManifoldKind) -> Self {
        Self {
            kind,
            curvature_bound: None,
        }
    }
}

impl ManifoldChoice {
    pub fn spec(&self, rows: usize, cols: usize) -> Result<ManifoldSpec> {
        let spec = ManifoldSpec::new(self.kind, rows, cols)?;
        Ok(match self.curvature_bound {
            Some(b) => spec.with_curvature_bound(b)?,
            None => spec,
        })
    }
}

/// Serialized manifold of a group: `{kind, rows, cols}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupManifold {
    pub kind: ManifoldKind,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature_bound: Option<f64>,
}

impl GroupManifold {
    pub fn spec(&self) -> Result<ManifoldSpec> {
        ManifoldChoice {
            kind: self.kind,
            curvature_bound: self.curvature_bound,
        }
        .spec(self.rows, self.cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub members: Vec<KernelCoord>,
    pub manifold: GroupManifold,
}

impl Group {
    /// Members sorted lexicographically; this is the component order of the
    /// group's product manifold.
    pub fn ordered_members(&self) -> Vec<KernelCoord> {
        let mut m = self.members.clone();
        m.sort_unstable();
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePlan {
    pub layer: usize,
    pub strategy: Strategy,
    pub groups: Vec<Group>,
}

/// Splits `1..=n` into `m` contiguous ranges whose sizes differ by at most one,
/// larger ranges first.
pub fn kss_split(n: usize, m: usize) -> Result<Vec<Vec<usize>>> {
    if m == 0 || m > n {
        return Err(EnsembleError::TooManyGroups { n, m });
    }
    let (base, extra) = (n / m, n % m);
    let mut next = 1;
    Ok((0..m)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let range: Vec<usize> = (next..next + size).collect();
            next += size;
            range
        })
        .collect())
}

fn check_channel_partition(splits: &[Vec<usize>], n: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; n + 1];
    for s in splits {
        if s.is_empty() {
            return Err(EnsembleError::InvalidPartition(format!("empty {what} subset")));
        }
        for &i in s {
            if i == 0 || i > n {
                return Err(EnsembleError::InvalidPartition(format!(
                    "{what} channel {i} outside 1..={n}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(EnsembleError::InvalidPartition(format!(
                    "{what} channel {i} appears in more than one subset"
                )));
            }
        }
    }
    if let Some(missing) = (1..=n).find(|&i| !seen[i]) {
        return Err(EnsembleError::InvalidPartition(format!(
            "{what} channel {missing} is not covered"
        )));
    }
    Ok(())
}

fn group_manifold(shape: &LayerShape, choice: ManifoldChoice) -> Result<GroupManifold> {
    // fail early on kinds that do not fit the kernel shape
    choice.spec(shape.kernel_rows, shape.kernel_cols)?;
    Ok(GroupManifold {
        kind: choice.kind,
        rows: shape.kernel_rows,
        cols: shape.kernel_cols,
        curvature_bound: choice.curvature_bound,
    })
}

fn check_assignment<T>(splits: &[T], assignment: &[ManifoldChoice]) -> Result<()> {
    if splits.len() != assignment.len() {
        return Err(EnsembleError::InvalidPartition(format!(
            "{} subsets but {} manifold assignments",
            splits.len(),
            assignment.len()
        )));
    }
    Ok(())
}

/// PEMs per input channel: for each `c` and each output subset `O_b`, one
/// group `{(c, d) : d ∈ O_b}`.
pub fn build_pi(
    shape: &LayerShape,
    output_splits: &[Vec<usize>],
    assignment: &[ManifoldChoice],
) -> Result<EnsemblePlan> {
    shape.validate()?;
    check_assignment(output_splits, assignment)?;
    check_channel_partition(output_splits, shape.out_channels, "output")?;
    let manifolds = assignment
        .iter()
        .map(|&a| group_manifold(shape, a))
        .collect::<Result<Vec<_>>>()?;
    let mut groups = Vec::with_capacity(shape.in_channels * output_splits.len());
    for c in 1..=shape.in_channels {
        for (split, &manifold) in output_splits.iter().zip(&manifolds) {
            let mut members: Vec<KernelCoord> =
                split.iter().map(|&d| KernelCoord { c, d }).collect();
            members.sort_unstable();
            groups.push(Group { members, manifold });
        }
    }
    Ok(EnsemblePlan {
        layer: shape.layer,
        strategy: Strategy::Pi,
        groups,
    })
}

/// PEMs per output channel: for each `d` and each input subset `Λ_a`, one
/// group `{(c, d) : c ∈ Λ_a}`.
pub fn build_po(
    shape: &LayerShape,
    input_splits: &[Vec<usize>],
    assignment: &[ManifoldChoice],
) -> Result<EnsemblePlan> {
    shape.validate()?;
    check_assignment(input_splits, assignment)?;
    check_channel_partition(input_splits, shape.in_channels, "input")?;
    let manifolds = assignment
        .iter()
        .map(|&a| group_manifold(shape, a))
        .collect::<Result<Vec<_>>>()?;
    let mut groups = Vec::with_capacity(shape.out_channels * input_splits.len());
    for d in 1..=shape.out_channels {
        for (split, &manifold) in input_splits.iter().zip(&manifolds) {
            let mut members: Vec<KernelCoord> =
                split.iter().map(|&c| KernelCoord { c, d }).collect();
            members.sort_unstable();
            groups.push(Group { members, manifold });
        }
    }
    Ok(EnsemblePlan {
        layer: shape.layer,
        strategy: Strategy::Po,
        groups,
    })
}

/// PEMs over arbitrary coordinate sets. Groups are kept verbatim once they are
/// shown to cover the layer exactly.
pub fn build_pio(
    shape: &LayerShape,
    groups: Vec<(Vec<KernelCoord>, ManifoldChoice)>,
) -> Result<EnsemblePlan> {
    shape.validate()?;
    let groups = groups
        .into_iter()
        .map(|(members, choice)| {
            Ok(Group {
                members,
                manifold: group_manifold(shape, choice)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let plan = EnsemblePlan {
        layer: shape.layer,
        strategy: Strategy::Pio,
        groups,
    };
    let report = validate_plan(&plan, shape);
    if !report.is_ok() {
        return Err(EnsembleError::InvalidPartition(report.to_string()));
    }
    Ok(plan)
}

/// One group holding every kernel of the layer.
pub fn build_whole(shape: &LayerShape, choice: ManifoldChoice) -> Result<EnsemblePlan> {
    shape.validate()?;
    Ok(EnsemblePlan {
        layer: shape.layer,
        strategy: Strategy::Whole,
        groups: vec![Group {
            members: shape.coords().collect(),
            manifold: group_manifold(shape, choice)?,
        }],
    })
}

fn cycle(kinds: &[ManifoldChoice], m: usize) -> Result<Vec<ManifoldChoice>> {
    if kinds.is_empty() {
        return Err(EnsembleError::InvalidPartition(
            "no manifold kinds to assign".into(),
        ));
    }
    Ok((0..m).map(|i| kinds[i % kinds.len()]).collect())
}

/// PI with the output channels split into `m` KSS subsets; subset `i` gets
/// `kinds[i % kinds.len()]`.
pub fn pi_kss(shape: &LayerShape, m: usize, kinds: &[ManifoldChoice]) -> Result<EnsemblePlan> {
    build_pi(shape, &kss_split(shape.out_channels, m)?, &cycle(kinds, m)?)
}

/// PO with the input channels split into `m` KSS subsets.
pub fn po_kss(shape: &LayerShape, m: usize, kinds: &[ManifoldChoice]) -> Result<EnsemblePlan> {
    build_po(shape, &kss_split(shape.in_channels, m)?, &cycle(kinds, m)?)
}

/// PIO by splitting the whole kernel set into `m` KSS subsets. Kernels are
/// enumerated output-channel major (all input channels of `d = 1`, then
/// `d = 2`, ...), so subsets follow output channels where sizes allow.
pub fn pio_kss(shape: &LayerShape, m: usize, kinds: &[ManifoldChoice]) -> Result<EnsemblePlan> {
    let all: Vec<KernelCoord> = (1..=shape.out_channels)
        .flat_map(|d| (1..=shape.in_channels).map(move |c| KernelCoord { c, d }))
        .collect();
    let splits = kss_split(all.len(), m)?;
    let kinds = cycle(kinds, m)?;
    build_pio(
        shape,
        splits
            .into_iter()
            .zip(kinds)
            .map(|(idx, k)| (idx.into_iter().map(|i| all[i - 1]).collect(), k))
            .collect(),
    )
}

/// Cover/disjointness report for a plan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanReport {
    pub uncovered: Vec<KernelCoord>,
    pub duplicated: Vec<KernelCoord>,
    pub out_of_range: Vec<KernelCoord>,
    pub empty_groups: Vec<usize>,
    pub bad_manifolds: Vec<(usize, String)>,
}

impl PlanReport {
    pub fn is_ok(&self) -> bool {
        self.uncovered.is_empty()
            && self.duplicated.is_empty()
            && self.out_of_range.is_empty()
            && self.empty_groups.is_empty()
            && self.bad_manifolds.is_empty()
    }
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let list = |v: &[KernelCoord]| v.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ");
        let mut parts = Vec::new();
        if !self.uncovered.is_empty() {
            parts.push(format!("uncovered: {}", list(&self.uncovered)));
        }
        if !self.duplicated.is_empty() {
            parts.push(format!("doubly assigned: {}", list(&self.duplicated)));
        }
        if !self.out_of_range.is_empty() {
            parts.push(format!("out of range: {}", list(&self.out_of_range)));
        }
        if !self.empty_groups.is_empty() {
            parts.push(format!("empty groups: {:?}", self.empty_groups));
        }
        for (g, why) in &self.bad_manifolds {
            parts.push(format!("group {g}: {why}"));
        }
        f.write_str(&parts.join("; "))
    }
}

pub fn validate_plan(plan: &EnsemblePlan, shape: &LayerShape) -> PlanReport {
    let mut report = PlanReport::default();
    let mut counts: BTreeMap<KernelCoord, usize> = BTreeMap::new();
    for (gi, g) in plan.groups.iter().enumerate() {
        if g.members.is_empty() {
            report.empty_groups.push(gi);
        }
        if g.manifold.rows != shape.kernel_rows || g.manifold.cols != shape.kernel_cols {
            report.bad_manifolds.push((
                gi,
                format!(
                    "manifold is {}x{} but kernels are {}x{}",
                    g.manifold.rows, g.manifold.cols, shape.kernel_rows, shape.kernel_cols
                ),
            ));
        } else if let Err(e) = g.manifold.spec() {
            report.bad_manifolds.push((gi, e.to_string()));
        }
        for &k in &g.members {
            if shape.contains(k) {
                *counts.entry(k).or_default() += 1;
            } else if !report.out_of_range.contains(&k) {
                report.out_of_range.push(k);
            }
        }
    }
    for k in shape.coords() {
        match counts.get(&k).copied().unwrap_or(0) {
            0 => report.uncovered.push(k),
            1 => {}
            _ => report.duplicated.push(k),
        }
    }
    report
}

/// One product manifold per group, components in lexicographic member order.
pub fn plan_to_products(plan: &EnsemblePlan, shape: &LayerShape) -> Result<Vec<ProductManifold>> {
    let report = validate_plan(plan, shape);
    if !report.is_ok() {
        return Err(EnsembleError::InvalidPartition(report.to_string()));
    }
    plan.groups
        .iter()
        .map(|g| {
            let spec = g.manifold.spec()?;
            Ok(ProductManifold::new(vec![spec; g.members.len()])?)
        })
        .collect()
}

/// Flat storage of every kernel of a layer, interpreted through a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelState {
    shape: LayerShape,
    plan: EnsemblePlan,
    values: Vec<f64>,
}

impl KernelState {
    pub fn new(shape: LayerShape, plan: EnsemblePlan, values: Vec<f64>) -> Result<Self> {
        let report = validate_plan(&plan, &shape);
        if !report.is_ok() {
            return Err(EnsembleError::InvalidPartition(report.to_string()));
        }
        if values.len() != shape.param_len() {
            return Err(EnsembleError::InvalidShape(format!(
                "layer {} expects {} values, got {}",
                shape.layer,
                shape.param_len(),
                values.len()
            )));
        }
        Ok(Self { shape, plan, values })
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn plan(&self) -> &EnsemblePlan {
        &self.plan
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kernel(&self, coord: KernelCoord) -> &[f64] {
        let o = self.shape.kernel_offset(coord);
        &self.values[o..o + self.shape.kernel_len()]
    }

    /// Concatenates the kernels of group `g` in product-manifold order.
    pub fn gather(&self, g: usize) -> Vec<f64> {
        gather(&self.shape, &self.plan.groups[g], &self.values)
    }

    pub fn scatter(&mut self, g: usize, point: &[f64]) {
        scatter(&self.shape, &self.plan.groups[g], point, &mut self.values)
    }
}

pub(crate) fn gather(shape: &LayerShape, group: &Group, layer: &[f64]) -> Vec<f64> {
    let len = shape.kernel_len();
    let mut out = Vec::with_capacity(group.members.len() * len);
    for k in group.ordered_members() {
        let o = shape.kernel_offset(k);
        out.extend_from_slice(&layer[o..o + len]);
    }
    out
}

pub(crate) fn scatter(shape: &LayerShape, group: &Group, point: &[f64], layer: &mut [f64]) {
    let len = shape.kernel_len();
    for (i, k) in group.ordered_members().into_iter().enumerate() {
        let o = shape.kernel_offset(k);
        layer[o..o + len].copy_from_slice(&point[i * len..(i + 1) * len]);
    }
}
