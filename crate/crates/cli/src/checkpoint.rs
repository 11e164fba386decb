//! Kernel checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "PEMC" | version u32 | t u64 | seed u64
//! | base_rate f64 | decay f64 | exponent f64 | mode u32 (0 inverse-time, 1 constant)
//! | header_len u32 | header_len bytes of JSON {"layers": [{"shape": .., "plan": ..}]}
//! | products u32 | per product: len u64, len × f64
//! ```
//!
//! Products follow the header: layer order, then group order, each point in
//! lexicographic member order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use pem_core::ensemble::{plan_to_products, EnsemblePlan, LayerShape};
use pem_core::gsgd::ScheduleMode;
use pem_core::{ProductManifold, ScheduleConfig};

pub const MAGIC: &[u8; 4] = b"PEMC";
pub const VERSION: u32 = 1;
/// Largest residual accepted when loading.
pub const LOAD_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub shape: LayerShape,
    pub plan: EnsemblePlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub t: u64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub layers: Vec<CheckpointLayer>,
    pub points: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    layers: Vec<CheckpointLayer>,
}

/// One product of a checkpoint as seen by `inspect`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductReport {
    pub layer: usize,
    pub group: usize,
    pub kind: String,
    pub components: usize,
    pub rows: usize,
    pub cols: usize,
    pub residual: f64,
    pub norm: f64,
}

impl Checkpoint {
    pub fn products(&self) -> Result<Vec<ProductManifold>, CheckpointError> {
        let mut out = Vec::new();
        for l in &self.layers {
            let ps = plan_to_products(&l.plan, &l.shape).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            out.extend(ps);
        }
        Ok(out)
    }

    pub fn report(&self) -> Result<Vec<ProductReport>, CheckpointError> {
        let products = self.products()?;
        if products.len() != self.points.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} products in the header but {} points",
                products.len(),
                self.points.len()
            )));
        }
        let mut out = Vec::with_capacity(products.len());
        let mut it = products.iter().zip(&self.points);
        for l in &self.layers {
            for (g, group) in l.plan.groups.iter().enumerate() {
                let (m, p) = it.next().expect("counted above");
                if p.len() != m.total_ambient_dim() {
                    return Err(CheckpointError::Malformed(format!(
                        "layer {} group {g}: {} values for {} coordinates",
                        l.shape.layer,
                        p.len(),
                        m.total_ambient_dim()
                    )));
                }
                out.push(ProductReport {
                    layer: l.shape.layer,
                    group: g,
                    kind: group.manifold.kind.to_string(),
                    components: m.len(),
                    rows: group.manifold.rows,
                    cols: group.manifold.cols,
                    residual: m.constraint_residual(p),
                    norm: p.iter().map(|x| x * x).sum::<f64>().sqrt(),
                });
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            layers: self.layers.clone(),
        })
        .expect("plans serialize");
        let mut b = Vec::with_capacity(64 + header.len() + 8 * self.points.iter().map(Vec::len).sum::<usize>());
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&self.t.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        for v in [self.schedule.base_rate, self.schedule.decay, self.schedule.exponent] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let mode: u32 = match self.schedule.mode {
            ScheduleMode::InverseTime => 0,
            ScheduleMode::Constant => 1,
        };
        b.extend_from_slice(&mode.to_le_bytes());
        b.extend_from_slice(&(header.len() as u32).to_le_bytes());
        b.extend_from_slice(&header);
        b.extend_from_slice(&(self.points.len() as u32).to_le_bytes());
        for p in &self.points {
            b.extend_from_slice(&(p.len() as u64).to_le_bytes());
            for x in p {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b
    }

    /// Parses without checking feasibility.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let t = r.u64()?;
        let seed = r.u64()?;
        let (base_rate, decay, exponent) = (r.f64()?, r.f64()?, r.f64()?);
        let mode = match r.u32()? {
            0 => ScheduleMode::InverseTime,
            1 => ScheduleMode::Constant,
            m => return Err(CheckpointError::Malformed(format!("unknown schedule mode {m}"))),
        };
        let header_len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut points = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u64()? as usize;
            if len > r.remaining() / 8 {
                return Err(CheckpointError::Truncated);
            }
            points.push((0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?);
        }
        if r.remaining() != 0 {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        let ck = Self {
            t,
            seed,
            schedule: ScheduleConfig {
                base_rate,
                decay,
                exponent,
                mode,
            },
            layers: header.layers,
            points,
        };
        // structural consistency of header and points
        ck.report()?;
        Ok(ck)
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Largest product residual and how many products reach [`LOAD_TOL`].
    pub fn feasibility(&self) -> Result<(f64, usize), CheckpointError> {
        let rep = self.report()?;
        let max = rep.iter().map(|r| r.residual).fold(0.0, f64::max);
        Ok((max, rep.iter().filter(|r| !(r.residual < LOAD_TOL)).count()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if n > self.remaining() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pem_core::ensemble::build_whole;
    use pem_core::ManifoldKind;

    fn sphere_checkpoint() -> Checkpoint {
        let shape = LayerShape::new(1, 4, 1, 1, 1).unwrap();
        let plan = build_whole(&shape, ManifoldKind::Sphere.into()).unwrap();
        let point = plan_to_products(&plan, &shape).unwrap()[0].random_point(3);
        Checkpoint {
            t: 12,
            seed: 9,
            schedule: ScheduleConfig::inverse_time(0.1, 0.01, 0.75),
            layers: vec![CheckpointLayer { shape, plan }],
            points: vec![point],
        }
    }

    #[test]
    fn bitwise_round_trip() {
        let ck = sphere_checkpoint();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert!(back.feasibility().unwrap().0 < 1e-10);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sphere_checkpoint().to_bytes();
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::UnsupportedVersion(2))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
        // scale the first coordinate: parses, but leaves the sphere
        let mut v = bytes.clone();
        let at = v.len() - 32;
        let x = f64::from_le_bytes(v[at..at + 8].try_into().unwrap());
        v[at..at + 8].copy_from_slice(&(x * 3.0 + 1.0).to_le_bytes());
        let (max, bad) = Checkpoint::from_bytes(&v).unwrap().feasibility().unwrap();
        assert!(max >= LOAD_TOL && bad == 1);
    }
}
