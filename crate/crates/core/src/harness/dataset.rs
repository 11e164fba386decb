//! Synthetic image classification data.
//!
//! Each class is an oriented sinusoidal grating; samples jitter orientation,
//! frequency, amplitude and phase around the class mean and add pixel noise.
//! Pixel values are rounded to `f32` so the binary container round-trips
//! exactly.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "PEMD" | version u32 | classes u32 | per_class u32 | channels u32 | height u32 | width u32
//! | classes·per_class·channels·height·width × f32 (sample, channel, row, col)
//! | classes·per_class × u16 labels
//! ```

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{HarnessError, Result};

const MAGIC: &[u8; 4] = b"PEMD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for DatasetShape {
    fn default() -> Self {
        Self {
            channels: 2,
            height: 8,
            width: 8,
        }
    }
}

impl DatasetShape {
    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub classes: usize,
    pub per_class: usize,
    pub shape: DatasetShape,
    /// Sample-major `(channel, row, col)` pixels.
    pub images: Vec<f64>,
    pub labels: Vec<u16>,
    /// Generator seed; unknown for datasets read from disk.
    pub seed: Option<u64>,
}

pub fn make_synthetic_dataset(classes: usize, per_class: usize, seed: u64) -> Result<SyntheticDataset> {
    make_synthetic_dataset_with(DatasetShape::default(), classes, per_class, seed)
}

pub fn make_synthetic_dataset_with(
    shape: DatasetShape,
    classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    if classes < 2 || classes > usize::from(u16::MAX) {
        return Err(HarnessError::InvalidInput(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if per_class == 0 || shape.image_len() == 0 {
        return Err(HarnessError::InvalidInput("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * per_class;
    let mut images = Vec::with_capacity(n * shape.image_len());
    let mut labels = Vec::with_capacity(n);
    // per-class channel gains: the "blob" each class is drawn around
    let gains: Vec<f64> = (0..classes * shape.channels)
        .map(|_| 1.0 + 0.3 * gauss(&mut rng))
        .collect();
    for i in 0..n {
        let k = i % classes;
        let theta = k as f64 * PI / classes as f64 + 0.08 * gauss(&mut rng);
        let freq = 0.25 * (1.0 + 0.05 * gauss(&mut rng));
        let amp = 1.0 + 0.15 * gauss(&mut rng);
        let phase = 2.0 * PI * rng.random::<f64>();
        let (s, c) = theta.sin_cos();
        for ch in 0..shape.channels {
            let gain = gains[k * shape.channels + ch] + 0.1 * gauss(&mut rng);
            for y in 0..shape.height {
                for x in 0..shape.width {
                    let u = x as f64 * c + y as f64 * s;
                    let arg = 2.0 * PI * freq * u + phase + ch as f64 * PI / 3.0;
                    let v = amp * gain * arg.sin() + 0.25 * gauss(&mut rng);
                    images.push(v as f32 as f64);
                }
            }
        }
        labels.push(k as u16);
    }
    Ok(SyntheticDataset {
        classes,
        per_class,
        shape,
        images,
        labels,
        seed: Some(seed),
    })
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.shape.image_len();
        &self.images[i * len..(i + 1) * len]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            VERSION,
            self.classes as u32,
            self.per_class as u32,
            self.shape.channels as u32,
            self.shape.height as u32,
            self.shape.width as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &x in &self.images {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        for &l in &self.labels {
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(HarnessError::InvalidInput("not a PEMD dataset".into()));
        }
        let mut u32s = [0u32; 6];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        let [version, classes, per_class, channels, height, width] = u32s.map(|v| v as usize);
        if version != VERSION as usize {
            return Err(HarnessError::InvalidInput(format!(
                "unsupported dataset version {version}"
            )));
        }
        let shape = DatasetShape {
            channels,
            height,
            width,
        };
        let n = classes * per_class;
        let mut images = Vec::with_capacity(n * shape.image_len());
        let mut b4 = [0u8; 4];
        for _ in 0..n * shape.image_len() {
            r.read_exact(&mut b4)?;
            images.push(f32::from_le_bytes(b4) as f64);
        }
        let mut labels = Vec::with_capacity(n);
        let mut b2 = [0u8; 2];
        for _ in 0..n {
            r.read_exact(&mut b2)?;
            let l = u16::from_le_bytes(b2);
            if usize::from(l) >= classes {
                return Err(HarnessError::InvalidInput(format!("label {l} out of range")));
            }
            labels.push(l);
        }
        Ok(Self {
            classes,
            per_class,
            shape,
            images,
            labels,
            seed: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = make_synthetic_dataset(2, 100, 7).unwrap();
        let b = make_synthetic_dataset(2, 100, 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.len(), 200);
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 100);
        assert_ne!(a.to_bytes(), make_synthetic_dataset(2, 100, 8).unwrap().to_bytes());
    }

    #[test]
    fn container_round_trip() {
        let d = make_synthetic_dataset(3, 4, 1).unwrap();
        let bytes = d.to_bytes();
        assert_eq!(&bytes[..4], b"PEMD");
        assert_eq!(bytes.len(), 4 + 24 + 12 * 128 * 4 + 12 * 2);
        let back = SyntheticDataset::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.images, d.images);
        assert_eq!(back.labels, d.labels);
        assert_eq!(back.seed, None);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut bytes = make_synthetic_dataset(2, 1, 1).unwrap().to_bytes();
        bytes[4] = 9;
        assert!(SyntheticDataset::read_from(bytes.as_slice()).is_err());
        assert!(SyntheticDataset::read_from(&b"NOPE"[..]).is_err());
        assert!(make_synthetic_dataset(1, 10, 0).is_err());
    }
}
