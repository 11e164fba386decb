use super::{Batch, Objective, Result};

/// Central-difference gradient of `objective`, one coordinate at a time.
pub fn finite_difference_gradient<O: Objective + ?Sized>(
    objective: &O,
    params: &[Vec<f64>],
    batch: Batch<'_>,
    h: f64,
) -> Result<Vec<Vec<f64>>> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for l in 0..params.len() {
        let mut g = vec![0.0; params[l].len()];
        for i in 0..params[l].len() {
            let x = params[l][i];
            work[l][i] = x + h;
            let up = objective.loss(&work, batch)?;
            work[l][i] = x - h;
            let down = objective.loss(&work, batch)?;
            work[l][i] = x;
            g[i] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// `max_i |a_i − b_i| / max(max_i |a_i|, max_i |b_i|)` over all layers.
///
/// Scaling by the largest entry keeps near-zero coordinates from dominating.
pub fn max_relative_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let diff = a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a
        .iter()
        .flatten()
        .chain(b.iter().flatten())
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
