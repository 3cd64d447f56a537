use std::f64::consts::TAU;

use trajectron_nn::tensor::log_sum_exp;

use crate::error::{CoreError, Result};

/// Diagonal jitter added to a bandwidth matrix that is not safely positive
/// definite.
pub const BANDWIDTH_JITTER: f64 = 1e-9;

/// Gaussian kernel density estimate in 2D with Scott's rule bandwidth:
/// the unbiased sample covariance times `n^(-1/3)`.
#[derive(Debug, Clone)]
pub struct KdeModel {
    points: Vec<[f64; 2]>,
    /// Symmetric positive definite `[[a, b], [b, c]]`.
    bandwidth: [f64; 3],
    inv: [f64; 3],
    log_norm: f64,
}

impl KdeModel {
    pub fn fit(points: &[[f64; 2]]) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(CoreError::data(format!("KDE needs at least 2 samples, got {n}")));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::data("KDE samples must be finite"));
        }
        let nf = n as f64;
        let mx = points.iter().map(|p| p[0]).sum::<f64>() / nf;
        let my = points.iter().map(|p| p[1]).sum::<f64>() / nf;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in points {
            let (dx, dy) = (p[0] - mx, p[1] - my);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let factor = nf.powf(-1.0 / 3.0) / (nf - 1.0);
        let mut h = [sxx * factor, sxy * factor, syy * factor];
        if !positive_definite(&h) {
            h[0] += BANDWIDTH_JITTER;
            h[2] += BANDWIDTH_JITTER;
        }
        let det = h[0] * h[2] - h[1] * h[1];
        let inv = [h[2] / det, -h[1] / det, h[0] / det];
        Ok(KdeModel {
            points: points.to_vec(),
            bandwidth: h,
            inv,
            log_norm: -(TAU.ln() + 0.5 * det.ln() + nf.ln()),
        })
    }

    /// `[[a, b], [b, c]]` as `[a, b, c]`.
    pub fn bandwidth(&self) -> [f64; 3] {
        self.bandwidth
    }

    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        let [a, b, c] = self.inv;
        let exps: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                let (dx, dy) = (x[0] - p[0], x[1] - p[1]);
                -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
            })
            .collect();
        log_sum_exp(&exps) + self.log_norm
    }
}

/// Requires a determinant well clear of rounding relative to the diagonal.
fn positive_definite(h: &[f64; 3]) -> bool {
    let det = h[0] * h[2] - h[1] * h[1];
    h[0] > 0.0 && h[2] > 0.0 && det > 1e-12 * h[0] * h[2]
}

/// Negative log-density of the truth under a KDE fit to each step's cloud.
pub fn kde_nll_per_step<C: AsRef<[[f64; 2]]>>(clouds: &[C], truth: &[[f64; 2]]) -> Result<Vec<f64>> {
    if clouds.len() != truth.len() {
        return Err(CoreError::data(format!(
            "{} sample clouds for {} ground-truth steps",
            clouds.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(CoreError::data("empty ground truth"));
    }
    clouds
        .iter()
        .zip(truth)
        .map(|(c, &t)| Ok(-KdeModel::fit(c.as_ref())?.log_density(t)))
        .collect()
}

/// [`kde_nll_per_step`] averaged over the horizon.
pub fn kde_nll<C: AsRef<[[f64; 2]]>>(clouds: &[C], truth: &[[f64; 2]]) -> Result<f64> {
    let per_step = kde_nll_per_step(clouds, truth)?;
    Ok(per_step.iter().sum::<f64>() / per_step.len() as f64)
}

/// Transposes per-sample trajectories into per-step clouds.
pub fn clouds_by_step<T: AsRef<[[f64; 2]]>>(samples: &[T]) -> Vec<Vec<[f64; 2]>> {
    let horizon = samples.first().map_or(0, |s| s.as_ref().len());
    (0..horizon)
        .map(|t| samples.iter().map(|s| s.as_ref()[t]).collect())
        .collect()
}
