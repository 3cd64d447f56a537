//! Bivariate Gaussian mixtures over 2D velocities.
//!
//! The decoder emits `6 * M` unconstrained values per step, laid out in
//! blocks of `M`: mixture logits, x means, y means, log x-scales, log
//! y-scales and correlation pre-activations. Constraints are applied by
//! log-softmax, `exp` and `tanh`, so any finite raw vector maps to a valid
//! mixture.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{NnError, Result};
use crate::real::Real;
use crate::tensor::log_sum_exp;

pub const GMM_PARAMS_PER_COMPONENT: usize = 6;

/// Log-scales are clamped to this range before exponentiation.
pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 6.0;
/// Correlations are clamped to `[-RHO_MAX, RHO_MAX]` after the `tanh`.
pub const RHO_MAX: f64 = 1.0 - 1e-5;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Constrained parameters of one bivariate mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub log_weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub scales: Vec<[f64; 2]>,
    pub correlations: Vec<f64>,
}

impl GmmParams {
    pub fn n_components(&self) -> usize {
        self.log_weights.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// Applies the raw-to-constrained mapping to one decoder output row.
    pub fn from_raw<S: Real>(raw: &[S], n_comp: usize) -> Result<Self> {
        if raw.len() != GMM_PARAMS_PER_COMPONENT * n_comp || n_comp == 0 {
            return Err(NnError::Shape {
                op: "GmmParams::from_raw",
                detail: format!("{} raw values for {} components", raw.len(), n_comp),
            });
        }
        let r: Vec<f64> = raw.iter().map(|v| v.f64()).collect();
        let block = |b: usize| &r[b * n_comp..(b + 1) * n_comp];
        let lse = log_sum_exp(block(0));
        Ok(GmmParams {
            log_weights: block(0).iter().map(|l| l - lse).collect(),
            means: (0..n_comp).map(|m| [block(1)[m], block(2)[m]]).collect(),
            scales: (0..n_comp)
                .map(|m| {
                    [
                        block(3)[m].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp(),
                        block(4)[m].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp(),
                    ]
                })
                .collect(),
            correlations: block(5)
                .iter()
                .map(|c| c.tanh().clamp(-RHO_MAX, RHO_MAX))
                .collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_components();
        if n == 0 || self.means.len() != n || self.scales.len() != n || self.correlations.len() != n {
            return Err(NnError::Parameterization("component count mismatch".into()));
        }
        let total: f64 = self.weights().iter().sum();
        if (total - 1.0).abs() > 1e-6 || self.log_weights.iter().any(|w| w.is_nan() || *w > 1e-12) {
            return Err(NnError::Parameterization(format!("weights sum to {total}")));
        }
        for (m, s) in self.scales.iter().enumerate() {
            if !(s[0] > 0.0 && s[1] > 0.0 && s[0].is_finite() && s[1].is_finite()) {
                return Err(NnError::Parameterization(format!("component {m} scale {s:?}")));
            }
        }
        for (m, &rho) in self.correlations.iter().enumerate() {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(NnError::Parameterization(format!("component {m} correlation {rho}")));
            }
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(NnError::Parameterization("non-finite mean".into()));
        }
        Ok(())
    }

    pub fn log_prob(&self, point: [f64; 2]) -> f64 {
        let terms: Vec<f64> = (0..self.n_components())
            .map(|m| self.log_weights[m] + self.component_log_density(m, point))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn component_log_density(&self, m: usize, point: [f64; 2]) -> f64 {
        let [sx, sy] = self.scales[m];
        let rho = self.correlations[m];
        let dx = (point[0] - self.means[m][0]) / sx;
        let dy = (point[1] - self.means[m][1]) / sy;
        let om = 1.0 - rho * rho;
        -LN_2PI - sx.ln() - sy.ln() - 0.5 * om.ln() - 0.5 * (dx * dx + dy * dy - 2.0 * rho * dx * dy) / om
    }

    pub fn mean(&self) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (w, mu) in self.weights().iter().zip(&self.means) {
            out[0] += w * mu[0];
            out[1] += w * mu[1];
        }
        out
    }

    /// Draws a component by weight, then a correlated bivariate normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.n_components() - 1;
        for (m, w) in self.log_weights.iter().enumerate() {
            acc += w.exp();
            if u < acc {
                comp = m;
                break;
            }
        }
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let [sx, sy] = self.scales[comp];
        let rho = self.correlations[comp];
        [
            self.means[comp][0] + sx * z1,
            self.means[comp][1] + sy * (rho * z1 + (1.0 - rho * rho).sqrt() * z2),
        ]
    }
}

pub fn gmm_log_prob(params: &GmmParams, point: [f64; 2]) -> Result<f64> {
    params.validate()?;
    Ok(params.log_prob(point))
}

pub fn gmm_sample<R: Rng + ?Sized>(params: &GmmParams, rng: &mut R) -> [f64; 2] {
    params.sample(rng)
}

/// Log-density of `target` under the mixture encoded by `raw`, computed in
/// 64-bit. When `grad` is given it receives d(log p)/d(raw).
pub(crate) fn raw_log_prob_and_grad<S: Real>(
    raw: &[S],
    n_comp: usize,
    target: [S; 2],
    grad: Option<&mut [S]>,
) -> S {
    let m_n = n_comp;
    let at = |b: usize, m: usize| raw[b * m_n + m].f64();
    let (tx, ty) = (target[0].f64(), target[1].f64());

    let logits: Vec<f64> = (0..m_n).map(|m| at(0, m)).collect();
    let lse_logits = log_sum_exp(&logits);

    struct Comp {
        dx: f64,
        dy: f64,
        sx: f64,
        sy: f64,
        rho: f64,
        om: f64,
        a_free: bool,
        b_free: bool,
        rho_free: bool,
    }

    let mut comps = Vec::with_capacity(m_n);
    let mut joint = Vec::with_capacity(m_n);
    for m in 0..m_n {
        let a = at(3, m);
        let b = at(4, m);
        let sx = a.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp();
        let sy = b.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp();
        let th = at(5, m).tanh();
        let rho = th.clamp(-RHO_MAX, RHO_MAX);
        let om = 1.0 - rho * rho;
        let dx = (tx - at(1, m)) / sx;
        let dy = (ty - at(2, m)) / sy;
        let q = (dx * dx + dy * dy - 2.0 * rho * dx * dy) / om;
        let log_n = -LN_2PI - sx.ln() - sy.ln() - 0.5 * om.ln() - 0.5 * q;
        joint.push(logits[m] - lse_logits + log_n);
        comps.push(Comp {
            dx,
            dy,
            sx,
            sy,
            rho,
            om,
            a_free: a > LOG_SIGMA_MIN && a < LOG_SIGMA_MAX,
            b_free: b > LOG_SIGMA_MIN && b < LOG_SIGMA_MAX,
            rho_free: th.abs() < RHO_MAX,
        });
    }
    let total = log_sum_exp(&joint);

    if let Some(grad) = grad {
        for m in 0..m_n {
            let c = &comps[m];
            let resp = (joint[m] - total).exp();
            let prior = (logits[m] - lse_logits).exp();
            let (dx, dy, rho, om) = (c.dx, c.dy, c.rho, c.om);
            let d_mux = (dx - rho * dy) / (om * c.sx);
            let d_muy = (dy - rho * dx) / (om * c.sy);
            let d_a = -1.0 + (dx - rho * dy) * dx / om;
            let d_b = -1.0 + (dy - rho * dx) * dy / om;
            let s = dx * dx + dy * dy - 2.0 * rho * dx * dy;
            let d_rho = rho / om + dx * dy / om - s * rho / (om * om);
            grad[m] = S::c(resp - prior);
            grad[m_n + m] = S::c(resp * d_mux);
            grad[2 * m_n + m] = S::c(resp * d_muy);
            grad[3 * m_n + m] = S::c(if c.a_free { resp * d_a } else { 0.0 });
            grad[4 * m_n + m] = S::c(if c.b_free { resp * d_b } else { 0.0 });
            grad[5 * m_n + m] = S::c(if c.rho_free {
                resp * d_rho * (1.0 - rho * rho)
            } else {
                0.0
            });
        }
    }
    S::c(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn standard(n_comp: usize) -> GmmParams {
        let raw = vec![0.0f64; 6 * n_comp];
        GmmParams::from_raw(&raw, n_comp).unwrap()
    }

    #[test]
    fn standard_bivariate_mode() {
        let lp = gmm_log_prob(&standard(1), [0.0, 0.0]).unwrap();
        assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((lp + 1.837877).abs() < 1e-6);
    }

    #[test]
    fn identical_components_collapse() {
        let a = gmm_log_prob(&standard(1), [0.3, -0.2]).unwrap();
        let b = gmm_log_prob(&standard(2), [0.3, -0.2]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn raw_and_constrained_paths_agree() {
        let raw: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let p = GmmParams::from_raw(&raw, 2).unwrap();
        let direct = raw_log_prob_and_grad(&raw, 2, [0.4, -0.1], None);
        assert!((direct - p.log_prob([0.4, -0.1])).abs() < 1e-12);
    }

    #[test]
    fn invalid_correlation_is_rejected() {
        let mut p = standard(1);
        p.correlations[0] = 1.0;
        assert!(matches!(
            gmm_log_prob(&p, [0.0, 0.0]),
            Err(NnError::Parameterization(_))
        ));
        let mut p = standard(1);
        p.scales[0][1] = 0.0;
        assert!(gmm_log_prob(&p, [0.0, 0.0]).is_err());
    }

    #[test]
    fn near_deterministic_samples() {
        let mut raw = vec![0.0f64; 6];
        raw[1] = 1.5;
        raw[2] = -0.5;
        raw[3] = (1e-6f64).ln();
        raw[4] = (1e-6f64).ln();
        let mut p = GmmParams::from_raw(&raw, 1).unwrap();
        // below the clamp: set directly
        p.scales[0] = [1e-6, 1e-6];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = p.sample(&mut rng);
            assert!((s[0] - 1.5).abs() < 1e-4 && (s[1] + 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let raw: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = GmmParams::from_raw(&raw, 4).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| p.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }
}
