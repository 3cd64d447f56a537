//! Quadrature and Monte Carlo oracles for the mixture density and sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajectron_nn::{gmm_log_prob, gmm_sample, GmmParams};

fn random_params(rng: &mut ChaCha8Rng, n: usize) -> GmmParams {
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut raw = logits;
    raw.extend((0..2 * n).map(|_| rng.random_range(-1.5..1.5)));
    raw.extend((0..2 * n).map(|_| rng.random_range(-1.0..0.2)));
    raw.extend((0..n).map(|_| rng.random_range(-1.2..1.2)));
    GmmParams::from_raw(&raw, n).unwrap()
}

#[test]
fn density_integrates_to_one_on_a_wide_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [1, 3, 5] {
        let p = random_params(&mut rng, n);
        let (lo, hi, steps) = (-12.0, 12.0, 960);
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let x = lo + (i as f64 + 0.5) * h;
                let y = lo + (j as f64 + 0.5) * h;
                total += gmm_log_prob(&p, [x, y]).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-2, "{n} components integrate to {total}");
    }
}

#[test]
fn sample_mean_matches_mixture_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_params(&mut rng, 4);
    let w: Vec<f64> = p.log_weights.iter().map(|l| l.exp()).collect();
    // Mixture moments per axis: E[x] = sum w mu, E[x^2] = sum w (sigma^2 + mu^2).
    let moment = |axis: usize, power: i32| -> f64 {
        (0..4)
            .map(|m| {
                let mu = p.means[m][axis];
                let s = p.scales[m][axis];
                w[m] * if power == 1 { mu } else { s * s + mu * mu }
            })
            .sum()
    };
    let n = 100_000;
    let mut sum = [0.0; 2];
    for _ in 0..n {
        let s = gmm_sample(&p, &mut rng);
        sum[0] += s[0];
        sum[1] += s[1];
    }
    for axis in 0..2 {
        let mean = moment(axis, 1);
        let var = moment(axis, 2) - mean * mean;
        let se = (var / n as f64).sqrt();
        let emp = sum[axis] / n as f64;
        assert!((emp - mean).abs() < 3.0 * se, "axis {axis}: {emp} vs {mean} (se {se})");
    }
}

#[test]
fn sample_correlation_matches_parameter() {
    let p = GmmParams {
        log_weights: vec![0.0],
        means: vec![[0.0, 0.0]],
        scales: vec![[2.0, 0.5]],
        correlations: vec![-0.6],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 100_000;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let [x, y] = gmm_sample(&p, &mut rng);
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    let r = sxy / (sxx * syy).sqrt();
    // Sample correlation has standard error about (1 - rho^2) / sqrt(n).
    assert!((r + 0.6).abs() < 3.0 * 0.64 / (n as f64).sqrt());
}
