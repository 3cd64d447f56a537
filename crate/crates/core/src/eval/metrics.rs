use crate::error::{CoreError, Result};

pub type Trajectory = [[f64; 2]];

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_lengths(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(CoreError::data(format!(
            "trajectory length mismatch: predicted {}, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(CoreError::data("empty trajectory"));
    }
    Ok(())
}

/// Mean per-step Euclidean distance.
pub fn ade(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_lengths(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(&p, &t)| dist(p, t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Euclidean distance at the final step.
pub fn fde(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(dist(pred[pred.len() - 1], truth[truth.len() - 1]))
}

/// Lowest ADE and lowest FDE over the first `n` samples, each minimized on
/// its own.
pub fn best_of_n<T: AsRef<Trajectory>>(samples: &[T], truth: &Trajectory, n: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(CoreError::config("best-of-N needs N >= 1"));
    }
    if samples.len() < n {
        return Err(CoreError::data(format!(
            "best-of-{n} needs at least {n} samples, got {}",
            samples.len()
        )));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for s in &samples[..n] {
        best.0 = best.0.min(ade(s.as_ref(), truth)?);
        best.1 = best.1.min(fde(s.as_ref(), truth)?);
    }
    Ok(best)
}

/// Mean with an exact result when every value is equal.
pub fn mean(values: &[f64]) -> f64 {
    let Some(&first) = values.first() else {
        return f64::NAN;
    };
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}
