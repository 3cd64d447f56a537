use crate::error::{CoreError, Result};

fn check_history(history: &[[f64; 2]]) -> Result<()> {
    if history.len() < 2 {
        return Err(CoreError::data(format!(
            "baseline needs at least 2 history points, got {}",
            history.len()
        )));
    }
    Ok(())
}

/// Repeats the last observed displacement for `horizon` steps.
pub fn constant_velocity(history: &[[f64; 2]], horizon: usize) -> Result<Vec<[f64; 2]>> {
    check_history(history)?;
    let last = history[history.len() - 1];
    let prev = history[history.len() - 2];
    let d = [last[0] - prev[0], last[1] - prev[1]];
    Ok((1..=horizon)
        .map(|k| [last[0] + k as f64 * d[0], last[1] + k as f64 * d[1]])
        .collect())
}

/// Least-squares line per coordinate over the history's step indices,
/// extrapolated `horizon` steps past the last point.
pub fn linear(history: &[[f64; 2]], horizon: usize) -> Result<Vec<[f64; 2]>> {
    check_history(history)?;
    let n = history.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let stt: f64 = (0..history.len()).map(|i| (i as f64 - t_mean).powi(2)).sum();
    let fit = |axis: usize| {
        let mean = history.iter().map(|p| p[axis]).sum::<f64>() / n;
        let sty: f64 = history
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64 - t_mean) * (p[axis] - mean))
            .sum();
        let slope = sty / stt;
        (mean, slope)
    };
    let (mx, sx) = fit(0);
    let (my, sy) = fit(1);
    Ok((1..=horizon)
        .map(|k| {
            let dt = (history.len() - 1 + k) as f64 - t_mean;
            [mx + sx * dt, my + sy * dt]
        })
        .collect())
}
