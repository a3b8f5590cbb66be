use super::TrainError;

/// Ordinary-least-squares slope of `ys` against `0, 1, ..., n-1`.
pub fn ols_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// True once the mean episode length has stopped growing: the OLS slope
/// over the last `window` updates is at most `slope_threshold`.
pub fn plateau_detector(history: &[f64], window: usize, slope_threshold: f64) -> Result<bool, TrainError> {
    if window < 2 || history.len() < window {
        return Err(TrainError::InsufficientHistory { have: history.len(), need: window.max(2) });
    }
    Ok(ols_slope(&history[history.len() - window..]) <= slope_threshold)
}
