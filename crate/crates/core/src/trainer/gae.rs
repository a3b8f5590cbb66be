use super::TrainError;

/// Per-step advantages and the value targets derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation over one trajectory. `bootstrap` is the
/// value after the last step, `None` for a terminal end.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: Option<f64>,
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageEstimate, TrainError> {
    if rewards.len() != values.len() {
        return Err(TrainError::LengthMismatch { rewards: rewards.len(), values: values.len() });
    }
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut next_value = bootstrap.unwrap_or(0.0);
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let td = rewards[t] + gamma * next_value - values[t];
        acc = td + gamma * lambda * acc;
        advantages[t] = acc;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(AdvantageEstimate { advantages, returns })
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}
