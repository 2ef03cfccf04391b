use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdvantageError {
    #[error("group of {0} completions is too small, need at least 2")]
    GroupTooSmall(usize),
}

/// Group-normalized advantages with population std. A group whose rewards
/// are all equal gets exact zeros.
pub fn compute_advantages(rewards: &[f64], std_eps: f64) -> Result<Vec<f64>, AdvantageError> {
    let n = rewards.len();
    if n < 2 {
        return Err(AdvantageError::GroupTooSmall(n));
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().copied().fold(f64::INFINITY, f64::min);
    if max == min {
        return Ok(vec![0.0; n]);
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let denom = var.sqrt() + std_eps;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}
