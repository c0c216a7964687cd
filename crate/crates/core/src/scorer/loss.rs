use crate::error::{Error, Result};

/// Rewards and their softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    pub rewards: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ScoreDistribution {
    /// Index of the most probable trajectory (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

/// Max-subtracted softmax.
pub fn softmax_distribution(rewards: &[f64]) -> Result<ScoreDistribution> {
    if rewards.is_empty() {
        return Err(Error::EmptyRewards);
    }
    let m = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = rewards.iter().map(|r| (r - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(ScoreDistribution {
        rewards: rewards.to_vec(),
        probabilities: e.into_iter().map(|x| x / z).collect(),
    })
}

/// `-(1 - P*)^gamma ln P*`, with `ln P*` taken from the rewards for stability.
pub fn focal_nll(dist: &ScoreDistribution, demo_index: usize, gamma: f64) -> Result<f64> {
    let n = dist.probabilities.len();
    if demo_index >= n {
        return Err(Error::InvalidDemoIndex { index: demo_index, count: n });
    }
    let log_p = log_prob(dist, demo_index);
    let p = dist.probabilities[demo_index];
    let w = if gamma == 0.0 { 1.0 } else { (1.0 - p).max(0.0).powf(gamma) };
    Ok(-w * log_p)
}

/// Plain negative log-likelihood.
pub fn nll(dist: &ScoreDistribution, demo_index: usize) -> Result<f64> {
    let n = dist.probabilities.len();
    if demo_index >= n {
        return Err(Error::InvalidDemoIndex { index: demo_index, count: n });
    }
    Ok(-log_prob(dist, demo_index))
}

// from the rewards, so a probability that underflows to 0 still has a finite log
fn log_prob(dist: &ScoreDistribution, index: usize) -> f64 {
    let m = dist.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + dist.rewards.iter().map(|r| (r - m).exp()).sum::<f64>().ln();
    dist.rewards[index] - lse
}
