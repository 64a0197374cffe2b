//! Central-difference verification of analytic gradients.

use super::policy::PolicySnapshot;
use super::ppo::{ppo_loss, ppo_loss_and_grad, RolloutBatch};
use crate::error::Result;

/// Largest relative discrepancy between `grad` and central differences of
/// `f` at `theta`. Components where both are below `1e-8` are compared in
/// absolute terms.
pub fn max_relative_error<F>(mut f: F, theta: &[f64], grad: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = theta.to_vec();
    let mut worst = 0.0f64;
    for j in 0..theta.len() {
        work[j] = theta[j] + h;
        let plus = f(&work);
        work[j] = theta[j] - h;
        let minus = f(&work);
        work[j] = theta[j];
        let numeric = (plus - minus) / (2.0 * h);
        let scale = grad[j].abs().max(numeric.abs());
        let err = if scale < 1e-8 {
            (grad[j] - numeric).abs()
        } else {
            (grad[j] - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}

/// Checks the clipped-surrogate gradient of `policy` on a batch.
pub fn gradient_check(policy: &PolicySnapshot, batch: &RolloutBatch, epsilon: f64, h: f64) -> Result<f64> {
    let (_, grad) = ppo_loss_and_grad(batch, policy, epsilon)?;
    let mut probe = policy.clone();
    Ok(max_relative_error(
        |theta| {
            probe.theta.copy_from_slice(theta);
            ppo_loss(batch, &probe, epsilon).unwrap_or(f64::NAN)
        },
        &policy.theta,
        &grad,
        h,
    ))
}
