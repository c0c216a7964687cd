use super::model::{loss_and_grads, BatchInput, Mode, ScorerParams};
use super::tape::{Group, Tape};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose perturbation crosses a ReLU kink, where the central
    /// difference is not a derivative estimate.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
}

/// Denominator floor of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

fn loss_with_signature(params: &ScorerParams, input: &BatchInput, groups: &[Group], gamma: f64) -> Result<(f64, Vec<bool>)> {
    let mut tape = Tape::new();
    let out = super::model::forward(&mut tape, params, input, Mode::Train)?;
    let loss = tape.focal_nll(out.reward, groups, gamma);
    Ok((tape.value(loss)[[0, 0]], tape.relu_signature()))
}

/// Compares analytic gradients (train mode) with central differences of step `h`
/// for every trainable coordinate.
pub fn gradient_check(params: &ScorerParams, input: &BatchInput, groups: &[Group], gamma: f64, h: f64) -> Result<GradCheckReport> {
    let (_, grads, _) = loss_and_grads(params, input, groups, gamma, Mode::Train)?;
    let (_, base_sig) = loss_with_signature(params, input, groups, gamma)?;
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut p = params.clone();
    for slot in 0..p.values.len() {
        if !p.trainable[slot] {
            continue;
        }
        for idx in 0..p.values[slot].len() {
            let orig = p.values[slot].as_slice().unwrap()[idx];
            p.values[slot].as_slice_mut().unwrap()[idx] = orig + h;
            let (lp, sp) = loss_with_signature(&p, input, groups, gamma)?;
            p.values[slot].as_slice_mut().unwrap()[idx] = orig - h;
            let (lm, sm) = loss_with_signature(&p, input, groups, gamma)?;
            p.values[slot].as_slice_mut().unwrap()[idx] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads[slot].as_slice().unwrap()[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((p.names[slot].clone(), idx));
            }
        }
    }
    Ok(report)
}
