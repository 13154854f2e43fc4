//! Central finite-difference gradient checking. Used by the test suites to
//! validate every analytic gradient against a numeric estimate.

use crate::error::Result;
use crate::tensor::{Tape, Tensor};

/// Perturbation step for central differences.
pub const FD_STEP: f64 = 1e-4;
/// Relative tolerance between analytic and numeric gradients.
pub const FD_REL_TOL: f64 = 1e-3;
/// Absolute floor below which the relative test is waived.
pub const FD_ABS_TOL: f64 = 1e-6;

fn agree(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < FD_REL_TOL * analytic.abs().max(numeric.abs()) || diff < FD_ABS_TOL
}

/// Checks d(loss)/d(input) for every element of every input against a
/// central finite difference. `mk_loss` must build the same scalar loss from
/// the same input handles each time it is called; it runs once on a
/// recording tape for analytic gradients and twice per element on no-grad
/// tapes for the numeric estimate.
///
/// Returns a description of the first mismatch, if any.
pub fn check_gradients(
    mk_loss: &dyn Fn(&Tape, &[Tensor]) -> Result<Tensor>,
    inputs: &[Tensor],
) -> std::result::Result<(), String> {
    let tape = Tape::new();
    let loss = mk_loss(&tape, inputs).map_err(|e| format!("forward failed: {e}"))?;
    tape.backward(&loss).map_err(|e| format!("backward failed: {e}"))?;
    let analytic: Vec<Vec<f64>> = inputs.iter().map(|t| t.grad_vec()).collect();

    for (ti, t) in inputs.iter().enumerate() {
        let base = t.data_vec();
        for e in 0..base.len() {
            let mut bumped = base.clone();
            bumped[e] = base[e] + FD_STEP;
            t.set_data(&bumped).expect("same length");
            let up = mk_loss(&Tape::no_grad(), inputs)
                .map_err(|e| format!("forward failed: {e}"))?
                .item();
            bumped[e] = base[e] - FD_STEP;
            t.set_data(&bumped).expect("same length");
            let down = mk_loss(&Tape::no_grad(), inputs)
                .map_err(|e| format!("forward failed: {e}"))?
                .item();
            t.set_data(&base).expect("same length");
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic[ti][e];
            if !agree(a, numeric) {
                return Err(format!(
                    "input {ti} element {e}: analytic {a:.9e} vs numeric {numeric:.9e}"
                ));
            }
        }
    }
    Ok(())
}
