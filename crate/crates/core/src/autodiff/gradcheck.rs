//! Central finite-difference checks for tape gradients.

use crate::tensor::Tensor;

use super::tape::{Tape, Var};

/// Denominator floor for relative error, so entries whose true gradient is
/// (near) zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of `Σ output ⊙ probe` with central
/// differences of step `h`. `build` records a computation on a fresh tape
/// from the leaves it is handed and returns its output. `probe` fixes the
/// output cotangent. At most `max_entries` input entries are perturbed,
/// spread evenly over all inputs.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    probe: &Tensor,
    h: f64,
    max_entries: usize,
    build: F,
) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &leaves);
        tape.value(out)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &leaves);
    let grads = tape
        .backward_from(out, probe.clone())
        .expect("probe matches output shape");

    let total: usize = inputs.iter().map(Tensor::len).sum();
    let stride = (total / max_entries.max(1)).max(1);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        entries_checked: 0,
    };
    let mut flat = 0usize;
    let mut perturbed = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(*leaf, inputs[i].shape());
        for j in 0..inputs[i].len() {
            flat += 1;
            if (flat - 1) % stride != 0 {
                continue;
            }
            let x = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = x + h;
            let plus = eval(&perturbed);
            perturbed[i].data_mut()[j] = x - h;
            let minus = eval(&perturbed);
            perturbed[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.data()[j], numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.entries_checked += 1;
        }
    }
    report
}
