//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;

use super::{Tape, Tensor, TensorError, Var};
use crate::rng;

/// Smallest gradient magnitude compared relatively. Central differences in
/// double precision carry roughly `1e-16 * |f| / h` of roundoff, about 1e-11
/// at `h = 1e-5`, so gradients that are exactly zero (for example the key
/// bias of attention, which softmax cancels) would otherwise report noise as
/// a large relative error. Below the floor the check is effectively absolute:
/// a relative error of 1e-4 means agreement to 1e-10.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Which coordinates of each input tensor are perturbed.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// At most `per_tensor` coordinates per input, chosen with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Max relative error between tape gradients and central differences over
/// every coordinate of every input.
///
/// The relative error of one coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    gradcheck_with(f, inputs, h, Coords::All).map(|r| r.max_rel_error)
}

pub fn gradcheck_with<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    coords: Coords,
) -> Result<GradcheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    if h <= 0.0 {
        return Err(super::invalid("gradcheck", "step must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |inputs: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (ti, var) in vars.iter().enumerate() {
        let n = inputs[ti].numel();
        let chosen: Vec<usize> = match coords {
            Coords::All => (0..n).collect(),
            Coords::Sample { per_tensor, seed } if per_tensor < n => {
                let mut r = rng::derive(seed, &["gradcheck", &ti.to_string()]);
                let mut idx = sample(&mut r, n, per_tensor).into_vec();
                idx.sort_unstable();
                idx
            }
            Coords::Sample { .. } => (0..n).collect(),
        };
        let analytic = grads.get(*var);
        for c in chosen {
            let orig = work[ti].data()[c];
            work[ti].data_mut()[c] = orig + h;
            let plus = eval(&work)?;
            work[ti].data_mut()[c] = orig - h;
            let minus = eval(&work)?;
            work[ti].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g.data()[c]);
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((ti, c));
            }
        }
    }
    Ok(report)
}
