//! Central finite-difference verification of tape gradients.

use super::{Result, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per input (evenly strided).
    /// `None` checks every coordinate.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-4, max_coords: None }
    }
}

/// Fixed projection weights that turn a tensor-valued function into a scalar.
fn projection(n: usize) -> Tensor {
    Tensor::from_fn(vec![n], |i| 0.5 + ((i * 7919 + 13) % 17) as f64 / 17.0)
}

fn scalarize(tape: &mut Tape, out: Var) -> Result<Var> {
    let n = tape.value(out).numel();
    if n == 1 {
        return Ok(out);
    }
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(projection(n).reshape(shape)?);
    let weighted = tape.mul(out, w)?;
    Ok(tape.sum(weighted))
}

fn evaluate<F>(f: &F, points: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    match f(&mut tape, &vars).and_then(|out| scalarize(&mut tape, out)) {
        Ok(v) => tape.item(v),
        Err(_) => f64::NAN,
    }
}

/// Maximum relative error between tape gradients and central differences
/// for a function of several inputs.
///
/// Error per coordinate is `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
/// Non-finite values on either side count as infinite error.
pub fn grad_check_many<F>(f: F, points: &[Tensor], opts: GradCheckOptions) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let analytic: Vec<Vec<f64>> =
        match f(&mut tape, &vars).and_then(|out| scalarize(&mut tape, out)).and_then(|loss| tape.backward(loss)) {
            Ok(()) => vars
                .iter()
                .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
                .collect(),
            Err(_) => return f64::INFINITY,
        };
    drop(tape);

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        let n = point.numel();
        let stride = match opts.max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let orig = point.data()[i];
            work[pi].data_mut()[i] = orig + opts.eps;
            let plus = evaluate(&f, &work);
            work[pi].data_mut()[i] = orig - opts.eps;
            let minus = evaluate(&f, &work);
            work[pi].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[pi][i];
            if !numeric.is_finite() || !a.is_finite() {
                return f64::INFINITY;
            }
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    worst
}

/// Single-input form of [`grad_check_many`] checking every coordinate.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> f64
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        GradCheckOptions { eps, max_coords: None },
    )
}
