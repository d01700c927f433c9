//! Finite-difference oracle for the reverse sweep. Always f64: central
//! differences in f32 lose too many digits to say anything useful.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, TapeError, Val};
use super::tensor::Tensor;

/// Relative error with the usual guard against tiny denominators.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, coordinate, analytic, numeric) at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
}

fn eval_loss<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape<f64>, &[Val]) -> Result<Val, TapeError>,
{
    let mut tape = Tape::new();
    let vals: Vec<Val> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vals)?;
    if tape.shape(loss) != [1] {
        return Err(TapeError::NonScalarLoss {
            shape: tape.shape(loss).to_vec(),
        });
    }
    Ok(tape.value(loss)[0])
}

/// Analytic gradients of the program at `inputs`, one Vec per input tensor.
/// Inputs untouched by the loss get zeros.
pub fn backward_grads<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>, TapeError>
where
    F: Fn(&mut Tape<f64>, &[Val]) -> Result<Val, TapeError>,
{
    let mut tape = Tape::new();
    let vals: Vec<Val> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vals)?;
    tape.backward(loss)?;
    Ok(vals
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect())
}

fn central_diff<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    ti: usize,
    ci: usize,
    eps: f64,
) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape<f64>, &[Val]) -> Result<Val, TapeError>,
{
    let mut work = inputs.to_vec();
    let orig = work[ti].data()[ci];
    work[ti].data_mut()[ci] = orig + eps;
    let up = eval_loss(f, &work)?;
    work[ti].data_mut()[ci] = orig - eps;
    let down = eval_loss(f, &work)?;
    Ok((up - down) / (2.0 * eps))
}

fn check_coords<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    analytic: &[Vec<f64>],
    coords: &[(usize, usize)],
    eps: f64,
) -> Result<GradCheckReport, TapeError>
where
    F: Fn(&mut Tape<f64>, &[Val]) -> Result<Val, TapeError>,
{
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for &(ti, ci) in coords {
        let numeric = central_diff(f, inputs, ti, ci, eps)?;
        let a = analytic[ti][ci];
        let e = rel_err(a, numeric);
        report.coords_checked += 1;
        if e > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = e;
            report.worst = Some((ti, ci, a, numeric));
        }
    }
    Ok(report)
}

/// Compare the reverse sweep against central differences at every coordinate.
pub fn grad_check<F>(f: &F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport, TapeError>
where
    F: Fn(&mut Tape<f64>, &[Val]) -> Result<Val, TapeError>,
{
    let analytic = backward_grads(f, inputs)?;
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| (0..t.numel()).map(move |ci| (ti, ci)))
        .collect();
    check_coords(f, inputs, &analytic, &coords, eps)
}

/// Same, but at up to `per_tensor` random coordinates of each input. Keeps
/// many-seed sweeps affordable when one full pass is already done elsewhere.
pub fn grad_check_sampled<F>(
    f: &F,
    inputs: &[Tensor<f64>],
    eps: f64,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport, TapeError>
where
    F: Fn(&mut Tape<f64>, &[Val]) -> Result<Val, TapeError>,
{
    let analytic = backward_grads(f, inputs)?;
    let mut coords = Vec::new();
    for (ti, t) in inputs.iter().enumerate() {
        let n = t.numel();
        if n <= per_tensor {
            coords.extend((0..n).map(|ci| (ti, ci)));
        } else {
            for _ in 0..per_tensor {
                coords.push((ti, rng.random_range(0..n)));
            }
        }
    }
    check_coords(f, inputs, &analytic, &coords, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_uses_guarded_denominator() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        // Tiny absolute difference against the 1e-8 floor.
        let e = rel_err(1e-12, 2e-12);
        assert!((e - 1e-4).abs() < 1e-10, "got {e}");
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_loss_checks_out() {
        // loss = sum((x * x)), grad = 2x
        let f = |tape: &mut Tape<f64>, vals: &[Val]| {
            let sq = tape.mul(vals[0], vals[0])?;
            Ok(tape.sum(sq))
        };
        let x = Tensor::new(vec![3], vec![0.5, -1.25, 2.0]).unwrap();
        let grads = backward_grads(&f, &[x.clone()]).unwrap();
        assert_eq!(grads[0], vec![1.0, -2.5, 4.0]);
        let report = grad_check(&f, &[x], 1e-6).unwrap();
        assert!(report.max_rel_err < 1e-9, "{report:?}");
        assert_eq!(report.coords_checked, 3);
    }
}
