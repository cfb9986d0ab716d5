//! Central finite-difference check of tape gradients.

use crate::error::{Result, UsesError};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// Largest disagreement found by [`grad_check_coords`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(UsesError::Contract(format!(
            "finite-difference step {eps} outside [1e-6, 1e-4]"
        )));
    }
    Ok(())
}

fn evaluate<F>(f: &F, points: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::no_grad();
    let vars: Vec<Var> = points.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(UsesError::Contract(format!(
            "grad_check function must return a scalar, got shape {:?}",
            value.shape()
        )));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(UsesError::NonFinite {
            node: "grad_check".into(),
            op: "function value".into(),
            detail: format!("{v}"),
        });
    }
    Ok(v)
}

/// Compares the tape gradient of `f` at `points` with central differences on
/// the selected coordinates (`coords[i]` indexes into `points[i]`).
pub fn grad_check_coords<F>(
    f: F,
    points: &[Tensor<f64>],
    eps: f64,
    coords: &[Vec<usize>],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    if coords.len() != points.len() {
        return Err(UsesError::Contract(format!(
            "{} coordinate lists for {} inputs",
            coords.len(),
            points.len()
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut shifted = points.to_vec();
    for (i, list) in coords.iter().enumerate() {
        let analytic_all = grads.get(vars[i]).map(|g| g.data().to_vec());
        for &c in list {
            if c >= points[i].numel() {
                return Err(UsesError::Contract(format!(
                    "coordinate {c} out of range for input {i} with {} elements",
                    points[i].numel()
                )));
            }
            let x0 = points[i].data()[c];
            shifted[i].data_mut()[c] = x0 + eps;
            let up = evaluate(&f, &shifted)?;
            shifted[i].data_mut()[c] = x0 - eps;
            let down = evaluate(&f, &shifted)?;
            shifted[i].data_mut()[c] = x0;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = analytic_all.as_ref().map_or(0.0, |g| g[c]);
            if !analytic.is_finite() {
                return Err(UsesError::NonFinite {
                    node: format!("input {i}"),
                    op: "grad_check".into(),
                    detail: format!("analytic gradient {analytic} at coordinate {c}"),
                });
            }
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            if rel > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst: (i, c),
                    analytic,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

/// Maximum relative error between the tape gradient of scalar `f` at `point`
/// and central differences with step `eps`, over all coordinates.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..point.numel()).collect();
    let report = grad_check_coords(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        eps,
        &[all],
    )?;
    Ok(report.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_vec(vec![0.5, -1.5, 2.0, 4.0]).unwrap();
        let err = grad_check(|t, x| Ok(t.sum(x)), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_step_out_of_range() {
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        for eps in [1e-7, 1e-3] {
            assert!(matches!(
                grad_check(|t, x| Ok(t.sum(x)), &x, eps),
                Err(UsesError::Contract(_))
            ));
        }
    }

    #[test]
    fn non_finite_value_is_numeric_error() {
        let x = Tensor::from_vec(vec![0.0]).unwrap();
        let r = grad_check(
            |t, x| {
                let l = t.ln(x);
                Ok(t.sum(l))
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(UsesError::NonFinite { .. })));
    }
}
