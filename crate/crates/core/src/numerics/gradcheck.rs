use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumericsError;

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the largest relative error over all coordinates of `x`, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64, NumericsError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, NumericsError>,
{
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(&tape, input)?;
    if out.with_value(Tensor::len) != 1 {
        return Err(NumericsError::InvalidArgument(format!(
            "grad_check needs a scalar function, got shape {:?}",
            out.shape()
        )));
    }
    let grads = tape.backward(out);
    let analytic = grads
        .get(input)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |probe: Tensor| -> Result<f64, NumericsError> {
        let tape = Tape::new();
        let v = tape.constant(probe);
        Ok(f(&tape, v)?.item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        // Dyadic inputs and step keep every probe exactly representable.
        let x = Tensor::from_rows(&[vec![0.25, -0.5, 0.125], vec![1.0, 0.75, -1.25]]);
        let err = grad_check(|_, v| Ok(v.sum()), &x, 2f64.powi(-20)).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_non_scalar_output() {
        let x = Tensor::zeros(&[2, 2]);
        assert!(grad_check(|_, v| Ok(v), &x, 1e-6).is_err());
    }
}
