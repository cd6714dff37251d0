use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` receives a fresh tape and one handle per input tensor and must return
/// a 1×1 loss. Returns the maximum over all entries of all inputs of
/// `|analytic - numeric| / (|numeric| + 1e-12)`.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        let v = t.value(l);
        if v.shape() != (1, 1) {
            return Err(Error::shape("finite_diff_check needs a scalar function"));
        }
        Ok(v.get(0, 0))
    };

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, (x, var)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.get_or_zeros(*var, x.rows(), x.cols());
        for idx in 0..x.data().len() {
            let orig = x.data()[idx];
            probe[which].data_mut()[idx] = orig + step;
            let up = eval(&probe)?;
            probe[which].data_mut()[idx] = orig - step;
            let down = eval(&probe)?;
            probe[which].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (analytic.data()[idx] - numeric).abs() / (numeric.abs() + 1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`finite_diff_check_many`].
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::Activation;

    fn sample() -> Tensor {
        Tensor::from_rows(&[[0.3, -0.7, 0.1], [0.9, -0.2, 0.5], [-0.4, 0.6, -0.8]]).unwrap()
    }

    #[test]
    fn linear_function_is_exact() {
        let err = finite_diff_check(|t, x| Ok(t.sum(x)), &sample(), 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn sum_of_squares() {
        let err = finite_diff_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &sample(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn sigmoid_chain() {
        let err = finite_diff_check(
            |t, x| {
                let h = t.matmul(x, x)?;
                let h = t.activation(h, Activation::Sigmoid);
                let h = t.matmul(h, x)?;
                let h = t.activation(h, Activation::Sigmoid);
                Ok(t.sum(h))
            },
            &sample(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
