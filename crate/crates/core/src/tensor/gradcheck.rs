//! Central finite differences: the independent oracle for every adjoint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::real::Real;

/// Central-difference estimate of the gradient of a scalar function.
pub fn finite_diff_grad<T: Real>(mut f: impl FnMut(&Tensor<T>) -> T, x: &Tensor<T>, h: f64) -> Tensor<T> {
    let mut probe = x.clone();
    let two_h = T::from_f64(2.0 * h);
    let step = T::from_f64(h);
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / two_h;
    }
    grad
}

/// Outcome of comparing analytic and numeric gradients for one function.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Norm-wise relative error per input: `|a - n| / max(|a|, |n|)`.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-300 {
        0.0
    } else {
        diff / denom
    }
}

/// Compares `backward` against central differences for every input of `f`.
/// Non-scalar outputs are reduced with fixed pseudo-random weights so that
/// every output element contributes.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, h: f64, seed: u64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let weights = {
        let tape = Tape::<f64>::no_grad();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let shape = out.shape();
        random_tensor(&shape, seed ^ 0x5eed)
    };
    let objective = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::<f64>::no_grad();
        let vars: Vec<_> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?.value();
        Ok(out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
    };

    let tape = Tape::<f64>::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let w = tape.constant(weights.clone());
    let loss = out.mul(w)?.sum()?;
    tape.backward(loss)?;

    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v)?.unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut xs = inputs.to_vec();
        let numeric = finite_diff_grad(
            |probe| {
                xs[k] = probe.clone();
                objective(&xs).expect("objective evaluated once already")
            },
            &inputs[k],
            h,
        );
        rel_errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck { rel_errors })
}

/// Standard-normal tensor from a fixed seed.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

#[cfg(test)]
pub(crate) fn check_op<F>(shapes: &[&[usize]], f: F, tol: f64)
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let inputs: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| random_tensor(s, 1000 + i as u64))
        .collect();
    let report = check_gradients(&inputs, f, 1e-6, 7).unwrap();
    assert!(
        report.max_rel_error() < tol,
        "gradient mismatch: {:?}",
        report.rel_errors
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = random_tensor(&[5], 3);
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-4);
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn square_derivative_at_three() {
        let x = Tensor::new(&[1], vec![3.0f64]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-4);
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }
}
