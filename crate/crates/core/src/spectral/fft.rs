//! Complex FFT of a fixed length, planned once and reused.

use std::fmt;

use num_complex::Complex;

use crate::real::{FftPlan, Real};

#[derive(Clone)]
pub struct Fft<T: Real> {
    n: usize,
    forward: FftPlan<T>,
    inverse: FftPlan<T>,
}

impl<T: Real> fmt::Debug for Fft<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft").field("n", &self.n).finish()
    }
}

impl<T: Real> Fft<T> {
    pub fn new(n: usize) -> Self {
        Fft {
            n,
            forward: T::plan_fft(n, false),
            inverse: T::plan_fft(n, true),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalised transform in place; `inverse` uses the conjugate kernel.
    pub fn process(&self, data: &mut [Complex<T>], inverse: bool) {
        assert_eq!(data.len(), self.n);
        if self.n <= 1 {
            return;
        }
        if inverse {
            (self.inverse)(data)
        } else {
            (self.forward)(data)
        }
    }

    /// Transforms consecutive length-`n` rows of `data` in one call.
    pub fn process_rows(&self, data: &mut [Complex<T>], inverse: bool) {
        assert_eq!(data.len() % self.n.max(1), 0);
        if self.n <= 1 {
            return;
        }
        if inverse {
            (self.inverse)(data)
        } else {
            (self.forward)(data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[Complex<f64>], inverse: bool) -> Vec<Complex<f64>> {
        let n = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (j, &v)| {
                    let a = sign * 2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64;
                    acc + v * Complex::new(a.cos(), a.sin())
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_for_mixed_sizes() {
        for n in [1usize, 2, 3, 4, 5, 6, 7, 8, 9, 12, 15, 16, 18, 30, 49, 60, 64, 97] {
            let x: Vec<Complex<f64>> = (0..n)
                .map(|i| Complex::new((i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let fft = Fft::<f64>::new(n);
            for inverse in [false, true] {
                let mut y = x.clone();
                fft.process(&mut y, inverse);
                let want = naive(&x, inverse);
                for (a, b) in y.iter().zip(&want) {
                    assert!((a - b).norm() < 1e-9 * n as f64, "n={n}");
                }
            }
        }
    }
}
