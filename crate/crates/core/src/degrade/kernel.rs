use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelShape {
    Isotropic { sigma: f64 },
    /// Covariance `R(theta) diag(lambda1, lambda2) R(theta)^T`; the lambdas
    /// are variances along the principal axes.
    Anisotropic { lambda1: f64, lambda2: f64, theta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianKernelSpec {
    pub shape: KernelShape,
    pub size: usize,
}

impl GaussianKernelSpec {
    pub fn isotropic(sigma: f64, size: usize) -> Self {
        GaussianKernelSpec {
            shape: KernelShape::Isotropic { sigma },
            size,
        }
    }

    pub fn anisotropic(lambda1: f64, lambda2: f64, theta: f64, size: usize) -> Self {
        GaussianKernelSpec {
            shape: KernelShape::Anisotropic { lambda1, lambda2, theta },
            size,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.shape {
            KernelShape::Isotropic { .. } => "isotropic",
            KernelShape::Anisotropic { .. } => "anisotropic",
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size < 3 || self.size % 2 == 0 {
            return Err(Error::invalid("render_kernel", format!("size must be odd and >= 3, got {}", self.size)));
        }
        let ok = match self.shape {
            KernelShape::Isotropic { sigma } => sigma > 0.0 && sigma.is_finite(),
            KernelShape::Anisotropic { lambda1, lambda2, theta } => {
                lambda1 > 0.0 && lambda2 > 0.0 && lambda1.is_finite() && lambda2.is_finite() && theta.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("render_kernel", "sigma and lambdas must be positive"))
        }
    }

    /// Sampled Gaussian density on the integer grid, L1-normalised.
    pub fn render(&self) -> Result<Tensor<f64>> {
        self.validate()?;
        let n = self.size;
        let c = (n / 2) as f64;
        // inverse covariance entries
        let (a, b, d) = match self.shape {
            KernelShape::Isotropic { sigma } => {
                let v = 1.0 / (sigma * sigma);
                (v, 0.0, v)
            }
            KernelShape::Anisotropic { lambda1, lambda2, theta } => {
                let (s, co) = theta.sin_cos();
                let (i1, i2) = (1.0 / lambda1, 1.0 / lambda2);
                (co * co * i1 + s * s * i2, co * s * (i1 - i2), s * s * i1 + co * co * i2)
            }
        };
        let mut k = Tensor::from_fn(&[n, n], |i| {
            let y = (i / n) as f64 - c;
            let x = (i % n) as f64 - c;
            (-0.5 * (a * x * x + 2.0 * b * x * y + d * y * y)).exp()
        });
        let total = k.sum();
        k.data_mut().iter_mut().for_each(|v| *v /= total);
        Ok(k)
    }
}

/// Unit impulse of odd `size` (the classic-SR kernel).
pub fn delta_kernel(size: usize) -> Tensor<f64> {
    let mut k = Tensor::zeros(&[size, size]);
    k.data_mut()[(size / 2) * size + size / 2] = 1.0;
    k
}
