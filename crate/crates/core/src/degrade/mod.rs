//! Degradation synthesis `y = (x * k)↓s + n` and the reformulated
//! effective kernel on the downsampled grid.

mod kernel;
mod resize;
pub mod synth;

pub use kernel::{delta_kernel, GaussianKernelSpec, KernelShape};
pub use resize::{bicubic_resize, contributions, cubic, cubic_weights_at_phase, resize_to, CUBIC_A};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::spectral::{default_eps, dft_divide, irfft2, rfft2};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Reflect,
    Circular,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub kernel: GaussianKernelSpec,
    pub scale: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2 | 4) {
            return Err(Error::invalid("degrade", format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if !(0.0..1.0).contains(&self.noise_sigma) {
            return Err(Error::invalid("degrade", format!("noise sigma {} outside [0, 1)", self.noise_sigma)));
        }
        Ok(())
    }
}

/// HR image, its degraded LR observation and the ground-truth corrected LR
/// (plain anti-aliased bicubic downsample).
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet<T: Real = f32> {
    pub hr: Tensor<T>,
    pub lr: Tensor<T>,
    pub clr_gt: Tensor<T>,
}

/// True 2-D convolution (kernel flipped) of every trailing `H x W` plane,
/// same-size output.
pub fn blur<T: Real>(x: &Tensor<T>, k: &Tensor<f64>, boundary: Boundary) -> Result<Tensor<T>> {
    let &[kh, kw] = k.shape() else {
        return Err(Error::invalid("blur", "kernel must be 2-D"));
    };
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::invalid("blur", format!("kernel must be odd-sized, got {kh}x{kw}")));
    }
    if x.rank() < 2 {
        return Err(Error::invalid("blur", "need at least two axes"));
    }
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let planes = x.len() / (h * w).max(1);
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let kt: Vec<T> = k.data().iter().map(|&v| T::from_f64(v)).collect();
    let wrap = |i: isize, n: usize| -> usize {
        match boundary {
            Boundary::Circular => i.rem_euclid(n as isize) as usize,
            Boundary::Reflect => crate::tensor::ops::reflect(i, n),
        }
    };
    let rows: Vec<usize> = (0..h as isize)
        .flat_map(|y| (0..kh as isize).map(move |i| (y, i)))
        .map(|(y, i)| wrap(y + ch - i, h))
        .collect();
    let cols: Vec<usize> = (0..w as isize)
        .flat_map(|x| (0..kw as isize).map(move |j| (x, j)))
        .map(|(x, j)| wrap(x + cw - j, w))
        .collect();
    let mut out = Tensor::zeros(x.shape());
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = T::zero();
                for i in 0..kh {
                    let row = &src[rows[y * kh + i] * w..][..w];
                    let krow = &kt[i * kw..(i + 1) * kw];
                    for j in 0..kw {
                        acc += krow[j] * row[cols[xx * kw + j]];
                    }
                }
                dst[y * w + xx] = acc;
            }
        }
    }
    Ok(out)
}

fn clip01<T: Real>(t: Tensor<T>) -> Tensor<T> {
    t.map(|v| v.max(T::zero()).min(T::one()))
}

/// Synthesises a triplet from an HR image (`C x H x W` or `B x C x H x W`).
pub fn degrade<T: Real>(x: &Tensor<T>, spec: &DegradationSpec) -> Result<Triplet<T>> {
    let k = spec.kernel.render()?;
    degrade_with_kernel(x, &k, spec.scale, spec.noise_sigma, spec.seed)
}

/// As [`degrade`] with an explicit kernel (e.g. [`delta_kernel`]).
pub fn degrade_with_kernel<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<f64>,
    scale: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Triplet<T>> {
    let r = x.rank();
    if r < 2 {
        return Err(Error::invalid("degrade", "need at least two axes"));
    }
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::invalid("degrade", format!("{h}x{w} not divisible by scale {scale}")));
    }
    let (lh, lw) = (h / scale, w / scale);
    let blurred = blur(x, k, Boundary::Reflect)?;
    let mut lr = resize_to(&blurred, lh, lw, true)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = T::from_f64(noise_sigma);
        for v in lr.data_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += s * T::from_f64(n);
        }
    }
    let clr_gt = resize_to(x, lh, lw, true)?;
    Ok(Triplet {
        hr: x.clone(),
        lr: clip01(lr),
        clr_gt: clip01(clr_gt),
    })
}

/// Effective kernel on the LR grid: `irfft2(F(y) / F(x↓s))` with a
/// Tikhonov guard, where `y = (x ⊛ k)↓s` uses circular blur. The result is
/// rolled so its origin sits at `(h/2, w/2)`.
pub fn effective_kernel(x: &Tensor<f64>, k: &Tensor<f64>, scale: usize, eps: Option<f64>) -> Result<EffectiveKernel> {
    let &[h, w] = x.shape() else {
        return Err(Error::invalid("effective_kernel", "expects a single H x W plane"));
    };
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(Error::invalid("effective_kernel", "extents not divisible by scale"));
    }
    let (lh, lw) = (h / scale, w / scale);
    let y = resize_to(&blur(x, k, Boundary::Circular)?, lh, lw, true)?;
    let xd = resize_to(x, lh, lw, true)?;
    let den = rfft2(&xd)?;
    if den.re.max_abs() == 0.0 && den.im.max_abs() == 0.0 {
        return Err(Error::invalid("effective_kernel", "downsampled image has an all-zero spectrum"));
    }
    let eps = eps.unwrap_or_else(|| default_eps(&den));
    let raw = irfft2(&dft_divide(&rfft2(&y)?, &den, eps)?)?;
    let kernel = roll(&raw, lh / 2, lw / 2);
    Ok(EffectiveKernel { kernel, y, x_down: xd })
}

#[derive(Clone, Debug)]
pub struct EffectiveKernel {
    /// Centred kernel, origin at `(h/2, w/2)`.
    pub kernel: Tensor<f64>,
    /// Noise-free observation `(x ⊛ k)↓s`.
    pub y: Tensor<f64>,
    /// `x↓s`.
    pub x_down: Tensor<f64>,
}

impl EffectiveKernel {
    /// `x↓s ⊛ k_l` by direct circular summation.
    pub fn reconstruct(&self) -> Tensor<f64> {
        circular_convolve_centered(&self.x_down, &self.kernel)
    }

    /// `max|y - x↓s ⊛ k_l| / max|y|`.
    pub fn relative_error(&self) -> f64 {
        let rec = self.reconstruct();
        let err = rec.zip_map(&self.y, |a, b| a - b).expect("same shape").max_abs();
        err / self.y.max_abs().max(1e-300)
    }
}

fn roll(x: &Tensor<f64>, dy: usize, dx: usize) -> Tensor<f64> {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    Tensor::from_fn(&[h, w], |i| {
        let (y, xx) = (i / w, i % w);
        x.data()[((y + h - dy) % h) * w + (xx + w - dx) % w]
    })
}

/// Circular convolution of an `H x W` plane with a same-size kernel whose
/// origin is at `(H/2, W/2)`.
pub fn circular_convolve_centered(x: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let (ch, cw) = (h / 2, w / 2);
    Tensor::from_fn(&[h, w], |i| {
        let (y, xx) = (i / w, i % w);
        let mut acc = 0.0;
        for ky in 0..h {
            let sy = (y + h + ch - ky) % h;
            for kx in 0..w {
                let sx = (xx + w + cw - kx) % w;
                acc += k.data()[ky * w + kx] * x.data()[sy * w + sx];
            }
        }
        acc
    })
}

/// Bicubic upsampling of an LR image, the classical baseline pathway.
pub fn bicubic_upsample<T: Real>(lr: &Tensor<T>, scale: usize) -> Result<Tensor<T>> {
    let r = lr.rank();
    let (h, w) = (lr.shape()[r - 2], lr.shape()[r - 1]);
    Ok(clip01(resize_to(lr, h * scale, w * scale, true)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectrumTensor;
    use crate::tensor::gradcheck::random_tensor;

    fn fixture(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        synth::procedural_image(seed, h, w).cast()
    }

    #[test]
    fn delta_blur_is_identity_and_constants_survive() {
        let x = random_tensor(&[2, 9, 8], 1);
        for b in [Boundary::Reflect, Boundary::Circular] {
            assert_eq!(blur(&x, &delta_kernel(5), b).unwrap(), x);
        }
        let c = Tensor::<f64>::full(&[7, 7], 0.3);
        let k = GaussianKernelSpec::isotropic(1.5, 9).render().unwrap();
        let y = blur(&c, &k, Boundary::Reflect).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(blur(&c, &Tensor::ones(&[2, 2]), Boundary::Reflect).is_err());
    }

    #[test]
    fn circular_blur_matches_convolution_theorem() {
        let (h, w) = (12, 10);
        let x = random_tensor(&[h, w], 4);
        let k = GaussianKernelSpec::anisotropic(3.0, 0.7, 0.5, 5).render().unwrap();
        let direct = blur(&x, &k, Boundary::Circular).unwrap();
        // kernel zero-padded with its centre moved to the origin
        let mut kp = Tensor::<f64>::zeros(&[h, w]);
        for i in 0..5 {
            for j in 0..5 {
                let y = (i + h - 2) % h;
                let xx = (j + w - 2) % w;
                kp.data_mut()[y * w + xx] = k.data()[i * 5 + j];
            }
        }
        let (fx, fk) = (rfft2(&x).unwrap(), rfft2(&kp).unwrap());
        let re = Tensor::from_fn(fx.re.shape(), |i| {
            fx.re.data()[i] * fk.re.data()[i] - fx.im.data()[i] * fk.im.data()[i]
        });
        let im = Tensor::from_fn(fx.re.shape(), |i| {
            fx.re.data()[i] * fk.im.data()[i] + fx.im.data()[i] * fk.re.data()[i]
        });
        let via_fft = irfft2(&SpectrumTensor { re, im, original_width: w }).unwrap();
        assert!(direct.zip_map(&via_fft, |a, b| a - b).unwrap().max_abs() < 1e-4);
    }

    #[test]
    fn delta_kernel_without_noise_gives_bicubic() {
        let x = fixture(3, 32, 32).reshape(&[3, 32, 32]).unwrap();
        let t = degrade_with_kernel(&x, &delta_kernel(21), 2, 0.0, 0).unwrap();
        assert_eq!(t.lr, t.clr_gt);
        assert_eq!(t.lr.shape(), &[3, 16, 16]);
    }

    #[test]
    fn gaussian_blur_changes_lr() {
        let x = fixture(4, 32, 32);
        let spec = DegradationSpec {
            kernel: GaussianKernelSpec::isotropic(2.4, 21),
            scale: 4,
            noise_sigma: 0.0,
            seed: 1,
        };
        let t = degrade(&x, &spec).unwrap();
        assert!(t.lr.zip_map(&t.clr_gt, |a, b| a - b).unwrap().max_abs() > 0.0);
    }

    #[test]
    fn noise_is_seeded() {
        let x = fixture(5, 16, 16);
        let spec = DegradationSpec {
            kernel: GaussianKernelSpec::isotropic(1.0, 7),
            scale: 2,
            noise_sigma: 0.05,
            seed: 42,
        };
        let a = degrade(&x, &spec).unwrap();
        let b = degrade(&x, &spec).unwrap();
        assert_eq!(a, b);
        let c = degrade(&x, &DegradationSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.lr, c.lr);
    }

    #[test]
    fn indivisible_extent_rejected() {
        let x = Tensor::<f32>::zeros(&[3, 15, 16]);
        assert!(degrade_with_kernel(&x, &delta_kernel(3), 2, 0.0, 0).is_err());
        let bad = DegradationSpec {
            kernel: GaussianKernelSpec::isotropic(1.0, 7),
            scale: 3,
            noise_sigma: 0.0,
            seed: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn effective_kernel_for_delta_is_delta() {
        let peak_share = |ek: &EffectiveKernel| ek.kernel.data()[16 * 32 + 16] / ek.kernel.sum();
        // broadband image: every bin sits well above the default guard
        let noise = random_tensor(&[64, 64], 6);
        let ek = effective_kernel(&noise, &delta_kernel(21), 2, None).unwrap();
        assert!(peak_share(&ek) >= 0.99, "{}", peak_share(&ek));
        // piecewise-smooth image: weak high-frequency bins need a smaller guard
        let x = fixture(6, 64, 64);
        let gray = Tensor::new(&[64, 64], x.data()[..4096].to_vec()).unwrap();
        let ek = effective_kernel(&gray, &delta_kernel(21), 2, Some(1e-12)).unwrap();
        assert!(peak_share(&ek) >= 0.99, "{}", peak_share(&ek));
    }

    #[test]
    fn effective_kernel_reconstructs_observation() {
        let x = fixture(7, 64, 64).reshape(&[3, 64, 64]).unwrap();
        let gray = Tensor::new(&[64, 64], x.data()[4096..8192].to_vec()).unwrap();
        let k = GaussianKernelSpec::isotropic(1.6, 21).render().unwrap();
        let ek = effective_kernel(&gray, &k, 2, None).unwrap();
        assert!(ek.relative_error() < 1e-3, "{}", ek.relative_error());
        assert!((ek.kernel.sum() - 1.0).abs() < 1e-2);
        assert!(effective_kernel(&Tensor::zeros(&[16, 16]), &k, 2, None).is_err());
    }
}
