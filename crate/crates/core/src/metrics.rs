//! PSNR and SSIM on the BT.601 luma channel.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Value reported by [`psnr`] for identical inputs.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricResult {
    pub psnr_db: f64,
    pub ssim: f64,
    pub shave: usize,
}

/// Studio-swing BT.601 luma of a `3 x H x W` (or `1 x 3 x H x W`) RGB image
/// in `[0, 1]`, returned as `H x W`.
pub fn rgb_to_y<T: Real>(img: &Tensor<T>) -> Result<Tensor<f64>> {
    let (h, w) = match img.shape() {
        &[3, h, w] | &[1, 3, h, w] => (h, w),
        s => return Err(Error::invalid("rgb_to_y", format!("expected 3 channels, got {s:?}"))),
    };
    let d = img.data();
    let n = h * w;
    Ok(Tensor::from_fn(&[h, w], |i| {
        let (r, g, b) = (d[i].to_f64(), d[n + i].to_f64(), d[2 * n + i].to_f64());
        ((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0).clamp(0.0, 1.0)
    }))
}

fn shave_plane(x: &Tensor<f64>, s: usize) -> Result<Tensor<f64>> {
    let &[h, w] = x.shape() else {
        return Err(Error::invalid("shave", format!("expected H x W, got {:?}", x.shape())));
    };
    if 2 * s >= h || 2 * s >= w {
        return Err(Error::invalid("shave", format!("shave {s} too large for {h}x{w}")));
    }
    let (oh, ow) = (h - 2 * s, w - 2 * s);
    Ok(Tensor::from_fn(&[oh, ow], |i| x.data()[(i / ow + s) * w + i % ow + s]))
}

/// `10 log10(1 / MSE)` over `H x W` planes in `[0, 1]` after removing `shave`
/// pixels at each border; [`PSNR_CAP`] when the planes are identical.
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>, shave: usize) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    let (a, b) = (shave_plane(a, shave)?, shave_plane(b, shave)?);
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the normalised Gaussian window.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..k).map(|j| g[j] * x[y * w + xo + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..k).map(|i| g[i] * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Mean local SSIM of two `H x W` planes in `[0, 1]`.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let &[h, w] = a.shape() else {
        return Err(Error::invalid("ssim", "expects single-channel H x W planes"));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid("ssim", format!("{h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window();
    let f = |v: &[f64]| filter_valid(v, h, w, &g);
    let (x, y) = (a.data(), b.data());
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let (mx, my) = (f(x), f(y));
    let (sxx, syy, sxy) = (f(&prod(x, x)), f(&prod(y, y)), f(&prod(x, y)));
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let (vx, vy, cxy) = (sxx[i] - ux * ux, syy[i] - uy * uy, sxy[i] - ux * uy);
            ((2.0 * ux * uy + C1) * (2.0 * cxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2))
        })
        .sum();
    Ok(total / n as f64)
}

/// PSNR and SSIM on the luma of two RGB images, both shaved by `shave`.
pub fn evaluate_rgb<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, shave: usize) -> Result<MetricResult> {
    let (a, b) = (rgb_to_y(pred)?, rgb_to_y(target)?);
    if a.shape() != b.shape() {
        return Err(Error::shape("evaluate", pred.shape(), target.shape()));
    }
    let psnr_db = psnr(&a, &b, shave)?;
    let ssim = ssim(&shave_plane(&a, shave)?, &shave_plane(&b, shave)?)?;
    Ok(MetricResult { psnr_db, ssim, shave })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::synth::procedural_image;
    use crate::tensor::gradcheck::random_tensor;

    fn plane(seed: u64) -> Tensor<f64> {
        rgb_to_y(&procedural_image(seed, 32, 40)).unwrap()
    }

    #[test]
    fn luma_endpoints() {
        let black = rgb_to_y(&Tensor::<f64>::zeros(&[3, 1, 1])).unwrap();
        assert!((black.item() - 16.0 / 255.0).abs() < 1e-12);
        let white = rgb_to_y(&Tensor::<f64>::ones(&[3, 1, 1])).unwrap();
        assert!((white.item() - 235.0 / 255.0).abs() < 1e-12);
        let ramp = rgb_to_y(&Tensor::<f64>::from_fn(&[3, 1, 5], |i| (i % 5) as f64 / 4.0)).unwrap();
        assert!(ramp.data().windows(2).all(|p| p[1] > p[0]));
        assert!(rgb_to_y(&Tensor::<f64>::zeros(&[4, 2, 2])).is_err());
    }

    #[test]
    fn psnr_closed_forms() {
        let a = plane(1);
        assert_eq!(psnr(&a, &a, 2).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 1.0 / 255.0);
        let p = psnr(&a, &b, 0).unwrap();
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-9, "{p}");
        let c = a.map(|v| v + 0.5 / 255.0);
        let gain = psnr(&a, &c, 0).unwrap() - p;
        assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert_eq!(psnr(&a, &b, 3).unwrap(), psnr(&b, &a, 3).unwrap());
        assert!(psnr(&a, &a, 16).is_err());
    }

    #[test]
    fn ssim_identity_symmetry_and_negative() {
        let (a, b) = (plane(2), plane(3));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 0.5);
        assert!(ssim(&Tensor::zeros(&[8, 20]), &Tensor::zeros(&[8, 20])).is_err());
    }

    #[test]
    fn ssim_luminance_term_on_constants() {
        let (mu, c) = (0.4, 0.05);
        let a = Tensor::<f64>::full(&[16, 16], mu);
        let b = Tensor::<f64>::full(&[16, 16], mu + c);
        let want = (2.0 * mu * (mu + c) + C1) / (mu * mu + (mu + c).powi(2) + C1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn flip_invariance() {
        let (a, b) = (plane(4), plane(5));
        let flip = |t: &Tensor<f64>| Tensor::from_fn(&[32, 40], |i| t.data()[(i / 40) * 40 + 39 - i % 40]);
        assert!((psnr(&a, &b, 2).unwrap() - psnr(&flip(&a), &flip(&b), 2).unwrap()).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - ssim(&flip(&a), &flip(&b)).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_error_scale() {
        let a = plane(6);
        let noise = random_tensor(&[32, 40], 7);
        let mut last = f64::INFINITY;
        for k in [0.001, 0.01, 0.05] {
            let b = a.zip_map(&noise, |x, n| x + k * n).unwrap();
            let p = psnr(&a, &b, 0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn rgb_evaluation() {
        let x = procedural_image(8, 24, 24);
        let r = evaluate_rgb(&x, &x, 2).unwrap();
        assert_eq!((r.psnr_db, r.shave), (PSNR_CAP, 2));
        assert!((r.ssim - 1.0).abs() < 1e-9);
    }
}
