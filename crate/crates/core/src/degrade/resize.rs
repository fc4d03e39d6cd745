//! Separable cubic-convolution resampling with the anti-aliased downscale
//! convention (kernel support widened by 1/scale), mirror boundaries.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel.
pub fn cubic(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// The four taps for a sample at fractional `phase` in `[0, 1)` between
/// the second and third of four consecutive inputs.
pub fn cubic_weights_at_phase(phase: f64) -> [f64; 4] {
    [
        cubic(1.0 + phase, CUBIC_A),
        cubic(phase, CUBIC_A),
        cubic(1.0 - phase, CUBIC_A),
        cubic(2.0 - phase, CUBIC_A),
    ]
}

/// Per-output-sample source indices and weights along one axis.
#[derive(Clone, Debug)]
pub struct Contributions {
    pub taps: Vec<Vec<(usize, f64)>>,
}

fn mirror(i: i64, n: usize) -> usize {
    // symmetric extension with the edge sample repeated
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

pub fn contributions(in_len: usize, out_len: usize, scale: f64, antialias: bool) -> Contributions {
    let shrink = scale < 1.0 && antialias;
    let width = if shrink { 4.0 / scale } else { 4.0 };
    let kernel = |t: f64| if shrink { scale * cubic(scale * t, CUBIC_A) } else { cubic(t, CUBIC_A) };
    let taps_per = width.ceil() as i64 + 2;
    let taps = (1..=out_len)
        .map(|u| {
            // 1-based centre of output sample u in input coordinates
            let x = u as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (x - width / 2.0).floor() as i64;
            let mut row: Vec<(usize, f64)> = Vec::new();
            let mut total = 0.0;
            for j in 0..taps_per {
                let idx = left + j;
                let w = kernel(x - idx as f64);
                if w == 0.0 {
                    continue;
                }
                total += w;
                let src = mirror(idx - 1, in_len);
                match row.iter_mut().find(|(s, _)| *s == src) {
                    Some(e) => e.1 += w,
                    None => row.push((src, w)),
                }
            }
            row.iter_mut().for_each(|e| e.1 /= total);
            row
        })
        .collect();
    Contributions { taps }
}

fn resize_axis<T: Real>(x: &Tensor<T>, axis_len: usize, contrib: &Contributions, along_rows: bool) -> Tensor<T> {
    let shape = x.shape();
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let planes: usize = shape[..r - 2].iter().product();
    let (oh, ow) = if along_rows { (axis_len, w) } else { (h, axis_len) };
    let mut out_shape = shape.to_vec();
    out_shape[r - 2] = oh;
    out_shape[r - 1] = ow;
    let weights: Vec<Vec<(usize, T)>> = contrib
        .taps
        .iter()
        .map(|row| row.iter().map(|&(i, v)| (i, T::from_f64(v))).collect())
        .collect();
    let mut out = Tensor::zeros(&out_shape);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..planes {
        let sp = &src[p * h * w..(p + 1) * h * w];
        let dp = &mut dst[p * oh * ow..(p + 1) * oh * ow];
        if along_rows {
            for (y, row) in weights.iter().enumerate() {
                for &(sy, wt) in row {
                    for xx in 0..w {
                        dp[y * ow + xx] += wt * sp[sy * w + xx];
                    }
                }
            }
        } else {
            for y in 0..h {
                for (xx, row) in weights.iter().enumerate() {
                    let mut acc = T::zero();
                    for &(sx, wt) in row {
                        acc += wt * sp[y * w + sx];
                    }
                    dp[y * ow + xx] = acc;
                }
            }
        }
    }
    out
}

/// Resizes the last two axes to `out_h x out_w`.
pub fn resize_to<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize, antialias: bool) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::invalid("bicubic_resize", "need at least two axes"));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bicubic_resize", "degenerate output size"));
    }
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    if h == 0 || w == 0 {
        return Err(Error::invalid("bicubic_resize", "empty input"));
    }
    let sh = out_h as f64 / h as f64;
    let sw = out_w as f64 / w as f64;
    let tmp = if out_h == h {
        x.clone()
    } else {
        resize_axis(x, out_h, &contributions(h, out_h, sh, antialias), true)
    };
    Ok(if out_w == w {
        tmp
    } else {
        resize_axis(&tmp, out_w, &contributions(w, out_w, sw, antialias), false)
    })
}

/// Resizes by `scale`; output extents are `ceil(extent * scale)`.
pub fn bicubic_resize<T: Real>(x: &Tensor<T>, scale: f64, antialias: bool) -> Result<Tensor<T>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::invalid("bicubic_resize", format!("bad scale {scale}")));
    }
    let r = x.rank();
    if r < 2 {
        return Err(Error::invalid("bicubic_resize", "need at least two axes"));
    }
    let out = |n: usize| (n as f64 * scale - 1e-9).ceil().max(0.0) as usize;
    resize_to(x, out(x.shape()[r - 2]), out(x.shape()[r - 1]), antialias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::random_tensor;

    #[test]
    fn phase_half_weights() {
        let w = cubic_weights_at_phase(0.5);
        assert_eq!(w, [-0.0625, 0.5625, 0.5625, -0.0625]);
    }

    #[test]
    fn scale_one_is_identity() {
        let x = random_tensor(&[3, 9, 7], 1);
        assert_eq!(bicubic_resize(&x, 1.0, true).unwrap(), x);
    }

    #[test]
    fn constant_is_preserved() {
        let x = Tensor::<f64>::full(&[2, 16, 12], 0.37);
        for aa in [true, false] {
            let y = bicubic_resize(&x, 0.5, aa).unwrap();
            assert_eq!(y.shape(), &[2, 8, 6]);
            assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
        let up = bicubic_resize(&x, 4.0, true).unwrap();
        assert_eq!(up.shape(), &[2, 64, 48]);
        assert!(up.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn antialias_widens_support() {
        let narrow = contributions(32, 16, 0.5, false);
        let wide = contributions(32, 16, 0.5, true);
        assert_eq!(narrow.taps[5].len(), 4);
        assert_eq!(wide.taps[5].len(), 8);
    }

    #[test]
    fn upsample_by_two_uses_quarter_phases() {
        // interior output samples of a 2x upscale sit at phases 0.25 / 0.75
        let c = contributions(16, 32, 2.0, true);
        let w: Vec<f64> = c.taps[10].iter().map(|e| e.1).collect();
        let want = cubic_weights_at_phase(0.75);
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_in_input() {
        let a = random_tensor(&[1, 12, 10], 2);
        let b = random_tensor(&[1, 12, 10], 3);
        let mix = a.zip_map(&b, |x, y| 2.0 * x - 0.5 * y).unwrap();
        let ra = bicubic_resize(&a, 0.5, true).unwrap();
        let rb = bicubic_resize(&b, 0.5, true).unwrap();
        let rm = bicubic_resize(&mix, 0.5, true).unwrap();
        let want = ra.zip_map(&rb, |x, y| 2.0 * x - 0.5 * y).unwrap();
        assert!(rm.zip_map(&want, |x, y| x - y).unwrap().max_abs() < 1e-6);
    }

    #[test]
    fn rejects_degenerate_output() {
        let x = Tensor::<f32>::zeros(&[4, 4]);
        assert!(resize_to(&x, 0, 2, true).is_err());
        assert!(bicubic_resize(&x, 0.0, true).is_err());
    }
}
