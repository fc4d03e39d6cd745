use std::rc::Rc;

use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::{Tensor, Var};

/// Symmetric spatial padding applied before cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero(usize),
    /// Mirror without repeating the edge sample (`d c b | a b c d | c b a`).
    Reflect(usize),
}

impl Padding {
    pub fn amount(self) -> usize {
        match self {
            Padding::Zero(p) | Padding::Reflect(p) => p,
        }
    }
}

/// Folds any integer coordinate into `0..n` by mirror reflection.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

struct Geometry {
    ch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    // source row/col per (kernel tap, output position); None = zero padding
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
    // per kernel column: output range `lo..hi` whose source columns are the
    // contiguous run starting at `start` (stride 1 only)
    runs: Vec<Option<(usize, usize, usize)>>,
    trivial: bool,
}

impl Geometry {
    fn new(ch: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: Padding) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let p = pad.amount();
        if kh > h + 2 * p || kw > w + 2 * p {
            return Err(Error::invalid(
                "conv2d",
                format!("{kh}x{kw} kernel larger than padded {h}x{w} input (pad {p})"),
            ));
        }
        let oh = (h + 2 * p - kh) / stride + 1;
        let ow = (w + 2 * p - kw) / stride + 1;
        let map = |k: usize, o: usize, n: usize| -> Option<usize> {
            let i = (o * stride + k) as isize - p as isize;
            match pad {
                _ if (0..n as isize).contains(&i) => Some(i as usize),
                Padding::Zero(_) => None,
                Padding::Reflect(_) => Some(reflect_index(i, n)),
            }
        };
        let rows = (0..kh).flat_map(|k| (0..oh).map(move |o| (k, o))).map(|(k, o)| map(k, o, h)).collect();
        let cols = (0..kw).flat_map(|k| (0..ow).map(move |o| (k, o))).map(|(k, o)| map(k, o, w)).collect();
        let runs = (0..kw)
            .map(|k| {
                if stride != 1 {
                    return None;
                }
                // source column ox + k - p lies inside 0..w
                let lo = p.saturating_sub(k).min(ow);
                let hi = (w + p).saturating_sub(k).min(ow).max(lo);
                (hi > lo).then_some((lo, hi, lo + k - p))
            })
            .collect();
        Ok(Geometry {
            ch,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            rows,
            cols,
            runs,
            trivial: kh == 1 && kw == 1 && stride == 1 && p == 0,
        })
    }

    fn col_rows(&self) -> usize {
        self.ch * self.kh * self.kw
    }

    fn npix(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<T: Real>(&self, img: &[T], col: &mut [T]) {
        let n = self.npix();
        for c in 0..self.ch {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut col[r * n..(r + 1) * n];
                    for oy in 0..self.oh {
                        let row = self.rows[ky * self.oh + oy];
                        let d = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match row {
                            None => d.iter_mut().for_each(|v| *v = T::zero()),
                            Some(sy) => {
                                let src = &plane[sy * self.w..(sy + 1) * self.w];
                                let cols = &self.cols[kx * self.ow..(kx + 1) * self.ow];
                                let (lo, hi) = match self.runs[kx] {
                                    Some((lo, hi, start)) => {
                                        d[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                                        (lo, hi)
                                    }
                                    None => (self.ow, self.ow),
                                };
                                for ox in (0..lo).chain(hi..self.ow) {
                                    d[ox] = match cols[ox] {
                                        Some(sx) => src[sx],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], img: &mut [T]) {
        let n = self.npix();
        img.iter_mut().for_each(|v| *v = T::zero());
        for c in 0..self.ch {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let r = (c * self.kh + ky) * self.kw + kx;
                    let src = &col[r * n..(r + 1) * n];
                    for oy in 0..self.oh {
                        let Some(sy) = self.rows[ky * self.oh + oy] else { continue };
                        let dst = &mut plane[sy * self.w..(sy + 1) * self.w];
                        let srow = &src[oy * self.ow..(oy + 1) * self.ow];
                        let cols = &self.cols[kx * self.ow..(kx + 1) * self.ow];
                        let (lo, hi) = match self.runs[kx] {
                            Some((lo, hi, start)) => {
                                for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(&srow[lo..hi]) {
                                    *d += v;
                                }
                                (lo, hi)
                            }
                            None => (self.ow, self.ow),
                        };
                        for ox in (0..lo).chain(hi..self.ow) {
                            if let Some(sx) = cols[ox] {
                                dst[sx] += srow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_shapes(x: &[usize], w: &[usize], bias: Option<&[usize]>) -> Result<()> {
    if x.len() != 4 || w.len() != 4 {
        return Err(Error::shape("conv2d", x, w));
    }
    if x[1] != w[1] {
        return Err(Error::invalid(
            "conv2d",
            format!("input has {} channels, weight expects {}", x[1], w[1]),
        ));
    }
    if let Some(b) = bias {
        if b != [w[0]] {
            return Err(Error::shape("conv2d", b, &[w[0]]));
        }
    }
    Ok(())
}

/// Cross-correlation of `B x InC x H x W` with `OutC x InC x kH x kW`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: Padding,
) -> Result<Tensor<T>> {
    check_shapes(x.shape(), weight.shape(), bias.map(|b| b.shape()))?;
    let (b, ch, h, w) = x.dims4("conv2d")?;
    let ws = weight.shape();
    let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
    let geo = Geometry::new(ch, h, w, kh, kw, stride, pad)?;
    Ok(forward_with(&geo, x, weight, bias, b, oc))
}

fn forward_with<T: Real>(
    geo: &Geometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    b: usize,
    oc: usize,
) -> Tensor<T> {
    let n = geo.npix();
    let kdim = geo.col_rows();
    let in_sz = geo.ch * geo.h * geo.w;
    let mut out = Tensor::zeros(&[b, oc, geo.oh, geo.ow]);
    par::for_each_chunk(out.data_mut(), oc * n, |bi, dst| {
        let img = &x.data()[bi * in_sz..(bi + 1) * in_sz];
        let owned;
        let col: &[T] = if geo.trivial {
            img
        } else {
            let mut buf = vec![T::zero(); kdim * n];
            geo.im2col(img, &mut buf);
            owned = buf;
            &owned
        };
        T::gemm(oc, kdim, n, T::one(), weight.data(), false, col, false, T::zero(), dst);
        if let Some(bias) = bias {
            for (o, chunk) in dst.chunks_mut(n).enumerate() {
                let bv = bias.data()[o];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    out
}

impl<'t, T: Real> Var<'t, T> {
    /// 2-D cross-correlation (deep-learning convention, no kernel flip).
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: Padding,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let wt = weight.value();
        let bv = bias.map(|b| b.value());
        check_shapes(x.shape(), wt.shape(), bv.as_deref().map(|b| b.shape()))?;
        let (b, ch, h, w) = x.dims4("conv2d")?;
        let ws = wt.shape().to_vec();
        let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
        let geo = Rc::new(Geometry::new(ch, h, w, kh, kw, stride, pad)?);
        let out = forward_with(&geo, &x, &wt, bv.as_deref(), b, oc);

        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.tape.record("conv2d", out, &parents, move |g, need| {
            let (geo, x, wt) = (&*geo, &*x, &*wt);
            let n = geo.npix();
            let kdim = geo.col_rows();
            let in_sz = ch * h * w;
            let gx = need[0].then(|| {
                let mut gx = Tensor::zeros(x.shape());
                par::for_each_chunk(gx.data_mut(), in_sz, |bi, dst| {
                    let gb = &g.data()[bi * oc * n..(bi + 1) * oc * n];
                    if geo.trivial {
                        T::gemm(kdim, oc, n, T::one(), wt.data(), true, gb, false, T::zero(), dst);
                    } else {
                        let mut col = vec![T::zero(); kdim * n];
                        T::gemm(kdim, oc, n, T::one(), wt.data(), true, gb, false, T::zero(), &mut col);
                        geo.col2im(&col, dst);
                    }
                });
                gx
            });
            let gw = need[1].then(|| {
                let partials = par::map_range(b, |bi| {
                    let img = &x.data()[bi * in_sz..(bi + 1) * in_sz];
                    let gb = &g.data()[bi * oc * n..(bi + 1) * oc * n];
                    let mut part = vec![T::zero(); oc * kdim];
                    if geo.trivial {
                        T::gemm(oc, n, kdim, T::one(), gb, false, img, true, T::zero(), &mut part);
                    } else {
                        let mut col = vec![T::zero(); kdim * n];
                        geo.im2col(img, &mut col);
                        T::gemm(oc, n, kdim, T::one(), gb, false, &col, true, T::zero(), &mut part);
                    }
                    part
                });
                let mut gw = Tensor::zeros(&ws);
                for part in partials {
                    for (a, v) in gw.data_mut().iter_mut().zip(part) {
                        *a += v;
                    }
                }
                gw
            });
            let mut res = vec![gx, gw];
            if has_bias {
                res.push(need[2].then(|| {
                    let mut gb = Tensor::zeros(&[oc]);
                    for (i, chunk) in g.data().chunks(n).enumerate() {
                        gb.data_mut()[i % oc] += chunk.iter().copied().sum::<T>();
                    }
                    gb
                }));
            }
            res
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_op, random_tensor};
    use crate::tensor::Tape;

    #[test]
    fn reflect_index_folds() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = random_tensor(&[1, 1, 3, 3], 1);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        for pad in [Padding::Zero(1), Padding::Reflect(1)] {
            let y = conv2d_forward(&x, &k, None, 1, pad).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn hand_sum_two_by_two() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::ones(&[1, 1, 2, 2]);
        let y = conv2d_forward(&x, &k, None, 1, Padding::Zero(0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn matches_direct_loop_with_stride_and_bias() {
        let x = random_tensor(&[2, 3, 7, 6], 2);
        let k = random_tensor(&[4, 3, 3, 3], 3);
        let bias = random_tensor(&[4], 4);
        let y = conv2d_forward(&x, &k, Some(&bias), 2, Padding::Zero(1)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 3]);
        for b in 0..2 {
            for o in 0..4 {
                for oy in 0..4 {
                    for ox in 0..3 {
                        let mut acc = bias.data()[o];
                        for c in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * 2 + ky) as isize - 1;
                                    let ix = (ox * 2 + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 {
                                        continue;
                                    }
                                    acc += x.data()[((b * 3 + c) * 7 + iy as usize) * 6 + ix as usize]
                                        * k.data()[((o * 3 + c) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                        let got = y.data()[((b * 4 + o) * 4 + oy) * 3 + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 3, 3, 3]), None, 1, Padding::Zero(1)).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 3, 3]), None, 0, Padding::Zero(1)).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 7, 7]), None, 1, Padding::Zero(1)).is_err());
    }

    #[test]
    fn weight_gradient_of_sum_matches_finite_difference() {
        let x = random_tensor(&[2, 3, 5, 5], 5);
        let w = random_tensor(&[2, 3, 3, 3], 6);
        let tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let wv = tape.leaf(w.clone());
        let loss = xv.conv2d(wv, None, 1, Padding::Zero(1)).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        let fd = crate::tensor::gradcheck::finite_diff_grad(
            |probe| conv2d_forward(&x, probe, None, 1, Padding::Zero(1)).unwrap().sum(),
            &w,
            1e-5,
        );
        let an = wv.grad().unwrap();
        for (a, b) in an.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_gradients() {
        for pad in [Padding::Zero(1), Padding::Reflect(1)] {
            check_op(&[&[2, 3, 5, 4], &[4, 3, 3, 3], &[4]], move |_, v| v[0].conv2d(v[1], Some(v[2]), 1, pad), 1e-5);
        }
        check_op(&[&[1, 2, 6, 6], &[3, 2, 3, 3]], |_, v| v[0].conv2d(v[1], None, 2, Padding::Reflect(1)), 1e-5);
        check_op(&[&[2, 4, 3, 3], &[2, 4, 1, 1], &[2]], |_, v| v[0].conv2d(v[1], Some(v[2]), 1, Padding::Zero(0)), 1e-5);
        check_op(&[&[1, 2, 8, 8], &[1, 2, 7, 7]], |_, v| v[0].conv2d(v[1], None, 1, Padding::Reflect(3)), 1e-5);
    }
}
