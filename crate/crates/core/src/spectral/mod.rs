//! 2-D real FFT in half-spectrum form, its inverse, and their adjoints.
//!
//! Layout: the transform acts on the last two axes (`H x W`) of a tensor;
//! all leading axes are independent planes. The half spectrum keeps
//! `W/2 + 1` columns. Forward is unnormalised, inverse divides by `H·W`.

pub mod fft;

use num_complex::Complex;

pub use fft::Fft;

use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::{Tensor, Var};

/// Half spectrum of a real tensor: real and imaginary parts share the
/// shape `[.., H, W/2 + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumTensor<T: Real = f32> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
    pub original_width: usize,
}

pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Multiplicity of each retained column in the full spectrum: 1 for DC and
/// (even widths) Nyquist, 2 for the interior columns.
pub fn column_weight(l: usize, w: usize) -> usize {
    if l == 0 || (w % 2 == 0 && l == w / 2) {
        1
    } else {
        2
    }
}

fn plane_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::invalid(op, format!("need at least 2 axes, got {shape:?}")));
    }
    let r = shape.len();
    let planes = shape[..r - 2].iter().product();
    Ok((planes, shape[r - 2], shape[r - 1]))
}

struct Plans<T: Real> {
    rows: Fft<T>,
    cols: Fft<T>,
}

impl<T: Real> Plans<T> {
    fn new(h: usize, w: usize) -> Self {
        Plans {
            rows: Fft::new(w),
            cols: Fft::new(h),
        }
    }

    fn forward_plane(&self, x: &[T], h: usize, w: usize, re: &mut [T], im: &mut [T]) {
        let wf = half_width(w);
        let mut rows: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.rows.process_rows(&mut rows, false);
        // columns stored contiguously: cols[l * h + y]
        let mut cols = vec![Complex::new(T::zero(), T::zero()); h * wf];
        for y in 0..h {
            for l in 0..wf {
                cols[l * h + y] = rows[y * w + l];
            }
        }
        self.cols.process_rows(&mut cols, false);
        for l in 0..wf {
            for y in 0..h {
                let c = cols[l * h + y];
                re[y * wf + l] = c.re;
                im[y * wf + l] = c.im;
            }
        }
    }

    fn inverse_plane(&self, re: &[T], im: &[T], h: usize, w: usize, x: &mut [T]) {
        let wf = half_width(w);
        let mut cols = vec![Complex::new(T::zero(), T::zero()); h * wf];
        for y in 0..h {
            for l in 0..wf {
                cols[l * h + y] = Complex::new(re[y * wf + l], im[y * wf + l]);
            }
        }
        self.cols.process_rows(&mut cols, true);
        let mut rows = vec![Complex::new(T::zero(), T::zero()); h * w];
        for y in 0..h {
            let row = &mut rows[y * w..(y + 1) * w];
            for l in 0..wf {
                row[l] = cols[l * h + y];
            }
            for j in wf..w {
                row[j] = row[w - j].conj();
            }
        }
        self.rows.process_rows(&mut rows, true);
        let norm = T::one() / T::from_f64((h * w) as f64);
        for (o, v) in x.iter_mut().zip(&rows) {
            *o = v.re * norm;
        }
    }
}

pub fn rfft2<T: Real>(x: &Tensor<T>) -> Result<SpectrumTensor<T>> {
    let (planes, h, w) = plane_dims(x.shape(), "rfft2")?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("rfft2", "empty spatial extent"));
    }
    let wf = half_width(w);
    let plans = Plans::<T>::new(h, w);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = wf;
    let mut packed = vec![T::zero(); planes * 2 * h * wf];
    par::for_each_chunk(&mut packed, 2 * h * wf, |p, chunk| {
        let (re, im) = chunk.split_at_mut(h * wf);
        plans.forward_plane(&x.data()[p * h * w..(p + 1) * h * w], h, w, re, im);
    });
    let (re, im) = unpack(&packed, planes, h * wf);
    Ok(SpectrumTensor {
        re: Tensor::new(&shape, re)?,
        im: Tensor::new(&shape, im)?,
        original_width: w,
    })
}

fn unpack<T: Real>(packed: &[T], planes: usize, sz: usize) -> (Vec<T>, Vec<T>) {
    let mut re = Vec::with_capacity(planes * sz);
    let mut im = Vec::with_capacity(planes * sz);
    for chunk in packed.chunks(2 * sz) {
        re.extend_from_slice(&chunk[..sz]);
        im.extend_from_slice(&chunk[sz..]);
    }
    (re, im)
}

/// Real inverse of a half spectrum: the missing columns are filled by
/// Hermitian extension and the real part of the inverse DFT is returned.
pub fn irfft2<T: Real>(spec: &SpectrumTensor<T>) -> Result<Tensor<T>> {
    if spec.re.shape() != spec.im.shape() {
        return Err(Error::shape("irfft2", spec.re.shape(), spec.im.shape()));
    }
    let (_, h, wf) = plane_dims(spec.re.shape(), "irfft2")?;
    let w = spec.original_width;
    if w == 0 || half_width(w) != wf {
        return Err(Error::invalid(
            "irfft2",
            format!("width {w} inconsistent with {wf} spectrum columns"),
        ));
    }
    let plans = Plans::<T>::new(h, w);
    let mut shape = spec.re.shape().to_vec();
    *shape.last_mut().unwrap() = w;
    let mut out = Tensor::zeros(&shape);
    par::for_each_chunk(out.data_mut(), h * w, |p, dst| {
        let sl = p * h * wf..(p + 1) * h * wf;
        plans.inverse_plane(&spec.re.data()[sl.clone()], &spec.im.data()[sl], h, w, dst);
    });
    Ok(out)
}

/// Tikhonov-guarded complex division `N conj(D) / (|D|² + eps)`.
pub fn dft_divide<T: Real>(num: &SpectrumTensor<T>, den: &SpectrumTensor<T>, eps: f64) -> Result<SpectrumTensor<T>> {
    if num.re.shape() != den.re.shape() || num.original_width != den.original_width {
        return Err(Error::shape("dft_divide", num.re.shape(), den.re.shape()));
    }
    let eps = T::from_f64(eps);
    let n = num.re.len();
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for i in 0..n {
        let a = Complex::new(num.re.data()[i], num.im.data()[i]);
        let d = Complex::new(den.re.data()[i], den.im.data()[i]);
        let q = a * d.conj() / (d.norm_sqr() + eps);
        re.push(q.re);
        im.push(q.im);
    }
    Ok(SpectrumTensor {
        re: Tensor::new(num.re.shape(), re)?,
        im: Tensor::new(num.re.shape(), im)?,
        original_width: num.original_width,
    })
}

/// Default guard for [`dft_divide`]: `1e-8 · max |D|²`.
pub fn default_eps<T: Real>(den: &SpectrumTensor<T>) -> f64 {
    let peak = den
        .re
        .data()
        .iter()
        .zip(den.im.data())
        .map(|(&r, &i)| (r * r + i * i).to_f64())
        .fold(0.0, f64::max);
    1e-8 * peak
}

/// Stacks re/im on a new leading axis: `[2, .., H, Wf]`.
fn stack<T: Real>(s: SpectrumTensor<T>) -> Tensor<T> {
    let mut shape = vec![2];
    shape.extend_from_slice(s.re.shape());
    let mut data = s.re.into_data();
    data.extend(s.im.into_data());
    Tensor::new(&shape, data).expect("stacked sizes agree")
}

fn split<T: Real>(t: &Tensor<T>, width: usize) -> SpectrumTensor<T> {
    let shape = t.shape()[1..].to_vec();
    let half = t.len() / 2;
    SpectrumTensor {
        re: Tensor::new(&shape, t.data()[..half].to_vec()).expect("half size"),
        im: Tensor::new(&shape, t.data()[half..].to_vec()).expect("half size"),
        original_width: width,
    }
}

/// Scales each spectrum column by `f(column_weight)`.
fn weight_columns<T: Real>(t: &mut Tensor<T>, w: usize, f: impl Fn(usize) -> T) {
    let wf = half_width(w);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v *= f(column_weight(i % wf, w));
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Differentiable [`rfft2`]; output `[2, .., H, W/2+1]` with the real
    /// part at index 0 and the imaginary part at index 1.
    pub fn rfft2(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (_, h, w) = plane_dims(x.shape(), "rfft2")?;
        let out = stack(rfft2(&x)?);
        let hw = T::from_f64((h * w) as f64);
        self.tape.record("rfft2", out, &[self], move |g, _| {
            // adjoint: H·W · irfft2(G / column_weight)
            let mut gs = g.clone();
            weight_columns(&mut gs, w, |m| hw / T::from_f64(m as f64));
            vec![Some(irfft2(&split(&gs, w)).expect("shape from forward"))]
        })
    }

    /// Differentiable [`irfft2`] of a stacked `[2, .., H, W/2+1]` spectrum.
    pub fn irfft2(self, width: usize) -> Result<Var<'t, T>> {
        let s = self.value();
        if s.rank() < 3 || s.shape()[0] != 2 {
            return Err(Error::invalid("irfft2", format!("expected [2, .., H, Wf], got {:?}", s.shape())));
        }
        let out = irfft2(&split(&s, width))?;
        let (_, h, w) = plane_dims(out.shape(), "irfft2")?;
        let inv_hw = T::one() / T::from_f64((h * w) as f64);
        self.tape.record("irfft2", out, &[self], move |g, _| {
            // adjoint: column_weight / (H·W) · rfft2(g)
            let mut gs = stack(rfft2(g).expect("shape from forward"));
            weight_columns(&mut gs, w, |m| T::from_f64(m as f64) * inv_hw);
            vec![Some(gs)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_op, random_tensor};
    use crate::tensor::Tape;

    #[test]
    fn constant_image_is_dc_only() {
        let (h, w, v) = (5, 6, 0.7);
        let x = Tensor::<f64>::full(&[h, w], v);
        let s = rfft2(&x).unwrap();
        assert_eq!(s.re.shape(), &[5, 4]);
        assert!((s.re.data()[0] - v * (h * w) as f64).abs() < 1e-9);
        let rest = s.re.data()[1..].iter().chain(s.im.data()).map(|a| a.abs()).fold(0.0, f64::max);
        assert!(rest < 1e-9);
        assert_eq!(irfft2(&s).unwrap().map(|a| (a - v).abs()).max_abs() < 1e-12, true);
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = Tensor::<f32>::zeros(&[7, 8]);
        x.data_mut()[0] = 1.0;
        let s = rfft2(&x).unwrap();
        assert!(s.re.data().iter().all(|&v| (v - 1.0).abs() < 1e-5));
        assert!(s.im.data().iter().all(|&v| v.abs() < 1e-5));
    }

    #[test]
    fn roundtrip_f32() {
        let x = random_tensor(&[4, 16, 16], 3).cast::<f32>();
        let y = irfft2(&rfft2(&x).unwrap()).unwrap();
        let err = x.zip_map(&y, |a, b| a - b).unwrap().max_abs();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn inconsistent_width_rejected() {
        let s = rfft2(&Tensor::<f64>::zeros(&[4, 6])).unwrap();
        let bad = SpectrumTensor { original_width: 8, ..s };
        assert!(irfft2(&bad).is_err());
    }

    #[test]
    fn dft_divide_cases() {
        let x = random_tensor(&[6, 6], 5);
        let d = rfft2(&x).unwrap();
        let same = dft_divide(&d, &d, 1e-12).unwrap();
        assert!(same.re.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        assert!(same.im.data().iter().all(|&v| v.abs() < 1e-6));

        let two = rfft2(&x.map(|v| 2.0 * v)).unwrap();
        let q = dft_divide(&two, &d, 1e-8).unwrap();
        assert!(q.re.data().iter().all(|&v| (v - 2.0).abs() < 1e-3));

        let zero = rfft2(&Tensor::<f64>::zeros(&[6, 6])).unwrap();
        let g = dft_divide(&d, &zero, 1e-8).unwrap();
        assert!(g.re.is_finite() && g.re.max_abs() == 0.0);
    }

    #[test]
    fn spectral_gradients() {
        check_op(&[&[2, 5, 6]], |_, v| v[0].rfft2(), 1e-5);
        check_op(&[&[3, 7]], |_, v| v[0].rfft2(), 1e-5);
        check_op(&[&[2, 2, 4, 4]], |_, v| v[0].irfft2(6), 1e-5);
        check_op(&[&[2, 3, 5, 3]], |_, v| v[0].irfft2(5), 1e-5);
        check_op(&[&[2, 6, 6]], |_, v| v[0].rfft2()?.relu()?.irfft2(6), 1e-5);
    }

    #[test]
    fn identity_composition_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(random_tensor(&[3, 8, 5], 8));
        let loss = x.rfft2().unwrap().irfft2(5).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert!(x.grad().unwrap().data().iter().all(|&g| (g - 1.0).abs() < 1e-4));
    }
}
