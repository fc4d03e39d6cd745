use std::rc::Rc;

use super::conv::reflect_index;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{numel, Tensor, Var};

/// Source offsets realising `permute(axes)` on a tensor of `shape`.
/// Axis permutation as a strided copy.
pub fn permute_copy<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Option<Tensor<T>> {
    let shape = x.shape();
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return None;
    }
    if rank == 0 || x.is_empty() {
        return Some(x.clone());
    }
    let mut strides = vec![1usize; rank];
    for d in (0..rank - 1).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let (inner, inner_stride) = (out_shape[rank - 1], src[rank - 1]);
    let lead = &out_shape[..rank - 1];
    let d = x.data();
    let mut out = Vec::with_capacity(x.len());
    let mut pos = vec![0usize; rank - 1];
    let mut off = 0usize;
    for _ in 0..x.len() / inner {
        if inner_stride == 1 {
            out.extend_from_slice(&d[off..off + inner]);
        } else {
            out.extend((0..inner).map(|i| d[off + i * inner_stride]));
        }
        for k in (0..rank - 1).rev() {
            pos[k] += 1;
            off += src[k];
            if pos[k] < lead[k] {
                break;
            }
            off -= src[k] * pos[k];
            pos[k] = 0;
        }
    }
    Some(Tensor::new(&out_shape, out).expect("permutation preserves size"))
}

pub fn permute_indices(shape: &[usize], axes: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return None;
    }
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let total = numel(shape);
    let mut idx = Vec::with_capacity(total);
    let mut pos = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        idx.push(off);
        for d in (0..rank).rev() {
            pos[d] += 1;
            off += out_strides[d];
            if pos[d] < out_shape[d] {
                break;
            }
            off -= out_strides[d] * pos[d];
            pos[d] = 0;
        }
    }
    Some((idx, out_shape))
}

/// Source offsets for depth-to-space with factor `s` on `B x C·s² x H x W`.
pub fn pixel_shuffle_indices(shape: &[usize], s: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    let &[b, cs, h, w] = shape else { return None };
    if s == 0 || cs % (s * s) != 0 {
        return None;
    }
    let ch = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut idx = Vec::with_capacity(b * cs * h * w);
    for bi in 0..b {
        for c in 0..ch {
            for y in 0..oh {
                for x in 0..ow {
                    let src_c = c * s * s + (y % s) * s + (x % s);
                    idx.push(((bi * cs + src_c) * h + y / s) * w + x / s);
                }
            }
        }
    }
    Some((idx, vec![b, ch, oh, ow]))
}

fn invert_permutation(idx: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; idx.len()];
    for (o, &i) in idx.iter().enumerate() {
        inv[i] = o;
    }
    inv
}

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let from = self.shape();
        let out = (*self.value()).clone().reshape(shape)?;
        self.tape.record("reshape", out, &[self], move |g, _| {
            vec![Some(g.clone().reshape(&from).expect("same element count"))]
        })
    }

    /// `out[i] = self[indices[i]]`; the adjoint scatter-adds, so repeated
    /// indices (padding) are handled.
    pub fn gather(self, indices: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        if indices.len() != numel(shape) {
            return Err(Error::invalid("gather", "index count does not match output shape"));
        }
        if indices.iter().any(|&i| i >= x.len()) {
            return Err(Error::invalid("gather", "index out of range"));
        }
        let out = Tensor::new(shape, indices.iter().map(|&i| x.data()[i]).collect())?;
        let src_shape = x.shape().to_vec();
        self.tape.record("gather", out, &[self], move |g, _| {
            let mut gx = Tensor::zeros(&src_shape);
            let buf = gx.data_mut();
            for (&i, &v) in indices.iter().zip(g.data()) {
                buf[i] += v;
            }
            vec![Some(gx)]
        })
    }

    /// Gather where `indices` is a permutation; the adjoint is a gather too.
    pub(crate) fn permute_gather(self, indices: Vec<usize>, shape: &[usize], op: &'static str) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = Tensor::new(shape, indices.iter().map(|&i| x.data()[i]).collect())?;
        let src_shape = x.shape().to_vec();
        let inverse = invert_permutation(&indices);
        self.tape.record(op, out, &[self], move |g, _| {
            let gx = Tensor::new(&src_shape, inverse.iter().map(|&i| g.data()[i]).collect())
                .expect("permutation preserves size");
            vec![Some(gx)]
        })
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = permute_copy(&x, axes)
            .ok_or_else(|| Error::invalid("permute", format!("bad axes {axes:?} for {:?}", x.shape())))?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.tape.record("permute", out, &[self], move |g, _| {
            vec![Some(permute_copy(g, &inverse).expect("inverse of a valid permutation"))]
        })
    }

    /// Depth-to-space: `B x C·s² x H x W -> B x C x sH x sW`.
    pub fn pixel_shuffle(self, s: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let (idx, out_shape) = pixel_shuffle_indices(&shape, s).ok_or_else(|| {
            Error::invalid("pixel_shuffle", format!("channels of {shape:?} not divisible by {s}²"))
        })?;
        self.permute_gather(idx, &out_shape, "pixel_shuffle")
    }

    /// Space-to-depth, the exact inverse of [`Var::pixel_shuffle`].
    pub fn pixel_unshuffle(self, s: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let &[b, ch, h, w] = &shape[..] else {
            return Err(Error::invalid("pixel_unshuffle", "expected rank 4"));
        };
        if s == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::invalid("pixel_unshuffle", format!("{shape:?} not divisible by {s}")));
        }
        let fwd_shape = [b, ch * s * s, h / s, w / s];
        let (fwd, _) = pixel_shuffle_indices(&fwd_shape, s).expect("divisible by construction");
        self.permute_gather(invert_permutation(&fwd), &fwd_shape, "pixel_unshuffle")
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::invalid("concat", "axis out of range"));
        }
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        for v in &values {
            let s = v.shape();
            if s.len() != base.len() || (0..s.len()).any(|d| d != axis && s[d] != base[d]) {
                return Err(Error::shape("concat", &base, s));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                data.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let out = Tensor::new(&out_shape, data)?;
        let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
        first.tape.record("concat", out, parts, move |g, need| {
            let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (k, &l) in lens.iter().enumerate() {
                    grads[k].extend_from_slice(&g.data()[off..off + l * inner]);
                    off += l * inner;
                }
            }
            grads
                .into_iter()
                .zip(&shapes)
                .zip(need)
                .map(|((d, s), &n)| n.then(|| Tensor::new(s, d).expect("sizes agree")))
                .collect()
        })
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid("narrow", format!("{start}+{len} out of range on axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut idx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for k in start..start + len {
                idx.extend((0..inner).map(|i| (o * n + k) * inner + i));
            }
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        self.gather(Rc::new(idx), &out_shape)
    }

    /// Reflect-pads the bottom and right edges of a `B x C x H x W` tensor.
    pub fn pad_reflect_br(self, pad_h: usize, pad_w: usize) -> Result<Var<'t, T>> {
        if pad_h == 0 && pad_w == 0 {
            return Ok(self);
        }
        let (b, ch, h, w) = self.with_value(|t| t.dims4("pad_reflect"))?;
        let (oh, ow) = (h + pad_h, w + pad_w);
        let mut idx = Vec::with_capacity(b * ch * oh * ow);
        for p in 0..b * ch {
            for y in 0..oh {
                let sy = reflect_index(y as isize, h);
                for x in 0..ow {
                    idx.push((p * h + sy) * w + reflect_index(x as isize, w));
                }
            }
        }
        self.gather(Rc::new(idx), &[b, ch, oh, ow])
    }

    /// Keeps the top-left `h x w` region of a `B x C x H x W` tensor.
    pub fn crop(self, h: usize, w: usize) -> Result<Var<'t, T>> {
        let (b, ch, ih, iw) = self.with_value(|t| t.dims4("crop"))?;
        if h > ih || w > iw {
            return Err(Error::invalid("crop", format!("{h}x{w} exceeds {ih}x{iw}")));
        }
        if h == ih && w == iw {
            return Ok(self);
        }
        let mut idx = Vec::with_capacity(b * ch * h * w);
        for p in 0..b * ch {
            for y in 0..h {
                idx.extend((0..w).map(|x| (p * ih + y) * iw + x));
            }
        }
        self.gather(Rc::new(idx), &[b, ch, h, w])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_op, random_tensor};
    use crate::tensor::Tape;
    use proptest::prelude::*;

    #[test]
    fn pixel_shuffle_depth_to_space() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 2, 2]);
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0, 4.0]);
        let id = tape.leaf(random_tensor(&[2, 3, 4, 5], 1));
        assert_eq!(id.pixel_shuffle(1).unwrap().value(), id.value());
        assert!(tape.leaf(Tensor::zeros(&[1, 3, 2, 2])).pixel_shuffle(2).is_err());
    }

    #[test]
    fn permute_transposes() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64));
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), vec![3, 2]);
        assert_eq!(y.value().data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn concat_and_narrow_roundtrip() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(random_tensor(&[2, 3, 4], 1));
        let b = tape.leaf(random_tensor(&[2, 2, 4], 2));
        let c = Var::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 5, 4]);
        assert_eq!(c.narrow(1, 0, 3).unwrap().value(), a.value());
        assert_eq!(c.narrow(1, 3, 2).unwrap().value(), b.value());
    }

    #[test]
    fn reflect_pad_then_crop_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(random_tensor(&[1, 2, 5, 3], 4));
        let p = x.pad_reflect_br(3, 5).unwrap();
        assert_eq!(p.shape(), vec![1, 2, 8, 8]);
        assert_eq!(p.crop(5, 3).unwrap().value(), x.value());
        // row 5 mirrors row 3
        let pv = p.value();
        assert_eq!(pv.data()[5 * 8], x.value().data()[3 * 3]);
    }

    #[test]
    fn shape_gradients() {
        check_op(&[&[1, 8, 2, 3]], |_, v| v[0].pixel_shuffle(2), 1e-5);
        check_op(&[&[1, 2, 4, 6]], |_, v| v[0].pixel_unshuffle(2), 1e-5);
        check_op(&[&[2, 3, 4]], |_, v| v[0].permute(&[2, 0, 1]), 1e-5);
        check_op(&[&[2, 3, 4], &[2, 1, 4]], |_, v| Var::concat(&[v[0], v[1]], 1), 1e-5);
        check_op(&[&[1, 2, 3, 3]], |_, v| v[0].pad_reflect_br(2, 1), 1e-5);
        check_op(&[&[2, 6]], |_, v| v[0].narrow(1, 2, 3)?.reshape(&[6]), 1e-5);
    }

    proptest! {
        #[test]
        fn shuffle_unshuffle_is_exact(b in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5, s in 1usize..4) {
            let tape = Tape::<f32>::new();
            let x = tape.leaf(Tensor::from_fn(&[b, c * s * s, h, w], |i| (i as f32 * 0.37).sin()));
            let y = x.pixel_shuffle(s).unwrap().pixel_unshuffle(s).unwrap();
            prop_assert_eq!(y.value(), x.value());
        }
    }
}
