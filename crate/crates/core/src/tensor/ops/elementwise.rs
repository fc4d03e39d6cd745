use std::rc::Rc;

use super::c;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tensor, Var};

/// Broadcast read pattern of `small` over `out`, in blocks: output block
/// `j` (of `block` elements) reads `small` starting at `offsets[j]`, either
/// contiguously or repeating a single element.
pub(crate) struct BroadcastPlan {
    pub offsets: Vec<usize>,
    pub block: usize,
    pub contiguous: bool,
}

impl BroadcastPlan {
    /// `small` has the same rank as `out`; each extent is either 1 or equal
    /// to the output extent.
    pub fn new(out: &[usize], small: &[usize]) -> Option<Self> {
        if out.len() != small.len() || out.iter().zip(small).any(|(&o, &s)| s != 1 && s != o) {
            return None;
        }
        let rank = out.len();
        // trailing dims that are all kept, or all broadcast, form one block
        let kept = |d: usize| small[d] == out[d];
        let bcast = |d: usize| small[d] == 1;
        let mut k = rank;
        let contiguous = rank == 0 || kept(rank - 1);
        while k > 0 && (if contiguous { kept(k - 1) } else { bcast(k - 1) }) {
            k -= 1;
        }
        let block: usize = out[k..].iter().product();
        let mut strides = vec![0usize; k];
        let mut acc: usize = small[k..].iter().product();
        for d in (0..k).rev() {
            strides[d] = if small[d] == 1 { 0 } else { acc };
            acc *= small[d];
        }
        let lead = &out[..k];
        let total: usize = lead.iter().product();
        let mut offsets = Vec::with_capacity(total);
        let mut idx = vec![0usize; k];
        let mut off = 0usize;
        for _ in 0..total {
            offsets.push(off);
            for d in (0..k).rev() {
                idx[d] += 1;
                off += strides[d];
                if idx[d] < lead[d] {
                    break;
                }
                off -= strides[d] * idx[d];
                idx[d] = 0;
            }
        }
        Some(BroadcastPlan {
            offsets,
            block,
            contiguous,
        })
    }

    /// Calls `f(out_range_start, small_slice_or_element)` per block.
    fn for_each<T: Copy>(&self, small: &[T], mut f: impl FnMut(usize, Block<'_, T>)) {
        for (j, &o) in self.offsets.iter().enumerate() {
            let b = if self.contiguous {
                Block::Run(&small[o..o + self.block])
            } else {
                Block::Repeat(small[o])
            };
            f(j * self.block, b);
        }
    }
}

enum Block<'a, T> {
    Run(&'a [T]),
    Repeat(T),
}

#[cfg(test)]
pub(crate) fn broadcast_offsets(out: &[usize], small: &[usize]) -> Option<Vec<usize>> {
    let plan = BroadcastPlan::new(out, small)?;
    let mut v = Vec::new();
    for &o in &plan.offsets {
        for i in 0..plan.block {
            v.push(if plan.contiguous { o + i } else { o });
        }
    }
    Some(v)
}

fn unary<'t, T: Real>(
    x: Var<'t, T>,
    op: &'static str,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let out = xv.map(f);
    let yv = Rc::new(out.clone());
    x.tape.record(op, out, &[x], move |g, _| {
        // df(x, y) is the local derivative
        let d = Tensor::from_fn(g.shape(), |i| g.data()[i] * df(xv.data()[i], yv.data()[i]));
        vec![Some(d)]
    })
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.with_value(|a| other.with_value(|b| a.zip_map(b, |x, y| x + y)))?;
        self.tape.record("add", out, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.clone())]
        })
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.with_value(|a| other.with_value(|b| a.zip_map(b, |x, y| x - y)))?;
        self.tape.record("sub", out, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        })
    }

    /// Elementwise product of equal-shaped tensors.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x * y)?;
        self.tape.record("mul", out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&b, |u, v| u * v).unwrap()),
                need[1].then(|| g.zip_map(&a, |u, v| u * v).unwrap()),
            ]
        })
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t, T>> {
        let k: T = c(factor);
        let out = self.with_value(|x| x.map(|v| v * k));
        self.tape
            .record("scale", out, &[self], move |g, _| vec![Some(g.map(|v| v * k))])
    }

    /// `self * alpha` with `alpha` a single-element tensor (learnable gain).
    pub fn mul_scalar(self, alpha: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = alpha.with_value(|t| {
            if t.len() == 1 {
                Ok(t.item())
            } else {
                Err(Error::invalid("mul_scalar", format!("gain must have one element, got {:?}", t.shape())))
            }
        })?;
        let x = self.value();
        let out = x.map(|v| v * a);
        let ashape = alpha.shape();
        self.tape.record("mul_scalar", out, &[self, alpha], move |g, need| {
            vec![
                need[0].then(|| g.map(|v| v * a)),
                need[1].then(|| {
                    let s: T = g.data().iter().zip(x.data()).map(|(&u, &v)| u * v).sum();
                    Tensor::full(&ashape, s)
                }),
            ]
        })
    }

    fn broadcast_binary(
        self,
        other: Var<'t, T>,
        op: &'static str,
        multiply: bool,
    ) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let plan = BroadcastPlan::new(a.shape(), b.shape()).ok_or_else(|| Error::shape(op, a.shape(), b.shape()))?;
        let combine = move |x: T, y: T| if multiply { x * y } else { x + y };
        let mut out = (*a).clone();
        {
            let od = out.data_mut();
            plan.for_each(b.data(), |start, blk| {
                let dst = &mut od[start..start + plan.block];
                match blk {
                    Block::Run(src) => dst.iter_mut().zip(src).for_each(|(d, &y)| *d = combine(*d, y)),
                    Block::Repeat(y) => dst.iter_mut().for_each(|d| *d = combine(*d, y)),
                }
            });
        }
        self.tape.record(op, out, &[self, other], move |g, need| {
            let gd = g.data();
            let ga = need[0].then(|| {
                if multiply {
                    let mut ga = g.clone();
                    let gm = ga.data_mut();
                    plan.for_each(b.data(), |start, blk| {
                        let dst = &mut gm[start..start + plan.block];
                        match blk {
                            Block::Run(src) => dst.iter_mut().zip(src).for_each(|(d, &y)| *d *= y),
                            Block::Repeat(y) => dst.iter_mut().for_each(|d| *d *= y),
                        }
                    });
                    ga
                } else {
                    g.clone()
                }
            });
            let gb = need[1].then(|| {
                let mut acc = Tensor::zeros(b.shape());
                let buf = acc.data_mut();
                let ad = a.data();
                for (j, &o) in plan.offsets.iter().enumerate() {
                    let r = j * plan.block..(j + 1) * plan.block;
                    let (gs, xs) = (&gd[r.clone()], &ad[r]);
                    if plan.contiguous {
                        let dst = &mut buf[o..o + plan.block];
                        if multiply {
                            for ((d, &gv), &xv) in dst.iter_mut().zip(gs).zip(xs) {
                                *d += gv * xv;
                            }
                        } else {
                            dst.iter_mut().zip(gs).for_each(|(d, &gv)| *d += gv);
                        }
                    } else if multiply {
                        buf[o] += gs.iter().zip(xs).map(|(&gv, &xv)| gv * xv).sum::<T>();
                    } else {
                        buf[o] += gs.iter().copied().sum::<T>();
                    }
                }
                acc
            });
            vec![ga, gb]
        })
    }

    /// `self + other` where `other` broadcasts along its unit extents.
    pub fn add_bcast(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.broadcast_binary(other, "add_bcast", false)
    }

    /// `self * other` where `other` broadcasts along its unit extents.
    pub fn mul_bcast(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.broadcast_binary(other, "mul_bcast", true)
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        unary(
            self,
            "relu",
            |v| v.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t, T>> {
        let s: T = c(slope);
        unary(
            self,
            "leaky_relu",
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        unary(
            self,
            "sigmoid",
            |v| T::one() / (T::one() + (-v).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Result<Var<'t, T>> {
        let k: T = c((2.0 / std::f64::consts::PI).sqrt());
        let a: T = c(0.044715);
        let half: T = c(0.5);
        let three: T = c(3.0);
        unary(
            self,
            "gelu",
            move |x| half * x * (T::one() + (k * (x + a * x * x * x)).tanh()),
            move |x, _| {
                let t = (k * (x + a * x * x * x)).tanh();
                half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + three * a * x * x)
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_op;
    use crate::tensor::Tape;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn activation_values() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[-1.0, 2.0]));
        assert_eq!(x.relu().unwrap().value().data(), &[0.0, 2.0]);
        let z = tape.leaf(t(&[1], &[0.0]));
        assert_eq!(z.sigmoid().unwrap().value().data(), &[0.5]);
        assert_eq!(z.gelu().unwrap().value().data(), &[0.0]);
    }

    #[test]
    fn broadcast_offsets_layout() {
        let o = broadcast_offsets(&[2, 3], &[1, 3]).unwrap();
        assert_eq!(o, vec![0, 1, 2, 0, 1, 2]);
        let o = broadcast_offsets(&[2, 3], &[2, 1]).unwrap();
        assert_eq!(o, vec![0, 0, 0, 1, 1, 1]);
        assert!(broadcast_offsets(&[2, 3], &[3, 1]).is_none());
    }

    #[test]
    fn elementwise_gradients() {
        check_op(&[&[3, 4]], |_, v| v[0].relu()?.sum(), 1e-5);
        check_op(&[&[3, 4]], |_, v| v[0].sigmoid()?.sum(), 1e-5);
        check_op(&[&[3, 4]], |_, v| v[0].gelu()?.sum(), 1e-5);
        check_op(&[&[3, 4], &[3, 4]], |_, v| v[0].mul(v[1])?.sum(), 1e-5);
        check_op(&[&[3, 4], &[3, 4]], |_, v| v[0].sub(v[1])?.mul(v[0])?.sum(), 1e-5);
        check_op(&[&[2, 3, 4], &[1]], |_, v| v[0].mul_scalar(v[1])?.relu()?.sum(), 1e-5);
        check_op(&[&[2, 3, 4], &[2, 1, 4]], |_, v| v[0].mul_bcast(v[1])?.sigmoid()?.sum(), 1e-5);
        check_op(&[&[2, 3, 4], &[1, 3, 1]], |_, v| v[0].add_bcast(v[1])?.gelu()?.sum(), 1e-5);
    }
}
