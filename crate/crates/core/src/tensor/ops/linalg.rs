use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;
use crate::tensor::{Tensor, Var};

impl<'t, T: Real> Var<'t, T> {
    /// Affine map on the trailing axis: `y = x W^T + b`, `W: Out x In`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let w = weight.value();
        let (out_f, in_f) = match w.shape() {
            &[o, i] => (o, i),
            s => return Err(Error::invalid("linear", format!("weight must be 2-D, got {s:?}"))),
        };
        let in_x = *x.shape().last().unwrap_or(&0);
        if in_x != in_f {
            return Err(Error::shape("linear", x.shape(), w.shape()));
        }
        let rows = x.len() / in_f.max(1);
        let mut out_shape = x.shape().to_vec();
        *out_shape.last_mut().unwrap() = out_f;
        let mut out = Tensor::zeros(&out_shape);
        T::gemm(rows, in_f, out_f, T::one(), x.data(), false, w.data(), true, T::zero(), out.data_mut());
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [out_f] {
                return Err(Error::shape("linear", bv.shape(), &[out_f]));
            }
            for row in out.data_mut().chunks_mut(out_f) {
                for (o, &bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
            parents.push(b);
        }
        let has_bias = bias.is_some();
        self.tape.record("linear", out, &parents, move |g, need| {
            let gx = need[0].then(|| {
                let mut gx = Tensor::zeros(x.shape());
                T::gemm(rows, out_f, in_f, T::one(), g.data(), false, w.data(), false, T::zero(), gx.data_mut());
                gx
            });
            let gw = need[1].then(|| {
                let mut gw = Tensor::zeros(&[out_f, in_f]);
                T::gemm(out_f, rows, in_f, T::one(), g.data(), true, x.data(), false, T::zero(), gw.data_mut());
                gw
            });
            let mut res = vec![gx, gw];
            if has_bias {
                res.push(need[2].then(|| {
                    let mut gb = Tensor::zeros(&[out_f]);
                    for row in g.data().chunks(out_f) {
                        for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    gb
                }));
            }
            res
        })
    }

    /// Batched matrix product over leading axes: `[.., M, K] x [.., K, N]`,
    /// or `[.., M, K] x [.., N, K]^T` when `trans_b`.
    pub fn matmul(self, other: Var<'t, T>, trans_b: bool) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let r = sa.len();
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != kb {
            return Err(Error::shape("matmul", sa, sb));
        }
        let mut out_shape = sa.to_vec();
        out_shape[r - 1] = n;
        let mut out = Tensor::zeros(&out_shape);
        let (ar, br) = (&*a, &*b);
        par::for_each_chunk(out.data_mut(), m * n, |gi, c| {
            let (a, b) = (ar, br);
            T::gemm(m, k, n, T::one(), &a.data()[gi * m * k..], false, &b.data()[gi * k * n..], trans_b, T::zero(), c);
        });
        self.tape.record("matmul", out, &[self, other], move |g, need| {
            let (a, b) = (&*a, &*b);
            let ga = need[0].then(|| {
                let mut ga = Tensor::zeros(a.shape());
                // dA = dC B^T  (or dC B when B was transposed)
                par::for_each_chunk(ga.data_mut(), m * k, |gi, c| {
                    T::gemm(m, n, k, T::one(), &g.data()[gi * m * n..], false, &b.data()[gi * k * n..], !trans_b, T::zero(), c);
                });
                ga
            });
            let gb = need[1].then(|| {
                let mut gb = Tensor::zeros(b.shape());
                par::for_each_chunk(gb.data_mut(), k * n, |gi, c| {
                    if trans_b {
                        // dB (N x K) = dC^T A
                        T::gemm(n, m, k, T::one(), &g.data()[gi * m * n..], true, &a.data()[gi * m * k..], false, T::zero(), c);
                    } else {
                        // dB (K x N) = A^T dC
                        T::gemm(k, m, n, T::one(), &a.data()[gi * m * k..], true, &g.data()[gi * m * n..], false, T::zero(), c);
                    }
                });
                gb
            });
            vec![ga, gb]
        })
    }
}
