use super::c;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

impl<'t, T: Real> Var<'t, T> {
    pub fn sum(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let out = Tensor::scalar(self.with_value(|x| x.sum()));
        self.tape.record("sum", out, &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let n: T = c(self.with_value(|x| x.len()) as f64);
        let out = Tensor::scalar(self.with_value(|x| x.sum()) / n);
        self.tape.record("mean", out, &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item() / n))]
        })
    }

    /// Mean absolute error. The subgradient of `|.|` at 0 is taken as 0.
    pub fn l1_loss(self, target: Var<'t, T>) -> Result<Var<'t, T>> {
        let (p, q) = (self.value(), target.value());
        if p.shape() != q.shape() {
            return Err(Error::shape("l1_loss", p.shape(), q.shape()));
        }
        let n: T = c(p.len() as f64);
        let total: T = p.data().iter().zip(q.data()).map(|(&a, &b)| (a - b).abs()).sum();
        let out = Tensor::scalar(total / n);
        self.tape.record("l1_loss", out, &[self, target], move |g, need| {
            let k = g.item() / n;
            let sign = Tensor::from_fn(p.shape(), |i| {
                let d = p.data()[i] - q.data()[i];
                if d > T::zero() {
                    k
                } else if d < T::zero() {
                    -k
                } else {
                    T::zero()
                }
            });
            vec![need[0].then(|| sign.clone()), need[1].then(|| sign.map(|v| -v))]
        })
    }

    /// `B x C x H x W -> B x C x 1 x 1` spatial mean.
    pub fn global_avg_pool(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (b, ch, h, w) = x.dims4("global_avg_pool")?;
        let hw = h * w;
        let inv: T = c(1.0 / hw as f64);
        let out = Tensor::from_fn(&[b, ch, 1, 1], |i| {
            x.data()[i * hw..(i + 1) * hw].iter().copied().sum::<T>() * inv
        });
        self.tape.record("global_avg_pool", out, &[self], move |g, _| {
            vec![Some(Tensor::from_fn(&[b, ch, h, w], |i| g.data()[i / hw] * inv))]
        })
    }

    /// Per-pixel reduction across channels, `B x C x H x W -> B x 1 x H x W`.
    /// Max ties route the gradient to the lowest channel index.
    pub fn pool_channel(self, mode: PoolMode) -> Result<Var<'t, T>> {
        let x = self.value();
        let (b, ch, h, w) = x.dims4("pool_channel")?;
        if ch == 0 {
            return Err(Error::invalid("pool_channel", "empty channel axis"));
        }
        let hw = h * w;
        let mut out = Tensor::zeros(&[b, 1, h, w]);
        let mut argmax = vec![0usize; b * hw];
        let inv: T = c(1.0 / ch as f64);
        for bi in 0..b {
            for p in 0..hw {
                let at = |k: usize| x.data()[(bi * ch + k) * hw + p];
                let v = match mode {
                    PoolMode::Max => {
                        let mut best = 0;
                        for k in 1..ch {
                            if at(k) > at(best) {
                                best = k;
                            }
                        }
                        argmax[bi * hw + p] = best;
                        at(best)
                    }
                    PoolMode::Avg => (0..ch).map(at).sum::<T>() * inv,
                };
                out.data_mut()[bi * hw + p] = v;
            }
        }
        self.tape.record("pool_channel", out, &[self], move |g, _| {
            let mut gx = Tensor::zeros(&[b, ch, h, w]);
            let buf = gx.data_mut();
            for bi in 0..b {
                for p in 0..hw {
                    let gv = g.data()[bi * hw + p];
                    match mode {
                        PoolMode::Max => buf[(bi * ch + argmax[bi * hw + p]) * hw + p] += gv,
                        PoolMode::Avg => {
                            for k in 0..ch {
                                buf[(bi * ch + k) * hw + p] += gv * inv;
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        })
    }
}
