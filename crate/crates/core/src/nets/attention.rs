use std::rc::Rc;

use super::layers::Linear;
use super::params::{Bound, Init, ParamId};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tensor, Var};

/// Window multi-head self-attention over `B x H x W x C` tokens with a
/// learnable relative position bias. With `shift`, the map is cyclically
/// rolled by half a window first and cross-boundary pairs are masked.
#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    /// `(2w-1)^2 x heads` bias table.
    pub rel_bias: ParamId,
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    pub shift: bool,
    rel_index: Rc<Vec<usize>>,
}

/// Value added to masked attention logits.
pub const MASK_VALUE: f64 = -100.0;

fn relative_index(window: usize, heads: usize) -> Vec<usize> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(heads * n * n);
    for h in 0..heads {
        for i in 0..n {
            for j in 0..n {
                let dy = i / window + window - 1 - j / window;
                let dx = i % window + window - 1 - j % window;
                idx.push((dy * span + dx) * heads + h);
            }
        }
    }
    idx
}

/// Token permutation `B x H x W x C -> (B nW) x (w w) x C` after rolling
/// by `-shift` on both spatial axes.
fn partition_indices(b: usize, h: usize, w: usize, c: usize, win: usize, shift: usize) -> Vec<usize> {
    let (nh, nw) = (h / win, w / win);
    let mut idx = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                for ty in 0..win {
                    let y = (wy * win + ty + shift) % h;
                    for tx in 0..win {
                        let x = (wx * win + tx + shift) % w;
                        let base = ((bi * h + y) * w + x) * c;
                        idx.extend(base..base + c);
                    }
                }
            }
        }
    }
    idx
}

/// Additive mask `nW x N x N`: 0 where two tokens came from the same
/// region of the rolled map, [`MASK_VALUE`] otherwise.
fn shift_mask(h: usize, w: usize, win: usize, shift: usize) -> Tensor<f64> {
    let region = |p: usize, n: usize| {
        if p < n - win {
            0
        } else if p < n - shift {
            1
        } else {
            2
        }
    };
    let (nh, nw, n) = (h / win, w / win, win * win);
    Tensor::from_fn(&[nh * nw, n, n], |k| {
        let (wi, i, j) = (k / (n * n), (k / n) % n, k % n);
        let (wy, wx) = (wi / nw, wi % nw);
        let label = |t: usize| {
            let y = wy * win + t / win;
            let x = wx * win + t % win;
            region(y, h) * 3 + region(x, w)
        };
        if label(i) == label(j) {
            0.0
        } else {
            MASK_VALUE
        }
    })
}

impl WindowAttention {
    pub fn new<T: Real>(
        init: &mut Init<'_, T>,
        name: &str,
        channels: usize,
        heads: usize,
        window: usize,
        shift: bool,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::invalid("window attention", format!("{heads} heads do not divide {channels} channels")));
        }
        if window == 0 || (shift && window < 2) {
            return Err(Error::invalid("window attention", "window must be >= 2 when shifted"));
        }
        let span = 2 * window - 1;
        Ok(init.scope(name, |i| WindowAttention {
            qkv: Linear::new(i, "qkv", channels, 3 * channels, true),
            proj: Linear::new(i, "proj", channels, channels, true),
            rel_bias: i.trunc_normal("rel_bias", &[span * span, heads], 0.02),
            channels,
            heads,
            window,
            shift,
            rel_index: Rc::new(relative_index(window, heads)),
        }))
    }

    pub fn shift_amount(&self) -> usize {
        if self.shift {
            self.window / 2
        } else {
            0
        }
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.forward_with_weights(p, x).map(|(y, _)| y)
    }

    /// Output and the softmax attention weights `(B nW) x heads x N x N`.
    pub fn forward_with_weights<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s = x.shape();
        let &[b, h, w, c] = s.as_slice() else {
            return Err(Error::invalid("window attention", format!("expected B x H x W x C, got {s:?}")));
        };
        let win = self.window;
        if c != self.channels || h % win != 0 || w % win != 0 {
            return Err(Error::invalid(
                "window attention",
                format!("{h}x{w}x{c} incompatible with window {win} and {} channels", self.channels),
            ));
        }
        let shift = self.shift_amount();
        let (nwin, n, heads) = ((h / win) * (w / win), win * win, self.heads);
        let d = c / heads;
        let part = partition_indices(b, h, w, c, win, shift);
        let tokens = x.permute_gather(part.clone(), &[b * nwin, n, c], "window_partition")?;

        let qkv = self.qkv.forward(p, tokens)?.reshape(&[b * nwin, n, 3, heads, d])?.permute(&[2, 0, 3, 1, 4])?;
        let pick = |k| qkv.narrow(0, k, 1)?.reshape(&[b * nwin, heads, n, d]);
        let q = pick(0)?.scale(1.0 / (d as f64).sqrt())?;
        let (k, v) = (pick(1)?, pick(2)?);

        let bias = p.get(self.rel_bias).gather(self.rel_index.clone(), &[1, heads, n, n])?;
        let mut logits = q.matmul(k, true)?.add_bcast(bias)?;
        if shift > 0 {
            let mask = x.tape().constant(shift_mask(h, w, win, shift).cast().reshape(&[1, nwin, 1, n, n])?);
            logits = logits.reshape(&[b, nwin, heads, n, n])?.add_bcast(mask)?.reshape(&[b * nwin, heads, n, n])?;
        }
        let attn = logits.softmax(3)?;
        let out = attn.matmul(v, false)?.permute(&[0, 2, 1, 3])?.reshape(&[b * nwin, n, c])?;
        let out = self.proj.forward(p, out)?;
        let mut inverse = vec![0; part.len()];
        for (o, &i) in part.iter().enumerate() {
            inverse[i] = o;
        }
        Ok((out.permute_gather(inverse, &[b, h, w, c], "window_merge")?, attn))
    }

    /// Per token: qkv and output projections plus scores and weighted sum
    /// (`2 N C`).
    pub fn multadds_per_token(&self) -> u64 {
        self.qkv.multadds() + self.proj.multadds() + 2 * (self.window * self.window * self.channels) as u64
    }
}
