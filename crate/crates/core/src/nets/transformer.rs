use super::attention::WindowAttention;
use super::fab::Fab;
use super::layers::{Conv, LayerNorm, Mlp};
use super::params::{Bound, Init, ParamId};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Var;

/// Initial value of every learnable FAB gain.
pub const ALPHA_INIT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrConfig {
    pub channels: usize,
    pub num_fsag: usize,
    pub fsabs_per_fsag: usize,
    pub heads: usize,
    pub window: usize,
    pub mlp_ratio: f64,
    pub fab_squeeze_channels: usize,
    pub scale: usize,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig {
            channels: 144,
            num_fsag: 6,
            fsabs_per_fsag: 6,
            heads: 6,
            window: 16,
            mlp_ratio: 2.0,
            fab_squeeze_channels: 6,
            scale: 4,
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("sr config", msg));
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("{} heads must divide {} channels", self.heads, self.channels));
        }
        if self.window < 2 {
            return bad(format!("window {} must be >= 2", self.window));
        }
        if self.fab_squeeze_channels == 0 || self.num_fsag == 0 || self.fsabs_per_fsag == 0 {
            return bad("block counts and squeeze width must be positive".into());
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            return bad(format!("mlp ratio {} must be positive", self.mlp_ratio));
        }
        if upsample_stages(self.scale).is_none() {
            return bad(format!("unsupported scale {}", self.scale));
        }
        Ok(())
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.channels as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// Pixel-shuffle factors realising `scale`: powers of two as cascaded x2
/// stages, 3 as a single stage.
pub fn upsample_stages(scale: usize) -> Option<Vec<usize>> {
    match scale {
        3 => Some(vec![3]),
        s if s >= 2 && s.is_power_of_two() => Some(vec![2; s.trailing_zeros() as usize]),
        _ => None,
    }
}

/// `X1 = LN(X)`, `X2 = WMSA(X1) + alpha FAB(X1) + X1`, `out = MLP(LN(X2)) + X2`
/// on `B x H x W x C` tokens.
#[derive(Clone, Debug)]
pub struct Fsab {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub fab: Fab,
    pub alpha: ParamId,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl Fsab {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, cfg: &SrConfig, shift: bool) -> Result<Self> {
        let c = cfg.channels;
        init.scope(name, |i| {
            Ok(Fsab {
                norm1: LayerNorm::new(i, "norm1", c),
                attn: WindowAttention::new(i, "attn", c, cfg.heads, cfg.window, shift)?,
                fab: Fab::new(i, "fab", c, cfg.fab_squeeze_channels),
                alpha: i.constant("alpha", &[1], ALPHA_INIT),
                norm2: LayerNorm::new(i, "norm2", c),
                mlp: Mlp::new(i, "mlp", c, cfg.mlp_hidden()),
            })
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let x1 = self.norm1.forward(p, x)?;
        let a = self.attn.forward(p, x1)?;
        let f = self.fab.forward(p, x1.permute(&[0, 3, 1, 2])?)?.permute(&[0, 2, 3, 1])?;
        let x2 = a.add(f.mul_scalar(p.get(self.alpha))?)?.add(x1)?;
        self.mlp.forward(p, self.norm2.forward(p, x2)?)?.add(x2)
    }

    pub fn multadds(&self, h: usize, w: usize) -> u64 {
        let tokens = (h * w) as u64;
        tokens * (self.attn.multadds_per_token() + self.mlp.multadds()) + self.fab.multadds(h, w)
    }
}

/// FSABs with alternating shifted windows, a 3x3 conv and a skip, on
/// `B x C x H x W` maps.
#[derive(Clone, Debug)]
pub struct Fsag {
    pub blocks: Vec<Fsab>,
    pub conv: Conv,
}

impl Fsag {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, cfg: &SrConfig) -> Result<Self> {
        init.scope(name, |i| {
            let blocks = (0..cfg.fsabs_per_fsag)
                .map(|k| Fsab::new(i, &format!("fsab{k}"), cfg, k % 2 == 1))
                .collect::<Result<Vec<_>>>()?;
            Ok(Fsag {
                blocks,
                conv: Conv::new(i, "conv", cfg.channels, cfg.channels, 3, true),
            })
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut t = x.permute(&[0, 2, 3, 1])?;
        for b in &self.blocks {
            t = b.forward(p, t)?;
        }
        self.conv.forward(p, t.permute(&[0, 3, 1, 2])?)?.add(x)
    }

    pub fn multadds(&self, h: usize, w: usize) -> u64 {
        self.blocks.iter().map(|b| b.multadds(h, w)).sum::<u64>() + self.conv.multadds(h, w)
    }
}
