use std::fmt;
use std::str::FromStr;

use super::corrector::{Corrector, CorrectorConfig, ResBlock};
use super::fab::Fab;
use super::layers::Conv;
use super::params::{Bound, Init, ParamId, ParamStore};
use super::transformer::{upsample_stages, Fsag, SrConfig, ALPHA_INIT};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tensor, Var};

/// Pipeline variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// LR branch only, no corrector.
    Case1,
    /// Corrector output replaces the LR input of a case-1 network.
    Case2,
    /// Full model: corrected-LR extractor and LR branch fused.
    Case3,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Case1, Mode::Case2, Mode::Case3];

    pub fn uses_corrector(self) -> bool {
        self != Mode::Case1
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Case1 => "case1",
            Mode::Case2 => "case2",
            Mode::Case3 => "case3",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "case1" => Ok(Mode::Case1),
            "case2" => Ok(Mode::Case2),
            "case3" => Ok(Mode::Case3),
            _ => Err(Error::invalid("mode", format!("unknown mode `{s}` (case1|case2|case3)"))),
        }
    }
}

/// Named intermediate activations collected during a forward pass.
#[derive(Debug, Default)]
pub struct Taps<T: Real = f32> {
    pub maps: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Taps<T> {
    fn record(taps: &mut Option<&mut Self>, name: &str, v: Var<'_, T>) {
        if let Some(t) = taps.as_deref_mut() {
            t.maps.push((name.to_string(), v.value().as_ref().clone()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.maps.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Stand-alone corrector with its own parameter store (stage-one training).
#[derive(Clone, Debug)]
pub struct CorrectorModel<T: Real = f32> {
    pub store: ParamStore<T>,
    pub net: Corrector,
}

impl<T: Real> CorrectorModel<T> {
    pub const PREFIX: &'static str = "corrector";

    pub fn new(cfg: CorrectorConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Corrector::new(&mut Init::new(&mut store, seed), Self::PREFIX, cfg)?;
        Ok(CorrectorModel { store, net })
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, lr: Var<'t, T>) -> Result<Var<'t, T>> {
        self.net.forward(p, lr)
    }

    /// Inference on a `3 x H x W` or `B x 3 x H x W` image.
    pub fn infer(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = crate::tensor::Tape::no_grad();
        let p = self.store.bind(&tape);
        let x = tape.constant(as_batch(lr)?);
        let y = self.net.forward(&p, x)?.value().as_ref().clone();
        y.reshape(lr.shape())
    }
}

pub(crate) fn as_batch<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    match x.shape() {
        &[c, h, w] => x.clone().reshape(&[1, c, h, w]),
        [_, _, _, _] => Ok(x.clone()),
        s => Err(Error::invalid("model input", format!("expected C x H x W or B x C x H x W, got {s:?}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LceConfig {
    pub corrector: CorrectorConfig,
    pub sr: SrConfig,
    pub mode: Mode,
}

impl LceConfig {
    /// Canonical text used for the checkpoint digest.
    pub fn canonical(&self) -> String {
        let c = &self.corrector;
        let s = &self.sr;
        let mut out = format!("mode={}\n", self.mode);
        if self.mode.uses_corrector() {
            out += &format!(
                "corrector.channels={}\ncorrector.num_rg={}\ncorrector.rcabs_per_rg={}\ncorrector.reduction={}\ncorrector.input_residual={}\n",
                c.channels, c.num_rg, c.rcabs_per_rg, c.reduction, c.input_residual
            );
        }
        out += &format!(
            "sr.channels={}\nsr.num_fsag={}\nsr.fsabs_per_fsag={}\nsr.heads={}\nsr.window={}\nsr.mlp_ratio={}\nsr.fab_squeeze_channels={}\nsr.scale={}\n",
            s.channels, s.num_fsag, s.fsabs_per_fsag, s.heads, s.window, s.mlp_ratio, s.fab_squeeze_channels, s.scale
        );
        out
    }
}

/// Shallow conv, residual FAB gains, then a ResBlock.
#[derive(Clone, Debug)]
pub struct ClrExtractor {
    pub head: Conv,
    pub fabs: [Fab; 2],
    pub alphas: [ParamId; 2],
    pub rb: ResBlock,
}

/// The assembled super-resolution network.
#[derive(Clone, Debug)]
pub struct LceModel<T: Real = f32> {
    pub config: LceConfig,
    pub store: ParamStore<T>,
    pub corrector: Option<Corrector>,
    pub extractor: Option<ClrExtractor>,
    pub lr_head: Conv,
    pub lr_rb: ResBlock,
    pub fuse: Option<Conv>,
    pub body: Vec<Fsag>,
    pub body_conv: Conv,
    pub upsample: Vec<(Conv, usize)>,
    pub tail: Conv,
}

pub struct LceOutput<'t, T: Real> {
    pub sr: Var<'t, T>,
    pub clr: Option<Var<'t, T>>,
}

/// Layer names accepted by [`LceModel::forward_taps`].
pub const TAP_NAMES: &[&str] = &[
    "corrector.out",
    "extractor.fab0",
    "extractor.fab1",
    "extractor.out",
    "lr_branch.out",
    "fuse.out",
    "body.out",
    "upsample.out",
];

impl<T: Real> LceModel<T> {
    pub fn new(config: LceConfig, seed: u64) -> Result<Self> {
        config.sr.validate()?;
        let sr = config.sr;
        let c = sr.channels;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, seed);
        let i = &mut init;
        let corrector = if config.mode.uses_corrector() {
            Some(Corrector::new(i, CorrectorModel::<T>::PREFIX, config.corrector)?)
        } else {
            None
        };
        let extractor = (config.mode == Mode::Case3).then(|| {
            i.scope("extractor", |i| ClrExtractor {
                head: Conv::new(i, "head", 3, c, 3, true),
                fabs: [Fab::new(i, "fab0", c, sr.fab_squeeze_channels), Fab::new(i, "fab1", c, sr.fab_squeeze_channels)],
                alphas: [i.constant("alpha0", &[1], ALPHA_INIT), i.constant("alpha1", &[1], ALPHA_INIT)],
                rb: ResBlock::new(i, "rb", c),
            })
        });
        let (lr_head, lr_rb) = i.scope("lr_branch", |i| (Conv::new(i, "head", 3, c, 3, true), ResBlock::new(i, "rb", c)));
        let fuse = (config.mode == Mode::Case3).then(|| Conv::new(i, "fuse", 2 * c, c, 1, false));
        let body = i.scope("body", |i| {
            (0..sr.num_fsag)
                .map(|k| Fsag::new(i, &format!("fsag{k}"), &sr))
                .collect::<Result<Vec<_>>>()
        })?;
        let body_conv = i.scope("body", |i| Conv::new(i, "conv", c, c, 3, true));
        let upsample = i.scope("upsample", |i| {
            upsample_stages(sr.scale)
                .expect("validated")
                .into_iter()
                .enumerate()
                .map(|(k, f)| (Conv::new(i, &format!("conv{k}"), c, c * f * f, 3, true), f))
                .collect()
        });
        let tail = Conv::new(i, "tail", c, 3, 3, true);
        drop(init);
        Ok(LceModel {
            config,
            store,
            corrector,
            extractor,
            lr_head,
            lr_rb,
            fuse,
            body,
            body_conv,
            upsample,
            tail,
        })
    }

    pub fn scale(&self) -> usize {
        self.config.sr.scale
    }

    /// Freezes or unfreezes the corrector parameters.
    pub fn set_corrector_frozen(&mut self, frozen: bool) -> usize {
        self.store.set_frozen(&format!("{}.", CorrectorModel::<T>::PREFIX), frozen)
    }

    pub fn forward<'t>(&self, p: &Bound<'t, T>, lr: Var<'t, T>) -> Result<LceOutput<'t, T>> {
        self.forward_taps(p, lr, None, None)
    }

    /// Forward pass. `clr` substitutes a precomputed corrector output; `taps`
    /// collects the activations listed in [`TAP_NAMES`].
    pub fn forward_taps<'t>(
        &self,
        p: &Bound<'t, T>,
        lr: Var<'t, T>,
        clr: Option<Var<'t, T>>,
        mut taps: Option<&mut Taps<T>>,
    ) -> Result<LceOutput<'t, T>> {
        let s = lr.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::invalid("lce forward", format!("expected B x 3 x H x W, got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let win = self.config.sr.window;
        let clr = match (clr, &self.corrector) {
            (Some(c), _) => Some(c),
            (None, Some(net)) => Some(net.forward(p, lr)?),
            (None, None) => None,
        };
        if let Some(c) = clr {
            if c.shape() != s {
                return Err(Error::shape("lce forward", &c.shape(), &s));
            }
            Taps::record(&mut taps, "corrector.out", c);
        }
        let (ph, pw) = ((win - h % win) % win, (win - w % win) % win);
        let lr_in = lr.pad_reflect_br(ph, pw)?;
        let clr_in = clr.map(|c| c.pad_reflect_br(ph, pw)).transpose()?;

        let branch_in = match self.config.mode {
            Mode::Case2 => clr_in.expect("case2 has a corrector"),
            _ => lr_in,
        };
        let f_lr = self.lr_rb.forward(p, self.lr_head.forward(p, branch_in)?)?;
        Taps::record(&mut taps, "lr_branch.out", f_lr);
        let f0 = match (&self.extractor, &self.fuse) {
            (Some(ex), Some(fuse)) => {
                let mut f = ex.head.forward(p, clr_in.expect("case3 has a corrector"))?;
                for (k, (fab, &alpha)) in ex.fabs.iter().zip(&ex.alphas).enumerate() {
                    f = f.add(fab.forward(p, f)?.mul_scalar(p.get(alpha))?)?;
                    Taps::record(&mut taps, &format!("extractor.fab{k}"), f);
                }
                let f_clr = ex.rb.forward(p, f)?;
                Taps::record(&mut taps, "extractor.out", f_clr);
                let fused = fuse.forward(p, Var::concat(&[f_clr, f_lr], 1)?)?;
                Taps::record(&mut taps, "fuse.out", fused);
                fused
            }
            _ => f_lr,
        };
        let mut f = f0;
        for g in &self.body {
            f = g.forward(p, f)?;
        }
        let f = self.body_conv.forward(p, f)?.add(f0)?;
        Taps::record(&mut taps, "body.out", f);
        let mut u = f;
        for (conv, factor) in &self.upsample {
            u = conv.forward(p, u)?.pixel_shuffle(*factor)?;
        }
        Taps::record(&mut taps, "upsample.out", u);
        let scale = self.scale();
        let sr = self.tail.forward(p, u)?.crop(h * scale, w * scale)?;
        Ok(LceOutput { sr, clr })
    }

    /// Inference on a `3 x H x W` or `B x 3 x H x W` image.
    pub fn infer(&self, lr: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let tape = crate::tensor::Tape::no_grad();
        let p = self.store.bind(&tape);
        let out = self.forward(&p, tape.constant(as_batch(lr)?))?;
        let mut sr_shape = lr.shape().to_vec();
        let r = sr_shape.len();
        sr_shape[r - 2] *= self.scale();
        sr_shape[r - 1] *= self.scale();
        let sr = out.sr.value().as_ref().clone().reshape(&sr_shape)?;
        let clr = out.clr.map(|c| c.value().as_ref().clone().reshape(lr.shape())).transpose()?;
        Ok((sr, clr))
    }

    /// Collects the named activations for one image.
    pub fn taps(&self, lr: &Tensor<T>, names: &[&str]) -> Result<Taps<T>> {
        if let Some(bad) = names.iter().find(|n| !TAP_NAMES.contains(n)) {
            return Err(Error::UnknownLayer(bad.to_string()));
        }
        let tape = crate::tensor::Tape::no_grad();
        let p = self.store.bind(&tape);
        let mut all = Taps::default();
        self.forward_taps(&p, tape.constant(as_batch(lr)?), None, Some(&mut all))?;
        Ok(Taps {
            maps: all.maps.into_iter().filter(|(n, _)| names.contains(&n.as_str())).collect(),
        })
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    /// Multiply-accumulate count for an `h x w` LR input (extents padded to
    /// the window as executed). Norms, activations, softmax, pooling and
    /// elementwise ops are not counted.
    pub fn count_multadds(&self, h: usize, w: usize) -> MultAdds {
        let win = self.config.sr.window;
        let (h, w) = (h.div_ceil(win) * win, w.div_ceil(win) * win);
        let corrector = self.corrector.as_ref().map_or(0, |c| c.multadds(h, w));
        let mut extractor = 0;
        if let (Some(ex), Some(fuse)) = (&self.extractor, &self.fuse) {
            extractor = ex.head.multadds(h, w)
                + ex.fabs.iter().map(|f| f.multadds(h, w)).sum::<u64>()
                + ex.rb.multadds(h, w)
                + fuse.multadds(h, w);
        }
        let lr_branch = self.lr_head.multadds(h, w) + self.lr_rb.multadds(h, w);
        let body = self.body.iter().map(|g| g.multadds(h, w)).sum::<u64>() + self.body_conv.multadds(h, w);
        let (mut uh, mut uw, mut upsample) = (h, w, 0);
        for (conv, f) in &self.upsample {
            upsample += conv.multadds(uh, uw);
            uh *= f;
            uw *= f;
        }
        upsample += self.tail.multadds(uh, uw);
        MultAdds {
            corrector,
            extractor,
            lr_branch,
            body,
            upsample,
        }
    }
}

/// Mult-add breakdown by model part.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MultAdds {
    pub corrector: u64,
    pub extractor: u64,
    pub lr_branch: u64,
    pub body: u64,
    pub upsample: u64,
}

impl MultAdds {
    pub fn total(&self) -> u64 {
        self.corrector + self.extractor + self.lr_branch + self.body + self.upsample
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::random_tensor;
    use crate::tensor::Tape;

    fn tiny(mode: Mode) -> LceConfig {
        LceConfig {
            corrector: CorrectorConfig {
                channels: 4,
                num_rg: 1,
                rcabs_per_rg: 1,
                reduction: 2,
                input_residual: false,
            },
            sr: SrConfig {
                channels: 4,
                num_fsag: 1,
                fsabs_per_fsag: 2,
                heads: 2,
                window: 4,
                mlp_ratio: 2.0,
                fab_squeeze_channels: 2,
                scale: 2,
            },
            mode,
        }
    }

    #[test]
    fn output_is_scaled_in_every_mode() {
        for mode in Mode::ALL {
            for scale in [2, 4] {
                let mut cfg = tiny(mode);
                cfg.sr.scale = scale;
                let m = LceModel::<f32>::new(cfg, 0).unwrap();
                let (sr, clr) = m.infer(&random_tensor(&[3, 6, 9], 1).cast()).unwrap();
                assert_eq!(sr.shape(), &[3, 6 * scale, 9 * scale], "{mode} x{scale}");
                assert_eq!(clr.is_some(), mode.uses_corrector());
            }
        }
    }

    #[test]
    fn parameter_bookkeeping_between_cases() {
        let m1 = LceModel::<f32>::new(tiny(Mode::Case1), 0).unwrap();
        let m3 = LceModel::<f32>::new(tiny(Mode::Case3), 0).unwrap();
        let ex = m3.extractor.as_ref().unwrap();
        let extractor = ex.head.params() + ex.fabs.iter().map(|f| f.params()).sum::<usize>() + 2 + 2 * ex.rb.conv1.params();
        let diff = m3.store.count_prefix("corrector.") + extractor + m3.fuse.as_ref().unwrap().params();
        assert_eq!(m3.count_params() - m1.count_params(), diff);
        assert_eq!(m3.store.count_prefix("extractor."), extractor);
    }

    #[test]
    fn names_are_unique_and_alphas_initialised() {
        let m = LceModel::<f32>::new(tiny(Mode::Case3), 0).unwrap();
        let mut names: Vec<_> = m.store.iter().map(|(_, p)| p.name.clone()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        let alphas: Vec<_> = m.store.iter().filter(|(_, p)| p.name.contains("alpha")).collect();
        assert_eq!(alphas.len(), 2 + 2);
        assert!(alphas.iter().all(|(_, p)| p.value.item() == 0.01));
    }

    #[test]
    fn frozen_corrector_gets_no_gradient() {
        for frozen in [true, false] {
            let mut m = LceModel::<f32>::new(tiny(Mode::Case3), 0).unwrap();
            m.set_corrector_frozen(frozen);
            let tape = Tape::new();
            let p = m.store.bind(&tape);
            let out = m.forward(&p, tape.constant(random_tensor(&[1, 3, 8, 8], 2).cast())).unwrap();
            let hr = tape.constant(random_tensor(&[1, 3, 16, 16], 3).cast());
            tape.backward(out.sr.l1_loss(hr).unwrap()).unwrap();
            for ((_, param), g) in m.store.iter().zip(p.grads(&tape).unwrap()) {
                let is_corr = param.name.starts_with("corrector.");
                assert_eq!(g.is_none(), frozen && is_corr, "{} frozen={frozen}", param.name);
            }
        }
    }

    #[test]
    fn deterministic_init_and_forward() {
        let x: Tensor<f32> = random_tensor(&[3, 8, 8], 4).cast();
        let a = LceModel::<f32>::new(tiny(Mode::Case3), 7).unwrap();
        let b = LceModel::<f32>::new(tiny(Mode::Case3), 7).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.infer(&x).unwrap().0, b.infer(&x).unwrap().0);
    }

    #[test]
    fn taps_and_unknown_layers() {
        let m = LceModel::<f32>::new(tiny(Mode::Case3), 0).unwrap();
        let x: Tensor<f32> = random_tensor(&[3, 8, 8], 4).cast();
        let t = m.taps(&x, &["extractor.fab0", "body.out"]).unwrap();
        assert_eq!(t.maps.len(), 2);
        assert_eq!(t.get("body.out").unwrap().shape(), &[1, 4, 8, 8]);
        assert!(matches!(m.taps(&x, &["nope"]), Err(Error::UnknownLayer(_))));
        assert!(m.taps(&x, &[]).unwrap().maps.is_empty());
    }

    #[test]
    fn multadds_count_convs_exactly_for_case1_head() {
        let m = LceModel::<f32>::new(tiny(Mode::Case1), 0).unwrap();
        let ma = m.count_multadds(8, 8);
        assert_eq!(ma.corrector, 0);
        assert_eq!(ma.lr_branch, (3 * 4 * 9 + 2 * 4 * 4 * 9) as u64 * 64);
        assert!(ma.total() > ma.body);
    }
}
