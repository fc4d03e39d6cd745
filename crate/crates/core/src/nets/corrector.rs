use super::layers::Conv;
use super::params::{Bound, Init};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorrectorConfig {
    pub channels: usize,
    pub num_rg: usize,
    pub rcabs_per_rg: usize,
    /// Channel-attention squeeze ratio.
    pub reduction: usize,
    /// Adds the input image to the output, so the network predicts `clr - lr`.
    /// The final conv then starts at zero and the untrained corrector is the identity.
    pub input_residual: bool,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        CorrectorConfig {
            channels: 64,
            num_rg: 4,
            rcabs_per_rg: 10,
            reduction: 16,
            input_residual: false,
        }
    }
}

impl CorrectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.num_rg == 0 || self.rcabs_per_rg == 0 || self.reduction == 0 {
            return Err(Error::invalid("corrector config", "all fields must be positive"));
        }
        if self.channels % self.reduction != 0 {
            return Err(Error::invalid(
                "corrector config",
                format!("reduction {} does not divide {} channels", self.reduction, self.channels),
            ));
        }
        Ok(())
    }
}

/// conv3x3, ReLU, conv3x3, plus the input.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResBlock {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, ch: usize) -> Self {
        init.scope(name, |i| ResBlock {
            conv1: Conv::new(i, "conv1", ch, ch, 3, true),
            conv2: Conv::new(i, "conv2", ch, ch, 3, true),
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.conv2.forward(p, self.conv1.forward(p, x)?.relu()?)?;
        y.add(x)
    }

    pub fn multadds(&self, h: usize, w: usize) -> u64 {
        self.conv1.multadds(h, w) + self.conv2.multadds(h, w)
    }
}

/// Squeeze-and-excitation gate: global average pool, 1x1 down, ReLU,
/// 1x1 up, sigmoid, channel-wise rescale.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub down: Conv,
    pub up: Conv,
}

impl ChannelAttention {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, ch: usize, reduction: usize) -> Self {
        let mid = (ch / reduction).max(1);
        init.scope(name, |i| ChannelAttention {
            down: Conv::new(i, "down", ch, mid, 1, false),
            up: Conv::new(i, "up", mid, ch, 1, false),
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.global_avg_pool()?;
        let g = self.up.forward(p, self.down.forward(p, s)?.relu()?)?.sigmoid()?;
        x.mul_bcast(g)
    }

    pub fn multadds(&self) -> u64 {
        self.down.multadds(1, 1) + self.up.multadds(1, 1)
    }
}

#[derive(Clone, Debug)]
pub struct Rcab {
    pub conv1: Conv,
    pub conv2: Conv,
    pub ca: ChannelAttention,
}

impl Rcab {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, ch: usize, reduction: usize) -> Self {
        init.scope(name, |i| Rcab {
            conv1: Conv::new(i, "conv1", ch, ch, 3, true),
            conv2: Conv::new(i, "conv2", ch, ch, 3, true),
            ca: ChannelAttention::new(i, "ca", ch, reduction),
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.conv2.forward(p, self.conv1.forward(p, x)?.relu()?)?;
        self.ca.forward(p, y)?.add(x)
    }

    pub fn multadds(&self, h: usize, w: usize) -> u64 {
        self.conv1.multadds(h, w) + self.conv2.multadds(h, w) + self.ca.multadds()
    }
}

/// RCABs followed by a 3x3 conv and a group-level skip.
#[derive(Clone, Debug)]
pub struct ResidualGroup {
    pub blocks: Vec<Rcab>,
    pub conv: Conv,
}

impl ResidualGroup {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, ch: usize, n: usize, reduction: usize) -> Self {
        init.scope(name, |i| ResidualGroup {
            blocks: (0..n).map(|k| Rcab::new(i, &format!("rcab{k}"), ch, reduction)).collect(),
            conv: Conv::new(i, "conv", ch, ch, 3, true),
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut y = x;
        for b in &self.blocks {
            y = b.forward(p, y)?;
        }
        self.conv.forward(p, y)?.add(x)
    }

    pub fn multadds(&self, h: usize, w: usize) -> u64 {
        self.blocks.iter().map(|b| b.multadds(h, w)).sum::<u64>() + self.conv.multadds(h, w)
    }
}

/// Maps an LR image to a corrected LR estimate of the same size.
///
/// `f0 = RB(RB(conv7x7(lr)))`, `f_i = RG_i(f_{i-1})`,
/// `out = conv2(conv1(f_N) + f0)`, plus `lr` when `input_residual` is set.
#[derive(Clone, Debug)]
pub struct Corrector {
    pub config: CorrectorConfig,
    pub head: Conv,
    pub rbs: [ResBlock; 2],
    pub groups: Vec<ResidualGroup>,
    pub conv1: Conv,
    pub conv2: Conv,
}

impl Corrector {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, cfg: CorrectorConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let net = init.scope(name, |i| Corrector {
            config: cfg,
            head: Conv::new(i, "head", 3, c, 7, true),
            rbs: [ResBlock::new(i, "rb0", c), ResBlock::new(i, "rb1", c)],
            groups: (0..cfg.num_rg)
                .map(|k| ResidualGroup::new(i, &format!("rg{k}"), c, cfg.rcabs_per_rg, cfg.reduction))
                .collect(),
            conv1: Conv::new(i, "conv1", c, c, 3, true),
            conv2: Conv::new(i, "conv2", c, 3, 3, true),
        });
        if cfg.input_residual {
            init.zero(net.conv2.weight);
            if let Some(b) = net.conv2.bias {
                init.zero(b);
            }
        }
        Ok(net)
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, lr: Var<'t, T>) -> Result<Var<'t, T>> {
        let ch = lr.shape().get(1).copied().unwrap_or(0);
        if lr.shape().len() != 4 || ch != 3 {
            return Err(Error::invalid("corrector", format!("expected B x 3 x H x W, got {:?}", lr.shape())));
        }
        let mut f0 = self.head.forward(p, lr)?;
        for rb in &self.rbs {
            f0 = rb.forward(p, f0)?;
        }
        let mut f = f0;
        for g in &self.groups {
            f = g.forward(p, f)?;
        }
        let f = self.conv1.forward(p, f)?.add(f0)?;
        let out = self.conv2.forward(p, f)?;
        if self.config.input_residual {
            out.add(lr)
        } else {
            Ok(out)
        }
    }

    pub fn multadds(&self, h: usize, w: usize) -> u64 {
        self.head.multadds(h, w)
            + self.rbs.iter().map(|b| b.multadds(h, w)).sum::<u64>()
            + self.groups.iter().map(|g| g.multadds(h, w)).sum::<u64>()
            + self.conv1.multadds(h, w)
            + self.conv2.multadds(h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::params::ParamStore;
    use crate::nets::testutil::check_block;
    use crate::tensor::gradcheck::random_tensor;
    use crate::tensor::{Tape, Tensor};

    fn zero_biases(store: &mut ParamStore<f64>) {
        let ids: Vec<_> = store.iter().filter(|(_, p)| p.name.ends_with("bias")).map(|(id, _)| id).collect();
        for id in ids {
            store.value_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn rcab_zero_in_zero_out_and_shape() {
        let mut store = ParamStore::<f64>::new();
        let rcab = Rcab::new(&mut Init::new(&mut store, 0), "r", 64, 16);
        zero_biases(&mut store);
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let z = rcab.forward(&p, tape.constant(Tensor::zeros(&[1, 64, 16, 16]))).unwrap();
        assert_eq!(z.value().max_abs(), 0.0);
        let y = rcab.forward(&p, tape.constant(random_tensor(&[1, 64, 16, 16], 1))).unwrap();
        assert_eq!(y.shape(), vec![1, 64, 16, 16]);
    }

    #[test]
    fn rcab_gradcheck() {
        let mut store = ParamStore::<f64>::new();
        let rcab = Rcab::new(&mut Init::new(&mut store, 3), "r", 4, 2);
        let e = check_block(&store, &[1, 4, 8, 8], |p, x| rcab.forward(p, x));
        assert!(e < 1e-3, "{e}");
    }

    #[test]
    fn corrector_gradcheck_and_contract() {
        let cfg = CorrectorConfig {
            channels: 4,
            num_rg: 1,
            rcabs_per_rg: 1,
            reduction: 2,
            input_residual: false,
        };
        let mut store = ParamStore::<f64>::new();
        let net = Corrector::new(&mut Init::new(&mut store, 4), "corrector", cfg).unwrap();
        let e = check_block(&store, &[1, 3, 8, 8], |p, x| net.forward(p, x));
        assert!(e < 1e-3, "{e}");

        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let y = net.forward(&p, tape.constant(random_tensor(&[2, 3, 5, 7], 2))).unwrap();
        assert_eq!(y.shape(), vec![2, 3, 5, 7]);
        assert!(net.forward(&p, tape.constant(random_tensor(&[1, 4, 5, 7], 2))).is_err());
    }

    #[test]
    fn zeroed_output_conv_gives_bias() {
        let cfg = CorrectorConfig {
            channels: 8,
            num_rg: 2,
            rcabs_per_rg: 2,
            reduction: 4,
            input_residual: false,
        };
        let mut store = ParamStore::<f32>::new();
        let net = Corrector::new(&mut Init::new(&mut store, 4), "corrector", cfg).unwrap();
        store.value_mut(net.conv2.weight).data_mut().fill(0.0);
        let bias = store.get(net.conv2.bias.unwrap()).value.clone();
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let y = net.forward(&p, tape.constant(random_tensor(&[1, 3, 6, 6], 2).cast())).unwrap().value();
        for c in 0..3 {
            assert!(y.data()[c * 36..(c + 1) * 36].iter().all(|&v| v == bias.data()[c]));
        }
    }

    #[test]
    fn input_residual_with_zeroed_tail_is_identity() {
        let cfg = CorrectorConfig {
            channels: 8,
            num_rg: 1,
            rcabs_per_rg: 2,
            reduction: 4,
            input_residual: true,
        };
        let mut store = ParamStore::<f64>::new();
        let net = Corrector::new(&mut Init::new(&mut store, 5), "corrector", cfg).unwrap();
        store.value_mut(net.conv2.weight).data_mut().fill(0.0);
        store.value_mut(net.conv2.bias.unwrap()).data_mut().fill(0.0);
        let tape = Tape::no_grad();
        let p = store.bind(&tape);
        let x = random_tensor(&[1, 3, 6, 5], 3);
        let y = net.forward(&p, tape.constant(x.clone())).unwrap().value();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn config_validation() {
        assert!(CorrectorConfig::default().validate().is_ok());
        let bad = CorrectorConfig {
            reduction: 7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
