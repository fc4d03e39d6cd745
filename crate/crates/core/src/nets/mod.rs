//! Network blocks and the assembled model.

mod attention;
mod corrector;
mod fab;
mod layers;
mod model;
mod params;
mod transformer;

pub use attention::{WindowAttention, MASK_VALUE};
pub use corrector::{ChannelAttention, Corrector, CorrectorConfig, Rcab, ResBlock, ResidualGroup};
pub use fab::Fab;
pub use layers::{Conv, LayerNorm, Linear, Mlp};
pub use model::{ClrExtractor, CorrectorModel, LceConfig, LceModel, LceOutput, Mode, MultAdds, Taps, TAP_NAMES};
pub use params::{Bound, Init, Param, ParamId, ParamStore};
pub use transformer::{upsample_stages, Fsab, Fsag, SrConfig, ALPHA_INIT};

#[cfg(test)]
pub(crate) mod testutil {
    use super::{Bound, ParamStore};
    use crate::error::Result;
    use crate::tensor::gradcheck::{check_gradients, random_tensor};
    use crate::tensor::Var;

    /// Largest relative gradient error over the input and every parameter.
    pub fn check_block<F>(store: &ParamStore<f64>, x_shape: &[usize], f: F) -> f64
    where
        F: for<'t> Fn(&Bound<'t, f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
    {
        let mut inputs = vec![random_tensor(x_shape, 11)];
        inputs.extend(store.iter().map(|(_, p)| p.value.clone()));
        check_gradients(&inputs, |_, vars| f(&Bound::from_vars(vars[1..].to_vec()), vars[0]), 1e-6, 5)
            .unwrap()
            .max_rel_error()
    }
}
