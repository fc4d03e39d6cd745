use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::checkpoint::{Checkpoint, ConfigDigest};
use crate::real::Real;
use crate::tensor::{Tape, Tensor, Var};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

/// Flat, ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name `{name}`");
        self.params.push(Param {
            name,
            value,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor<T>> {
        self.find(name).map(|id| &self.params[id.0].value)
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn count_trainable(&self) -> usize {
        self.params.iter().filter(|p| !p.frozen).map(|p| p.value.len()).sum()
    }

    /// Marks every parameter whose name starts with `prefix`; returns how many matched.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
            n += 1;
        }
        n
    }

    /// Puts every parameter on `tape`: trainable ones as leaves, frozen ones
    /// as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| {
                    if p.frozen {
                        tape.constant(p.value.clone())
                    } else {
                        tape.leaf(p.value.clone())
                    }
                })
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }

    pub fn to_checkpoint(&self, digest: ConfigDigest, metadata: Vec<(String, String)>) -> Checkpoint {
        Checkpoint {
            digest,
            metadata,
            tensors: self.params.iter().map(|p| (p.name.clone(), p.value.cast())).collect(),
        }
    }

    /// Copies every tensor of `ckpt` whose name starts with `prefix` into
    /// the parameter of the same name. Returns the number copied.
    pub fn load_prefix(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, t) in ckpt.tensors.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let id = self.find(name).ok_or_else(|| Error::UnknownLayer(name.clone()))?;
            let dst = &mut self.params[id.0].value;
            if dst.shape() != t.shape() {
                return Err(Error::shape("load checkpoint", dst.shape(), t.shape()));
            }
            *dst = t.cast();
            n += 1;
        }
        Ok(n)
    }

    /// Loads a full checkpoint; the parameter tables must agree exactly.
    pub fn load_all(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.tensors.len() != self.params.len() {
            return Err(Error::Format {
                kind: "lcec",
                msg: format!("checkpoint holds {} tensors, model has {}", ckpt.tensors.len(), self.params.len()),
            });
        }
        self.load_prefix(ckpt, "").map(|_| ())
    }
}

/// Parameters recorded on one tape, indexed by [`ParamId`].
pub struct Bound<'t, T: Real = f32> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    /// Binding over existing tape variables, in store order.
    pub(crate) fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Bound { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    /// Gradient per parameter, in store order (`None` for frozen ones or
    /// those not reached by the loss).
    pub fn grads(&self, tape: &Tape<T>) -> Result<Vec<Option<Tensor<T>>>> {
        self.vars.iter().map(|v| tape.grad(*v)).collect()
    }
}

/// Deterministic initialiser that registers parameters under a scoped name.
pub struct Init<'a, T: Real = f32> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a, T: Real> Init<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn full_name(&self, leaf: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(leaf);
        s
    }

    pub fn tensor(&mut self, leaf: &str, value: Tensor<T>) -> ParamId {
        let name = self.full_name(leaf);
        self.store.add(name, value)
    }

    pub fn uniform(&mut self, leaf: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..=bound)));
        self.tensor(leaf, t)
    }

    /// Normal(0, std) redrawn until within two standard deviations.
    pub fn trunc_normal(&mut self, leaf: &str, shape: &[usize], std: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break T::from_f64(z * std);
            }
        });
        self.tensor(leaf, t)
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], v: f64) -> ParamId {
        self.tensor(leaf, Tensor::full(shape, T::from_f64(v)))
    }

    /// Overwrites an already created parameter with zeros.
    pub fn zero(&mut self, id: ParamId) {
        self.store.value_mut(id).data_mut().fill(T::from_f64(0.0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::checkpoint::digest_text;

    #[test]
    fn scoped_names_and_counts() {
        let mut store = ParamStore::<f32>::new();
        let mut init = Init::new(&mut store, 1);
        init.scope("a", |i| {
            i.uniform("w", &[2, 3], 0.5);
            i.scope("b", |i| i.constant("alpha", &[1], 0.01));
        });
        assert!(store.find("a.w").is_some());
        assert_eq!(store.value("a.b.alpha").unwrap().item(), 0.01);
        assert_eq!(store.count(), 7);
        assert_eq!(store.set_frozen("a.b", true), 1);
        assert_eq!(store.count_trainable(), 6);
    }

    #[test]
    fn init_is_seeded() {
        let build = |seed| {
            let mut s = ParamStore::<f32>::new();
            Init::new(&mut s, seed).trunc_normal("w", &[64], 0.02);
            s
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
        assert!(build(3).value("w").unwrap().data().iter().all(|v| v.abs() <= 0.04));
    }

    #[test]
    fn frozen_params_bind_as_constants() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::full(&[2], 1.0));
        let b = store.add("b", Tensor::full(&[2], 2.0));
        store.set_frozen("b", true);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let loss = p.get(a).mul(p.get(b)).unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        let g = p.grads(&tape).unwrap();
        assert_eq!(g[0].as_ref().unwrap().data(), &[2.0, 2.0]);
        assert!(g[1].is_none());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut store = ParamStore::<f32>::new();
        Init::new(&mut store, 2).uniform("x.w", &[3, 3], 1.0);
        let ck = store.to_checkpoint(digest_text("c"), vec![]);
        let mut other = ParamStore::<f32>::new();
        other.add("x.w", Tensor::zeros(&[3, 3]));
        other.load_all(&ck).unwrap();
        assert_eq!(other, store);
        let mut wrong = ParamStore::<f32>::new();
        wrong.add("x.w", Tensor::zeros(&[9]));
        assert!(wrong.load_all(&ck).is_err());
    }
}
