//! Named parameter storage and the per-forward context that exposes it to a tape.

use std::cell::{RefCell, RefMut};
use std::collections::{BTreeMap, HashMap};

use neurovasc_autograd::{Gradients, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Trained by the optimizer.
    Learnable,
    /// Running statistics, updated outside the optimizer.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Entry<T> {
    pub value: Tensor<T>,
    pub kind: Kind,
}

/// Parameters and buffers keyed by dotted module path.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor<T>, kind: Kind) {
        let path = path.into();
        let prev = self.entries.insert(path.clone(), Entry { value, kind });
        assert!(prev.is_none(), "parameter {path} registered twice");
    }

    pub fn learnable(&mut self, path: impl Into<String>, value: Tensor<T>) {
        self.insert(path, value, Kind::Learnable);
    }

    pub fn buffer(&mut self, path: impl Into<String>, value: Tensor<T>) {
        self.insert(path, value, Kind::Buffer);
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.entries.get(path).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(path).map(|e| &mut e.value)
    }

    pub fn kind(&self, path: &str) -> Option<Kind> {
        self.entries.get(path).map(|e| e.kind)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn learnable_paths(&self) -> Vec<String> {
        self.entries.iter().filter(|(_, e)| e.kind == Kind::Learnable).map(|(k, _)| k.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of learnable scalars.
    pub fn num_learnable(&self) -> usize {
        self.entries.values().filter(|e| e.kind == Kind::Learnable).map(|e| e.value.numel()).sum()
    }

    /// Learnable scalar count under `prefix` (a path or path prefix ending before a dot).
    pub fn count_under(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(k, e)| e.kind == Kind::Learnable && (k.as_str() == prefix || k.starts_with(&format!("{prefix}."))))
            .map(|(_, e)| e.value.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| (k.clone(), Entry { value: e.value.cast(), kind: e.kind }))
                .collect(),
        }
    }

    /// Exponential moving average update of a buffer: `b ← (1 − m)·b + m·v`.
    pub fn blend_buffer(&mut self, path: &str, v: &Tensor<T>, momentum: f64) {
        let m = T::of_f64(momentum);
        let b = self.get_mut(path).unwrap_or_else(|| panic!("unknown buffer {path}"));
        for (x, &y) in b.data_mut().iter_mut().zip(v.data()) {
            *x = (T::one() - m) * *x + m * y;
        }
    }

    /// Applies the buffer updates recorded by a training-mode forward pass.
    pub fn apply_updates(&mut self, updates: Vec<BufferUpdate<T>>) {
        for u in updates {
            self.blend_buffer(&u.path, &u.value, u.momentum);
        }
    }

    /// Bit-level equality of every entry.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.kind == b.kind
                    && a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}

/// He-normal initialization for a weight with the given fan-in.
pub fn he_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::randn(shape.to_vec(), (2.0 / fan_in as f64).sqrt(), rng)
}

/// A pending moving-average update of a buffer.
pub struct BufferUpdate<T> {
    pub path: String,
    pub value: Tensor<T>,
    pub momentum: f64,
}

/// Everything a forward pass needs: the tape, parameter handles, the mode
/// flag, an RNG for stochastic layers and a sink for buffer updates.
pub struct Ctx<'t, T: Real> {
    pub tape: &'t Tape<T>,
    pub training: bool,
    vars: HashMap<String, Var<'t, T>>,
    buffers: HashMap<String, Tensor<T>>,
    rng: RefCell<ChaCha8Rng>,
    updates: RefCell<Vec<BufferUpdate<T>>>,
}

impl<'t, T: Real> Ctx<'t, T> {
    /// Binds every learnable entry of `store` as a leaf of `tape`.
    pub fn new(tape: &'t Tape<T>, store: &ParamStore<T>, training: bool, seed: u64) -> Self {
        let mut vars = HashMap::new();
        let mut buffers = HashMap::new();
        for (k, e) in store.iter() {
            match e.kind {
                Kind::Learnable => {
                    vars.insert(k.to_string(), tape.leaf(e.value.clone()));
                }
                Kind::Buffer => {
                    buffers.insert(k.to_string(), e.value.clone());
                }
            }
        }
        Self::from_parts(tape, vars, buffers, training, seed)
    }

    /// Builds a context from explicit parameter handles (used by gradient checks).
    pub fn from_parts(
        tape: &'t Tape<T>,
        vars: HashMap<String, Var<'t, T>>,
        buffers: HashMap<String, Tensor<T>>,
        training: bool,
        seed: u64,
    ) -> Self {
        Self {
            tape,
            training,
            vars,
            buffers,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn param(&self, path: &str) -> Var<'t, T> {
        self.vars.get(path).cloned().unwrap_or_else(|| panic!("missing parameter {path}"))
    }

    pub fn buffer(&self, path: &str) -> &Tensor<T> {
        self.buffers.get(path).unwrap_or_else(|| panic!("missing buffer {path}"))
    }

    pub fn rng(&self) -> RefMut<'_, ChaCha8Rng> {
        self.rng.borrow_mut()
    }

    pub fn record_update(&self, path: String, value: Tensor<T>, momentum: f64) {
        self.updates.borrow_mut().push(BufferUpdate { path, value, momentum });
    }

    pub fn take_updates(&self) -> Vec<BufferUpdate<T>> {
        std::mem::take(&mut self.updates.borrow_mut())
    }

    /// Gradients of every bound parameter, zero-filled for unreached ones.
    pub fn gradients(&self, g: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.vars.iter().map(|(k, v)| (k.clone(), g.get_or_zeros(v))).collect()
    }

    /// Paths of parameters that received no gradient at all.
    pub fn unreached(&self, g: &Gradients<T>) -> Vec<String> {
        let mut v: Vec<String> = self.vars.iter().filter(|(_, v)| g.get(v).is_none()).map(|(k, _)| k.clone()).collect();
        v.sort();
        v
    }
}
