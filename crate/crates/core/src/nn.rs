//! Deterministic parameter store and small network building blocks.
//!
//! All parameters live in a [`ParamStore`]: a name-keyed map of `Var`s whose
//! initial values are drawn from per-name ChaCha streams, so initialization
//! depends only on `(seed, name, shape)` — never on construction order or a
//! global RNG. Layers hold shallow clones of the store's tensors; optimizer
//! writes through `Var::set` are visible to every clone.
//!
//! The layers here are composed from primitive tensor ops on purpose: the
//! fused layer-norm and softmax kernels in `candle_nn::ops` are custom ops
//! without backward implementations, so training must avoid them.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Derive an independent stream seed from a base seed and a role string.
/// fnv-1a over the salt, mixed with splitmix64 — cheap, stable, and spreads
/// adjacent base seeds over the whole u64 range.
pub fn derive_seed(base: u64, salt: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in salt.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    splitmix64(base ^ h)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Initialization scheme for a parameter tensor.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std) re-drawn outside two standard deviations.
    TruncNormal { std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Init {
    fn sample(&self, count: usize, rng: &mut ChaCha12Rng) -> Vec<f32> {
        match *self {
            Init::Zeros => vec![0.0; count],
            Init::Ones => vec![1.0; count],
            Init::TruncNormal { std } => {
                let normal = Normal::new(0.0, std).expect("valid std");
                (0..count)
                    .map(|_| loop {
                        let x = normal.sample(rng);
                        if x.abs() <= 2.0 * std {
                            break x as f32;
                        }
                    })
                    .collect()
            }
            Init::Uniform { lo, hi } => {
                let dist = Uniform::new(lo, hi);
                (0..count).map(|_| dist.sample(rng) as f32).collect()
            }
        }
    }
}

/// Default weight-init scale for transformer layers.
pub const INIT_STD: f64 = 0.02;

/// Name-keyed trainable parameters with deterministic initialization.
pub struct ParamStore {
    seed: u64,
    device: Device,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { seed, device: Device::Cpu, vars: BTreeMap::new() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Create a fresh named parameter and return a graph-tracked handle to
    /// it. Names must be unique; initial values depend only on the store
    /// seed, the name, and the shape.
    pub fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Internal(format!("duplicate parameter name {name}")));
        }
        let count = shape.iter().product();
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(self.seed, name));
        let values = init.sample(count, &mut rng);
        let tensor = Tensor::from_vec(values, shape, &self.device)?;
        let var = Var::from_tensor(&tensor)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    /// All parameters in name order (the order every consumer sees).
    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// Overwrite one parameter's values (shape-checked). Feeds checkpoint
    /// restore and the tests that pin specific weights.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Internal(format!("no parameter named {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(value)?;
        Ok(())
    }

    /// Detached copies of every parameter, for serialization.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Restore from a snapshot. The name sets must match exactly.
    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for name in self.vars.keys() {
            if !snapshot.contains_key(name) {
                return Err(Error::Checkpoint(format!("snapshot missing parameter {name}")));
            }
        }
        for name in snapshot.keys() {
            if !self.vars.contains_key(name) {
                return Err(Error::Checkpoint(format!(
                    "snapshot has unknown parameter {name}"
                )));
            }
        }
        for (name, value) in snapshot {
            self.set(name, value)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

/// Fully connected layer storing its weight as `(in, out)` so batched inputs
/// flatten to a single gemm without a transpose.
pub struct Dense {
    weight: Tensor,
    bias: Tensor,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_std(store, name, in_dim, out_dim, INIT_STD)
    }

    /// Like [`Dense::new`] with an explicit weight-init scale, for layers
    /// whose inputs are far from unit variance.
    pub fn with_std(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: f64,
    ) -> Result<Self> {
        let weight = store.take(
            &format!("{name}.weight"),
            &[in_dim, out_dim],
            Init::TruncNormal { std },
        )?;
        let bias = store.take(&format!("{name}.bias"), &[out_dim], Init::Zeros)?;
        Ok(Dense { weight, bias, in_dim, out_dim })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `x` has shape `(..., in_dim)`; output replaces the last axis.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let last = *dims.last().ok_or_else(|| Error::shape("dense input has no axes"))?;
        if last != self.in_dim {
            return Err(Error::Shape(format!(
                "dense expects last axis {}, got {:?}",
                self.in_dim, dims
            )));
        }
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x
            .reshape((rows, self.in_dim))?
            .matmul(&self.weight)?
            .broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim;
        Ok(y.reshape(out_dims)?)
    }
}

/// Layer normalization over the last axis, composed from primitive ops so it
/// stays differentiable.
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.take(&format!("{name}.gamma"), &[dim], Init::Ones)?;
        let beta = store.take(&format!("{name}.beta"), &[dim], Init::Zeros)?;
        Ok(LayerNorm { gamma, beta, eps: LAYER_NORM_EPS })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = x.rank() - 1;
        let mean = x.mean_keepdim(last)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(last)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Two-layer MLP with GELU, the feed-forward half of a transformer block.
pub struct Mlp {
    fc1: Dense,
    fc2: Dense,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Mlp {
            fc1: Dense::new(store, &format!("{name}.fc1"), dim, hidden)?,
            fc2: Dense::new(store, &format!("{name}.fc2"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu_erf()?)
    }
}

/// Numerically stable softmax over the last axis, composed from primitive
/// ops (differentiable, unlike the fused kernel).
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let last = x.rank() - 1;
    let max = x.max_keepdim(last)?;
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(last)?;
    Ok(e.broadcast_div(&sum)?)
}

/// Upcast-safe scalar extraction for logging.
pub fn scalar_f64(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_on_name_not_order() {
        let mut a = ParamStore::new(7);
        let first = a.take("x", &[4, 4], Init::TruncNormal { std: 0.02 }).unwrap();
        let _other = a.take("y", &[4], Init::Zeros).unwrap();

        let mut b = ParamStore::new(7);
        let _other = b.take("y", &[4], Init::Zeros).unwrap();
        let second = b.take("x", &[4, 4], Init::TruncNormal { std: 0.02 }).unwrap();

        assert_eq!(
            first.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            second.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn init_depends_on_seed() {
        let mut a = ParamStore::new(7);
        let mut b = ParamStore::new(8);
        let ta = a.take("x", &[64], Init::TruncNormal { std: 0.02 }).unwrap();
        let tb = b.take("x", &[64], Init::TruncNormal { std: 0.02 }).unwrap();
        assert_ne!(ta.to_vec1::<f32>().unwrap(), tb.to_vec1::<f32>().unwrap());
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut store = ParamStore::new(0);
        let t = store.take("w", &[10_000], Init::TruncNormal { std: 0.5 }).unwrap();
        let v = t.to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|x| x.abs() <= 1.0));
        let mean = v.iter().sum::<f32>() / v.len() as f32;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new(0);
        store.take("w", &[2], Init::Zeros).unwrap();
        assert!(store.take("w", &[2], Init::Zeros).is_err());
    }

    #[test]
    fn set_writes_through_to_handles() {
        let mut store = ParamStore::new(0);
        let handle = store.take("w", &[3], Init::Zeros).unwrap();
        let new = Tensor::from_slice(&[1f32, 2., 3.], 3, store.device()).unwrap();
        store.set("w", &new).unwrap();
        assert_eq!(handle.to_vec1::<f32>().unwrap(), vec![1., 2., 3.]);
        // Shape mismatches are refused.
        let bad = Tensor::zeros(4, DType::F32, store.device()).unwrap();
        assert!(store.set("w", &bad).is_err());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut store = ParamStore::new(1);
        store.take("a", &[4], Init::TruncNormal { std: 1.0 }).unwrap();
        store.take("b", &[2, 2], Init::Ones).unwrap();
        let snap = store.snapshot().unwrap();

        store.set("a", &Tensor::zeros(4, DType::F32, store.device()).unwrap()).unwrap();
        store.restore(&snap).unwrap();
        let a = store.get("a").unwrap().as_tensor().to_vec1::<f32>().unwrap();
        assert_eq!(a, snap["a"].to_vec1::<f32>().unwrap());

        // Mismatched name sets are refused in both directions.
        let mut partial = snap.clone();
        partial.remove("b");
        assert!(store.restore(&partial).is_err());
        let mut extra = snap.clone();
        extra.insert("c".into(), snap["a"].copy().unwrap());
        assert!(store.restore(&extra).is_err());
    }

    #[test]
    fn dense_matches_manual_matmul() {
        let mut store = ParamStore::new(3);
        let layer = Dense::new(&mut store, "fc", 3, 2).unwrap();
        let x = Tensor::from_slice(&[1f32, 0., -1., 0.5, 2., 0.], (2, 3), store.device()).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 2]);

        let w = store.get("fc.weight").unwrap().as_tensor().to_vec2::<f32>().unwrap();
        let xs = x.to_vec2::<f32>().unwrap();
        let ys = y.to_vec2::<f32>().unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let manual: f32 = (0..3).map(|k| xs[r][k] * w[k][c]).sum();
                assert!((ys[r][c] - manual).abs() < 1e-6);
            }
        }

        // Higher-rank inputs are flattened and reshaped back.
        let x3 = x.reshape((1, 2, 3)).unwrap();
        let y3 = layer.forward(&x3).unwrap();
        assert_eq!(y3.dims(), &[1, 2, 2]);
        assert_eq!(y3.reshape((2, 2)).unwrap().to_vec2::<f32>().unwrap(), ys);
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut store = ParamStore::new(4);
        let ln = LayerNorm::new(&mut store, "ln", 8).unwrap();
        let x = Tensor::from_vec(
            (0..32).map(|i| i as f32 * 0.3 - 2.0).collect::<Vec<_>>(),
            (4, 8),
            store.device(),
        )
        .unwrap();
        let y = ln.forward(&x).unwrap();
        for row in y.to_vec2::<f32>().unwrap() {
            let mean = row.iter().sum::<f32>() / 8.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 8.0;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn layer_norm_is_differentiable() {
        let mut store = ParamStore::new(4);
        let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
        let v = Var::from_tensor(
            &Tensor::from_slice(&[0.1f32, -0.4, 2.0, 0.3], (1, 4), store.device()).unwrap(),
        )
        .unwrap();
        let loss = ln.forward(v.as_tensor()).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        assert!(grads.get(&v).is_some());
        for var in store.vars() {
            assert!(grads.get(&var).is_some(), "missing grad for a norm parameter");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_match_naive() {
        let x = Tensor::from_slice(&[1f32, 2., 3., -1., 0., 1.], (2, 3), &Device::Cpu).unwrap();
        let s = softmax_last(&x).unwrap().to_vec2::<f32>().unwrap();
        for (row, input) in s.iter().zip(x.to_vec2::<f32>().unwrap()) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            let denom: f32 = input.iter().map(|v| v.exp()).sum();
            for (got, v) in row.iter().zip(&input) {
                assert!((got - v.exp() / denom).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn derive_seed_separates_roles() {
        let a = derive_seed(42, "channel");
        let b = derive_seed(42, "sampling");
        let c = derive_seed(43, "channel");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, "channel"));
    }
}
