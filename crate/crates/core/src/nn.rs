//! Layer primitives the transformer is assembled from, plus Adam.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{lit, AttentionWeights, Scalar, Tensor};

/// A named trainable tensor. Names are stable dotted paths, unique within a
/// model, and identical across save/load.
#[derive(Clone)]
pub struct Parameter<T: Scalar = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            tensor,
        }
    }
}

fn normal_matrix<T: Scalar>(rng: &mut StreamRng, rows: usize, cols: usize, std: f64) -> Vec<T> {
    (0..rows * cols)
        .map(|_| lit::<T>(rng.normal() * std))
        .collect()
}

/// Fully connected layer, weight stored `[d_in × d_out]`.
pub struct Linear<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub const INIT_STD: f64 = 0.02;

impl<T: Scalar> Linear<T> {
    /// Weights ~ N(0, 0.02), biases zero.
    pub fn new(rng: &mut StreamRng, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Tensor::param(&[d_in, d_out], normal_matrix(rng, d_in, d_out, INIT_STD))
                .expect("linear init"),
            bias: Tensor::param(&[d_out], vec![T::zero(); d_out]).expect("linear bias"),
        }
    }

    /// All-zero initialization; used by the modulation heads so an untrained
    /// model modulates with exactly α=1, β=0.
    pub fn zeroed(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Tensor::param(&[d_in, d_out], vec![T::zero(); d_in * d_out]).expect("zeroed"),
            bias: Tensor::param(&[d_out], vec![T::zero(); d_out]).expect("zeroed bias"),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(&self.weight)?.add_bias(&self.bias)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        out.push(Parameter::new(format!("{prefix}.weight"), self.weight.clone()));
        out.push(Parameter::new(format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Two linear maps with SiLU between: `fc2(silu(fc1(x)))`.
pub struct Mlp<T: Scalar = f32> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(rng: &mut StreamRng, d: usize, hidden_multiplier: usize) -> Self {
        let hidden = d * hidden_multiplier;
        Mlp {
            fc1: Linear::new(rng, d, hidden),
            fc2: Linear::new(rng, hidden, d),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.silu()?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.fc1.collect(&format!("{prefix}.fc1"), out);
        self.fc2.collect(&format!("{prefix}.fc2"), out);
    }
}

/// Multi-head attention with learned q/k/v/out projections. Queries come
/// from `q_src`, keys and values from `kv_src`; self-attention passes the
/// same tensor for both.
pub struct MultiheadAttention<T: Scalar = f32> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub heads: usize,
}

impl<T: Scalar> MultiheadAttention<T> {
    pub fn new(rng: &mut StreamRng, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "attention: model dim {d} not divisible by {heads} heads"
            )));
        }
        Ok(MultiheadAttention {
            wq: Linear::new(rng, d, d),
            wk: Linear::new(rng, d, d),
            wv: Linear::new(rng, d, d),
            wo: Linear::new(rng, d, d),
            heads,
        })
    }

    /// When `record` is set, the raw pre-dropout attention weights
    /// `[heads × n_q × n_k]` are returned alongside the output. Recording
    /// copies data out of the forward pass and never changes it.
    pub fn forward(
        &self,
        q_src: &Tensor<T>,
        kv_src: &Tensor<T>,
        record: bool,
    ) -> Result<(Tensor<T>, Option<AttentionWeights<T>>)> {
        let q = self.wq.forward(q_src)?;
        let k = self.wk.forward(kv_src)?;
        let v = self.wv.forward(kv_src)?;
        let (mixed, weights) = Tensor::attention_core(&q, &k, &v, self.heads, record)?;
        Ok((self.wo.forward(&mixed)?, weights))
    }

    pub fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.wq.collect(&format!("{prefix}.q"), out);
        self.wk.collect(&format!("{prefix}.k"), out);
        self.wv.collect(&format!("{prefix}.v"), out);
        self.wo.collect(&format!("{prefix}.out"), out);
    }
}

/// Adam state: step count plus first/second moment buffers keyed by
/// parameter name. Buffers exist for exactly the registered parameters.
pub struct OptimizerState<T: Scalar = f32> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    moments: IndexMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &[Parameter<T>], lr: f64) -> Self {
        let mut moments = IndexMap::new();
        for p in params {
            let n = p.tensor.numel();
            moments.insert(p.name.clone(), (vec![T::zero(); n], vec![T::zero(); n]));
        }
        OptimizerState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments,
        }
    }

    pub fn moment_shapes(&self) -> Vec<(String, usize)> {
        self.moments
            .iter()
            .map(|(k, (m, _))| (k.clone(), m.len()))
            .collect()
    }
}

/// One bias-corrected Adam update over `params`, reading gradients off the
/// tensors and writing updated values in place.
pub fn adam_step<T: Scalar>(params: &[Parameter<T>], state: &mut OptimizerState<T>) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let b1 = lit::<T>(state.beta1);
    let b2 = lit::<T>(state.beta2);
    let lr = lit::<T>(state.lr);
    let eps = lit::<T>(state.epsilon);
    let c1 = T::one() - lit::<T>(state.beta1.powi(t));
    let c2 = T::one() - lit::<T>(state.beta2.powi(t));
    for p in params {
        let grad = p
            .tensor
            .grad()
            .ok_or_else(|| Error::MissingGradient(p.name.clone()))?;
        let (m, v) = state
            .moments
            .get_mut(&p.name)
            .ok_or_else(|| Error::MissingGradient(p.name.clone()))?;
        let mut data = p.tensor.to_vec();
        for i in 0..data.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * grad[i];
            v[i] = b2 * v[i] + (T::one() - b2) * grad[i] * grad[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps);
        }
        p.tensor.set_data(&data)?;
    }
    Ok(())
}

/// Reset gradients to zero buffers (not `None`): a parameter that a
/// particular batch never touches still has a populated, all-zero gradient,
/// which is what the optimizer contract expects.
pub fn zero_grads<T: Scalar>(params: &[Parameter<T>]) {
    for p in params {
        p.tensor.zero_grad();
        p.tensor.accumulate_grad(&vec![T::zero(); p.tensor.numel()]);
    }
}
