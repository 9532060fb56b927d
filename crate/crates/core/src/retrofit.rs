//! Retrofit a pooled-embedding path into a pooled-free model.
//!
//! A small two-layer adapter maps the pooled embedding to an additive term
//! on the timestep embedding. Its contribution is g(e) = f(e) − f(0), so
//! g(0) = 0 holds bit-exactly at every point in training, and a retrofitted
//! model with zero pooled input is the base model, bit for bit.
//!
//! The adapter is trained by prediction distillation: the teacher is the
//! frozen base conditioned through its text tokens, the student is the
//! frozen base with the unconditional token sequence plus the adapter's
//! pooled contribution. The loss is the MSE between the two velocity
//! predictions on the same noised image.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ConditioningMode, DiT};
use crate::nn::{self, Linear, OptimizerState, Parameter};
use crate::rng::{StreamKind, StreamRng};
use crate::tensor::{lit, no_grad, Scalar, Tensor};
use crate::world::{Dataset, Encoders, ToyPrompt, IMG_LEN};

pub const DEFAULT_D_ADAPTER: usize = 64;
pub const DEFAULT_ITERATIONS: usize = 1000;

/// Two-layer SiLU network from the pooled embedding to the timestep
/// embedding dimension, exposed through its zero-anchored contribution.
pub struct PooledAdapter<T: Scalar = f32> {
    pub d_pool: usize,
    pub d_adapter: usize,
    pub time_dim: usize,
    fc1: Linear<T>,
    fc2: Linear<T>,
}

impl<T: Scalar> PooledAdapter<T> {
    pub fn new(seed: u64, d_pool: usize, d_adapter: usize, time_dim: usize) -> Self {
        let mut rng = StreamRng::new(seed, StreamKind::Init);
        PooledAdapter {
            d_pool,
            d_adapter,
            time_dim,
            fc1: Linear::new(&mut rng, d_pool, d_adapter),
            fc2: Linear::new(&mut rng, d_adapter, time_dim),
        }
    }

    pub fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        self.fc1.collect("adapter.fc1", &mut out);
        self.fc2.collect("adapter.fc2", &mut out);
        out
    }

    fn raw(&self, e: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&self.fc1.forward(e)?.silu()?)
    }

    /// g(e) = f(e) − f(0). f(0) is recomputed rather than cached: a cache
    /// would go stale as training updates the adapter, and g(0) = 0 must
    /// hold exactly at all times.
    pub fn contribution(&self, pooled: &[f32]) -> Result<Tensor<T>> {
        if pooled.len() != self.d_pool {
            return Err(Error::DimensionMismatch {
                op: "adapter_contribution",
                left: vec![pooled.len()],
                right: vec![self.d_pool],
            });
        }
        let cast: Vec<T> = pooled.iter().map(|&v| lit::<T>(v as f64)).collect();
        let e = Tensor::constant(&[1, self.d_pool], cast)?;
        let zero = Tensor::zeros(&[1, self.d_pool]);
        self.raw(&e)?.sub(&self.raw(&zero)?)
    }
}

impl PooledAdapter<f32> {
    /// Adapter checkpoint in the shared manifest+blob format, linked to the
    /// exact base checkpoint by content hash.
    pub fn to_checkpoint(&self, base_hash: &str, iterations: u64) -> crate::model::Checkpoint {
        crate::model::Checkpoint {
            kind: crate::model::CHECKPOINT_KIND_ADAPTER.into(),
            fields: vec![
                ("d_pool".into(), self.d_pool.to_string()),
                ("d_adapter".into(), self.d_adapter.to_string()),
                ("time_dim".into(), self.time_dim.to_string()),
                ("iterations".into(), iterations.to_string()),
                ("base_hash".into(), base_hash.to_string()),
            ],
            params: self
                .parameters()
                .into_iter()
                .map(|p| (p.name, p.tensor.shape(), p.tensor.to_vec()))
                .collect(),
        }
    }

    /// Loads an adapter and verifies it was trained against the given base
    /// checkpoint; a mismatched base is an error.
    pub fn from_checkpoint(
        ckpt: &crate::model::Checkpoint,
        expected_base_hash: &str,
    ) -> Result<PooledAdapter<f32>> {
        if ckpt.kind != crate::model::CHECKPOINT_KIND_ADAPTER {
            return Err(Error::Checkpoint(format!(
                "expected an adapter checkpoint, found kind `{}`",
                ckpt.kind
            )));
        }
        let get = |key: &str| -> Result<usize> {
            ckpt.field(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing field `{key}`")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("field `{key}` is malformed")))
        };
        let stored_hash = ckpt
            .field("base_hash")
            .ok_or_else(|| Error::Checkpoint("missing field `base_hash`".into()))?;
        if stored_hash != expected_base_hash {
            return Err(Error::Checkpoint(format!(
                "adapter was trained against base {stored_hash}, not {expected_base_hash}"
            )));
        }
        let adapter = PooledAdapter::new(0, get("d_pool")?, get("d_adapter")?, get("time_dim")?);
        crate::model::checkpoint_load_parameters(&adapter.parameters(), &ckpt.params)?;
        Ok(adapter)
    }
}

/// Settings of one retrofit run.
#[derive(Debug, Clone)]
pub struct RetrofitConfig {
    pub iterations: usize,
    pub lr: f64,
    pub batch: usize,
    pub d_adapter: usize,
    pub seed: u64,
}

impl Default for RetrofitConfig {
    fn default() -> Self {
        RetrofitConfig {
            iterations: DEFAULT_ITERATIONS,
            lr: 1e-3,
            batch: 8,
            d_adapter: DEFAULT_D_ADAPTER,
            seed: 7,
        }
    }
}

/// Outcome of a retrofit run: the trained adapter, the per-step loss
/// history, and the base-parameter digests proving frozenness.
pub struct RetrofitRun {
    pub adapter: PooledAdapter<f32>,
    pub loss_history: Vec<f64>,
    pub base_digest_before: String,
    pub base_digest_after: String,
}

/// Byte-level digest of every base parameter, in parameter order.
pub fn base_digest(model: &DiT<f32>) -> String {
    let mut hasher = Sha256::new();
    for p in model.parameters() {
        hasher.update(p.name.as_bytes());
        for v in p.tensor.to_vec() {
            hasher.update(v.to_le_bytes());
        }
    }
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One distillation step's loss graph. The teacher prediction is computed
/// without gradients; the student sees the unconditional token sequence
/// plus the adapter contribution, both on the same noised image, so
/// gradients flow only into adapter parameters (the base is frozen by
/// `retrofit_train`; this function verifies it stayed frozen).
pub fn distill_step(
    base: &DiT<f32>,
    encoders: &Encoders,
    adapter: &PooledAdapter<f32>,
    x0: &[f32],
    prompt: &ToyPrompt,
    t: f64,
    noise: &[f32],
) -> Result<Tensor<f32>> {
    let x_t: Vec<f32> = x0
        .iter()
        .zip(noise)
        .map(|(&x, &e)| (1.0 - t as f32) * x + t as f32 * e)
        .collect();

    let teacher = no_grad(|| -> Result<Tensor<f32>> {
        let tokens = encoders.sequence_encode(prompt)?;
        let y = base.conditioning(None, t, &prompt.canonical())?;
        base.forward(&x_t, &tokens, &vec![y; base.config.n_layers], None)
    })?;
    let target = Tensor::constant(&teacher.shape(), teacher.to_vec())?;

    let null_tokens = encoders.sequence_encode(&ToyPrompt::unconditional())?;
    let pooled = encoders.pooled_encode(prompt);
    let g = adapter.contribution(&pooled)?;
    let y = base.conditioning_with_extra(None, t, Some(&g), &prompt.canonical())?;
    let student = base.forward(&x_t, &null_tokens, &vec![y; base.config.n_layers], None)?;

    student.mse(&target)
}

/// Trains an adapter against a frozen base by distillation. The base must
/// be pooled-free; its parameters are frozen for the duration and verified
/// byte-identical afterwards. Divergence (loss above 10× the initial loss
/// for 100 consecutive steps) aborts with a diagnostic.
pub fn retrofit_train(
    base: &DiT<f32>,
    dataset: &Dataset,
    encoders: &Encoders,
    config: &RetrofitConfig,
) -> Result<RetrofitRun> {
    if base.config.conditioning != ConditioningMode::PooledFree {
        return Err(Error::Config(
            "retrofit expects a pooled-free base model".into(),
        ));
    }
    if dataset.items.is_empty() {
        return Err(Error::Config("retrofit needs a nonempty dataset".into()));
    }

    let adapter = PooledAdapter::new(config.seed, encoders.d_pool, config.d_adapter, base.config.time_dim);
    let base_params = base.parameters();
    let digest_before = base_digest(base);
    for p in &base_params {
        p.tensor.set_requires_grad(false)?;
    }

    let result = run_distillation(base, dataset, encoders, &adapter, config, &base_params);

    for p in &base_params {
        p.tensor.set_requires_grad(true)?;
    }
    let loss_history = result?;
    let digest_after = base_digest(base);
    if digest_after != digest_before {
        return Err(Error::Frozenness("base parameters changed".into()));
    }
    Ok(RetrofitRun {
        adapter,
        loss_history,
        base_digest_before: digest_before,
        base_digest_after: digest_after,
    })
}

fn run_distillation(
    base: &DiT<f32>,
    dataset: &Dataset,
    encoders: &Encoders,
    adapter: &PooledAdapter<f32>,
    config: &RetrofitConfig,
    base_params: &[Parameter<f32>],
) -> Result<Vec<f64>> {
    let adapter_params = adapter.parameters();
    let mut opt = OptimizerState::new(&adapter_params, config.lr);
    let mut rng = StreamRng::new(config.seed, StreamKind::Train);
    let mut history = Vec::with_capacity(config.iterations);
    let mut initial = None;
    let mut high_steps = 0usize;

    for _ in 0..config.iterations {
        nn::zero_grads(&adapter_params);
        let mut total: Option<Tensor<f32>> = None;
        for _ in 0..config.batch {
            let item = &dataset.items[rng.below_usize(dataset.items.len())];
            let t = rng.uniform();
            let noise: Vec<f32> = (0..IMG_LEN).map(|_| rng.normal() as f32).collect();
            let loss = distill_step(
                base,
                encoders,
                adapter,
                &item.image.data,
                &item.prompt,
                t,
                &noise,
            )?;
            total = Some(match total {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
        }
        let loss = total
            .unwrap()
            .mul_scalar(1.0 / config.batch as f32)?;
        let loss_value = loss.value() as f64;
        if !loss_value.is_finite() {
            return Err(Error::Numeric("distillation loss is not finite".into()));
        }
        loss.backward()?;

        for p in base_params {
            if p.tensor.grad().is_some() {
                return Err(Error::Frozenness(p.name.clone()));
            }
        }

        nn::adam_step(&adapter_params, &mut opt)?;
        let first = *initial.get_or_insert(loss_value);
        if loss_value > 10.0 * first {
            high_steps += 1;
            if high_steps >= 100 {
                return Err(Error::Divergence(format!(
                    "distillation loss {loss_value} stayed above 10x the initial {first} for 100 steps"
                )));
            }
        } else {
            high_steps = 0;
        }
        history.push(loss_value);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::world::{sample_dataset, DEFAULT_D_POOL, DEFAULT_D_TOKEN};

    fn small_base() -> DiT<f32> {
        let config = ModelConfig {
            d_model: 16,
            n_layers: 2,
            heads: 2,
            time_dim: 8,
            mlp_multiplier: 2,
            conditioning: ConditioningMode::PooledFree,
            ..ModelConfig::default()
        };
        DiT::new(config, 3).unwrap()
    }

    fn encoders() -> Encoders {
        Encoders::new(7, DEFAULT_D_POOL, DEFAULT_D_TOKEN).unwrap()
    }

    #[test]
    fn contribution_at_zero_is_exactly_zero() {
        let a = PooledAdapter::<f32>::new(1, 32, 16, 8);
        let g = a.contribution(&[0.0; 32]).unwrap();
        assert!(g.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn contribution_is_pure_and_nonzero_for_random_input() {
        let a = PooledAdapter::<f32>::new(1, 32, 16, 8);
        let mut rng = StreamRng::from_seed(5);
        let e: Vec<f32> = (0..32).map(|_| rng.normal() as f32).collect();
        let g1 = a.contribution(&e).unwrap().to_vec();
        let g2 = a.contribution(&e).unwrap().to_vec();
        assert_eq!(g1, g2);
        assert!(g1.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn contribution_checks_dimension() {
        let a = PooledAdapter::<f32>::new(1, 32, 16, 8);
        assert!(a.contribution(&[0.0; 7]).is_err());
    }

    #[test]
    fn distill_loss_is_zero_for_unconditional_prompt_with_zero_adapter() {
        // With the unconditional prompt and an adapter whose output is zero
        // (any adapter at pooled = 0), teacher and student are the same
        // computation.
        let base = small_base();
        let enc = encoders();
        let adapter = PooledAdapter::<f32>::new(1, enc.d_pool, 16, 8);
        let x0 = vec![0.25f32; IMG_LEN];
        let noise = vec![0.5f32; IMG_LEN];
        let loss = distill_step(
            &base,
            &enc,
            &adapter,
            &x0,
            &ToyPrompt::unconditional(),
            0.5,
            &noise,
        )
        .unwrap();
        assert_eq!(loss.value(), 0.0);
    }

    #[test]
    fn distill_loss_positive_for_informative_prompt() {
        let base = small_base();
        let enc = encoders();
        let adapter = PooledAdapter::<f32>::new(1, enc.d_pool, 16, 8);
        let d = sample_dataset(2, 4, 7).unwrap();
        let item = &d.items[0];
        let noise = vec![0.3f32; IMG_LEN];
        let loss = distill_step(
            &base,
            &enc,
            &adapter,
            &item.image.data,
            &item.prompt,
            0.5,
            &noise,
        )
        .unwrap();
        // The teacher sees real tokens, the student null tokens; on any
        // nontrivial model the predictions differ.
        assert!(loss.value() > 0.0);
    }

    #[test]
    fn zero_iterations_changes_nothing() {
        let base = small_base();
        let enc = encoders();
        let d = sample_dataset(2, 8, 7).unwrap();
        let cfg = RetrofitConfig {
            iterations: 0,
            d_adapter: 16,
            ..RetrofitConfig::default()
        };
        let before = base_digest(&base);
        let run = retrofit_train(&base, &d, &enc, &cfg).unwrap();
        assert_eq!(run.base_digest_before, run.base_digest_after);
        assert_eq!(before, base_digest(&base));
        assert!(run.loss_history.is_empty());
        // Fresh-init equality: an adapter built with the same seed matches.
        let fresh = PooledAdapter::<f32>::new(cfg.seed, enc.d_pool, 16, 8);
        for (a, b) in run.adapter.parameters().iter().zip(fresh.parameters()) {
            assert_eq!(a.tensor.to_vec(), b.tensor.to_vec());
        }
    }

    #[test]
    fn short_run_trains_and_keeps_base_frozen() {
        let base = small_base();
        let enc = encoders();
        let d = sample_dataset(2, 16, 7).unwrap();
        let cfg = RetrofitConfig {
            iterations: 5,
            batch: 2,
            d_adapter: 16,
            ..RetrofitConfig::default()
        };
        let run = retrofit_train(&base, &d, &enc, &cfg).unwrap();
        assert_eq!(run.loss_history.len(), 5);
        assert_eq!(run.base_digest_before, run.base_digest_after);
        // Base must be trainable again after the run.
        assert!(base.parameters().iter().all(|p| p.tensor.requires_grad()));
    }

    #[test]
    fn retrofit_rejects_pooled_models() {
        let config = ModelConfig {
            d_model: 16,
            n_layers: 1,
            heads: 2,
            time_dim: 8,
            mlp_multiplier: 2,
            conditioning: ConditioningMode::WithPooled,
            ..ModelConfig::default()
        };
        let base = DiT::new(config, 3).unwrap();
        let enc = encoders();
        let d = sample_dataset(2, 4, 7).unwrap();
        assert!(retrofit_train(&base, &d, &enc, &RetrofitConfig::default()).is_err());
    }
}
