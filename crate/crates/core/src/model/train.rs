//! Rectified-flow training.
//!
//! The objective is velocity prediction along the straight path
//! x_t = (1−t)·x₀ + t·ε with target v* = ε − x₀. Training draws t uniformly
//! and ε from a standard normal per example. Conditioning dropout feeds the
//! unconditional (null tokens, zero pooled) configuration so the CFG branch
//! has something to extrapolate from; pooled dropout zeroes only the pooled
//! embedding so both conditioning routes carry signal on their own.

use crate::error::{Error, Result};
use crate::model::{DiT, GlobalConditioning};
use crate::nn::{self, OptimizerState};
use crate::rng::{StreamKind, StreamRng};
use crate::tensor::{lit, Scalar, Tensor};
use crate::world::{Dataset, Encoders, ToyPrompt, IMG_LEN};

/// Flow-matching loss for one example under full conditioning.
pub fn flow_matching_loss<T: Scalar>(
    model: &DiT<T>,
    encoders: &Encoders,
    x0: &[T],
    prompt: &ToyPrompt,
    t: f64,
    noise: &[T],
) -> Result<Tensor<T>> {
    let tokens = encoders.sequence_encode(prompt)?;
    let pooled = encoders.pooled_encode(prompt);
    let y = model.conditioning(Some(&pooled), t, &prompt.canonical())?;
    loss_with_conditioning(model, x0, &tokens, &y, t, noise)
}

/// Flow-matching loss with explicit tokens and conditioning (the trainer's
/// dropout variants are built on this).
pub fn loss_with_conditioning<T: Scalar>(
    model: &DiT<T>,
    x0: &[T],
    tokens: &crate::world::TokenEmbeddings,
    y: &GlobalConditioning<T>,
    t: f64,
    noise: &[T],
) -> Result<Tensor<T>> {
    if x0.len() != IMG_LEN || noise.len() != IMG_LEN {
        return Err(Error::Config("x0 and noise must be full images".into()));
    }
    let tt = lit::<T>(t);
    let one = T::one();
    let x_t: Vec<T> = x0
        .iter()
        .zip(noise)
        .map(|(&x, &e)| (one - tt) * x + tt * e)
        .collect();
    let target: Vec<T> = x0.iter().zip(noise).map(|(&x, &e)| e - x).collect();
    let target = Tensor::constant(&[crate::world::CHANNELS, crate::world::RESOLUTION, crate::world::RESOLUTION], target)?;
    let pred = model.forward(
        &x_t,
        tokens,
        &vec![y.clone(); model.config.n_layers],
        None,
    )?;
    pred.mse(&target)
}

/// Training settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of replacing the full conditioning with the
    /// unconditional configuration (null tokens and zero pooled).
    pub cond_dropout: f64,
    /// Probability of zeroing only the pooled embedding; tokens stay.
    pub pooled_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch: 8,
            lr: 1e-3,
            cond_dropout: 0.1,
            pooled_dropout: 0.5,
            seed: 7,
        }
    }
}

/// Per-run record: the loss at every step.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Seeded single-threaded training loop. `progress` is called after every
/// step with (step index, batch loss).
pub fn train(
    model: &DiT<f32>,
    dataset: &Dataset,
    encoders: &Encoders,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if dataset.items.is_empty() {
        return Err(Error::Config("training needs a nonempty dataset".into()));
    }
    if config.batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let params = model.parameters();
    let mut opt = OptimizerState::new(&params, config.lr);
    let mut rng = StreamRng::new(config.seed, StreamKind::Train);
    let null_tokens = encoders.sequence_encode(&ToyPrompt::unconditional())?;
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        nn::zero_grads(&params);
        let mut total: Option<Tensor<f32>> = None;
        for _ in 0..config.batch {
            let item = &dataset.items[rng.below_usize(dataset.items.len())];
            let t = rng.uniform();
            let noise: Vec<f32> = (0..IMG_LEN).map(|_| rng.normal() as f32).collect();
            let drop_cond = rng.coin(config.cond_dropout);
            let drop_pooled = rng.coin(config.pooled_dropout);

            let loss = if drop_cond {
                let y = model.conditioning(None, t, "")?;
                loss_with_conditioning(model, &item.image.data, &null_tokens, &y, t, &noise)?
            } else {
                let tokens = encoders.sequence_encode(&item.prompt)?;
                let pooled = if drop_pooled {
                    None
                } else {
                    Some(encoders.pooled_encode(&item.prompt))
                };
                let y = model.conditioning(pooled.as_deref(), t, &item.prompt.canonical())?;
                loss_with_conditioning(model, &item.image.data, &tokens, &y, t, &noise)?
            };
            total = Some(match total {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
        }
        let loss = total.unwrap().mul_scalar(1.0 / config.batch as f32)?;
        let value = loss.value() as f64;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("training loss at step {step} is not finite")));
        }
        loss.backward()?;
        nn::adam_step(&params, &mut opt)?;
        history.push(value);
        progress(step, value);
    }

    let initial_loss = history.first().copied().unwrap_or(0.0);
    let tail = history.len().min(100);
    let final_loss = if tail == 0 {
        0.0
    } else {
        history[history.len() - tail..].iter().sum::<f64>() / tail as f64
    };
    Ok(TrainOutcome {
        history,
        initial_loss,
        final_loss,
    })
}

/// Deterministic evaluation loss over `n` draws with full conditioning.
/// Same seed, same model, same dataset — same value, which makes
/// before/after training comparisons exact.
pub fn eval_loss(
    model: &DiT<f32>,
    dataset: &Dataset,
    encoders: &Encoders,
    seed: u64,
    n: usize,
) -> Result<f64> {
    if dataset.items.is_empty() || n == 0 {
        return Err(Error::Config("eval needs data and at least one draw".into()));
    }
    let mut rng = StreamRng::new(seed, StreamKind::Analysis);
    let mut acc = 0.0f64;
    for _ in 0..n {
        let item = &dataset.items[rng.below_usize(dataset.items.len())];
        let t = rng.uniform();
        let noise: Vec<f32> = (0..IMG_LEN).map(|_| rng.normal() as f32).collect();
        let loss = crate::tensor::no_grad(|| {
            flow_matching_loss(model, encoders, &item.image.data, &item.prompt, t, &noise)
        })?;
        acc += loss.value() as f64;
    }
    Ok(acc / n as f64)
}
