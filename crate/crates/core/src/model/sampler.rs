//! Deterministic Euler sampler with CFG and modulation guidance.

use crate::error::{Error, Result};
use crate::guidance::{cfg_combine, guided_conditioning, GuidanceSpec};
use crate::model::{DiT, ForwardRecorder, GlobalConditioning};
use crate::retrofit::PooledAdapter;
use crate::rng::{StreamKind, StreamRng};
use crate::tensor::{no_grad, AttentionWeights, Tensor};
use crate::world::{Encoders, Image, ToyPrompt, IMG_LEN};

/// A model plus the conditioning route to drive it with. Views compose the
/// sampling modes the studies need: the plain model, the retrofitted model
/// (adapter injected into the timestep embedding), pooled ablation (pooled
/// zeroed while tokens stay), and pooled-only conditioning (tokens nulled
/// while the pooled path stays).
pub struct ModelView<'a> {
    pub model: &'a DiT<f32>,
    pub encoders: &'a Encoders,
    adapter: Option<&'a PooledAdapter<f32>>,
    zero_pooled: bool,
    null_text: bool,
}

impl<'a> ModelView<'a> {
    pub fn new(model: &'a DiT<f32>, encoders: &'a Encoders) -> Self {
        ModelView {
            model,
            encoders,
            adapter: None,
            zero_pooled: false,
            null_text: false,
        }
    }

    /// Route the pooled embedding through a retrofit adapter into the
    /// timestep embedding (the base model must be pooled-free).
    pub fn with_adapter(mut self, adapter: &'a PooledAdapter<f32>) -> Self {
        self.adapter = Some(adapter);
        self
    }

    /// Feed a zero pooled embedding regardless of the prompt (the
    /// "pooled removed" ablation arm).
    pub fn with_zero_pooled(mut self) -> Self {
        self.zero_pooled = true;
        self
    }

    /// Feed the null token sequence regardless of the prompt, so only the
    /// pooled path carries prompt information.
    pub fn with_null_text(mut self) -> Self {
        self.null_text = true;
        self
    }

    pub fn tokens_for(&self, prompt: &ToyPrompt) -> Result<crate::world::TokenEmbeddings> {
        if self.null_text {
            self.encoders.sequence_encode(&ToyPrompt::unconditional())
        } else {
            self.encoders.sequence_encode(prompt)
        }
    }

    /// Conditioning vector for a prompt at time t through this view's
    /// pooled route.
    pub fn conditioning_for(&self, prompt: &ToyPrompt, t: f64) -> Result<GlobalConditioning<f32>> {
        let id = prompt.canonical();
        let pooled = if self.zero_pooled {
            None
        } else {
            Some(self.encoders.pooled_encode(prompt))
        };
        match self.adapter {
            None => self.model.conditioning(pooled.as_deref(), t, &id),
            Some(adapter) => {
                let contribution = match &pooled {
                    Some(p) => adapter.contribution(p)?,
                    None => adapter.contribution(&vec![0.0; adapter.d_pool])?,
                };
                // An exactly zero contribution takes the pure base path, so
                // pooled = 0 is bit-identical to the base model.
                if contribution.data().iter().all(|&v| v == 0.0) {
                    self.model.conditioning(None, t, &id)
                } else {
                    self.model
                        .conditioning_with_extra(None, t, Some(&contribution), &id)
                }
            }
        }
    }

    /// The guidance direction Δ(t) = y(p₊, t) − y(p₋, t) through this
    /// view's conditioning route.
    pub fn guidance_direction(
        &self,
        positive: &ToyPrompt,
        negative: &ToyPrompt,
        t: f64,
    ) -> Result<Tensor<f32>> {
        let yp = self.conditioning_for(positive, t)?;
        let yn = self.conditioning_for(negative, t)?;
        yp.tensor().sub(yn.tensor())
    }

    /// Per-layer conditioning list for one sampler step: entry l is
    /// ŷ_l = y + w_l·Δ with w_l from the schedule. Both y and Δ are
    /// recomputed at every timestep.
    pub fn build_guided_y(
        &self,
        spec: &GuidanceSpec,
        t: f64,
    ) -> Result<Vec<GlobalConditioning<f32>>> {
        let n_layers = self.model.config.n_layers;
        let y = self.conditioning_for(&spec.base, t)?;
        let delta = self.guidance_direction(&spec.positive, &spec.negative, t)?;
        let mut out = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let w = spec.schedule.eval(l, n_layers)?;
            out.push(guided_conditioning(&y, &delta, w)?);
        }
        Ok(out)
    }
}

/// Sampler settings.
#[derive(Debug, Clone)]
pub struct SampleConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            steps: 20,
            cfg_scale: 3.0,
            seed: 0,
        }
    }
}

/// What to capture during sampling. Recording copies values out of the
/// forward passes; it never changes what is computed.
#[derive(Debug, Clone, Copy, Default)]
pub struct TraceOptions {
    pub attention: bool,
    pub pre_mod: bool,
}

/// Latent state at the entry of one sampler step.
#[derive(Debug, Clone)]
pub struct DenoiseState {
    pub latent: Vec<f32>,
    pub t: f64,
    pub step: usize,
    pub seed: u64,
}

/// Captures from the conditional forward of one step.
pub struct StepTrace {
    pub step: usize,
    pub t: f64,
    /// Per block, when attention recording is on.
    pub attention: Vec<AttentionWeights<f32>>,
    /// Two per block (pre-attention, pre-MLP), when pre-mod recording is on.
    pub pre_mod: Vec<Vec<f32>>,
}

/// Full sampling trace: entry states always, step captures on request.
pub struct SampleTrace {
    pub states: Vec<DenoiseState>,
    pub steps: Vec<StepTrace>,
}

/// Seeded Euler sampling from t = 1 to t = 0 in uniform steps.
///
/// The conditional branch carries the modulation guidance; the
/// unconditional CFG branch keeps its own unguided conditioning and is
/// skipped entirely at cfg_scale = 1, where the result is exactly the
/// conditional forward chain.
pub fn sample(
    view: &ModelView,
    prompt: &ToyPrompt,
    guidance: Option<&GuidanceSpec>,
    config: &SampleConfig,
    trace_opts: TraceOptions,
) -> Result<(Image, SampleTrace)> {
    if config.steps < 1 {
        return Err(Error::Config("sampler needs at least one step".into()));
    }
    if let Some(spec) = guidance {
        if spec.base != *prompt {
            return Err(Error::Config(format!(
                "guidance base prompt `{}` differs from sampling prompt `{}`",
                spec.base.canonical(),
                prompt.canonical()
            )));
        }
    }

    let n_layers = view.model.config.n_layers;
    let n = config.steps;
    let mut rng = StreamRng::new(config.seed, StreamKind::Sample);
    let mut x: Vec<f32> = (0..IMG_LEN).map(|_| rng.normal() as f32).collect();

    let tokens_cond = view.tokens_for(prompt)?;
    let tokens_uncond = view.encoders.sequence_encode(&ToyPrompt::unconditional())?;
    let uncond_prompt = ToyPrompt::unconditional();

    let mut trace = SampleTrace {
        states: Vec::with_capacity(n),
        steps: Vec::new(),
    };

    no_grad(|| -> Result<()> {
        let dt = 1.0 / n as f64;
        for step in 0..n {
            let t = (n - step) as f64 / n as f64;
            trace.states.push(DenoiseState {
                latent: x.clone(),
                t,
                step,
                seed: config.seed,
            });

            let y_layers = match guidance {
                Some(spec) => view.build_guided_y(spec, t)?,
                None => {
                    let y = view.conditioning_for(prompt, t)?;
                    vec![y; n_layers]
                }
            };

            let mut recorder = if trace_opts.attention || trace_opts.pre_mod {
                Some(ForwardRecorder::new(trace_opts.attention, trace_opts.pre_mod))
            } else {
                None
            };
            let v_cond = view
                .model
                .forward(&x, &tokens_cond, &y_layers, recorder.as_mut())?;
            if let Some(rec) = recorder {
                trace.steps.push(StepTrace {
                    step,
                    t,
                    attention: rec.attention,
                    pre_mod: rec.pre_mod,
                });
            }

            let v = if config.cfg_scale == 1.0 {
                v_cond
            } else {
                let y_u = view.conditioning_for(&uncond_prompt, t)?;
                let v_uncond =
                    view.model
                        .forward(&x, &tokens_uncond, &vec![y_u; n_layers], None)?;
                cfg_combine(&v_cond, &v_uncond, config.cfg_scale)?
            };

            let vd = v.data();
            for (xi, &vi) in x.iter_mut().zip(vd.iter()) {
                *xi -= dt as f32 * vi;
                if !xi.is_finite() {
                    return Err(Error::Numeric(format!(
                        "latent diverged at sampler step {step}"
                    )));
                }
            }
        }
        Ok(())
    })?;

    for v in x.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok((Image::from_vec(x)?, trace))
}
