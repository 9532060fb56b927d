//! The pixel-space diffusion transformer with modulation-layer conditioning.
//!
//! Images are patchified into tokens and processed jointly with the text
//! tokens in a single stream. A global conditioning vector y — built from
//! the timestep embedding and (optionally) the pooled prompt embedding —
//! drives per-block modulation heads that scale and shift the image tokens
//! before attention and before the MLP. Each block receives its own y,
//! which is what per-layer guidance schedules act on; the unguided path
//! passes the same y to every block.

mod checkpoint;
mod sampler;
mod train;

pub use checkpoint::{
    load_parameters as checkpoint_load_parameters, Checkpoint, CheckpointMeta,
    CHECKPOINT_KIND_ADAPTER, CHECKPOINT_KIND_MODEL,
};
pub use sampler::{
    sample, DenoiseState, ModelView, SampleConfig, SampleTrace, StepTrace, TraceOptions,
};
pub use train::{eval_loss, flow_matching_loss, train, TrainConfig, TrainOutcome};

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, MultiheadAttention, Parameter, INIT_STD};
use crate::rng::{StreamKind, StreamRng};
use crate::tensor::{lit, AttentionWeights, Scalar, Tensor};
use crate::world::{TokenEmbeddings, CHANNELS, IMG_LEN, N_TEXT, RESOLUTION};

/// How the global conditioning vector is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    /// y = MLP(concat(timestep embedding, pooled prompt embedding)).
    WithPooled,
    /// y = MLP(timestep embedding); the pooled path is structurally absent.
    PooledFree,
}

impl ConditioningMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditioningMode::WithPooled => "with_pooled",
            ConditioningMode::PooledFree => "pooled_free",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "with_pooled" => Ok(ConditioningMode::WithPooled),
            "pooled_free" => Ok(ConditioningMode::PooledFree),
            _ => Err(Error::Config(format!("unknown conditioning mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub heads: usize,
    pub d_pool: usize,
    pub d_token: usize,
    pub patch: usize,
    pub time_dim: usize,
    pub mlp_multiplier: usize,
    pub conditioning: ConditioningMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 8,
            heads: 4,
            d_pool: 32,
            d_token: 64,
            patch: 2,
            time_dim: 64,
            mlp_multiplier: 4,
            conditioning: ConditioningMode::WithPooled,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.patch == 0 || RESOLUTION % self.patch != 0 {
            return Err(Error::Config(format!(
                "patch {} does not tile resolution {RESOLUTION}",
                self.patch
            )));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::Config("time_dim must be even".into()));
        }
        Ok(())
    }

    /// Number of image tokens after patchification.
    pub fn n_img_tokens(&self) -> usize {
        let side = RESOLUTION / self.patch;
        side * side
    }

    /// Features per image token.
    pub fn patch_dim(&self) -> usize {
        CHANNELS * self.patch * self.patch
    }

    pub fn seq_len(&self) -> usize {
        N_TEXT + self.n_img_tokens()
    }
}

/// The y vector driving one layer's modulation heads, with provenance.
/// Produced only by [`DiT::conditioning`] and the guidance path.
#[derive(Clone)]
pub struct GlobalConditioning<T: Scalar = f32> {
    y: Tensor<T>,
    pub prompt_id: String,
    pub t: f64,
}

impl<T: Scalar> GlobalConditioning<T> {
    pub(crate) fn new(y: Tensor<T>, prompt_id: String, t: f64) -> Self {
        GlobalConditioning { y, prompt_id, t }
    }

    /// The vector itself, `[1 × d_model]`.
    pub fn tensor(&self) -> &Tensor<T> {
        &self.y
    }
}

/// Per-site modulation coefficients derived from a conditioning vector.
/// α is parameterized as 1 + δ with δ from a zero-initialized head, so an
/// untrained model modulates with exactly α=1, β=0.
pub struct ModulationParams<T: Scalar = f32> {
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Element-wise α⊙s + β, broadcast over the sequence axis.
pub fn modulate<T: Scalar>(s: &Tensor<T>, params: &ModulationParams<T>) -> Result<Tensor<T>> {
    s.affine_rows(&params.alpha, &params.beta)
}

struct ModulationSite<T: Scalar> {
    scale_head: Linear<T>,
    shift_head: Linear<T>,
}

impl<T: Scalar> ModulationSite<T> {
    fn zeroed(d: usize) -> Self {
        ModulationSite {
            scale_head: Linear::zeroed(d, d),
            shift_head: Linear::zeroed(d, d),
        }
    }

    fn params(&self, y: &GlobalConditioning<T>) -> Result<ModulationParams<T>> {
        let delta = self.scale_head.forward(y.tensor())?;
        Ok(ModulationParams {
            alpha: delta.add_scalar(T::one())?,
            beta: self.shift_head.forward(y.tensor())?,
        })
    }

    fn collect(&self, prefix: &str, out: &mut Vec<Parameter<T>>) {
        self.scale_head.collect(&format!("{prefix}.scale_head"), out);
        self.shift_head.collect(&format!("{prefix}.shift_head"), out);
    }
}

struct Block<T: Scalar> {
    mod_attn: ModulationSite<T>,
    mod_mlp: ModulationSite<T>,
    attn: MultiheadAttention<T>,
    mlp: Mlp<T>,
}

/// Captures intermediate values of a forward pass. Recording copies data
/// out of the graph and never feeds anything back, so a recorded run is
/// bit-identical to an unrecorded one.
pub struct ForwardRecorder<T: Scalar = f32> {
    pub want_attention: bool,
    pub want_pre_mod: bool,
    /// One entry per block when attention recording is on.
    pub attention: Vec<AttentionWeights<T>>,
    /// Two entries per block: the layer-norm outputs feeding the
    /// pre-attention and pre-MLP modulation sites.
    pub pre_mod: Vec<Vec<T>>,
}

impl<T: Scalar> ForwardRecorder<T> {
    pub fn new(want_attention: bool, want_pre_mod: bool) -> Self {
        ForwardRecorder {
            want_attention,
            want_pre_mod,
            attention: Vec::new(),
            pre_mod: Vec::new(),
        }
    }
}

/// The diffusion transformer.
pub struct DiT<T: Scalar = f32> {
    pub config: ModelConfig,
    patch_embed: Linear<T>,
    pos_embed: Tensor<T>,
    text_proj: Linear<T>,
    null_token: Tensor<T>,
    time_embed: Linear<T>,
    cond_fc1: Linear<T>,
    cond_fc2: Linear<T>,
    blocks: Vec<Block<T>>,
    head: Linear<T>,
    unpatch_index: Rc<Vec<usize>>,
}

impl<T: Scalar> DiT<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = StreamRng::new(seed, StreamKind::Init);
        let d = config.d_model;
        let n_img = config.n_img_tokens();

        let patch_embed = Linear::new(&mut rng, config.patch_dim(), d);
        let pos_data: Vec<T> = (0..n_img * d)
            .map(|_| lit::<T>(rng.normal() * INIT_STD))
            .collect();
        let pos_embed = Tensor::param(&[n_img, d], pos_data)?;
        let text_proj = Linear::new(&mut rng, config.d_token, d);
        let null_data: Vec<T> = (0..config.d_token)
            .map(|_| lit::<T>(rng.normal() * INIT_STD))
            .collect();
        let null_token = Tensor::param(&[1, config.d_token], null_data)?;
        let time_embed = Linear::new(&mut rng, config.time_dim, config.time_dim);
        let cond_in = match config.conditioning {
            ConditioningMode::WithPooled => config.time_dim + config.d_pool,
            ConditioningMode::PooledFree => config.time_dim,
        };
        let cond_fc1 = Linear::new(&mut rng, cond_in, d);
        let cond_fc2 = Linear::new(&mut rng, d, d);

        let mut blocks = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            blocks.push(Block {
                mod_attn: ModulationSite::zeroed(d),
                mod_mlp: ModulationSite::zeroed(d),
                attn: MultiheadAttention::new(&mut rng, d, config.heads)?,
                mlp: Mlp::new(&mut rng, d, config.mlp_multiplier),
            });
        }
        let head = Linear::new(&mut rng, d, config.patch_dim());

        let unpatch_index = Rc::new(build_unpatch_index(&config));
        Ok(DiT {
            config,
            patch_embed,
            pos_embed,
            text_proj,
            null_token,
            time_embed,
            cond_fc1,
            cond_fc2,
            blocks,
            head,
            unpatch_index,
        })
    }

    /// All trainable parameters in a fixed, name-stable order.
    pub fn parameters(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        self.patch_embed.collect("patch_embed", &mut out);
        out.push(Parameter::new("pos_embed", self.pos_embed.clone()));
        self.text_proj.collect("text_proj", &mut out);
        out.push(Parameter::new("null_token", self.null_token.clone()));
        self.time_embed.collect("time_embed", &mut out);
        self.cond_fc1.collect("cond.fc1", &mut out);
        self.cond_fc2.collect("cond.fc2", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.mod_attn.collect(&format!("block{i}.mod_attn"), &mut out);
            b.mod_mlp.collect(&format!("block{i}.mod_mlp"), &mut out);
            b.attn.collect(&format!("block{i}.attn"), &mut out);
            b.mlp.collect(&format!("block{i}.mlp"), &mut out);
        }
        self.head.collect("head", &mut out);
        out
    }

    /// Sinusoidal features of t followed by a learned linear map. The
    /// timestep must lie in [0, 1].
    pub fn embed_timestep(&self, t: f64) -> Result<Tensor<T>> {
        let features = self.timestep_features(t)?;
        self.time_embed.forward(&features)
    }

    fn timestep_features(&self, t: f64) -> Result<Tensor<T>> {
        if !t.is_finite() || !(0.0..=1.0).contains(&t) {
            return Err(Error::Range(format!("timestep {t} outside [0, 1]")));
        }
        let half = self.config.time_dim / 2;
        let mut feat = Vec::with_capacity(self.config.time_dim);
        for j in 0..half {
            let freq = (-(10_000f64.ln()) * j as f64 / half as f64).exp();
            let arg = 1000.0 * t * freq;
            feat.push(lit::<T>(arg.cos()));
            feat.push(lit::<T>(arg.sin()));
        }
        Tensor::constant(&[1, self.config.time_dim], feat)
    }

    /// Global conditioning vector y for one prompt and timestep: a two-layer
    /// SiLU network over the timestep embedding, concatenated with the
    /// pooled embedding when the model has a pooled path. `pooled = None`
    /// feeds zeros — the "pooled removed" configuration, a valid input and
    /// not an error.
    pub fn conditioning(
        &self,
        pooled: Option<&[f32]>,
        t: f64,
        prompt_id: &str,
    ) -> Result<GlobalConditioning<T>> {
        self.conditioning_with_extra(pooled, t, None, prompt_id)
    }

    /// As [`DiT::conditioning`], with an optional additive term injected
    /// into the timestep embedding (the retrofit adapter path).
    pub fn conditioning_with_extra(
        &self,
        pooled: Option<&[f32]>,
        t: f64,
        extra_time: Option<&Tensor<T>>,
        prompt_id: &str,
    ) -> Result<GlobalConditioning<T>> {
        let mut t_emb = self.embed_timestep(t)?;
        if let Some(extra) = extra_time {
            t_emb = t_emb.add(extra)?;
        }
        let input = match self.config.conditioning {
            ConditioningMode::PooledFree => t_emb,
            ConditioningMode::WithPooled => {
                let pooled_part = match pooled {
                    Some(p) => {
                        if p.len() != self.config.d_pool {
                            return Err(Error::DimensionMismatch {
                                op: "conditioning",
                                left: vec![p.len()],
                                right: vec![self.config.d_pool],
                            });
                        }
                        let cast: Vec<T> = p.iter().map(|&v| lit::<T>(v as f64)).collect();
                        Tensor::constant(&[1, self.config.d_pool], cast)?
                    }
                    None => Tensor::zeros(&[1, self.config.d_pool]),
                };
                t_emb.concat_cols(&pooled_part)?
            }
        };
        let y = self.cond_fc2.forward(&self.cond_fc1.forward(&input)?.silu()?)?;
        Ok(GlobalConditioning::new(y, prompt_id.to_string(), t))
    }

    /// One transformer block: attention and MLP sublayers with residuals,
    /// modulation applied to the image-token rows at both pre-norm sites.
    /// Text tokens pass through the norms unmodulated.
    pub fn block_forward(
        &self,
        block_index: usize,
        seq: &Tensor<T>,
        y: &GlobalConditioning<T>,
        recorder: Option<&mut ForwardRecorder<T>>,
    ) -> Result<(Tensor<T>, Option<AttentionWeights<T>>)> {
        let block = &self.blocks[block_index];
        let want_attn = recorder.as_ref().is_some_and(|r| r.want_attention);

        let h1 = seq.layer_norm()?;
        let p1 = block.mod_attn.params(y)?;
        let h1m = self.modulate_image_rows(&h1, &p1)?;
        let (attn_out, weights) = block.attn.forward(&h1m, &h1m, want_attn)?;
        let seq2 = seq.add(&attn_out)?;

        let h2 = seq2.layer_norm()?;
        let p2 = block.mod_mlp.params(y)?;
        let h2m = self.modulate_image_rows(&h2, &p2)?;
        let mlp_out = block.mlp.forward(&h2m)?;
        let seq3 = seq2.add(&mlp_out)?;

        if let Some(r) = recorder {
            if r.want_pre_mod {
                r.pre_mod.push(h1.to_vec());
                r.pre_mod.push(h2.to_vec());
            }
            if let Some(w) = &weights {
                r.attention.push(w.clone());
            }
        }
        Ok((seq3, weights))
    }

    /// Modulation applies to the image-token rows only; the text rows of
    /// the normalized sequence pass through unchanged.
    fn modulate_image_rows(
        &self,
        h: &Tensor<T>,
        params: &ModulationParams<T>,
    ) -> Result<Tensor<T>> {
        let text = h.slice_rows(0, N_TEXT)?;
        let img = h.slice_rows(N_TEXT, self.config.seq_len())?;
        text.concat_rows(&modulate(&img, params)?)
    }

    /// Text-token rows: fixed table rows for real clauses, the trained null
    /// embedding for null positions, all through the text projection.
    fn embed_text(&self, tokens: &TokenEmbeddings) -> Result<Tensor<T>> {
        if tokens.d_token != self.config.d_token {
            return Err(Error::DimensionMismatch {
                op: "embed_text",
                left: vec![tokens.d_token],
                right: vec![self.config.d_token],
            });
        }
        let mut rows: Vec<Tensor<T>> = Vec::with_capacity(N_TEXT);
        for i in 0..N_TEXT {
            if tokens.null_mask[i] {
                rows.push(self.null_token.clone());
            } else {
                let row: Vec<T> = tokens.row(i).iter().map(|&v| lit::<T>(v as f64)).collect();
                rows.push(Tensor::constant(&[1, self.config.d_token], row)?);
            }
        }
        self.text_proj.forward(&Tensor::stack_rows(&rows)?)
    }

    /// Full forward pass: patchify, concatenate [text, image] tokens, run
    /// every block with its per-layer conditioning, and unpatchify the
    /// image-token outputs into a velocity field of the latent's shape.
    ///
    /// `y_per_layer` must have exactly `n_layers` entries; the unguided
    /// path passes the same y at every index, and doing so is bit-identical
    /// to any other way of sharing y.
    pub fn forward(
        &self,
        latent: &[T],
        tokens: &TokenEmbeddings,
        y_per_layer: &[GlobalConditioning<T>],
        mut recorder: Option<&mut ForwardRecorder<T>>,
    ) -> Result<Tensor<T>> {
        if y_per_layer.len() != self.config.n_layers {
            return Err(Error::Config(format!(
                "y_per_layer has {} entries for {} layers",
                y_per_layer.len(),
                self.config.n_layers
            )));
        }
        if latent.len() != IMG_LEN {
            return Err(Error::Config(format!(
                "latent must have {IMG_LEN} values, got {}",
                latent.len()
            )));
        }

        let patches = self.patchify(latent)?;
        let img_emb = self.patch_embed.forward(&patches)?.add(&self.pos_embed)?;
        let text_emb = self.embed_text(tokens)?;
        let mut seq = text_emb.concat_rows(&img_emb)?;

        for (i, y) in y_per_layer.iter().enumerate() {
            let (next, _) = self.block_forward(i, &seq, y, recorder.as_deref_mut())?;
            seq = next;
        }

        let img_out = seq.slice_rows(N_TEXT, self.config.seq_len())?.layer_norm()?;
        let velocity = self.head.forward(&img_out)?;
        velocity.gather(
            Rc::clone(&self.unpatch_index),
            &[CHANNELS, RESOLUTION, RESOLUTION],
        )
    }

    /// Image layout → token layout, as a constant leaf.
    fn patchify(&self, latent: &[T]) -> Result<Tensor<T>> {
        let p = self.config.patch;
        let side = RESOLUTION / p;
        let pd = self.config.patch_dim();
        let n = self.config.n_img_tokens();
        let mut out = vec![T::zero(); n * pd];
        for pr in 0..side {
            for pc in 0..side {
                let tok = pr * side + pc;
                for c in 0..CHANNELS {
                    for dy in 0..p {
                        for dx in 0..p {
                            let f = (c * p + dy) * p + dx;
                            let src = (c * RESOLUTION + pr * p + dy) * RESOLUTION + pc * p + dx;
                            out[tok * pd + f] = latent[src];
                        }
                    }
                }
            }
        }
        Tensor::constant(&[n, pd], out)
    }
}

/// For each flat image index, the flat index into `[n_tokens × patch_dim]`
/// holding that pixel's value.
fn build_unpatch_index(config: &ModelConfig) -> Vec<usize> {
    let p = config.patch;
    let side = RESOLUTION / p;
    let pd = config.patch_dim();
    let mut idx = vec![0usize; IMG_LEN];
    for c in 0..CHANNELS {
        for y in 0..RESOLUTION {
            for x in 0..RESOLUTION {
                let tok = (y / p) * side + (x / p);
                let f = (c * p + (y % p)) * p + (x % p);
                idx[(c * RESOLUTION + y) * RESOLUTION + x] = tok * pd + f;
            }
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Encoders, ToyPrompt, DEFAULT_D_POOL, DEFAULT_D_TOKEN};

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            heads: 2,
            time_dim: 8,
            mlp_multiplier: 2,
            ..ModelConfig::default()
        }
    }

    fn encoders() -> Encoders {
        Encoders::new(7, DEFAULT_D_POOL, DEFAULT_D_TOKEN).unwrap()
    }

    #[test]
    fn timestep_embedding_is_deterministic_and_distinct() {
        let m = DiT::<f32>::new(small_config(), 1).unwrap();
        let a = m.embed_timestep(0.0).unwrap().to_vec();
        let b = m.embed_timestep(0.0).unwrap().to_vec();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);

        let cos = |a: &[f32], b: &[f32]| {
            let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
            let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
            dot / (na * nb)
        };
        let t0 = m.embed_timestep(0.0).unwrap().to_vec();
        let t5 = m.embed_timestep(0.5).unwrap().to_vec();
        let t1 = m.embed_timestep(1.0).unwrap().to_vec();
        assert!(cos(&t0, &t1) < 0.99, "cos(t0, t1) = {}", cos(&t0, &t1));
        assert_ne!(t0, t5);
        assert_ne!(t5, t1);
    }

    #[test]
    fn timestep_out_of_range_is_an_error() {
        let m = DiT::<f32>::new(small_config(), 1).unwrap();
        assert!(m.embed_timestep(-0.1).is_err());
        assert!(m.embed_timestep(1.5).is_err());
        assert!(m.embed_timestep(f64::NAN).is_err());
    }

    #[test]
    fn conditioning_is_pure_and_d_model_sized() {
        let m = DiT::<f32>::new(small_config(), 1).unwrap();
        let enc = encoders();
        let p = ToyPrompt::parse("count=2, color=red").unwrap();
        let pooled = enc.pooled_encode(&p);
        let a = m.conditioning(Some(&pooled), 0.3, "p").unwrap();
        let b = m.conditioning(Some(&pooled), 0.3, "p").unwrap();
        assert_eq!(a.tensor().to_vec(), b.tensor().to_vec());
        assert_eq!(a.tensor().shape(), vec![1, 16]);
    }

    #[test]
    fn zero_pooled_is_valid_distinct_conditioning() {
        let m = DiT::<f32>::new(small_config(), 1).unwrap();
        let enc = encoders();
        let p = ToyPrompt::parse("count=2, color=red").unwrap();
        let pooled = enc.pooled_encode(&p);
        let with = m.conditioning(Some(&pooled), 0.3, "p").unwrap();
        let without = m.conditioning(None, 0.3, "p").unwrap();
        assert_ne!(with.tensor().to_vec(), without.tensor().to_vec());
    }

    #[test]
    fn modulate_identity_and_hand_values() {
        let s = Tensor::<f32>::constant(&[1, 1], vec![0.5]).unwrap();
        let id = ModulationParams {
            alpha: Tensor::constant(&[1, 1], vec![1.0]).unwrap(),
            beta: Tensor::constant(&[1, 1], vec![0.0]).unwrap(),
        };
        assert_eq!(modulate(&s, &id).unwrap().to_vec(), vec![0.5]);

        let p = ModulationParams {
            alpha: Tensor::constant(&[1, 1], vec![2.0]).unwrap(),
            beta: Tensor::constant(&[1, 1], vec![1.0]).unwrap(),
        };
        assert_eq!(modulate(&s, &p).unwrap().to_vec(), vec![2.0]);

        let zero = ModulationParams {
            alpha: Tensor::constant(&[1, 1], vec![0.0]).unwrap(),
            beta: Tensor::constant(&[1, 1], vec![7.0]).unwrap(),
        };
        let rows = Tensor::<f32>::constant(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(modulate(&rows, &zero).unwrap().to_vec(), vec![7.0; 3]);
    }

    #[test]
    fn untrained_modulation_heads_are_identity() {
        let m = DiT::<f32>::new(small_config(), 1).unwrap();
        let y = m.conditioning(None, 0.5, "p").unwrap();
        for b in &m.blocks {
            for site in [&b.mod_attn, &b.mod_mlp] {
                let p = site.params(&y).unwrap();
                assert!(p.alpha.to_vec().iter().all(|&a| a == 1.0));
                assert!(p.beta.to_vec().iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn forward_shape_matches_latent_and_rejects_bad_y_count() {
        let m = DiT::<f32>::new(small_config(), 1).unwrap();
        let enc = encoders();
        let tokens = enc.sequence_encode(&ToyPrompt::unconditional()).unwrap();
        let y = m.conditioning(None, 0.5, "p").unwrap();
        let latent = vec![0.1f32; IMG_LEN];
        let out = m
            .forward(&latent, &tokens, &vec![y.clone(); 2], None)
            .unwrap();
        assert_eq!(out.shape(), vec![CHANNELS, RESOLUTION, RESOLUTION]);
        assert!(m.forward(&latent, &tokens, &vec![y; 3], None).is_err());
    }

    #[test]
    fn recording_attention_has_expected_shape() {
        let cfg = small_config();
        let m = DiT::<f32>::new(cfg.clone(), 1).unwrap();
        let enc = encoders();
        let tokens = enc.sequence_encode(&ToyPrompt::parse("count=1").unwrap()).unwrap();
        let y = m.conditioning(None, 0.5, "p").unwrap();
        let latent = vec![0.0f32; IMG_LEN];
        let mut rec = ForwardRecorder::new(true, true);
        m.forward(&latent, &tokens, &vec![y; 2], Some(&mut rec)).unwrap();
        assert_eq!(rec.attention.len(), 2);
        let n = cfg.seq_len();
        for w in &rec.attention {
            assert_eq!((w.heads, w.n_q, w.n_k), (2, n, n));
        }
        assert_eq!(rec.pre_mod.len(), 4);
        assert_eq!(rec.pre_mod[0].len(), n * cfg.d_model);
    }

    #[test]
    fn recording_does_not_perturb_the_forward() {
        let m = DiT::<f32>::new(small_config(), 1).unwrap();
        let enc = encoders();
        let tokens = enc.sequence_encode(&ToyPrompt::parse("color=blue").unwrap()).unwrap();
        let y = m.conditioning(None, 0.25, "p").unwrap();
        let latent: Vec<f32> = (0..IMG_LEN).map(|i| ((i % 7) as f32 - 3.0) / 3.0).collect();
        let plain = m.forward(&latent, &tokens, &vec![y.clone(); 2], None).unwrap();
        let mut rec = ForwardRecorder::new(true, true);
        let recorded = m
            .forward(&latent, &tokens, &vec![y; 2], Some(&mut rec))
            .unwrap();
        let pb: Vec<u32> = plain.to_vec().iter().map(|v| v.to_bits()).collect();
        let rb: Vec<u32> = recorded.to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(pb, rb);
    }

    #[test]
    fn patchify_unpatchify_is_the_identity_permutation() {
        let m = DiT::<f32>::new(small_config(), 1).unwrap();
        let latent: Vec<f32> = (0..IMG_LEN).map(|i| i as f32 / IMG_LEN as f32).collect();
        let patches = m.patchify(&latent).unwrap();
        let back = patches
            .gather(
                Rc::clone(&m.unpatch_index),
                &[CHANNELS, RESOLUTION, RESOLUTION],
            )
            .unwrap();
        assert_eq!(back.to_vec(), latent);
    }
}
