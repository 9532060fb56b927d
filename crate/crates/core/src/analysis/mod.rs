//! Measurement passes: pooled-embedding ablation against prompt length,
//! attention-mass shifts under guidance, and per-layer attention profiles.

pub mod stats;

use crate::error::{Error, Result};
use crate::guidance::GuidanceSpec;
use crate::model::{sample, DiT, ModelView, SampleConfig, SampleTrace, TraceOptions};
use crate::world::{AttrKind, Encoders, Image, ToyPrompt, N_TEXT};

/// Per-layer, per-head attention blocks from image-token queries to
/// text-token keys, for every sampler step of one run.
pub struct AttentionTrace {
    pub prompt_id: String,
    pub steps: usize,
    pub layers: usize,
    pub heads: usize,
    pub n_img: usize,
    pub n_text: usize,
    /// `[step][layer][head][n_img × n_text]`, flattened.
    data: Vec<f32>,
}

impl AttentionTrace {
    /// Slice the image→text blocks out of a sampling trace. Every recorded
    /// full attention row must sum to 1 within 1e-5; the stored block is a
    /// slice of those rows.
    pub fn from_sample(trace: &SampleTrace, prompt_id: &str, n_text: usize) -> Result<Self> {
        if trace.steps.is_empty() {
            return Err(Error::Analysis("sampling trace has no attention records".into()));
        }
        let layers = trace.steps[0].attention.len();
        if layers == 0 {
            return Err(Error::Analysis("attention recording was not enabled".into()));
        }
        let heads = trace.steps[0].attention[0].heads;
        let n = trace.steps[0].attention[0].n_q;
        if n <= n_text {
            return Err(Error::Analysis("sequence shorter than the text span".into()));
        }
        let n_img = n - n_text;
        let steps = trace.steps.len();
        let mut data = Vec::with_capacity(steps * layers * heads * n_img * n_text);
        for st in &trace.steps {
            if st.attention.len() != layers {
                return Err(Error::Analysis("inconsistent layer count in trace".into()));
            }
            for w in &st.attention {
                for h in 0..heads {
                    for qi in 0..n_img {
                        let row = w.row(h, n_text + qi);
                        let sum: f32 = row.iter().sum();
                        if (sum - 1.0).abs() > 1e-5 {
                            return Err(Error::Analysis(format!(
                                "attention row sums to {sum}, not 1"
                            )));
                        }
                        data.extend_from_slice(&row[..n_text]);
                    }
                }
            }
        }
        Ok(AttentionTrace {
            prompt_id: prompt_id.to_string(),
            steps,
            layers,
            heads,
            n_img,
            n_text,
            data,
        })
    }

    pub fn block(&self, step: usize, layer: usize, head: usize) -> &[f32] {
        let stride = self.n_img * self.n_text;
        let idx = ((step * self.layers + layer) * self.heads + head) * stride;
        &self.data[idx..idx + stride]
    }
}

/// Named partition of the text tokens; groups must be disjoint and cover
/// all positions (empty groups are fine).
#[derive(Debug, Clone)]
pub struct TokenGrouping {
    pub groups: Vec<(String, Vec<usize>)>,
}

impl TokenGrouping {
    pub fn validate(&self, n_text: usize) -> Result<()> {
        let mut seen = vec![false; n_text];
        for (name, idxs) in &self.groups {
            for &i in idxs {
                if i >= n_text {
                    return Err(Error::Analysis(format!(
                        "group `{name}` references token {i} beyond {n_text}"
                    )));
                }
                if seen[i] {
                    return Err(Error::Analysis(format!(
                        "token {i} appears in more than one group"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(gap) = seen.iter().position(|&s| !s) {
            return Err(Error::Analysis(format!("token {gap} not covered by any group")));
        }
        Ok(())
    }

    /// The four-way grouping used by the attention-shift study: the target
    /// attribute's token, tokens of related attributes, non-content tokens
    /// (filler and null padding), and everything else.
    pub fn for_prompt(prompt: &ToyPrompt, target: AttrKind, related: &[AttrKind]) -> Self {
        let mut target_idx = Vec::new();
        let mut related_idx = Vec::new();
        let mut noncontent = Vec::new();
        let mut other = Vec::new();
        for (i, clause) in prompt.clauses().iter().enumerate() {
            if clause.kind() == target {
                target_idx.push(i);
            } else if related.contains(&clause.kind()) {
                related_idx.push(i);
            } else if clause.kind() == AttrKind::Filler {
                noncontent.push(i);
            } else {
                other.push(i);
            }
        }
        for i in prompt.len()..N_TEXT {
            noncontent.push(i);
        }
        TokenGrouping {
            groups: vec![
                ("target".into(), target_idx),
                ("related".into(), related_idx),
                ("non_content".into(), noncontent),
                ("other".into(), other),
            ],
        }
    }
}

/// Restricts which trace cells enter the mass averages.
#[derive(Debug, Clone, Copy, Default)]
pub struct MassFilter {
    pub layer: Option<usize>,
    pub step: Option<usize>,
}

/// Share of image→text attention mass landing on each group: the per-cell
/// ratio (group mass / total text mass), averaged over heads, layers, and
/// steps unless filtered.
pub fn token_group_mass(
    trace: &AttentionTrace,
    grouping: &TokenGrouping,
    filter: MassFilter,
) -> Result<Vec<(String, f64)>> {
    grouping.validate(trace.n_text)?;
    if let Some(l) = filter.layer {
        if l >= trace.layers {
            return Err(Error::Analysis(format!("layer {l} out of range")));
        }
    }
    if let Some(s) = filter.step {
        if s >= trace.steps {
            return Err(Error::Analysis(format!("step {s} out of range")));
        }
    }
    let mut sums = vec![0.0f64; grouping.groups.len()];
    let mut cells = 0usize;
    for step in 0..trace.steps {
        if filter.step.is_some_and(|s| s != step) {
            continue;
        }
        for layer in 0..trace.layers {
            if filter.layer.is_some_and(|l| l != layer) {
                continue;
            }
            for head in 0..trace.heads {
                let block = trace.block(step, layer, head);
                let mut total = 0.0f64;
                let mut per_group = vec![0.0f64; grouping.groups.len()];
                for qi in 0..trace.n_img {
                    let row = &block[qi * trace.n_text..(qi + 1) * trace.n_text];
                    for (gi, (_, idxs)) in grouping.groups.iter().enumerate() {
                        for &tok in idxs {
                            per_group[gi] += row[tok] as f64;
                        }
                    }
                    total += row.iter().map(|&v| v as f64).sum::<f64>();
                }
                if total > 0.0 {
                    for (s, g) in sums.iter_mut().zip(&per_group) {
                        *s += g / total;
                    }
                    cells += 1;
                }
            }
        }
    }
    if cells == 0 {
        return Err(Error::Analysis("no trace cells matched the filter".into()));
    }
    Ok(grouping
        .groups
        .iter()
        .zip(&sums)
        .map(|((name, _), s)| (name.clone(), s / cells as f64))
        .collect())
}

/// Mean share of text mass per token position, averaged over image
/// queries, heads, layers, and steps.
pub fn per_token_mass(trace: &AttentionTrace) -> Vec<f64> {
    let mut sums = vec![0.0f64; trace.n_text];
    let mut cells = 0usize;
    for step in 0..trace.steps {
        for layer in 0..trace.layers {
            for head in 0..trace.heads {
                let block = trace.block(step, layer, head);
                for qi in 0..trace.n_img {
                    let row = &block[qi * trace.n_text..(qi + 1) * trace.n_text];
                    let total: f64 = row.iter().map(|&v| v as f64).sum();
                    if total > 0.0 {
                        for (s, &v) in sums.iter_mut().zip(row) {
                            *s += v as f64 / total;
                        }
                        cells += 1;
                    }
                }
            }
        }
    }
    sums.iter().map(|s| s / cells as f64).collect()
}

/// Cosine distance (1 − cosine similarity) plus MSE between two images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageDistance {
    pub cosine: f64,
    pub mse: f64,
}

pub fn image_distance(a: &Image, b: &Image) -> Result<ImageDistance> {
    if a.data.len() != b.data.len() {
        return Err(Error::DimensionMismatch {
            op: "image_distance",
            left: vec![a.data.len()],
            right: vec![b.data.len()],
        });
    }
    if a.data == b.data {
        return Ok(ImageDistance {
            cosine: 0.0,
            mse: 0.0,
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    let mut se = 0.0f64;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
        se += (x - y) * (x - y);
    }
    let cosine = if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
    };
    Ok(ImageDistance {
        cosine,
        mse: se / a.data.len() as f64,
    })
}

/// One evaluated prompt of the pooled ablation.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub prompt_id: String,
    pub clause_count: usize,
    pub seed: u64,
    pub cosine_dist: f64,
    pub mse: f64,
}

/// Ablation study output: per-(prompt, seed) distances and the rank
/// correlation between clause count and mean distance, with a one-sided
/// permutation p-value for a negative trend.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub spearman: f64,
    pub p_value: f64,
}

/// For each prompt and seed, sample once with the pooled embedding present
/// and once with it zeroed (same seed), and record the image distance.
/// Refuses untrained models: on an untrained model the comparison would
/// measure initialization noise, not a conditioning pathway.
pub fn pooled_ablation(
    model: &DiT<f32>,
    encoders: &Encoders,
    prompts: &[ToyPrompt],
    seeds: &[u64],
    sample_cfg: &SampleConfig,
    steps_trained: u64,
    perm_seed: u64,
) -> Result<AblationReport> {
    if steps_trained == 0 {
        return Err(Error::Analysis(
            "refusing to ablate an untrained model (0 training steps recorded)".into(),
        ));
    }
    if prompts.is_empty() || seeds.is_empty() {
        return Err(Error::Analysis("ablation needs prompts and seeds".into()));
    }
    let with = ModelView::new(model, encoders);
    let without = ModelView::new(model, encoders).with_zero_pooled();
    let mut rows = Vec::with_capacity(prompts.len() * seeds.len());
    let mut counts = Vec::with_capacity(prompts.len());
    let mut means = Vec::with_capacity(prompts.len());
    for (pi, prompt) in prompts.iter().enumerate() {
        let mut acc = 0.0;
        for &seed in seeds {
            let cfg = SampleConfig {
                seed,
                ..sample_cfg.clone()
            };
            let (img_with, _) = sample(&with, prompt, None, &cfg, TraceOptions::default())?;
            let (img_without, _) = sample(&without, prompt, None, &cfg, TraceOptions::default())?;
            let d = image_distance(&img_with, &img_without)?;
            acc += d.cosine;
            rows.push(AblationRow {
                prompt_id: format!("p{pi:04}"),
                clause_count: prompt.len(),
                seed,
                cosine_dist: d.cosine,
                mse: d.mse,
            });
        }
        counts.push(prompt.len() as f64);
        means.push(acc / seeds.len() as f64);
    }
    let (spearman, p_value) = stats::spearman_negative_p(&counts, &means, 2000, perm_seed);
    // spearman_negative_p permutes xs against ys; correlation itself is
    // symmetric, and the permutation null is the same either way.
    Ok(AblationReport {
        rows,
        spearman,
        p_value,
    })
}

/// Per-layer mean attention mass on one feature token across prompts and
/// sampler steps; prompts lacking the feature clause are skipped and
/// counted.
pub struct LayerProfile {
    pub curve: Vec<f64>,
    pub prompts_used: usize,
    pub prompts_skipped: usize,
}

pub fn layer_attention_profile(
    model: &DiT<f32>,
    encoders: &Encoders,
    prompts: &[ToyPrompt],
    feature: AttrKind,
    sample_cfg: &SampleConfig,
    guidance: Option<&GuidanceSpec>,
) -> Result<LayerProfile> {
    let layers = model.config.n_layers;
    let mut curve = vec![0.0f64; layers];
    let mut used = 0usize;
    let mut skipped = 0usize;
    let view = ModelView::new(model, encoders);
    for prompt in prompts {
        let Some(pos) = prompt
            .clauses()
            .iter()
            .position(|c| c.kind() == feature)
        else {
            skipped += 1;
            continue;
        };
        let spec_storage;
        let spec = match guidance {
            Some(g) => {
                spec_storage = GuidanceSpec {
                    base: prompt.clone(),
                    ..g.clone()
                };
                Some(&spec_storage)
            }
            None => None,
        };
        let (_, trace) = sample(
            &view,
            prompt,
            spec,
            sample_cfg,
            TraceOptions {
                attention: true,
                pre_mod: false,
            },
        )?;
        let at = AttentionTrace::from_sample(&trace, &prompt.canonical(), N_TEXT)?;
        for layer in 0..layers {
            let mut acc = 0.0f64;
            let mut cells = 0usize;
            for step in 0..at.steps {
                for head in 0..at.heads {
                    let block = at.block(step, layer, head);
                    for qi in 0..at.n_img {
                        let row = &block[qi * at.n_text..(qi + 1) * at.n_text];
                        let total: f64 = row.iter().map(|&v| v as f64).sum();
                        if total > 0.0 {
                            acc += row[pos] as f64 / total;
                            cells += 1;
                        }
                    }
                }
            }
            curve[layer] += acc / cells as f64;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Analysis("no prompt contained the feature clause".into()));
    }
    for v in curve.iter_mut() {
        *v /= used as f64;
    }
    Ok(LayerProfile {
        curve,
        prompts_used: used,
        prompts_skipped: skipped,
    })
}

/// Floats in report CSVs are printed with 6 significant digits.
pub fn sig6(x: f64) -> String {
    format!("{:.5e}", x)
}

pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out = String::from("prompt_id,clause_count,seed,cosine_dist,mse\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.prompt_id,
            r.clause_count,
            r.seed,
            sig6(r.cosine_dist),
            sig6(r.mse)
        ));
    }
    out
}

pub fn group_mass_csv(rows: &[(String, String, f64)]) -> String {
    let mut out = String::from("run_id,group,share\n");
    for (run, group, share) in rows {
        out.push_str(&format!("{run},{group},{}\n", sig6(*share)));
    }
    out
}

pub fn layer_profile_csv(profile: &LayerProfile) -> String {
    let mut out = String::from("layer,mean_mass\n");
    for (l, m) in profile.curve.iter().enumerate() {
        out.push_str(&format!("{l},{}\n", sig6(*m)));
    }
    out
}
