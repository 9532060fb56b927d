//! Experiment commands behind the CLI: train, generate, sweep, retrofit,
//! ablate, attn. Every command is a pure function of (config, checkpoints,
//! seed): images, checkpoints, reports, and the resolved config are
//! byte-identical across reruns. The metrics log additionally carries a
//! wall-clock column and is the one artifact excluded from that guarantee.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analysis::{
    ablation_csv, group_mass_csv, layer_attention_profile, layer_profile_csv, pooled_ablation,
    sig6, token_group_mass, AttentionTrace, MassFilter, TokenGrouping,
};
use crate::analysis::stats::paired_increase_p;
use crate::config::{RunConfig, SweepAxis};
use crate::error::{Error, Result};
use crate::guidance::{GuidanceSchedule, GuidanceSpec, ScheduleShape};
use crate::model::{
    sample, train, Checkpoint, CheckpointMeta, DiT, ModelView, SampleConfig, TraceOptions,
    TrainConfig,
};
use crate::retrofit::{retrofit_train, PooledAdapter, RetrofitConfig};
use crate::rng::{StreamKind, StreamRng};
use crate::world::{
    detect_scene, sample_dataset, AttrKind, Clause, Detection, Encoders,
    ToyPrompt, N_TEXT,
};

/// Create the output directory, refusing to overwrite an existing one
/// unless forced.
fn prepare_out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.io.out_dir.clone();
    if dir.exists() && !config.io.force {
        return Err(Error::Config(format!(
            "output directory {} exists; pass --force to reuse it",
            dir.display()
        )));
    }
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn write_resolved_config(config: &RunConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join("resolved_config.json"), &config.to_json())
}

/// Append-only metrics log: (step, metric, value, wall-clock ms since run
/// start). Steps are non-decreasing per metric by construction.
struct MetricsLog {
    rows: Vec<(u64, String, f64, u128)>,
    start: Instant,
}

impl MetricsLog {
    fn new() -> Self {
        MetricsLog {
            rows: Vec::new(),
            start: Instant::now(),
        }
    }

    fn push(&mut self, step: u64, metric: &str, value: f64) {
        self.rows
            .push((step, metric.to_string(), value, self.start.elapsed().as_millis()));
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,metric,value,wall_clock_ms\n");
        for (step, metric, value, ms) in &self.rows {
            out.push_str(&format!("{step},{metric},{},{ms}\n", sig6(*value)));
        }
        write_text(path, &out)
    }
}

fn encoders_for(d_pool: usize, d_token: usize, seed: u64) -> Result<Encoders> {
    Encoders::new(seed, d_pool, d_token)
}

fn load_model(config: &RunConfig) -> Result<(DiT<f32>, CheckpointMeta, Checkpoint)> {
    let path = config
        .io
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("io.checkpoint is required for this command".into()))?;
    let ckpt = Checkpoint::read_file(path)?;
    let (model, meta) = DiT::from_checkpoint(&ckpt)?;
    if meta.config != config.model {
        return Err(Error::Checkpoint(format!(
            "checkpoint model configuration does not match the config's model section \
             (checkpoint: {:?})",
            meta.config
        )));
    }
    Ok((model, meta, ckpt))
}

/// Fixed prompt panel derived from seeded scenes (faithful descriptions,
/// no filler).
fn prompt_panel(seed: u64, n: usize) -> Result<Vec<ToyPrompt>> {
    let d = sample_dataset(seed, n, seed)?;
    Ok(d.items.iter().map(|it| it.scene.describe()).collect())
}

fn parse_attr_kind(name: &str) -> Result<AttrKind> {
    AttrKind::ALL
        .iter()
        .copied()
        .find(|k| k.key() == name)
        .ok_or_else(|| Error::Config(format!("unknown attribute kind `{name}`")))
}

fn expectation(prompt: &ToyPrompt) -> (Option<u8>, Option<crate::world::ColorName>) {
    let count = match prompt.get(AttrKind::Count) {
        Some(Clause::Count(n)) => Some(n),
        _ => None,
    };
    let color = match prompt.get(AttrKind::Color) {
        Some(Clause::Color(c)) => Some(c),
        _ => None,
    };
    (count, color)
}

struct OracleRow {
    image: String,
    prompt: ToyPrompt,
    detection: Detection,
}

/// Detection verdicts plus per-attribute match flags and a final
/// match-rate summary row.
fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = String::from(
        "image,prompt,verdict,det_count,det_color,det_cells,det_textured,count_match,color_match\n",
    );
    let mut count_hits = 0usize;
    let mut count_total = 0usize;
    let mut color_hits = 0usize;
    let mut color_total = 0usize;
    for row in rows {
        let (want_count, want_color) = expectation(&row.prompt);
        let prompt = row.prompt.canonical().replace(", ", ";");
        match &row.detection {
            Detection::Reject { reason } => {
                if want_count.is_some() {
                    count_total += 1;
                }
                if want_color.is_some() {
                    color_total += 1;
                }
                out.push_str(&format!(
                    "{},{},reject:{},,,,,0,0\n",
                    row.image,
                    prompt,
                    reason.replace(',', ";")
                ));
            }
            Detection::Scene(d) => {
                let cells: Vec<String> =
                    d.cells.iter().map(|(r, c)| format!("r{r}c{c}")).collect();
                let count_match = match want_count {
                    Some(n) => {
                        count_total += 1;
                        let hit = d.count == n;
                        count_hits += hit as usize;
                        hit as u8
                    }
                    None => 0,
                };
                let color_match = match want_color {
                    Some(c) => {
                        color_total += 1;
                        let hit = d.color == c;
                        color_hits += hit as usize;
                        hit as u8
                    }
                    None => 0,
                };
                out.push_str(&format!(
                    "{},{},ok,{},{},{},{},{},{}\n",
                    row.image,
                    prompt,
                    d.count,
                    d.color.name(),
                    cells.join("|"),
                    d.textured as u8,
                    count_match,
                    color_match
                ));
            }
        }
    }
    let rate = |hits: usize, total: usize| {
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    };
    out.push_str(&format!(
        "match_rate,,summary,,,,,{},{}\n",
        sig6(rate(count_hits, count_total)),
        sig6(rate(color_hits, color_total))
    ));
    out
}

/// Train the toy model: datasets are generated and exported per split, the
/// loss curve and metrics are logged, and the checkpoint written.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let dir = prepare_out_dir(config)?;
    write_resolved_config(config, &dir)?;
    let mut metrics = MetricsLog::new();

    let train_set = sample_dataset(config.data.seed, config.data.size, config.data.encoder_seed)?;
    let val_set = sample_dataset(
        config.data.seed.wrapping_add(1),
        config.data.val_size,
        config.data.encoder_seed,
    )?;
    train_set.write_file(&dir.join("train.bin"))?;
    val_set.write_file(&dir.join("val.bin"))?;

    let encoders = encoders_for(
        config.model.d_pool,
        config.model.d_token,
        config.data.encoder_seed,
    )?;
    let model = DiT::new(config.model.clone(), config.train.seed)?;
    let tc = TrainConfig {
        steps: config.train.steps,
        batch: config.train.batch,
        lr: config.train.lr,
        cond_dropout: config.train.cond_dropout,
        pooled_dropout: config.train.pooled_dropout,
        seed: config.train.seed,
    };
    let mut curve = String::from("step,loss\n");
    let outcome = train(&model, &train_set, &encoders, &tc, |step, loss| {
        curve.push_str(&format!("{step},{}\n", sig6(loss)));
        if step % 100 == 0 {
            metrics.push(step as u64, "train_loss", loss);
        }
    })?;
    write_text(&dir.join("loss_curve.csv"), &curve)?;
    metrics.push(config.train.steps as u64, "final_loss", outcome.final_loss);

    let meta = CheckpointMeta {
        config: config.model.clone(),
        steps_trained: config.train.steps as u64,
        init_seed: config.train.seed,
        encoder_seed: config.data.encoder_seed,
    };
    model.save(&dir.join("checkpoint.ckpt"), &meta)?;
    metrics.write(&dir.join("metrics.csv"))?;
    Ok(())
}

fn sample_prompts(config: &RunConfig) -> Result<Vec<ToyPrompt>> {
    if config.sample.prompts.is_empty() {
        prompt_panel(config.sample.seed, config.sample.count)
    } else {
        config
            .sample
            .prompts
            .iter()
            .map(|s| ToyPrompt::parse(s))
            .collect()
    }
}

/// Generate images for a prompt panel (optionally guided, optionally
/// through a retrofitted pooled path) and grade them with the oracle.
pub fn cmd_generate(config: &RunConfig) -> Result<()> {
    let dir = prepare_out_dir(config)?;
    write_resolved_config(config, &dir)?;
    let (model, meta, ckpt) = load_model(config)?;
    let encoders = encoders_for(meta.config.d_pool, meta.config.d_token, meta.encoder_seed)?;

    let adapter_storage;
    let mut view = ModelView::new(&model, &encoders);
    if let Some(adapter_path) = &config.io.adapter {
        let adapter_ckpt = Checkpoint::read_file(adapter_path)?;
        adapter_storage = PooledAdapter::from_checkpoint(&adapter_ckpt, &ckpt.content_hash())?;
        view = view.with_adapter(&adapter_storage);
    }

    let prompts = sample_prompts(config)?;
    let mut rows = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let spec = match &config.guidance {
            Some(g) => Some(g.to_spec(prompt)?),
            None => None,
        };
        let sc = SampleConfig {
            steps: config.sample.steps,
            cfg_scale: config.sample.cfg_scale,
            seed: config.sample.seed.wrapping_add(i as u64),
        };
        let (image, _) = sample(&view, prompt, spec.as_ref(), &sc, TraceOptions::default())?;
        let name = format!("img_{i:04}.ppm");
        std::fs::write(dir.join(&name), image.to_ppm_bytes())?;
        rows.push(OracleRow {
            image: name,
            prompt: prompt.clone(),
            detection: detect_scene(&image)?,
        });
    }
    write_text(&dir.join("oracle.csv"), &oracle_csv(&rows))?;
    Ok(())
}

struct PanelScore {
    fidelity: f64,
    quality: f64,
    count_match: f64,
    color_match: f64,
    rejects: usize,
}

/// Sample a panel under one setting and score it: fidelity is the oracle
/// attribute match rate (count and color both right), quality is the mean
/// high-frequency detail energy.
fn score_panel(
    view: &ModelView,
    prompts: &[ToyPrompt],
    guidance: impl Fn(&ToyPrompt) -> Result<Option<GuidanceSpec>>,
    sc_base: &SampleConfig,
) -> Result<PanelScore> {
    let mut both = 0usize;
    let mut count_hits = 0usize;
    let mut color_hits = 0usize;
    let mut rejects = 0usize;
    let mut energy = 0.0f64;
    for (i, prompt) in prompts.iter().enumerate() {
        let sc = SampleConfig {
            seed: sc_base.seed.wrapping_add(i as u64),
            ..sc_base.clone()
        };
        let spec = guidance(prompt)?;
        let (image, _) = sample(view, prompt, spec.as_ref(), &sc, TraceOptions::default())?;
        energy += image.high_frequency_energy() as f64;
        let (want_count, want_color) = expectation(prompt);
        match detect_scene(&image)? {
            Detection::Reject { .. } => rejects += 1,
            Detection::Scene(d) => {
                let ok_count = want_count.is_some_and(|n| d.count == n);
                let ok_color = want_color.is_some_and(|c| d.color == c);
                count_hits += ok_count as usize;
                color_hits += ok_color as usize;
                both += (ok_count && ok_color) as usize;
            }
        }
    }
    let n = prompts.len() as f64;
    Ok(PanelScore {
        fidelity: both as f64 / n,
        quality: energy / n,
        count_match: count_hits as f64 / n,
        color_match: color_hits as f64 / n,
        rejects,
    })
}

fn detail_direction() -> (ToyPrompt, ToyPrompt) {
    (
        ToyPrompt::new(vec![Clause::Detail(crate::world::DetailKind::Textured)]),
        ToyPrompt::new(vec![Clause::Detail(crate::world::DetailKind::Plain)]),
    )
}

/// Sweep one axis (w, i, or cfg) over a fixed prompt panel and emit the
/// fidelity/quality trade-off curve.
pub fn cmd_sweep(config: &RunConfig) -> Result<()> {
    if config.sweep.grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let dir = prepare_out_dir(config)?;
    write_resolved_config(config, &dir)?;
    let (model, meta, _) = load_model(config)?;
    let encoders = encoders_for(meta.config.d_pool, meta.config.d_token, meta.encoder_seed)?;
    let view = ModelView::new(&model, &encoders);
    let prompts = prompt_panel(config.sample.seed, config.sweep.panel)?;

    let (positive, negative) = match &config.guidance {
        Some(g) => (ToyPrompt::parse(&g.positive)?, ToyPrompt::parse(&g.negative)?),
        None => detail_direction(),
    };

    let mut out = String::from(
        "axis,value,schedule,fidelity,quality,count_match,color_match,rejects\n",
    );
    let sc = SampleConfig {
        steps: config.sample.steps,
        cfg_scale: config.sample.cfg_scale,
        seed: config.sample.seed,
    };
    let mut emit = |axis: &str, value: f64, schedule: &str, s: &PanelScore| {
        out.push_str(&format!(
            "{axis},{},{schedule},{},{},{},{},{}\n",
            sig6(value),
            sig6(s.fidelity),
            sig6(s.quality),
            sig6(s.count_match),
            sig6(s.color_match),
            s.rejects
        ));
    };

    match config.sweep.axis {
        SweepAxis::W => {
            for &w in &config.sweep.grid {
                let sched = GuidanceSchedule::absolute(ScheduleShape::Constant { w });
                let score = score_panel(
                    &view,
                    &prompts,
                    |p| {
                        Ok(Some(GuidanceSpec::new(
                            p.clone(),
                            positive.clone(),
                            negative.clone(),
                            sched.clone(),
                        )?))
                    },
                    &sc,
                )?;
                emit("w", w, "constant", &score);
            }
        }
        SweepAxis::I => {
            for &i in &config.sweep.grid {
                if i < 0.0 || i.fract() != 0.0 {
                    return Err(Error::Config(format!("step index {i} must be a whole number")));
                }
                let sched = GuidanceSchedule {
                    shape: ScheduleShape::Step {
                        i: i as usize,
                        w: config.sweep.base_w,
                    },
                    index_mode: crate::guidance::IndexMode::Absolute,
                    reference_layers: model.config.n_layers,
                };
                let score = score_panel(
                    &view,
                    &prompts,
                    |p| {
                        Ok(Some(GuidanceSpec::new(
                            p.clone(),
                            positive.clone(),
                            negative.clone(),
                            sched.clone(),
                        )?))
                    },
                    &sc,
                )?;
                emit("i", i, "step", &score);
            }
        }
        SweepAxis::Cfg => {
            let sched = GuidanceSchedule::strategy(1)?;
            for &cfg_scale in &config.sweep.grid {
                let sc_here = SampleConfig {
                    cfg_scale,
                    ..sc.clone()
                };
                let base = score_panel(&view, &prompts, |_| Ok(None), &sc_here)?;
                emit("cfg", cfg_scale, "none", &base);
                let guided = score_panel(
                    &view,
                    &prompts,
                    |p| {
                        Ok(Some(GuidanceSpec::new(
                            p.clone(),
                            positive.clone(),
                            negative.clone(),
                            sched.clone(),
                        )?))
                    },
                    &sc_here,
                )?;
                emit("cfg", cfg_scale, "step", &guided);
            }
        }
    }
    write_text(&dir.join("sweep.csv"), &out)?;
    Ok(())
}

/// Retrofit a pooled path onto a frozen pooled-free base and save the
/// adapter, linked to the base checkpoint's content hash.
pub fn cmd_retrofit(config: &RunConfig) -> Result<()> {
    let dir = prepare_out_dir(config)?;
    write_resolved_config(config, &dir)?;
    let (model, meta, ckpt) = load_model(config)?;
    let encoders = encoders_for(meta.config.d_pool, meta.config.d_token, meta.encoder_seed)?;
    let dataset = sample_dataset(config.data.seed, config.data.size, config.data.encoder_seed)?;
    let rc = RetrofitConfig {
        iterations: config.retrofit.iterations,
        lr: config.retrofit.lr,
        batch: config.retrofit.batch,
        d_adapter: config.retrofit.adapter_width,
        seed: config.retrofit.seed,
    };
    let run = retrofit_train(&model, &dataset, &encoders, &rc)?;

    let mut curve = String::from("step,loss\n");
    for (i, loss) in run.loss_history.iter().enumerate() {
        curve.push_str(&format!("{i},{}\n", sig6(*loss)));
    }
    write_text(&dir.join("retrofit_loss.csv"), &curve)?;
    run.adapter
        .to_checkpoint(&ckpt.content_hash(), config.retrofit.iterations as u64)
        .write_file(&dir.join("adapter.ckpt"))?;
    Ok(())
}

/// Pooled-embedding ablation over prompts of varying clause counts.
pub fn cmd_ablate(config: &RunConfig) -> Result<()> {
    let dir = prepare_out_dir(config)?;
    write_resolved_config(config, &dir)?;
    let (model, meta, _) = load_model(config)?;
    let encoders = encoders_for(meta.config.d_pool, meta.config.d_token, meta.encoder_seed)?;

    // Dataset prompts carry the filler-clause length spread.
    let d = sample_dataset(config.sample.seed, config.analysis.prompts, meta.encoder_seed)?;
    let prompts: Vec<ToyPrompt> = d.items.iter().map(|it| it.prompt.clone()).collect();
    let seeds: Vec<u64> = (0..config.analysis.seeds_per_prompt as u64)
        .map(|s| config.sample.seed.wrapping_add(1000 + s))
        .collect();
    let sc = SampleConfig {
        steps: config.sample.steps,
        cfg_scale: config.sample.cfg_scale,
        seed: config.sample.seed,
    };
    let report = pooled_ablation(
        &model,
        &encoders,
        &prompts,
        &seeds,
        &sc,
        meta.steps_trained,
        config.analysis.perm_seed,
    )?;
    write_text(&dir.join("ablation.csv"), &ablation_csv(&report))?;
    write_text(
        &dir.join("ablation_summary.csv"),
        &format!(
            "spearman,p_value\n{},{}\n",
            sig6(report.spearman),
            sig6(report.p_value)
        ),
    )?;
    Ok(())
}

/// Attention-mass analysis: guided vs unguided token-group shares over a
/// prompt panel, plus the per-layer attention profile of the target token.
pub fn cmd_attn(config: &RunConfig) -> Result<()> {
    let dir = prepare_out_dir(config)?;
    write_resolved_config(config, &dir)?;
    let (model, meta, _) = load_model(config)?;
    let encoders = encoders_for(meta.config.d_pool, meta.config.d_token, meta.encoder_seed)?;
    let view = ModelView::new(&model, &encoders);
    let target = parse_attr_kind(&config.analysis.target)?;

    let prompts = prompt_panel(config.sample.seed, config.analysis.prompts)?;
    let (positive, negative) = match &config.guidance {
        Some(g) => (ToyPrompt::parse(&g.positive)?, ToyPrompt::parse(&g.negative)?),
        None => detail_direction(),
    };
    let schedule = config
        .guidance
        .as_ref()
        .map(|g| g.schedule.clone())
        .unwrap_or(GuidanceSchedule::strategy(1)?);

    let sc = SampleConfig {
        steps: config.sample.steps,
        cfg_scale: config.sample.cfg_scale,
        seed: config.sample.seed,
    };
    let trace_opts = TraceOptions {
        attention: true,
        pre_mod: false,
    };
    let mut rows: Vec<(String, String, f64)> = Vec::new();
    let mut diffs = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let grouping = TokenGrouping::for_prompt(prompt, target, &[AttrKind::Shape]);
        let sc_i = SampleConfig {
            seed: sc.seed.wrapping_add(i as u64),
            ..sc.clone()
        };
        let (_, trace_base) = sample(&view, prompt, None, &sc_i, trace_opts)?;
        let base_trace = AttentionTrace::from_sample(&trace_base, &prompt.canonical(), N_TEXT)?;
        let base_shares = token_group_mass(&base_trace, &grouping, MassFilter::default())?;

        let spec = GuidanceSpec::new(
            prompt.clone(),
            positive.clone(),
            negative.clone(),
            schedule.clone(),
        )?;
        let (_, trace_guided) = sample(&view, prompt, Some(&spec), &sc_i, trace_opts)?;
        let guided_trace =
            AttentionTrace::from_sample(&trace_guided, &prompt.canonical(), N_TEXT)?;
        let guided_shares = token_group_mass(&guided_trace, &grouping, MassFilter::default())?;

        for (name, share) in &base_shares {
            rows.push((format!("p{i:04}_base"), name.clone(), *share));
        }
        for (name, share) in &guided_shares {
            rows.push((format!("p{i:04}_guided"), name.clone(), *share));
        }
        let base_target = base_shares
            .iter()
            .find(|(n, _)| n == "target")
            .map(|(_, s)| *s)
            .unwrap_or(0.0);
        let guided_target = guided_shares
            .iter()
            .find(|(n, _)| n == "target")
            .map(|(_, s)| *s)
            .unwrap_or(0.0);
        diffs.push(guided_target - base_target);
    }
    write_text(&dir.join("group_mass.csv"), &group_mass_csv(&rows))?;

    let (mean_diff, p) = paired_increase_p(&diffs, 2000, config.analysis.perm_seed);
    write_text(
        &dir.join("attn_summary.csv"),
        &format!("mean_target_share_increase,p_value\n{},{}\n", sig6(mean_diff), sig6(p)),
    )?;

    let profile = layer_attention_profile(&model, &encoders, &prompts, target, &sc, None)?;
    write_text(&dir.join("layer_profile.csv"), &layer_profile_csv(&profile))?;
    Ok(())
}

/// Seeded prompt panel whose prompts all request a specific count, for the
/// counting studies (harder counts get more weight).
pub fn counting_panel(seed: u64, n: usize) -> Vec<ToyPrompt> {
    let mut rng = StreamRng::new(seed, StreamKind::Analysis);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        // Counts 3..=5: the regime where counting actually fails.
        let count = 3 + rng.below_usize(3) as u8;
        let color = crate::world::ColorName::ALL[rng.below_usize(6)];
        let kind = crate::world::ShapeKind::ALL[rng.below_usize(2)];
        out.push(ToyPrompt::new(vec![
            Clause::Count(count),
            Clause::Color(color),
            Clause::Shape(kind),
        ]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_csv_has_summary_row() {
        let img = crate::world::Image::black();
        let rows = vec![OracleRow {
            image: "img_0000.ppm".into(),
            prompt: ToyPrompt::parse("count=2, color=red").unwrap(),
            detection: detect_scene(&img).unwrap(),
        }];
        let csv = oracle_csv(&rows);
        assert!(csv.starts_with("image,prompt,verdict"));
        assert!(csv.lines().last().unwrap().starts_with("match_rate"));
    }

    #[test]
    fn panel_prompts_are_deterministic() {
        assert_eq!(prompt_panel(3, 5).unwrap(), prompt_panel(3, 5).unwrap());
        assert_eq!(counting_panel(3, 5), counting_panel(3, 5));
        for p in counting_panel(3, 20) {
            match p.get(AttrKind::Count) {
                Some(Clause::Count(n)) => assert!((3..=5).contains(&n)),
                _ => panic!("counting panel prompt lacks a count"),
            }
        }
    }

    #[test]
    fn attr_kind_parsing() {
        assert_eq!(parse_attr_kind("count").unwrap(), AttrKind::Count);
        assert_eq!(parse_attr_kind("detail").unwrap(), AttrKind::Detail);
        assert!(parse_attr_kind("sharpness").is_err());
    }
}
