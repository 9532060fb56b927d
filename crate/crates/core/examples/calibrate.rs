// Calibration driver: trains fixtures (with on-disk caching) and reports
// every acceptance-relevant statistic. Dev tool, not part of the suite.
use modlab_core::analysis::stats::paired_increase_p;
use modlab_core::analysis::{
    pooled_ablation, token_group_mass, AttentionTrace, MassFilter, TokenGrouping,
};
use modlab_core::guidance::{GuidanceSchedule, GuidanceSpec, IndexMode, ScheduleShape};
use modlab_core::model::{
    eval_loss, sample, train, CheckpointMeta, Checkpoint, ConditioningMode, DiT, ModelConfig,
    ModelView, SampleConfig, TraceOptions, TrainConfig,
};
use modlab_core::world::{
    detect_scene, sample_dataset, AttrKind, Clause, ColorName, Dataset, Detection, Encoders,
    ShapeKind, ToyPrompt,
};
use modlab_core::rng::{StreamKind, StreamRng};
use std::time::Instant;

fn cached_train(tag: &str, config: ModelConfig, tc: &TrainConfig, data_seed: u64, size: usize)
    -> (DiT<f32>, Encoders, Dataset, f64, f64) {
    let encoders = Encoders::new(7, config.d_pool, config.d_token).unwrap();
    let dataset = sample_dataset(data_seed, size, 7).unwrap();
    let path = std::path::PathBuf::from(format!("target/calib/{tag}.ckpt"));
    std::fs::create_dir_all("target/calib").unwrap();
    if path.exists() {
        let (m, _) = DiT::load(&path).unwrap();
        println!("[{tag}] loaded cache");
        return (m, encoders, dataset, f64::NAN, f64::NAN);
    }
    let model = DiT::new(config.clone(), tc.seed).unwrap();
    let init_eval = eval_loss(&model, &dataset, &encoders, 1234, 128).unwrap();
    let t0 = Instant::now();
    let out = train(&model, &dataset, &encoders, tc, |s, l| {
        if s % 250 == 0 { println!("[{tag}] step {s} loss {l:.4} ({:.0}s)", t0.elapsed().as_secs_f64()); }
    }).unwrap();
    let final_eval = eval_loss(&model, &dataset, &encoders, 1234, 128).unwrap();
    println!("[{tag}] init_eval {init_eval:.4} final_eval {final_eval:.4} hist0 {:.4} histend {:.4}",
        out.initial_loss, out.final_loss);
    let meta = CheckpointMeta { config, steps_trained: tc.steps as u64, init_seed: tc.seed, encoder_seed: 7 };
    model.save(&path, &meta).unwrap();
    (model, encoders, dataset, init_eval, final_eval)
}

fn eval_rates(view: &ModelView, prompts: &[ToyPrompt], guidance: Option<(&ToyPrompt, Option<AttrKind>, &GuidanceSchedule)>, sc: &SampleConfig)
    -> (f64, f64, usize, Vec<bool>) {
    let mut count_hits = 0; let mut color_hits = 0; let mut rejects = 0;
    let mut count_flags = Vec::new();
    for (i, p) in prompts.iter().enumerate() {
        let spec = guidance.map(|(neg, from_kind, sched)| {
            let pos = match from_kind {
                Some(kind) => ToyPrompt::new(vec![p.get(kind).unwrap()]),
                None => neg.clone(), // unused branch
            };
            GuidanceSpec::new(p.clone(), pos, neg.clone(), sched.clone()).unwrap()
        });
        let sc_i = SampleConfig { seed: sc.seed.wrapping_add(i as u64), ..sc.clone() };
        let (img, _) = sample(view, p, spec.as_ref(), &sc_i, TraceOptions::default()).unwrap();
        let det = detect_scene(&img).unwrap();
        let want_count = match p.get(AttrKind::Count) { Some(Clause::Count(n)) => n, _ => 0 };
        let want_color = match p.get(AttrKind::Color) { Some(Clause::Color(c)) => Some(c), _ => None };
        match det {
            Detection::Reject { .. } => { rejects += 1; count_flags.push(false); }
            Detection::Scene(d) => {
                let ok = d.count == want_count;
                count_hits += ok as usize;
                count_flags.push(ok);
                if let Some(c) = want_color { color_hits += (d.color == c) as usize; }
            }
        }
    }
    (count_hits as f64 / prompts.len() as f64, color_hits as f64 / prompts.len() as f64, rejects, count_flags)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("quick");
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);

    let tc = TrainConfig { steps, ..TrainConfig::default() };
    let tag = format!("default_{steps}");
    let (model, encoders, dataset, _, _) = cached_train(&tag, ModelConfig::default(), &tc, 7, 10_000);
    let _ = dataset;
    let view = ModelView::new(&model, &encoders);

    // Held-out conditional panel (criterion 5 style).
    let held = sample_dataset(1007, 200, 7).unwrap();
    let prompts: Vec<ToyPrompt> = held.items.iter().map(|i| i.scene.describe()).collect();
    let sc = SampleConfig { steps: 20, cfg_scale: 3.0, seed: 500 };
    let t0 = Instant::now();
    let (count_acc, color_acc, rejects, _) = eval_rates(&view, &prompts, None, &sc);
    println!("[eval] count_acc {count_acc:.3} color_acc {color_acc:.3} rejects {rejects} ({:.0}s)", t0.elapsed().as_secs_f64());

    if mode == "quick" { return; }

    // Criterion 6: counting guidance.
    let counting: Vec<ToyPrompt> = modlab_core::commands::counting_panel(901, 200);
    let neg = ToyPrompt::parse("detail=plain").unwrap();
    let sched = GuidanceSchedule::strategy(1).unwrap();
    let sc6 = SampleConfig { steps: 20, cfg_scale: 3.0, seed: 600 };
    let (base_c, _, rej_b, base_flags) = eval_rates(&view, &counting, None, &sc6);
    let (guid_c, _, rej_g, guid_flags) = eval_rates(&view, &counting, Some((&neg, Some(AttrKind::Count), &sched)), &sc6);
    let diffs: Vec<f64> = base_flags.iter().zip(&guid_flags).map(|(b, g)| (*g as i32 - *b as i32) as f64).collect();
    let (mean_d, p) = paired_increase_p(&diffs, 2000, 42);
    println!("[counting] base {base_c:.3} (rej {rej_b}) guided {guid_c:.3} (rej {rej_g}) diff {mean_d:.3} p {p:.4}");

    // Criterion 7: attention shift on counting prompts.
    let attn_prompts: Vec<ToyPrompt> = modlab_core::commands::counting_panel(902, 100);
    let mut diffs7 = Vec::new();
    for (i, p) in attn_prompts.iter().enumerate() {
        let grouping = TokenGrouping::for_prompt(p, AttrKind::Count, &[AttrKind::Shape]);
        let sc_i = SampleConfig { steps: 20, cfg_scale: 3.0, seed: 700 + i as u64 };
        let to = TraceOptions { attention: true, pre_mod: false };
        let (_, tb) = sample(&view, p, None, &sc_i, to).unwrap();
        let bt = AttentionTrace::from_sample(&tb, "b", modlab_core::world::N_TEXT).unwrap();
        let bs = token_group_mass(&bt, &grouping, MassFilter::default()).unwrap();
        let pos = ToyPrompt::new(vec![p.get(AttrKind::Count).unwrap()]);
        let spec = GuidanceSpec::new(p.clone(), pos, neg.clone(), sched.clone()).unwrap();
        let (_, tg) = sample(&view, p, Some(&spec), &sc_i, to).unwrap();
        let gt = AttentionTrace::from_sample(&tg, "g", modlab_core::world::N_TEXT).unwrap();
        let gs = token_group_mass(&gt, &grouping, MassFilter::default()).unwrap();
        let get = |v: &Vec<(String, f64)>| v.iter().find(|(n, _)| n == "target").unwrap().1;
        diffs7.push(get(&gs) - get(&bs));
    }
    let (m7, p7) = paired_increase_p(&diffs7, 2000, 43);
    println!("[attn-shift] mean target share diff {m7:.5} p {p7:.4}");

    // Criterion 8: w sweep with detail guidance.
    let panel = sample_dataset(903, 48, 7).unwrap();
    let sweep_prompts: Vec<ToyPrompt> = panel.items.iter().map(|i| i.scene.describe()).collect();
    let pos8 = ToyPrompt::parse("detail=textured").unwrap();
    let neg8 = ToyPrompt::parse("detail=plain").unwrap();
    let sc8 = SampleConfig { steps: 20, cfg_scale: 3.0, seed: 800 };
    let score = |sched: Option<&GuidanceSchedule>| {
        let mut fid = 0usize; let mut qual = 0.0f64;
        for (i, p) in sweep_prompts.iter().enumerate() {
            let spec = sched.map(|s| GuidanceSpec::new(p.clone(), pos8.clone(), neg8.clone(), s.clone()).unwrap());
            let sc_i = SampleConfig { seed: sc8.seed.wrapping_add(i as u64), ..sc8.clone() };
            let (img, _) = sample(&view, p, spec.as_ref(), &sc_i, TraceOptions::default()).unwrap();
            qual += img.high_frequency_energy() as f64;
            let (wc, wcol) = (match p.get(AttrKind::Count) { Some(Clause::Count(n)) => n, _ => 0 },
                              match p.get(AttrKind::Color) { Some(Clause::Color(c)) => Some(c), _ => None });
            if let Detection::Scene(d) = detect_scene(&img).unwrap() {
                if d.count == wc && Some(d.color) == wcol { fid += 1; }
            }
        }
        (fid as f64 / sweep_prompts.len() as f64, qual / sweep_prompts.len() as f64)
    };
    for w in [0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0] {
        let s = GuidanceSchedule::absolute(ScheduleShape::Constant { w });
        let (f, q) = score(Some(&s));
        println!("[sweep] constant w={w}: fidelity {f:.3} quality {q:.4}");
    }
    for i in [1usize, 2, 3, 4, 5] {
        let s = GuidanceSchedule { shape: ScheduleShape::Step { i, w: 3.0 }, index_mode: IndexMode::Absolute, reference_layers: 8 };
        let (f, q) = score(Some(&s));
        println!("[sweep] step i={i} w=3: fidelity {f:.3} quality {q:.4}");
    }

    // Criterion 10: ablation trend on the dual-path model.
    let abl = sample_dataset(904, 200, 7).unwrap();
    let abl_prompts: Vec<ToyPrompt> = abl.items.iter().map(|i| i.prompt.clone()).collect();
    let lens: Vec<usize> = abl_prompts.iter().map(|p| p.len()).collect();
    println!("[ablate] clause count spread: min {} max {}", lens.iter().min().unwrap(), lens.iter().max().unwrap());
    let sc10 = SampleConfig { steps: 20, cfg_scale: 3.0, seed: 1000 };
    let report = pooled_ablation(&model, &encoders, &abl_prompts, &[1], &sc10, steps as u64, 42).unwrap();
    println!("[ablate] spearman {:.4} p {:.4}", report.spearman, report.p_value);

    // Criterion 9 (on pooled-free base, separate invocation via mode=retrofit).
    if mode == "retrofit" {
        let pf_steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2500);
        let tc_pf = TrainConfig { steps: pf_steps, pooled_dropout: 0.0, ..TrainConfig::default() };
        let cfg_pf = ModelConfig { conditioning: ConditioningMode::PooledFree, ..ModelConfig::default() };
        let (base, enc2, data2, _, _) = cached_train(&format!("pooled_free_{pf_steps}"), cfg_pf, &tc_pf, 7, 10_000);
        let rc = modlab_core::retrofit::RetrofitConfig::default();
        let t0 = Instant::now();
        let run = modlab_core::retrofit::retrofit_train(&base, &data2, &enc2, &rc).unwrap();
        let init = run.loss_history[0];
        let last = *run.loss_history.last().unwrap();
        let tail: f64 = run.loss_history[900..].iter().sum::<f64>() / 100.0;
        let head: f64 = run.loss_history[..100.min(run.loss_history.len())].iter().sum::<f64>() / 100.0;
        println!("[retrofit] init {init:.5} last {last:.5} tail100 {tail:.5} head100 {head:.5} ({:.0}s)", t0.elapsed().as_secs_f64());
        // pooled-only steering
        let counting9: Vec<ToyPrompt> = (0..200).map(|i| {
            let mut rng = StreamRng::new(905 + i, StreamKind::Analysis);
            ToyPrompt::new(vec![
                Clause::Count(1 + rng.below_usize(5) as u8),
                Clause::Color(ColorName::ALL[rng.below_usize(6)]),
                Clause::Shape(ShapeKind::ALL[rng.below_usize(2)]),
            ])
        }).collect();
        let retro_view = ModelView::new(&base, &enc2).with_adapter(&run.adapter).with_null_text();
        let sc9 = SampleConfig { steps: 20, cfg_scale: 3.0, seed: 900 };
        let (c9, col9, rej9, _) = eval_rates(&retro_view, &counting9, None, &sc9);
        println!("[retrofit] pooled-only count acc {c9:.3} color acc {col9:.3} rejects {rej9}");
        let _ = Checkpoint::read_file; // keep import used
    }
}
