//! Run configuration: one strict JSON document per run.
//!
//! Unknown keys are rejected everywhere, and every command writes its
//! fully-resolved configuration beside its outputs, so a run can be
//! reproduced from its artifacts alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{GuidanceSchedule, GuidanceSpec};
use crate::model::ModelConfig;
use crate::world::ToyPrompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub seed: u64,
    pub size: usize,
    pub val_size: usize,
    pub encoder_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 7,
            size: 10_000,
            val_size: 512,
            encoder_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub cond_dropout: f64,
    pub pooled_dropout: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: 5000,
            batch: 8,
            lr: 1e-3,
            cond_dropout: 0.1,
            pooled_dropout: 0.5,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub steps: usize,
    pub cfg_scale: f64,
    pub seed: u64,
    /// Number of images per run when prompts are generated.
    pub count: usize,
    /// Canonical clause strings; when empty, prompts are derived from
    /// seeded scenes.
    pub prompts: Vec<String>,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            steps: 20,
            cfg_scale: 3.0,
            seed: 0,
            count: 16,
            prompts: Vec::new(),
        }
    }
}

/// GuidanceSpec as serialized in configs: the base prompt is the
/// generation prompt of each run, so only direction and schedule live here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSection {
    pub positive: String,
    pub negative: String,
    pub schedule: GuidanceSchedule,
}

impl GuidanceSection {
    /// Builds the spec for one generation prompt. A direction of the form
    /// `from_prompt:<kind>` is adapted per prompt: the positive prompt
    /// becomes that attribute's clause from the base prompt (counting uses
    /// `from_prompt:count`, so the requested object count itself is the
    /// positive direction).
    pub fn to_spec(&self, base: &ToyPrompt) -> Result<GuidanceSpec> {
        GuidanceSpec::new(
            base.clone(),
            resolve_direction(&self.positive, base)?,
            resolve_direction(&self.negative, base)?,
            self.schedule.clone(),
        )
    }
}

fn resolve_direction(text: &str, base: &ToyPrompt) -> Result<ToyPrompt> {
    match text.strip_prefix("from_prompt:") {
        None => ToyPrompt::parse(text),
        Some(kind_name) => {
            let kind = crate::world::AttrKind::ALL
                .iter()
                .copied()
                .find(|k| k.key() == kind_name.trim())
                .ok_or_else(|| Error::Config(format!("unknown attribute kind `{kind_name}`")))?;
            let clause = base.get(kind).ok_or_else(|| {
                Error::Config(format!(
                    "prompt `{}` has no {kind_name} clause to build the direction from",
                    base.canonical()
                ))
            })?;
            Ok(ToyPrompt::new(vec![clause]))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrofitSection {
    pub iterations: usize,
    pub lr: f64,
    pub adapter_width: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for RetrofitSection {
    fn default() -> Self {
        RetrofitSection {
            iterations: 1000,
            lr: 1e-3,
            adapter_width: 64,
            batch: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Number of prompts in ablation / attention studies.
    pub prompts: usize,
    /// Seeds per prompt for the ablation distances.
    pub seeds_per_prompt: usize,
    /// Attribute kind whose token is the target of attention analyses.
    pub target: String,
    pub perm_seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            prompts: 200,
            seeds_per_prompt: 1,
            target: "count".into(),
            perm_seed: 99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    W,
    I,
    Cfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    /// Prompt-panel size per grid value.
    pub panel: usize,
    /// Scale used when the axis is not w (the step/cfg sweeps).
    pub base_w: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: SweepAxis::W,
            grid: vec![0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0],
            panel: 24,
            base_w: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// Model checkpoint consumed by generate/sweep/ablate/attn, and by
    /// retrofit as the frozen base.
    pub checkpoint: Option<PathBuf>,
    /// Adapter checkpoint for sampling through a retrofitted path.
    pub adapter: Option<PathBuf>,
    pub force: bool,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            out_dir: PathBuf::from("out"),
            checkpoint: None,
            adapter: None,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub guidance: Option<GuidanceSection>,
    pub retrofit: RetrofitSection,
    pub analysis: AnalysisSection,
    pub sweep: SweepSection,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        if let Some(g) = &cfg.guidance {
            g.schedule.validate()?;
            for direction in [&g.positive, &g.negative] {
                if !direction.starts_with("from_prompt:") {
                    ToyPrompt::parse(direction)?;
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    /// Point every seed at one value (the CLI `--seed` override).
    pub fn override_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.train.seed = seed;
        self.sample.seed = seed;
        self.retrofit.seed = seed;
        self.analysis.perm_seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_object() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.model.d_model, 64);
        assert_eq!(cfg.data.size, 10_000);
        assert_eq!(cfg.train.steps, 5000);
        assert_eq!(cfg.sample.cfg_scale, 3.0);
        assert!(cfg.guidance.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_name() {
        let err = RunConfig::from_json(r#"{"modle": {}}"#).unwrap_err().to_string();
        assert!(err.contains("modle"), "{err}");
        let err = RunConfig::from_json(r#"{"train": {"steps": 10, "lr_rate": 0.1}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("lr_rate"), "{err}");
    }

    #[test]
    fn guidance_section_round_trips_and_validates() {
        let text = r#"{
            "guidance": {
                "positive": "detail=textured",
                "negative": "detail=plain",
                "schedule": {"shape": {"step": {"i": 5, "w": 3.0}}}
            }
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let g = cfg.guidance.unwrap();
        assert_eq!(g.schedule.reference_layers, 57);
        let spec = g.to_spec(&ToyPrompt::parse("count=2").unwrap()).unwrap();
        assert_eq!(spec.positive.canonical(), "detail=textured");

        let bad = r#"{
            "guidance": {
                "positive": "flavor=sweet",
                "negative": "detail=plain",
                "schedule": {"shape": {"constant": {"w": 1.0}}}
            }
        }"#;
        assert!(RunConfig::from_json(bad).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.override_seed(42);
        let text = cfg.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.seed, 42);
    }

    #[test]
    fn from_prompt_directions_resolve_per_prompt() {
        let section = GuidanceSection {
            positive: "from_prompt:count".into(),
            negative: "detail=plain".into(),
            schedule: crate::guidance::GuidanceSchedule::strategy(1).unwrap(),
        };
        let base = ToyPrompt::parse("count=4, color=red").unwrap();
        let spec = section.to_spec(&base).unwrap();
        assert_eq!(spec.positive.canonical(), "count=4");
        let missing = ToyPrompt::parse("color=red").unwrap();
        assert!(section.to_spec(&missing).is_err());
    }

    #[test]
    fn invalid_model_section_is_rejected() {
        let err = RunConfig::from_json(r#"{"model": {"d_model": 30, "heads": 4}}"#);
        assert!(err.is_err());
    }
}
