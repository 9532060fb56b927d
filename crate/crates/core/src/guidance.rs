//! Guidance in the modulation space.
//!
//! The conditioning vector of the conditional branch is replaced by
//! ŷ = y + w·(y(p₊) − y(p₋)), where the direction is the difference of the
//! conditioning vectors of a positive and a negative prompt, recomputed at
//! every sampler timestep because y depends on t. The scale w is a function
//! of the layer index — a per-layer schedule — rather than of the timestep,
//! and composes with classifier-free guidance, which keeps its own
//! unguided unconditional branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GlobalConditioning;
use crate::tensor::{lit, Scalar, Tensor};
use crate::world::ToyPrompt;

/// How schedule indices map onto a model with `n_layers` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    /// Indices are layer indices of the target model as-is.
    Absolute,
    /// Indices are positions in a reference stack of `reference_layers`
    /// layers and are rescaled by `n_layers / reference_layers`, rounded
    /// to nearest, before comparison. Widths (σ) rescale without rounding.
    Fractional,
}

/// Depth of the reference stack the published schedule indices target.
pub const REFERENCE_LAYERS: usize = 57;

/// Schedule shape and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleShape {
    Constant { w: f64 },
    Step { i: usize, w: f64 },
    Window { i1: usize, i2: usize, w: f64 },
    Bumps { i1: usize, i2: usize, sigma: f64, w: f64 },
    TwoLevel { i1: usize, i2: usize, i3: usize, w1: f64, w2: f64 },
}

/// A per-layer guidance scale function w_l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSchedule {
    pub shape: ScheduleShape,
    #[serde(default = "default_index_mode")]
    pub index_mode: IndexMode,
    #[serde(default = "default_reference_layers")]
    pub reference_layers: usize,
}

fn default_index_mode() -> IndexMode {
    IndexMode::Fractional
}

fn default_reference_layers() -> usize {
    REFERENCE_LAYERS
}

impl GuidanceSchedule {
    pub fn new(shape: ScheduleShape) -> Self {
        GuidanceSchedule {
            shape,
            index_mode: IndexMode::Fractional,
            reference_layers: REFERENCE_LAYERS,
        }
    }

    pub fn absolute(shape: ScheduleShape) -> Self {
        GuidanceSchedule {
            shape,
            index_mode: IndexMode::Absolute,
            reference_layers: REFERENCE_LAYERS,
        }
    }

    /// The published strategies with their stated parameters on the
    /// reference stack: 1 = step(5; 3), 2 = window(13, 30; 3),
    /// 3 = two bumps at 20 and 50 (σ 5; 3), 4 = two-level(13, 30, 45; 3, 1).
    pub fn strategy(n: usize) -> Result<Self> {
        let shape = match n {
            1 => ScheduleShape::Step { i: 5, w: 3.0 },
            2 => ScheduleShape::Window {
                i1: 13,
                i2: 30,
                w: 3.0,
            },
            3 => ScheduleShape::Bumps {
                i1: 20,
                i2: 50,
                sigma: 5.0,
                w: 3.0,
            },
            4 => ScheduleShape::TwoLevel {
                i1: 13,
                i2: 30,
                i3: 45,
                w1: 3.0,
                w2: 1.0,
            },
            _ => return Err(Error::Config(format!("no strategy {n}; valid: 1..=4"))),
        };
        Ok(GuidanceSchedule::new(shape))
    }

    pub fn validate(&self) -> Result<()> {
        if self.reference_layers == 0 {
            return Err(Error::Config("reference_layers must be positive".into()));
        }
        let check_w = |w: f64| {
            if w.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("non-finite guidance scale {w}")))
            }
        };
        let check_idx = |indices: &[usize]| {
            let mut prev = 0usize;
            for &i in indices {
                if i < prev {
                    return Err(Error::Config(format!(
                        "schedule indices must be ordered, got {indices:?}"
                    )));
                }
                if i > self.reference_layers {
                    return Err(Error::Config(format!(
                        "index {i} beyond reference layer count {}",
                        self.reference_layers
                    )));
                }
                prev = i;
            }
            Ok(())
        };
        match &self.shape {
            ScheduleShape::Constant { w } => check_w(*w),
            ScheduleShape::Step { i, w } => {
                check_idx(&[*i])?;
                check_w(*w)
            }
            ScheduleShape::Window { i1, i2, w } => {
                check_idx(&[*i1, *i2])?;
                check_w(*w)
            }
            ScheduleShape::Bumps { i1, i2, sigma, w } => {
                check_idx(&[*i1, *i2])?;
                if !(*sigma > 0.0) {
                    return Err(Error::Config(format!(
                        "bump width sigma = {sigma} must be positive"
                    )));
                }
                check_w(*w)
            }
            ScheduleShape::TwoLevel { i1, i2, i3, w1, w2 } => {
                check_idx(&[*i1, *i2, *i3])?;
                check_w(*w1)?;
                check_w(*w2)
            }
        }
    }

    fn map_index(&self, i: usize, n_layers: usize) -> f64 {
        match self.index_mode {
            IndexMode::Absolute => i as f64,
            IndexMode::Fractional => {
                (i as f64 * n_layers as f64 / self.reference_layers as f64).round()
            }
        }
    }

    fn map_width(&self, sigma: f64, n_layers: usize) -> f64 {
        match self.index_mode {
            IndexMode::Absolute => sigma,
            IndexMode::Fractional => sigma * n_layers as f64 / self.reference_layers as f64,
        }
    }

    /// The scale w_l for layer `layer` of an `n_layers`-deep model.
    pub fn eval(&self, layer: usize, n_layers: usize) -> Result<f64> {
        if layer >= n_layers {
            return Err(Error::Config(format!(
                "layer {layer} out of range for {n_layers} layers"
            )));
        }
        self.validate()?;
        let l = layer as f64;
        let w_l = match &self.shape {
            ScheduleShape::Constant { w } => *w,
            ScheduleShape::Step { i, w } => {
                if l < self.map_index(*i, n_layers) {
                    0.0
                } else {
                    *w
                }
            }
            ScheduleShape::Window { i1, i2, w } => {
                let (a, b) = (self.map_index(*i1, n_layers), self.map_index(*i2, n_layers));
                if a <= l && l < b {
                    *w
                } else {
                    0.0
                }
            }
            ScheduleShape::Bumps { i1, i2, sigma, w } => {
                let s = self.map_width(*sigma, n_layers);
                let g = |c: f64| (-((l - c) * (l - c)) / (2.0 * s * s)).exp();
                let c1 = self.map_index(*i1, n_layers);
                let c2 = self.map_index(*i2, n_layers);
                w * g(c1).max(g(c2))
            }
            ScheduleShape::TwoLevel { i1, i2, i3, w1, w2 } => {
                let a = self.map_index(*i1, n_layers);
                let b = self.map_index(*i2, n_layers);
                let c = self.map_index(*i3, n_layers);
                if a <= l && l < b {
                    *w1
                } else if b <= l && l < c {
                    *w2
                } else {
                    0.0
                }
            }
        };
        debug_assert!(w_l.is_finite());
        Ok(w_l)
    }

    /// All layer scales at once.
    pub fn eval_all(&self, n_layers: usize) -> Result<Vec<f64>> {
        (0..n_layers).map(|l| self.eval(l, n_layers)).collect()
    }

    /// True when every layer's scale is exactly zero.
    pub fn is_zero(&self, n_layers: usize) -> Result<bool> {
        Ok(self.eval_all(n_layers)?.iter().all(|&w| w == 0.0))
    }
}

/// Base/positive/negative prompts plus a per-layer scale schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSpec {
    pub base: ToyPrompt,
    pub positive: ToyPrompt,
    pub negative: ToyPrompt,
    pub schedule: GuidanceSchedule,
}

impl GuidanceSpec {
    pub fn new(
        base: ToyPrompt,
        positive: ToyPrompt,
        negative: ToyPrompt,
        schedule: GuidanceSchedule,
    ) -> Result<Self> {
        schedule.validate()?;
        Ok(GuidanceSpec {
            base,
            positive,
            negative,
            schedule,
        })
    }
}

/// ŷ = y + w·Δ for one layer.
///
/// When w is zero or the direction is exactly zero (p₊ = p₋), the base y is
/// returned unchanged: IEEE addition of ±0.0 can flip the sign of −0.0, so
/// computing `y + 0·Δ` literally would not be bit-identical to y, and the
/// zero-guidance identity is an exact contract.
pub fn guided_conditioning<T: Scalar>(
    y: &GlobalConditioning<T>,
    delta: &Tensor<T>,
    w: f64,
) -> Result<GlobalConditioning<T>> {
    if !w.is_finite() {
        return Err(Error::Numeric(format!("guidance scale {w} is not finite")));
    }
    if w == 0.0 || delta.data().iter().all(|&d| d == T::zero()) {
        return Ok(y.clone());
    }
    let shifted = y.tensor().add(&delta.mul_scalar(lit::<T>(w))?)?;
    Ok(GlobalConditioning::new(shifted, y.prompt_id.clone(), y.t))
}

/// Standard classifier-free guidance combination,
/// v = v_uncond + s·(v_cond − v_uncond), with the boundary cases exact:
/// s = 1 returns the conditional branch and s = 0 the unconditional one.
pub fn cfg_combine<T: Scalar>(
    v_cond: &Tensor<T>,
    v_uncond: &Tensor<T>,
    s_cfg: f64,
) -> Result<Tensor<T>> {
    if !(s_cfg >= 0.0) {
        return Err(Error::Config(format!("cfg scale {s_cfg} must be non-negative")));
    }
    if s_cfg == 1.0 {
        return Ok(v_cond.clone());
    }
    if s_cfg == 0.0 {
        return Ok(v_uncond.clone());
    }
    v_uncond.add(&v_cond.sub(v_uncond)?.mul_scalar(lit::<T>(s_cfg))?)
}

/// Distance in units-in-the-last-place between two f32 values, used by the
/// exactness bounds on Eq. 3 affinity.
pub fn ulp_distance(a: f32, b: f32) -> u64 {
    fn ordered(x: f32) -> i64 {
        let bits = x.to_bits() as i32;
        (if bits < 0 { i32::MIN.wrapping_sub(bits) } else { bits }) as i64
    }
    (ordered(a) - ordered(b)).unsigned_abs()
}
