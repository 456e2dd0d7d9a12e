//! Cartesian column undersampling masks.
//!
//! A mask samples whole k-space columns (broadcast over rows). Every pattern
//! keeps a centered low-frequency block of `round(cf·W)` columns and spends
//! the remaining `round(W/R) − low` columns on the outer region:
//!
//! * `EquispacedFixed`: evenly spread over the non-center columns from offset 0,
//! * `EquispacedRandomOffset`: the same grid shifted by a seeded random offset,
//! * `RandomUniform`: drawn uniformly without replacement.
//!
//! Equispaced positions are `floor(offset + i·s)` with the real spacing
//! `s = (W − low) / outer`, so the sampled count is exact and consecutive
//! gaps are `⌊s⌋` or `⌈s⌉`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::kspace::ComplexGrid;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskPattern {
    #[serde(rename = "equispaced-fixed")]
    EquispacedFixed,
    #[serde(rename = "equispaced-varying")]
    EquispacedRandomOffset,
    #[serde(rename = "random")]
    RandomUniform,
}

impl MaskPattern {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskPattern::EquispacedFixed => "equispaced-fixed",
            MaskPattern::EquispacedRandomOffset => "equispaced-varying",
            MaskPattern::RandomUniform => "random",
        }
    }
}

impl std::str::FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equispaced-fixed" | "fixed" => Ok(MaskPattern::EquispacedFixed),
            "equispaced-varying" | "varying" => Ok(MaskPattern::EquispacedRandomOffset),
            "random" => Ok(MaskPattern::RandomUniform),
            other => Err(Error::MaskSpec(format!("unknown pattern `{other}`"))),
        }
    }
}

impl std::fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parametric description of a mask; realized by [`gen_mask`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub width: usize,
    #[serde(rename = "R")]
    pub acceleration: u32,
    #[serde(rename = "cf")]
    pub center_fraction: f64,
    pub pattern: MaskPattern,
    pub seed: u64,
}

/// Pattern, acceleration and center fraction without width or seed; the
/// per-sample part of a mask is filled in by [`MaskTemplate::spec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskTemplate {
    pub pattern: MaskPattern,
    #[serde(rename = "R")]
    pub acceleration: u32,
    #[serde(rename = "cf")]
    pub center_fraction: f64,
}

impl MaskTemplate {
    pub fn new(pattern: MaskPattern, acceleration: u32, center_fraction: f64) -> Self {
        Self {
            pattern,
            acceleration,
            center_fraction,
        }
    }

    /// Standard center fraction for an acceleration: 8% at R=4,
    /// 4% at R=8.
    pub fn standard(pattern: MaskPattern, acceleration: u32) -> Self {
        let cf = if acceleration >= 8 { 0.04 } else { 0.08 };
        Self::new(pattern, acceleration, cf)
    }

    pub fn spec(&self, width: usize, seed: u64) -> MaskSpec {
        MaskSpec::new(width, self.acceleration, self.center_fraction, self.pattern, seed)
    }
}

/// Sizes derived from a spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskBudget {
    pub low: usize,
    pub total: usize,
    pub outer: usize,
    /// Real-valued spacing of equispaced outer lines.
    pub spacing: f64,
}

impl MaskSpec {
    pub fn new(width: usize, acceleration: u32, center_fraction: f64, pattern: MaskPattern, seed: u64) -> Self {
        Self {
            width,
            acceleration,
            center_fraction,
            pattern,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn budget(&self) -> Result<MaskBudget> {
        let w = self.width;
        if self.acceleration < 2 {
            return Err(Error::MaskSpec(format!("acceleration must be >= 2, got {}", self.acceleration)));
        }
        if !(self.center_fraction > 0.0 && self.center_fraction < 1.0) {
            return Err(Error::MaskSpec(format!(
                "center fraction must be in (0, 1), got {}",
                self.center_fraction
            )));
        }
        let low = (self.center_fraction * w as f64).round() as usize;
        if low < 1 {
            return Err(Error::MaskSpec(format!("center block is empty for width {w}")));
        }
        if low > w / self.acceleration as usize {
            return Err(Error::MaskSpec(format!(
                "center block of {low} columns exceeds the budget of {} for R={}",
                w / self.acceleration as usize,
                self.acceleration
            )));
        }
        let total = (w as f64 / self.acceleration as f64).round() as usize;
        if total <= low {
            return Err(Error::MaskSpec("no outer lines left after the center block".into()));
        }
        let outer = total - low;
        let spacing = (w - low) as f64 / outer as f64;
        if spacing < 1.0 {
            return Err(Error::MaskSpec(format!("outer spacing {spacing} < 1")));
        }
        Ok(MaskBudget {
            low,
            total,
            outer,
            spacing,
        })
    }
}

/// Columns `[start, start + low)` of the centered low-frequency block,
/// centered at `⌊W/2⌋` and left-biased for even block sizes.
pub fn center_block(width: usize, low: usize) -> Range<usize> {
    let start = width / 2 - low / 2;
    start..start + low
}

/// Realized column-sampling pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    sampled: Vec<bool>,
    spec: Option<MaskSpec>,
}

/// Realizes a mask. Deterministic given the `MaskSpec`, seed included.
pub fn gen_mask(spec: &MaskSpec) -> Result<Mask> {
    let budget = spec.budget()?;
    let w = spec.width;
    let center = center_block(w, budget.low);
    let outer_cols: Vec<usize> = (0..w).filter(|c| !center.contains(c)).collect();
    let n = outer_cols.len();
    let mut sampled = vec![false; w];
    for c in center {
        sampled[c] = true;
    }

    let mut rng = seed::rng(spec.seed);
    let picks: Vec<usize> = match spec.pattern {
        MaskPattern::EquispacedFixed => equispaced(0.0, budget, n),
        MaskPattern::EquispacedRandomOffset => {
            let offset = rng.random::<f64>() * budget.spacing;
            equispaced(offset, budget, n)
        }
        MaskPattern::RandomUniform => rand::seq::index::sample(&mut rng, n, budget.outer).into_vec(),
    };
    for p in picks {
        sampled[outer_cols[p]] = true;
    }
    Ok(Mask {
        sampled,
        spec: Some(*spec),
    })
}

fn equispaced(offset: f64, budget: MaskBudget, n: usize) -> Vec<usize> {
    (0..budget.outer)
        .map(|i| ((offset + i as f64 * budget.spacing).floor() as usize).min(n - 1))
        .collect()
}

impl Mask {
    /// A mask from an explicit column pattern (not tied to a spec).
    pub fn from_sampled(sampled: Vec<bool>, spec: Option<MaskSpec>) -> Self {
        Self { sampled, spec }
    }

    pub fn width(&self) -> usize {
        self.sampled.len()
    }

    pub fn sampled(&self) -> &[bool] {
        &self.sampled
    }

    pub fn spec(&self) -> Option<&MaskSpec> {
        self.spec.as_ref()
    }

    pub fn is_sampled(&self, col: usize) -> bool {
        self.sampled[col]
    }

    pub fn num_sampled(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }

    pub fn sampled_indices(&self) -> Vec<usize> {
        (0..self.sampled.len()).filter(|&c| self.sampled[c]).collect()
    }

    /// Achieved acceleration `W / #sampled`.
    pub fn acceleration(&self) -> f64 {
        self.width() as f64 / self.num_sampled() as f64
    }

    /// Zeroes every unsampled column.
    pub fn apply(&self, k: &ComplexGrid) -> Result<ComplexGrid> {
        if k.width() != self.width() {
            return Err(Error::shape(
                "apply_mask",
                format!("mask width {} vs grid width {}", self.width(), k.width()),
            ));
        }
        let mut out = k.clone();
        let w = self.width();
        for (i, c) in out.data_mut().iter_mut().enumerate() {
            if !self.sampled[i % w] {
                *c = num_complex::Complex64::new(0.0, 0.0);
            }
        }
        Ok(out)
    }

    /// 1×1×H×W tensor whose column `c` is 1.0 where sampled, else 0.0.
    pub fn to_channel<T: Real>(&self, height: usize) -> Tensor<T> {
        let row: Vec<T> = self
            .sampled
            .iter()
            .map(|&s| if s { T::ONE } else { T::ZERO })
            .collect();
        let data = std::iter::repeat_n(row, height).flatten().collect();
        Tensor::new(vec![1, 1, height, self.width()], data).expect("shape matches by construction")
    }

    pub fn to_json(&self) -> MaskJson {
        MaskJson {
            width: self.width(),
            sampled_indices: self.sampled_indices(),
            spec: self.spec.map(|s| MaskJsonSpec {
                pattern: s.pattern,
                acceleration: s.acceleration,
                center_fraction: s.center_fraction,
                seed: s.seed,
            }),
        }
    }

    /// Parses the JSON form. When a spec is present the mask is regenerated
    /// and must match the stored indices bit-exactly.
    pub fn from_json(json: &MaskJson) -> Result<Self> {
        let mut sampled = vec![false; json.width];
        for &i in &json.sampled_indices {
            if i >= json.width {
                return Err(Error::MaskSpec(format!("index {i} outside width {}", json.width)));
            }
            sampled[i] = true;
        }
        let spec = json.spec.map(|s| MaskSpec {
            width: json.width,
            acceleration: s.acceleration,
            center_fraction: s.center_fraction,
            pattern: s.pattern,
            seed: s.seed,
        });
        if let Some(spec) = &spec {
            let regenerated = gen_mask(spec)?;
            if regenerated.sampled != sampled {
                return Err(Error::MaskSpec(
                    "stored indices do not match regeneration from spec".into(),
                ));
            }
        }
        Ok(Self { sampled, spec })
    }
}

/// Free-function form of [`Mask::apply`].
pub fn apply_mask(k: &ComplexGrid, mask: &Mask) -> Result<ComplexGrid> {
    mask.apply(k)
}

/// Free-function form of [`Mask::to_channel`].
pub fn mask_to_channel<T: Real>(mask: &Mask, height: usize) -> Tensor<T> {
    mask.to_channel(height)
}

/// On-disk mask: `{"width", "sampled_indices", "spec": {pattern, R, cf, seed}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskJson {
    pub width: usize,
    pub sampled_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<MaskJsonSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskJsonSpec {
    pub pattern: MaskPattern,
    #[serde(rename = "R")]
    pub acceleration: u32,
    #[serde(rename = "cf")]
    pub center_fraction: f64,
    pub seed: u64,
}
