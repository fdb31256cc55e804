//! The run configuration document: one TOML file with a section per
//! experiment. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::curve::{CurvePlan, DEFAULT_DAY_GRID};
use crate::embed::Hyperparams;
use crate::error::{Error, Result};
use crate::kpi;
use crate::lifecycle::FramePlan;
use crate::sensitivity::{HarnessConfig, DEFAULT_BIN_WIDTH, DEFAULT_NEUTRAL_BAND};
use crate::synthgen::{GenConfig, ToxicPlan};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Where `synth` writes the corpus and the other commands read it.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: "data".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub toxic: bool,
    pub toxic_seed: u64,
    pub toxic_verify_vr: bool,
    pub max_retries: usize,
    pub clicks: usize,
    pub min_rel_gain: f64,
    /// Clone this session `duplicate_copies` times.
    pub duplicate_of: Option<String>,
    pub duplicate_copies: usize,
    /// Search for a session whose clones cannot change any top-k list,
    /// trying up to this many copies.
    pub redundant_search_copies: Option<usize>,
}

impl Default for PlantSection {
    fn default() -> Self {
        let toxic = ToxicPlan::default();
        PlantSection {
            toxic: false,
            toxic_seed: 1,
            toxic_verify_vr: false,
            max_retries: toxic.max_retries,
            clicks: toxic.clicks,
            min_rel_gain: toxic.min_rel_gain,
            duplicate_of: None,
            duplicate_copies: 2,
            redundant_search_copies: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSection {
    pub k: usize,
    pub neutral_band: f64,
    pub bin_width: f64,
    pub revenue_base: Option<f64>,
    pub correction_c: f64,
    /// Explicit sessions to leave out, for either engine.
    pub sample: Option<Vec<String>>,
    /// Random sample size for the vector recommender.
    pub vr_sample_size: Option<usize>,
    pub sample_seed: u64,
    pub max_exhaustive_vr: usize,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            k: kpi::DEFAULT_K,
            neutral_band: DEFAULT_NEUTRAL_BAND,
            bin_width: DEFAULT_BIN_WIDTH,
            revenue_base: None,
            correction_c: kpi::DEFAULT_CORRECTION,
            sample: None,
            vr_sample_size: None,
            sample_seed: 1,
            max_exhaustive_vr: 300,
        }
    }
}

impl HarnessSection {
    pub fn harness(&self, sample: Option<Vec<String>>) -> HarnessConfig {
        HarnessConfig {
            k: self.k,
            neutral_band: self.neutral_band,
            sample,
            revenue_base: self.revenue_base,
            correction_c: self.correction_c,
            max_exhaustive_vr: self.max_exhaustive_vr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifecycleSection {
    pub window_days: u32,
    pub n_frames: u32,
    pub cohort_day: Option<i64>,
    pub k: usize,
    /// Category level for the heterogeneity ratio; the deepest common level
    /// of the catalog when unset.
    pub hr_level: Option<usize>,
}

impl Default for LifecycleSection {
    fn default() -> Self {
        let plan = FramePlan::default();
        LifecycleSection {
            window_days: plan.window_days,
            n_frames: plan.n_frames,
            cohort_day: plan.cohort_day,
            k: kpi::DEFAULT_K,
            hr_level: None,
        }
    }
}

impl LifecycleSection {
    pub fn plan(&self) -> FramePlan {
        FramePlan {
            window_days: self.window_days,
            n_frames: self.n_frames,
            cohort_day: self.cohort_day,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveSection {
    pub end_day: Option<i64>,
    pub day_grid: Vec<u32>,
    pub k: usize,
    pub unit_value: f64,
    pub correction_c: f64,
}

impl Default for CurveSection {
    fn default() -> Self {
        CurveSection {
            end_day: None,
            day_grid: DEFAULT_DAY_GRID.to_vec(),
            k: kpi::DEFAULT_K,
            unit_value: 1.0,
            correction_c: kpi::DEFAULT_CORRECTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: Paths,
    pub synth: Option<GenConfig>,
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default)]
    pub embed: Hyperparams,
    #[serde(default)]
    pub harness: HarnessSection,
    #[serde(default)]
    pub lifecycle: LifecycleSection,
    #[serde(default)]
    pub curve: CurveSection,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.paths.data_dir = base_dir.join(&cfg.paths.data_dir);
        cfg.paths.out_dir = base_dir.join(&cfg.paths.out_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(synth) = &self.synth {
            synth.validate()?;
        }
        self.embed.validate()?;
        self.harness.harness(None).validate()?;
        if self.harness.bin_width.is_nan() || self.harness.bin_width <= 0.0 {
            return Err(Error::Config("harness.bin_width must be positive".into()));
        }
        self.lifecycle.plan().validate()?;
        self.curve_plan(false).validate()?;
        if self.plant.duplicate_of.is_some() && self.plant.duplicate_copies == 0 {
            return Err(Error::Config("plant.duplicate_copies must be at least 1".into()));
        }
        Ok(())
    }

    pub fn toxic_plan(&self) -> ToxicPlan {
        ToxicPlan {
            max_retries: self.plant.max_retries,
            k: self.harness.k,
            clicks: self.plant.clicks,
            min_rel_gain: self.plant.min_rel_gain,
            c: self.harness.correction_c,
            verify_vr: self.plant.toxic_verify_vr.then(|| self.embed.clone()),
        }
    }

    pub fn curve_plan(&self, serial_timing: bool) -> CurvePlan {
        CurvePlan {
            end_day: self.curve.end_day,
            day_grid: self.curve.day_grid.clone(),
            hyper: self.embed.clone(),
            k: self.curve.k,
            correction_c: self.curve.correction_c,
            unit_value: self.curve.unit_value,
            serial_timing,
        }
    }

    pub fn sessions_path(&self) -> PathBuf {
        self.paths.data_dir.join("sessions.jsonl")
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.paths.data_dir.join("catalog.jsonl")
    }

    pub fn eval_path(&self) -> PathBuf {
        self.paths.data_dir.join("eval.jsonl")
    }

    pub fn truth_path(&self) -> PathBuf {
        self.paths.data_dir.join("truth.json")
    }
}
