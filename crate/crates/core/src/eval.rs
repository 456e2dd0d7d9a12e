//! Distribution-shift scenarios, per-sample evaluation and the end-to-end
//! suite driver.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cs::{cs_reconstruct, CsConfig};
use crate::error::{Error, Result};
use crate::figures::export_panel;
use crate::kspace::{self, Image};
use crate::masks::{gen_mask, Mask, MaskPattern, MaskTemplate};
use crate::metrics::{
    image_metrics, paired_t_test, read_csv, region_metrics, write_csv, MetricsRow, MetricsSummary, TTestResult,
    REGION_FULL,
};
use crate::model::{Checkpoint, ModelKind};
use crate::phantom::{make_dataset, DatasetManifest, DatasetSpec, Family, PhantomSample, Split};
use crate::seed;
use crate::train::{reconstruct, train_model, TrainConfig};

/// The training acceleration every evaluated checkpoint must share.
pub const TRAIN_ACCELERATION: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionMode {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "pathology-boxes")]
    Boxes,
    #[serde(rename = "both")]
    Both,
}

impl RegionMode {
    fn full(self) -> bool {
        matches!(self, RegionMode::Full | RegionMode::Both)
    }

    fn boxes(self) -> bool {
        matches!(self, RegionMode::Boxes | RegionMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub mask: MaskTemplate,
    pub family: Family,
    pub region_mode: RegionMode,
}

impl Scenario {
    pub fn new(pattern: MaskPattern, acceleration: u32, family: Family) -> Self {
        let short = match pattern {
            MaskPattern::EquispacedFixed => "fixed",
            MaskPattern::EquispacedRandomOffset => "varying",
            MaskPattern::RandomUniform => "random",
        };
        Self {
            name: format!("{short}-r{acceleration}-{}", family.as_str().to_ascii_lowercase()),
            mask: MaskTemplate::standard(pattern, acceleration),
            family,
            region_mode: RegionMode::Both,
        }
    }

    /// Mask-shift and acceleration-shift on family A, anatomy shift on B.
    pub fn grid() -> Vec<Scenario> {
        let mut out = Vec::new();
        for pattern in [MaskPattern::EquispacedRandomOffset, MaskPattern::RandomUniform] {
            for r in [4, 8] {
                out.push(Scenario::new(pattern, r, Family::A));
            }
        }
        for r in [4, 8] {
            out.push(Scenario::new(MaskPattern::EquispacedFixed, r, Family::B));
        }
        out
    }

    pub fn by_name(name: &str) -> Result<Scenario> {
        Self::grid()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario `{name}`")))
    }

    /// Test mask for one sample; identical for every reconstructor.
    pub fn mask_for(&self, sample_id: &str, width: usize) -> Result<Mask> {
        let s = seed::hash_strs(&[&self.name, sample_id]);
        gen_mask(&self.mask.spec(width, s))
    }

    fn noise_seed(&self, sample_id: &str) -> u64 {
        seed::hash_strs(&[&self.name, sample_id, "noise"])
    }
}

/// Anything that turns undersampled k-space into an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reconstructor {
    Fixed,
    Baseline,
    Mask,
    ZeroFill,
    Cs,
}

impl Reconstructor {
    pub const ALL: [Reconstructor; 5] = [
        Reconstructor::Fixed,
        Reconstructor::Baseline,
        Reconstructor::Mask,
        Reconstructor::ZeroFill,
        Reconstructor::Cs,
    ];

    pub fn model(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Fixed => Reconstructor::Fixed,
            ModelKind::Baseline => Reconstructor::Baseline,
            ModelKind::Mask => Reconstructor::Mask,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Reconstructor::Fixed => "fixed",
            Reconstructor::Baseline => "baseline",
            Reconstructor::Mask => "mask",
            Reconstructor::ZeroFill => "zero-fill",
            Reconstructor::Cs => "cs",
        }
    }
}

impl std::fmt::Display for Reconstructor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Images produced for one sample under one scenario.
pub struct SampleRecon {
    pub mask: Mask,
    pub images: BTreeMap<Reconstructor, Image>,
}

fn rows_for(scenario: &Scenario, sample: &PhantomSample, xhat: &Image) -> Result<Vec<MetricsRow>> {
    let tag = |region: &str, m| {
        MetricsRow::new(
            &sample.sample_id,
            scenario.mask.pattern.as_str(),
            scenario.mask.acceleration,
            sample.family,
            region,
            m,
        )
    };
    let mut rows = Vec::new();
    if scenario.region_mode.full() {
        rows.push(tag(REGION_FULL, image_metrics(xhat, &sample.image)?));
    }
    if scenario.region_mode.boxes() {
        for b in &sample.pathology_boxes {
            rows.push(tag(&b.label, region_metrics(xhat, &sample.image, b)?));
        }
    }
    Ok(rows)
}

/// Reconstructs one sample with every requested reconstructor.
pub fn reconstruct_sample(
    scenario: &Scenario,
    sample: &PhantomSample,
    checkpoints: &[&Checkpoint],
    references: &[Reconstructor],
    cs: &CsConfig,
    sigma: f64,
) -> Result<SampleRecon> {
    let mask = scenario.mask_for(&sample.sample_id, sample.image.width())?;
    let k_us = kspace::apply_forward_model(&sample.image, &mask, sigma, scenario.noise_seed(&sample.sample_id))?;
    let mut images = BTreeMap::new();
    for ck in checkpoints {
        images.insert(Reconstructor::model(ck.kind()), reconstruct(ck, &k_us, &mask)?);
    }
    for &r in references {
        let img = match r {
            Reconstructor::ZeroFill => kspace::zero_fill_recon(&k_us),
            Reconstructor::Cs => cs_reconstruct(&k_us, &mask, cs)?,
            other => {
                return Err(Error::InvalidArgument(format!("`{other}` is not a reference reconstructor")))
            }
        };
        images.insert(r, img);
    }
    Ok(SampleRecon { mask, images })
}

fn check_checkpoints(checkpoints: &[&Checkpoint], h: usize, w: usize) -> Result<()> {
    let mut seen = Vec::new();
    for ck in checkpoints {
        let kind = ck.kind();
        if seen.contains(&kind) {
            return Err(Error::Incompatible(format!("two {kind} checkpoints given")));
        }
        seen.push(kind);
        if let Some(t) = ck.header.train_mask {
            if t.acceleration != TRAIN_ACCELERATION {
                return Err(Error::Incompatible(format!(
                    "{kind} checkpoint trained at R={}, scenarios assume R={TRAIN_ACCELERATION}",
                    t.acceleration
                )));
            }
        }
        if let Some([ch, cw]) = ck.header.image_size {
            if (ch, cw) != (h, w) {
                return Err(Error::Incompatible(format!(
                    "{kind} checkpoint trained on {ch}×{cw}, test images are {h}×{w}"
                )));
            }
        }
        let m = ck.model.config().spatial_multiple();
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::Incompatible(format!(
                "{kind} checkpoint needs sizes divisible by {m}, got {h}×{w}"
            )));
        }
    }
    Ok(())
}

/// Per-reconstructor metric rows of one scenario.
pub type ScenarioRows = BTreeMap<Reconstructor, Vec<MetricsRow>>;

/// Evaluates checkpoints and references on the scenario's family. Samples
/// run in parallel; row order follows the input order.
pub fn evaluate_rows(
    checkpoints: &[&Checkpoint],
    references: &[Reconstructor],
    samples: &[PhantomSample],
    scenario: &Scenario,
    cs: &CsConfig,
    sigma: f64,
) -> Result<ScenarioRows> {
    let chosen: Vec<&PhantomSample> = samples.iter().filter(|s| s.family == scenario.family).collect();
    let first = chosen.first().ok_or_else(|| {
        Error::InvalidArgument(format!("no family {} test samples for {}", scenario.family, scenario.name))
    })?;
    check_checkpoints(checkpoints, first.image.height(), first.image.width())?;
    let per_sample = chosen
        .par_iter()
        .map(|s| {
            let rec = reconstruct_sample(scenario, s, checkpoints, references, cs, sigma)?;
            rec.images
                .iter()
                .map(|(r, img)| Ok((*r, rows_for(scenario, s, img)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: ScenarioRows = BTreeMap::new();
    for sample_rows in per_sample {
        for (r, rows) in sample_rows {
            out.entry(r).or_default().extend(rows);
        }
    }
    Ok(out)
}

/// One paired comparison between two reconstructors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub seed: Option<u64>,
    pub a: Reconstructor,
    pub b: Reconstructor,
    pub metric: String,
    pub region: String,
    pub result: TTestResult,
}

fn metric_vector(rows: &[MetricsRow], region: &str, metric: &str) -> Vec<(String, f64)> {
    rows.iter()
        .filter(|r| if region == REGION_FULL { r.is_full() } else { !r.is_full() })
        .map(|r| {
            let v = match metric {
                "nmse" => r.nmse,
                "psnr" => r.psnr,
                _ => r.ssim,
            };
            (r.sample_id.clone(), v)
        })
        .collect()
}

/// Paired t-tests of `a` against `b` on every metric, for the full images
/// and (when at least two boxes exist) the pathology regions.
pub fn compare(rows: &ScenarioRows, scenario: &str, seed: Option<u64>, a: Reconstructor, b: Reconstructor) -> Result<Vec<Comparison>> {
    let (Some(ra), Some(rb)) = (rows.get(&a), rows.get(&b)) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for region in [REGION_FULL, "region"] {
        for metric in ["nmse", "psnr", "ssim"] {
            let va = metric_vector(ra, region, metric);
            let vb = metric_vector(rb, region, metric);
            if va.len() < 2 || va.len() != vb.len() {
                continue;
            }
            if va.iter().zip(&vb).any(|(x, y)| x.0 != y.0) {
                return Err(Error::Incompatible("rows of compared reconstructors are not paired".into()));
            }
            let xa: Vec<f64> = va.iter().map(|v| v.1).collect();
            let xb: Vec<f64> = vb.iter().map(|v| v.1).collect();
            out.push(Comparison {
                scenario: scenario.to_string(),
                seed,
                a,
                b,
                metric: metric.to_string(),
                region: region.to_string(),
                result: paired_t_test(&xa, &xb)?,
            });
        }
    }
    Ok(out)
}

/// Rows, comparisons and CSV paths for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub rows: ScenarioRows,
    pub comparisons: Vec<Comparison>,
    pub csv_files: Vec<PathBuf>,
}

pub fn csv_name(seed: Option<u64>, scenario: &str, recon: Reconstructor) -> String {
    match seed {
        Some(s) => format!("seed{s}__{scenario}__{recon}.csv"),
        None => format!("{scenario}__{recon}.csv"),
    }
}

/// Full evaluation of one scenario: rows for every checkpoint plus the
/// zero-fill and CS references, Mask-vs-Baseline and Mask-vs-Fixed tests,
/// and one CSV per reconstructor under `metrics_dir` when given.
pub fn evaluate(
    checkpoints: &[&Checkpoint],
    samples: &[PhantomSample],
    scenario: &Scenario,
    cs: &CsConfig,
    sigma: f64,
    metrics_dir: Option<&Path>,
) -> Result<ScenarioReport> {
    let rows = evaluate_rows(
        checkpoints,
        &[Reconstructor::ZeroFill, Reconstructor::Cs],
        samples,
        scenario,
        cs,
        sigma,
    )?;
    finish_report(scenario, rows, None, metrics_dir)
}

fn finish_report(scenario: &Scenario, rows: ScenarioRows, seed: Option<u64>, metrics_dir: Option<&Path>) -> Result<ScenarioReport> {
    let mut comparisons = compare(&rows, &scenario.name, seed, Reconstructor::Mask, Reconstructor::Baseline)?;
    comparisons.extend(compare(&rows, &scenario.name, seed, Reconstructor::Mask, Reconstructor::Fixed)?);
    let mut csv_files = Vec::new();
    if let Some(dir) = metrics_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (r, rs) in &rows {
            let path = dir.join(csv_name(seed, &scenario.name, *r));
            write_csv(&path, rs)?;
            csv_files.push(path);
        }
    }
    Ok(ScenarioReport {
        scenario: scenario.clone(),
        rows,
        comparisons,
        csv_files,
    })
}

/// Aggregate of one (seed, scenario, reconstructor, region) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub seed: Option<u64>,
    pub scenario: String,
    pub reconstructor: Reconstructor,
    pub region: String,
    #[serde(flatten)]
    pub summary: MetricsSummary,
}

/// Aggregates straight from a metrics CSV, so published numbers can be
/// recomputed from the per-sample files.
pub fn aggregate_csv(path: &Path, seed: Option<u64>, scenario: &str, recon: Reconstructor) -> Result<Vec<AggregateEntry>> {
    let rows = read_csv(path)?;
    Ok(aggregate_rows(&rows, seed, scenario, recon))
}

pub fn aggregate_rows(rows: &[MetricsRow], seed: Option<u64>, scenario: &str, recon: Reconstructor) -> Vec<AggregateEntry> {
    let mut out = vec![AggregateEntry {
        seed,
        scenario: scenario.to_string(),
        reconstructor: recon,
        region: REGION_FULL.to_string(),
        summary: MetricsSummary::of(rows.iter().filter(|r| r.is_full())),
    }];
    if rows.iter().any(|r| !r.is_full()) {
        out.push(AggregateEntry {
            seed,
            scenario: scenario.to_string(),
            reconstructor: recon,
            region: "region".to_string(),
            summary: MetricsSummary::of(rows.iter().filter(|r| !r.is_full())),
        });
    }
    out
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    8
}
fn default_lr() -> f64 {
    0.01
}
fn default_depth() -> usize {
    3
}
fn default_base() -> usize {
    16
}
fn default_showcase() -> usize {
    2
}

/// End-to-end experiment description (`suite --config`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub dataset: DatasetSpec,
    /// One training run of all three models per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_drop_epoch: Option<usize>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_base")]
    pub base_channels: usize,
    #[serde(default)]
    pub io_scale: Option<f64>,
    #[serde(default)]
    pub cs: CsConfig,
    /// Scenario names; the full six-scenario grid when absent.
    #[serde(default)]
    pub scenarios: Option<Vec<String>>,
    /// Test samples per family rendered as PNG panels.
    #[serde(default = "default_showcase")]
    pub showcase_per_family: usize,
    #[serde(default)]
    pub sigma: f64,
}

impl SuiteConfig {
    /// Desk-scale defaults: 500/100/50+50 phantoms at 64×64.
    pub fn desk(base_seed: u64) -> Self {
        Self {
            dataset: DatasetSpec::standard(64, 64, base_seed, 500, 100, 50, 50),
            seeds: default_seeds(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: default_lr(),
            lr_drop_epoch: None,
            depth: default_depth(),
            base_channels: default_base(),
            io_scale: None,
            cs: CsConfig::default(),
            scenarios: None,
            showcase_per_family: default_showcase(),
            sigma: 0.0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        match &self.scenarios {
            None => Ok(Scenario::grid()),
            Some(names) => names.iter().map(|n| Scenario::by_name(n)).collect(),
        }
    }

    pub fn train_config(&self, kind: ModelKind, dataset: &Path, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::standard(kind, dataset, self.epochs, seed);
        c.batch_size = self.batch_size;
        c.lr = self.lr;
        c.lr_drop_epoch = self.lr_drop_epoch;
        c.depth = self.depth;
        c.base_channels = self.base_channels;
        c.io_scale = self.io_scale;
        c.sigma = self.sigma;
        c
    }
}

/// Outcome of one acceptance clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub clause: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub aggregates: Vec<AggregateEntry>,
    pub comparisons: Vec<Comparison>,
    pub verdicts: Vec<Verdict>,
    pub figures: Vec<PathBuf>,
    pub csv_files: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn mean_psnr(&self, seed: u64, scenario: &str, recon: Reconstructor) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.seed == Some(seed) && a.scenario == scenario && a.reconstructor == recon && a.region == REGION_FULL)
            .map(|a| a.summary.psnr.mean)
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

/// Directional claims checked by the suite: on the random-mask R=4 and the
/// family-B fixed R=4 scenarios, Mask beats Fixed in mean PSNR for every
/// seed (with a paired p < 0.05 on the family-B scenario), and Mask is at
/// least as good as Baseline in a majority of seeds.
pub fn directional_verdicts(report: &SuiteReport, seeds: &[u64]) -> Vec<Verdict> {
    const A: &str = "random-r4-a";
    const B: &str = "fixed-r4-b";
    let mut out = Vec::new();
    for scen in [A, B] {
        for &s in seeds {
            let m = report.mean_psnr(s, scen, Reconstructor::Mask);
            let f = report.mean_psnr(s, scen, Reconstructor::Fixed);
            let pass = matches!((m, f), (Some(m), Some(f)) if m > f);
            out.push(Verdict {
                clause: format!("seed {s}, {scen}: PSNR(mask) > PSNR(fixed)"),
                pass,
                detail: format!("mask {m:.3?} dB vs fixed {f:.3?} dB"),
            });
        }
        let wins = seeds
            .iter()
            .filter(|&&s| {
                matches!(
                    (report.mean_psnr(s, scen, Reconstructor::Mask), report.mean_psnr(s, scen, Reconstructor::Baseline)),
                    (Some(m), Some(b)) if m >= b
                )
            })
            .count();
        let need = seeds.len() / 2 + 1;
        out.push(Verdict {
            clause: format!("{scen}: PSNR(mask) >= PSNR(baseline) in at least {need} of {} seeds", seeds.len()),
            pass: wins >= need,
            detail: format!("{wins} of {} seeds", seeds.len()),
        });
    }
    for &s in seeds {
        let p = report
            .comparisons
            .iter()
            .find(|c| {
                c.seed == Some(s)
                    && c.scenario == B
                    && c.a == Reconstructor::Mask
                    && c.b == Reconstructor::Fixed
                    && c.metric == "psnr"
                    && c.region == REGION_FULL
            })
            .map(|c| c.result.p_value);
        out.push(Verdict {
            clause: format!("seed {s}, {B}: paired t-test mask vs fixed PSNR p < 0.05"),
            pass: matches!(p, Some(p) if p < 0.05),
            detail: format!("p = {}", p.map(|p| format!("{p:.3e}")).unwrap_or_else(|| "n/a".into())),
        });
    }
    out
}

fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<PhantomSample>> {
    manifest
        .entries(split)
        .map(|e| manifest.load_sample(&e.sample_id))
        .collect()
}

/// Runs gen-data → train ×3 per seed → evaluate every scenario, and writes
/// `data/`, `checkpoints/`, `metrics/`, `figures/`, `aggregates.json` and
/// `summary.md` under `out`.
pub fn run_suite(config: &SuiteConfig, out: &Path) -> Result<SuiteReport> {
    let scenarios = stage("config", config.scenarios())?;
    if config.seeds.is_empty() {
        return Err(Error::InvalidArgument("suite needs at least one seed".into()));
    }
    let data_dir = out.join("data");
    let manifest = stage("gen-data", make_dataset(&config.dataset, &data_dir))?;
    let test = stage("gen-data", load_split(&manifest, Split::Test))?;
    let metrics_dir = out.join("metrics");
    stage("evaluate", std::fs::create_dir_all(&metrics_dir).map_err(|e| Error::io(&metrics_dir, e)))?;

    // references do not depend on the training seed
    let mut references: BTreeMap<String, ScenarioRows> = BTreeMap::new();
    for sc in &scenarios {
        let rows = stage(
            "evaluate",
            evaluate_rows(&[], &[Reconstructor::ZeroFill, Reconstructor::Cs], &test, sc, &config.cs, config.sigma),
        )?;
        references.insert(sc.name.clone(), rows);
    }

    let mut report = SuiteReport {
        aggregates: Vec::new(),
        comparisons: Vec::new(),
        verdicts: Vec::new(),
        figures: Vec::new(),
        csv_files: Vec::new(),
    };
    // every (seed, kind) run is independently seeded, so training them
    // concurrently leaves each checkpoint unchanged
    let runs: Vec<(u64, ModelKind)> = config
        .seeds
        .iter()
        .flat_map(|&s| ModelKind::ALL.map(|k| (s, k)))
        .collect();
    let trained = runs
        .par_iter()
        .map(|&(s, kind)| {
            let ck_dir = out.join("checkpoints").join(format!("seed{s}"));
            let tc = config.train_config(kind, &data_dir, s);
            stage(&format!("train {kind} (seed {s})"), train_model(&tc, Some(&ck_dir))).map(|o| o.best)
        })
        .collect::<Result<Vec<Checkpoint>>>()?;

    for (&s, checkpoints) in config.seeds.iter().zip(trained.chunks(ModelKind::ALL.len())) {
        let refs: Vec<&Checkpoint> = checkpoints.iter().collect();
        for sc in &scenarios {
            let mut rows = stage(
                "evaluate",
                evaluate_rows(&refs, &[], &test, sc, &config.cs, config.sigma),
            )?;
            rows.extend(references[&sc.name].clone());
            let rep = stage("evaluate", finish_report(sc, rows, Some(s), Some(&metrics_dir)))?;
            for path in &rep.csv_files {
                let recon = rep
                    .rows
                    .keys()
                    .copied()
                    .find(|r| path.ends_with(csv_name(Some(s), &sc.name, *r)))
                    .expect("csv written for a known reconstructor");
                report.aggregates.extend(stage("aggregate", aggregate_csv(path, Some(s), &sc.name, recon))?);
            }
            report.csv_files.extend(rep.csv_files);
            report.comparisons.extend(rep.comparisons);
        }
        if s == config.seeds[0] {
            report.figures = stage(
                "figures",
                showcase(&refs, &test, &scenarios, config, &out.join("figures")),
            )?;
        }
    }
    report.verdicts = directional_verdicts(&report, &config.seeds);
    let agg_path = out.join("aggregates.json");
    stage(
        "report",
        std::fs::write(&agg_path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&agg_path, e)),
    )?;
    let md_path = out.join("summary.md");
    stage(
        "report",
        std::fs::write(&md_path, summary_markdown(&report, config)).map_err(|e| Error::io(&md_path, e)),
    )?;
    Ok(report)
}

/// Panels `target | zero-fill | fixed | baseline | mask | cs` for the first
/// few test samples of each family, preferring samples with a lesion.
fn showcase(
    checkpoints: &[&Checkpoint],
    test: &[PhantomSample],
    scenarios: &[Scenario],
    config: &SuiteConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for sc in scenarios {
        let mut picked: Vec<&PhantomSample> = test
            .iter()
            .filter(|s| s.family == sc.family && !s.pathology_boxes.is_empty())
            .take(config.showcase_per_family)
            .collect();
        if picked.len() < config.showcase_per_family {
            picked.extend(
                test.iter()
                    .filter(|s| s.family == sc.family && s.pathology_boxes.is_empty())
                    .take(config.showcase_per_family - picked.len()),
            );
        }
        for s in picked {
            let rec = reconstruct_sample(
                sc,
                s,
                checkpoints,
                &[Reconstructor::ZeroFill, Reconstructor::Cs],
                &config.cs,
                config.sigma,
            )?;
            let order = [
                Reconstructor::ZeroFill,
                Reconstructor::Fixed,
                Reconstructor::Baseline,
                Reconstructor::Mask,
                Reconstructor::Cs,
            ];
            let mut tiles = vec![&s.image];
            tiles.extend(order.iter().filter_map(|r| rec.images.get(r)));
            let path = dir.join(format!("{}__{}.png", sc.name, s.sample_id));
            export_panel(&tiles, &path, &s.pathology_boxes)?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Markdown tables of mean ± std per scenario and seed, the t-tests and the
/// directional verdicts.
pub fn summary_markdown(report: &SuiteReport, config: &SuiteConfig) -> String {
    let mut s = String::from("# Reconstruction suite summary\n\n");
    s.push_str(&format!(
        "Dataset {}×{}, {} train / {} val / {} test (A) + {} test (B) phantoms; seeds {:?}; {} epochs, batch {}, lr {}.\n\n",
        config.dataset.height,
        config.dataset.width,
        config.dataset.train.a + config.dataset.train.b,
        config.dataset.val.a + config.dataset.val.b,
        config.dataset.test.a,
        config.dataset.test.b,
        config.seeds,
        config.epochs,
        config.batch_size,
        config.lr,
    ));
    let mut scenarios: Vec<&str> = Vec::new();
    for a in &report.aggregates {
        if !scenarios.contains(&a.scenario.as_str()) {
            scenarios.push(&a.scenario);
        }
    }
    for sc in scenarios {
        s.push_str(&format!("## {sc}\n\n"));
        s.push_str("| seed | reconstructor | region | NMSE | PSNR (dB) | SSIM |\n|---|---|---|---|---|---|\n");
        for a in report.aggregates.iter().filter(|a| a.scenario == sc) {
            s.push_str(&format!(
                "| {} | {} | {} | {:.4} | {:.2} | {:.4} |\n",
                a.seed.map(|v| v.to_string()).unwrap_or_default(),
                a.reconstructor,
                a.region,
                a.summary.nmse,
                a.summary.psnr,
                a.summary.ssim,
            ));
        }
        s.push('\n');
    }
    s.push_str("## Paired t-tests (PSNR, full image)\n\n| seed | scenario | comparison | t | df | p |\n|---|---|---|---|---|---|\n");
    for c in report
        .comparisons
        .iter()
        .filter(|c| c.metric == "psnr" && c.region == REGION_FULL)
    {
        s.push_str(&format!(
            "| {} | {} | {} vs {} | {:.3} | {} | {:.3e} |\n",
            c.seed.map(|v| v.to_string()).unwrap_or_default(),
            c.scenario,
            c.a,
            c.b,
            c.result.t_statistic,
            c.result.degrees_of_freedom,
            c.result.p_value
        ));
    }
    s.push_str("\n## Directional verdicts\n\n");
    for v in &report.verdicts {
        s.push_str(&format!(
            "- {} {}: {}\n",
            if v.pass { "PASS" } else { "FAIL" },
            v.clause,
            v.detail
        ));
    }
    s.push_str(&format!(
        "\nOverall: {}\n",
        if report.all_pass() { "PASS" } else { "FAIL" }
    ));
    s
}
