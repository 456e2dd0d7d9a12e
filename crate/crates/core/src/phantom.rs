//! Synthetic ground truth with pathology boxes, and the on-disk dataset.
//!
//! Family A is smooth, nested soft-edged ellipses with intensity ramps.
//! Family B is rectangles and ring annuli with hard edges; it plays the role
//! of the unseen anatomy at test time. Either family may carry a small
//! high-contrast lesion whose bounding box is recorded.
//!
//! On disk a dataset is a `manifest.json` plus one raw little-endian f32
//! image per sample; the same layout imports externally converted slices.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::Image;
use crate::seed;

/// Smallest allowed box side (a 7×7 SSIM window must fit with room to slide).
pub const MIN_BOX_SIDE: usize = 8;
pub const MIN_PHANTOM_SIZE: usize = 32;
pub const LESION_PROBABILITY: f64 = 0.5;
pub const LESION_LABEL: &str = "lesion";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::A => "A",
            Family::B => "B",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Family::A),
            "B" | "b" => Ok(Family::B),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}

/// Half-open pixel box `[x0, x1) × [y0, y1)`; serialized as
/// `[x0, y0, x1, y1, label]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, usize, usize, String)", into = "(usize, usize, usize, usize, String)")]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub label: String,
}

impl From<(usize, usize, usize, usize, String)> for BBox {
    fn from((x0, y0, x1, y1, label): (usize, usize, usize, usize, String)) -> Self {
        Self { x0, y0, x1, y1, label }
    }
}

impl From<BBox> for (usize, usize, usize, usize, String) {
    fn from(b: BBox) -> Self {
        (b.x0, b.y0, b.x1, b.y1, b.label)
    }
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, label: impl Into<String>) -> Self {
        Self {
            x0,
            y0,
            x1,
            y1,
            label: label.into(),
        }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    /// Non-empty, at least [`MIN_BOX_SIDE`] on each side and inside `h×w`.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::InvalidArgument(format!("empty box {self:?}")));
        }
        if self.width() < MIN_BOX_SIDE || self.height() < MIN_BOX_SIDE {
            return Err(Error::InvalidArgument(format!(
                "box {self:?} smaller than {MIN_BOX_SIDE}×{MIN_BOX_SIDE}"
            )));
        }
        if self.x1 > w || self.y1 > h {
            return Err(Error::InvalidArgument(format!("box {self:?} outside {h}×{w} image")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub image: Image,
    pub family: Family,
    pub pathology_boxes: Vec<BBox>,
    pub sample_id: String,
    pub seed: u64,
}

impl PhantomSample {
    /// Pixel range `[0, 1]` and box constraints.
    pub fn validate(&self) -> Result<()> {
        if self.image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArgument(format!(
                "sample {} has pixels outside [0, 1]",
                self.sample_id
            )));
        }
        for b in &self.pathology_boxes {
            b.validate(self.image.height(), self.image.width())?;
        }
        Ok(())
    }
}

/// Lesion placement, exposed for construction checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lesion {
    pub cx: usize,
    pub cy: usize,
    pub radius: f64,
    pub offset: f64,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    edge: f64,
    level: f64,
    ramp: (f64, f64),
}

impl Ellipse {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos)
    }

    /// Soft membership in `[0, 1]`.
    fn weight(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.local(x, y);
        let r = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        sigmoid((1.0 - r) * self.a.min(self.b) / self.edge)
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.local(x, y);
        self.level + self.ramp.0 * u / self.a + self.ramp.1 * v / self.b
    }
}

fn family_a(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (hf, wf) = (h as f64, w as f64);
    let count = rng.random_range(4..=8);
    let mut shapes: Vec<Ellipse> = Vec::with_capacity(count);
    for i in 0..count {
        let theta = rng.random_range(0.0..PI);
        let ramp = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
        let edge = rng.random_range(1.0..2.5);
        let e = if i == 0 {
            Ellipse {
                cx: wf / 2.0 + rng.random_range(-0.05..0.05) * wf,
                cy: hf / 2.0 + rng.random_range(-0.05..0.05) * hf,
                a: rng.random_range(0.30..0.42) * wf,
                b: rng.random_range(0.30..0.42) * hf,
                cos: theta.cos(),
                sin: theta.sin(),
                edge,
                level: rng.random_range(0.45..0.75),
                ramp,
            }
        } else {
            let parent = &shapes[rng.random_range(0..i)];
            let (pu, pv) = (
                rng.random_range(-0.45..0.45) * parent.a,
                rng.random_range(-0.45..0.45) * parent.b,
            );
            let scale = rng.random_range(0.25..0.55);
            Ellipse {
                cx: parent.cx + pu * parent.cos - pv * parent.sin,
                cy: parent.cy + pu * parent.sin + pv * parent.cos,
                a: (scale * parent.a).max(2.5),
                b: (rng.random_range(0.25..0.55) * parent.b).max(2.5),
                cos: theta.cos(),
                sin: theta.sin(),
                edge,
                level: rng.random_range(0.1..0.95),
                ramp,
            }
        };
        shapes.push(e);
    }
    let mut img = vec![0.0; h * w];
    for e in &shapes {
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let wgt = e.weight(px, py);
                let p = &mut img[y * w + x];
                *p = *p * (1.0 - wgt) + wgt * e.value(px, py);
            }
        }
    }
    img
}

fn family_b(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (hf, wf) = (h as f64, w as f64);
    let count = rng.random_range(3..=6);
    let mut img = vec![0.0; h * w];
    for _ in 0..count {
        let level = rng.random_range(0.2..1.0);
        let cx = rng.random_range(0.25..0.75) * wf;
        let cy = rng.random_range(0.25..0.75) * hf;
        let ring = rng.random_bool(0.5);
        let (a, b) = (
            rng.random_range(0.08..0.3) * wf,
            rng.random_range(0.08..0.3) * hf,
        );
        let thickness = rng.random_range(0.25..0.6);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if ring {
                    let r = dx.hypot(dy);
                    let outer = a.max(b);
                    r <= outer && r >= outer * (1.0 - thickness)
                } else {
                    dx.abs() <= a && dy.abs() <= b
                };
                if inside {
                    img[y * w + x] = level;
                }
            }
        }
    }
    img
}

fn place_lesion(img: &mut [f64], h: usize, w: usize, rng: &mut ChaCha8Rng) -> (Lesion, BBox) {
    let radius: f64 = rng.random_range(3.0..=7.0);
    let half = ((radius.ceil() as usize) + 1).max(MIN_BOX_SIDE / 2);
    let offset = if rng.random_bool(0.5) { 0.3 } else { -0.3 };
    // prefer a center on anatomy; fall back to the last draw
    let mut center = (half, half);
    for _ in 0..64 {
        let cx = rng.random_range(half..=w - half);
        let cy = rng.random_range(half..=h - half);
        center = (cx, cy);
        if img[cy * w + cx] > 0.15 {
            break;
        }
    }
    let (cx, cy) = center;
    for y in cy - half..cy + half {
        for x in cx - half..cx + half {
            let d = (x as f64 - cx as f64).hypot(y as f64 - cy as f64);
            img[y * w + x] += offset * sigmoid((radius - d) / 0.6);
        }
    }
    let bbox = BBox::new(cx - half, cy - half, cx + half, cy + half, LESION_LABEL);
    (
        Lesion {
            cx,
            cy,
            radius,
            offset,
        },
        bbox,
    )
}

/// Generates one phantom and, when present, its lesion.
pub fn gen_phantom_detailed(family: Family, h: usize, w: usize, seed: u64) -> Result<(PhantomSample, Option<Lesion>)> {
    if h < MIN_PHANTOM_SIZE || w < MIN_PHANTOM_SIZE {
        return Err(Error::InvalidArgument(format!(
            "phantom must be at least {MIN_PHANTOM_SIZE}×{MIN_PHANTOM_SIZE}, got {h}×{w}"
        )));
    }
    let mut rng = seed::rng(seed::derive(seed, &[family as u64]));
    let mut img = match family {
        Family::A => family_a(h, w, &mut rng),
        Family::B => family_b(h, w, &mut rng),
    };
    let mut boxes = Vec::new();
    let mut lesion = None;
    if rng.random_bool(LESION_PROBABILITY) {
        let (l, b) = place_lesion(&mut img, h, w, &mut rng);
        lesion = Some(l);
        boxes.push(b);
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    let image = Image::new(h, w, img)?.quantize_f32();
    let sample = PhantomSample {
        image,
        family,
        pathology_boxes: boxes,
        sample_id: format!("{family}-{seed}"),
        seed,
    };
    sample.validate()?;
    Ok((sample, lesion))
}

/// Deterministic in `(family, h, w, seed)`.
pub fn gen_phantom(family: Family, h: usize, w: usize, seed: u64) -> Result<PhantomSample> {
    gen_phantom_detailed(family, h, w, seed).map(|(s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyCounts {
    #[serde(rename = "A", default)]
    pub a: usize,
    #[serde(rename = "B", default)]
    pub b: usize,
}

/// Sample counts per split and family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub height: usize,
    pub width: usize,
    pub base_seed: u64,
    pub train: FamilyCounts,
    pub val: FamilyCounts,
    pub test: FamilyCounts,
}

impl DatasetSpec {
    /// Anatomy-shift layout: family B only in the test split.
    pub fn standard(height: usize, width: usize, base_seed: u64, train: usize, val: usize, test_a: usize, test_b: usize) -> Self {
        Self {
            height,
            width,
            base_seed,
            train: FamilyCounts { a: train, b: 0 },
            val: FamilyCounts { a: val, b: 0 },
            test: FamilyCounts {
                a: test_a,
                b: test_b,
            },
        }
    }

    pub fn counts(&self, split: Split) -> FamilyCounts {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub family: Family,
    pub split: Split,
    /// Image path relative to the dataset root.
    pub file: PathBuf,
    #[serde(default)]
    pub boxes: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Dataset root; relative roots resolve against the manifest's directory.
    pub root: PathBuf,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.samples {
            if !ids.insert(e.sample_id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id `{}`", e.sample_id)));
            }
            for b in &e.boxes {
                b.validate(self.height, self.width)?;
            }
        }
        Ok(())
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    pub fn entries_of(&self, split: Split, family: Family) -> impl Iterator<Item = &ManifestEntry> {
        self.samples
            .iter()
            .filter(move |e| e.split == split && e.family == family)
    }

    pub fn entry(&self, sample_id: &str) -> Result<&ManifestEntry> {
        self.samples
            .iter()
            .find(|e| e.sample_id == sample_id)
            .ok_or_else(|| Error::SampleNotFound(sample_id.to_string()))
    }

    /// Reads `path` (a manifest file or a directory containing one) and
    /// resolves a relative root against it.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.root.is_relative() {
            let dir = file.parent().unwrap_or(Path::new("."));
            manifest.root = dir.join(&manifest.root);
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load_sample(&self, sample_id: &str) -> Result<PhantomSample> {
        load_sample(self, sample_id)
    }
}

/// Writes every sample plus `manifest.json` under `root`.
pub fn make_dataset(spec: &DatasetSpec, root: &Path) -> Result<DatasetManifest> {
    let images = root.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut plan = Vec::new();
    for split in Split::ALL {
        let counts = spec.counts(split);
        for (family, n) in [(Family::A, counts.a), (Family::B, counts.b)] {
            for i in 0..n {
                plan.push((split, family, i));
            }
        }
    }
    let entries = plan
        .into_iter()
        .enumerate()
        .map(|(index, (split, family, i))| {
            let sample_seed = spec.base_seed.wrapping_add(index as u64);
            let sample = gen_phantom(family, spec.height, spec.width, sample_seed)?;
            let sample_id = format!("{}-{family}-{i:05}", split.as_str());
            let file = PathBuf::from("images").join(format!("{sample_id}.bin"));
            let path = root.join(&file);
            std::fs::write(&path, sample.image.to_f32_le_bytes()).map_err(|e| Error::io(&path, e))?;
            Ok(ManifestEntry {
                sample_id,
                family,
                split,
                file,
                boxes: sample.pathology_boxes,
                seed: Some(sample_seed),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        root: PathBuf::from("."),
        height: spec.height,
        width: spec.width,
        samples: entries,
    };
    manifest.validate()?;
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        ..manifest
    })
}

/// Reloads a sample's image and boxes.
pub fn load_sample(manifest: &DatasetManifest, sample_id: &str) -> Result<PhantomSample> {
    let entry = manifest.entry(sample_id)?;
    let path = manifest.root.join(&entry.file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let image = Image::from_f32_le_bytes(manifest.height, manifest.width, &bytes).map_err(|e| {
        Error::CorruptFile {
            path: path.clone(),
            detail: e.to_string(),
        }
    })?;
    Ok(PhantomSample {
        image,
        family: entry.family,
        pathology_boxes: entry.boxes.clone(),
        sample_id: entry.sample_id.clone(),
        seed: entry.seed.unwrap_or(0),
    })
}
