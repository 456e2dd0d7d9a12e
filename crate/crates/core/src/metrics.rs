//! Image quality metrics, box-restricted variants, and the paired t-test.
//!
//! Conventions: the data range `L` is the maximum of the reference image;
//! SSIM uses a 7×7 uniform window over valid positions only, with sample
//! (n − 1) variances; PSNR saturates at [`PSNR_CAP`].

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::Image;
use crate::phantom::{BBox, Family};

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(
            op,
            format!("{}×{} vs {}×{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

fn sq_err(xhat: &Image, x: &Image) -> f64 {
    xhat.data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// `‖xhat − x‖² / ‖x‖²`.
pub fn nmse(xhat: &Image, x: &Image) -> Result<f64> {
    same_shape("nmse", xhat, x)?;
    let energy: f64 = x.data().iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::InvalidArgument("nmse reference is all zero".into()));
    }
    Ok(sq_err(xhat, x) / energy)
}

pub fn mse(xhat: &Image, x: &Image) -> Result<f64> {
    same_shape("mse", xhat, x)?;
    Ok(sq_err(xhat, x) / x.data().len() as f64)
}

/// PSNR in dB with data range `max(x)`.
pub fn psnr(xhat: &Image, x: &Image) -> Result<f64> {
    psnr_with_range(xhat, x, x.max())
}

pub fn psnr_with_range(xhat: &Image, x: &Image, range: f64) -> Result<f64> {
    if !(range > 0.0) {
        return Err(Error::InvalidArgument(format!("psnr needs a positive data range, got {range}")));
    }
    let m = mse(xhat, x)?;
    if m < (range / 1e5).powi(2) {
        return Ok(PSNR_CAP);
    }
    Ok((20.0 * (range / m.sqrt()).log10()).min(PSNR_CAP))
}

/// Sums over every valid `k×k` window, row-major over window origins.
fn box_sums(h: usize, w: usize, data: &[f64], k: usize) -> Vec<f64> {
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let line = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = line[x..x + k].iter().sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (y..y + k).map(|r| rows[r * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM with data range `max(x)`.
pub fn ssim(xhat: &Image, x: &Image) -> Result<f64> {
    ssim_with_range(xhat, x, x.max())
}

pub fn ssim_with_range(a: &Image, b: &Image, range: f64) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {k}×{k} pixels, got {h}×{w}"
        )));
    }
    if !(range > 0.0) {
        return Err(Error::InvalidArgument(format!("ssim needs a positive data range, got {range}")));
    }
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect()
    };
    let sa = box_sums(h, w, a.data(), k);
    let sb = box_sums(h, w, b.data(), k);
    let saa = box_sums(h, w, &prod(&|p, _| p * p), k);
    let sbb = box_sums(h, w, &prod(&|_, q| q * q), k);
    let sab = box_sums(h, w, &prod(&|p, q| p * q), k);

    let n = (k * k) as f64;
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mut total = 0.0;
    for i in 0..sa.len() {
        let (ma, mb) = (sa[i] / n, sb[i] / n);
        let va = (saa[i] - n * ma * ma) / (n - 1.0);
        let vb = (sbb[i] - n * mb * mb) / (n - 1.0);
        let cov = (sab[i] - n * ma * mb) / (n - 1.0);
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / sa.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn image_metrics(xhat: &Image, x: &Image) -> Result<Metrics> {
    Ok(Metrics {
        nmse: nmse(xhat, x)?,
        psnr: psnr(xhat, x)?,
        ssim: ssim(xhat, x)?,
    })
}

/// Metrics on the box crop, keeping the full reference's data range.
pub fn region_metrics(xhat: &Image, x: &Image, bbox: &BBox) -> Result<Metrics> {
    same_shape("region_metrics", xhat, x)?;
    bbox.validate(x.height(), x.width())?;
    let range = x.max();
    let a = xhat.crop(bbox.x0, bbox.y0, bbox.x1, bbox.y1)?;
    let b = x.crop(bbox.x0, bbox.y0, bbox.x1, bbox.y1)?;
    Ok(Metrics {
        nmse: nmse(&a, &b)?,
        psnr: psnr_with_range(&a, &b, range)?,
        ssim: ssim_with_range(&a, &b, range)?,
    })
}

pub const REGION_FULL: &str = "full";

/// One CSV row: `sample_id,pattern,R,family,region,nmse,psnr,ssim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sample_id: String,
    pub pattern: String,
    #[serde(rename = "R")]
    pub acceleration: u32,
    pub family: Family,
    pub region: String,
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub const CSV_HEADER: &str = "sample_id,pattern,R,family,region,nmse,psnr,ssim";

impl MetricsRow {
    pub fn new(
        sample_id: impl Into<String>,
        pattern: impl Into<String>,
        acceleration: u32,
        family: Family,
        region: impl Into<String>,
        m: Metrics,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            pattern: pattern.into(),
            acceleration,
            family,
            region: region.into(),
            nmse: m.nmse,
            psnr: m.psnr,
            ssim: m.ssim,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            nmse: self.nmse,
            psnr: self.psnr,
            ssim: self.ssim,
        }
    }

    pub fn is_full(&self) -> bool {
        self.region == REGION_FULL
    }

    /// Shortest round-trip float formatting, so parsing recovers every bit.
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.sample_id, self.pattern, self.acceleration, self.family, self.region, self.nmse, self.psnr, self.ssim
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let bad = || Error::InvalidArgument(format!("malformed metrics row `{line}`"));
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(Self {
            sample_id: f[0].to_string(),
            pattern: f[1].to_string(),
            acceleration: f[2].parse().map_err(|_| bad())?,
            family: f[3].parse()?,
            region: f[4].to_string(),
            nmse: num(f[5])?,
            psnr: num(f[6])?,
            ssim: num(f[7])?,
        })
    }
}

pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(rows_to_csv(rows).as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        _ => return Err(Error::InvalidArgument("metrics CSV header mismatch".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRow::parse_csv_line)
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text).map_err(|e| Error::CorruptFile {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Mean and sample standard deviation, summed in input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(4);
        write!(f, "{:.p$} +/- {:.p$}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub nmse: MeanStd,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
}

impl MetricsSummary {
    pub fn of<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>) -> Self {
        let (mut n, mut p, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for r in rows {
            n.push(r.nmse);
            p.push(r.psnr);
            s.push(r.ssim);
        }
        Self {
            nmse: MeanStd::of(&n),
            psnr: MeanStd::of(&p),
            ssim: MeanStd::of(&s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub n: usize,
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: usize) -> f64 {
    if t.is_nan() || df == 0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let v = df as f64;
    let x = v / (v + t * t);
    statrs::function::beta::beta_reg(v / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Paired two-sided t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = MeanStd::of(&d);
    let df = n - 1;
    if s.std == 0.0 {
        if s.mean == 0.0 {
            return Ok(TTestResult {
                t_statistic: 0.0,
                degrees_of_freedom: df,
                p_value: 1.0,
                n,
            });
        }
        return Err(Error::InvalidArgument(
            "paired t-test undefined: constant nonzero differences".into(),
        ));
    }
    let t = s.mean / (s.std / (n as f64).sqrt());
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: student_t_two_sided(t, df),
        n,
    })
}
