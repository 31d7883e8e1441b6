//! Segmentation metrics, comparison tables, the hybrid solver and PNG output.

use std::fmt::Write as _;
use std::io::BufReader;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{DensityField, Problem};
use crate::nn::Tensor;
use crate::probgen::DatasetRecord;
use crate::simp::{self, SimpConfig};
use crate::toponet::{self, NetworkParams};

/// Stop iterations reported in the comparison tables.
pub const STOP_ITERS: [usize; 9] = [5, 10, 15, 20, 30, 40, 50, 60, 80];

pub const THRESHOLD: f64 = 0.5;

/// `v ≥ 0.5`, the single binarization rule used everywhere.
pub fn threshold(values: &[f64]) -> Vec<bool> {
    values.iter().map(|&v| v >= THRESHOLD).collect()
}

pub fn threshold_baseline(frame: &DensityField) -> Vec<bool> {
    threshold(frame.values())
}

/// `w[t][p]`: pixels of true class `t` predicted as class `p`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub w00: u64,
    pub w01: u64,
    pub w10: u64,
    pub w11: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &[bool], truth: &[bool]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::shape(format!(
                "mask sizes differ: {} vs {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (t, p) {
                (false, false) => c.w00 += 1,
                (false, true) => c.w01 += 1,
                (true, false) => c.w10 += 1,
                (true, true) => c.w11 += 1,
            }
        }
        Ok(c)
    }

    pub fn n0(&self) -> u64 {
        self.w00 + self.w01
    }

    pub fn n1(&self) -> u64 {
        self.w11 + self.w10
    }

    pub fn total(&self) -> u64 {
        self.n0() + self.n1()
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 1.0;
        }
        (self.w00 + self.w11) as f64 / self.total() as f64
    }

    /// Two-class mean IoU. A class absent from both masks scores 1.
    ///
    /// Evaluated as one exact fraction so the result is correctly rounded.
    pub fn iou(&self) -> f64 {
        let (i0, u0) = (self.w00 as u128, (self.n0() + self.w10) as u128);
        let (i1, u1) = (self.w11 as u128, (self.n1() + self.w01) as u128);
        let (i0, u0) = if u0 == 0 { (1, 1) } else { (i0, u0) };
        let (i1, u1) = if u1 == 0 { (1, 1) } else { (i1, u1) };
        (i0 * u1 + i1 * u0) as f64 / (2 * u0 * u1) as f64
    }
}

pub fn binary_accuracy(pred: &[bool], truth: &[bool]) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, truth)?.accuracy())
}

pub fn iou(pred: &[bool], truth: &[bool]) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, truth)?.iou())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BinaryAccuracy,
    Iou,
}

impl Metric {
    pub fn title(&self) -> &'static str {
        match self {
            Metric::BinaryAccuracy => "Binary Accuracy",
            Metric::Iou => "IoU",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    /// Percent, one per stop iteration.
    pub cells: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub metric: Metric,
    pub stop_iters: Vec<usize>,
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    /// Percent.
    pub fn cell(&self, method: &str, stop_iter: usize) -> Option<f64> {
        let col = self.stop_iters.iter().position(|&s| s == stop_iter)?;
        self.rows.iter().find(|r| r.method == method).map(|r| r.cells[col])
    }

    /// Methods down, stop iterations across, one decimal.
    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{}, %\n{:<w$}", self.metric.title(), "Method");
        for it in &self.stop_iters {
            let _ = write!(s, " {it:>6}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<w$}", r.method);
            for c in &r.cells {
                let _ = write!(s, " {c:>6.1}");
            }
            s.push('\n');
        }
        s
    }

    /// One JSON object per cell.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            for (it, v) in self.stop_iters.iter().zip(&r.cells) {
                let line = serde_json::json!({
                    "metric": self.metric,
                    "method": r.method,
                    "stop_iter": it,
                    "value": v,
                });
                s.push_str(&line.to_string());
                s.push('\n');
            }
        }
        s
    }
}

/// Binary accuracy and IoU tables for the same evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: EvalTable,
    pub iou: EvalTable,
}

/// Network inputs for stop iteration `n` in stored orientation.
pub fn network_input(record: &DatasetRecord, n: usize) -> Result<(Tensor, Tensor)> {
    let (h, w) = (record.problem().nely(), record.problem().nelx());
    let x = record.design(n)?;
    let prev = record.design(n - 1)?;
    let d = x.iter().zip(&prev).map(|(a, b)| a - b).collect();
    Ok((Tensor::new([1, h, w], x)?, Tensor::new([1, h, w], d)?))
}

pub const BASELINE: &str = "Thresholding";

/// Scores thresholding and every model at each stop iteration against the
/// binarized final frame, averaging per-record metrics.
pub fn evaluate(
    models: &[(String, NetworkParams)],
    records: &[DatasetRecord],
    stop_iters: &[usize],
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("evaluation set is empty".into()));
    }
    if stop_iters.is_empty() {
        return Err(Error::InvalidParameter("no stop iterations".into()));
    }
    for (i, r) in records.iter().enumerate() {
        if let Some(&n) = stop_iters.iter().find(|&&n| n == 0 || n > r.frame_count()) {
            return Err(Error::InvalidParameter(format!(
                "stop iteration {n} outside [1, {}] for record {i}",
                r.frame_count()
            )));
        }
    }
    let methods = 1 + models.len();
    // Per record: [method][stop] -> (accuracy, iou).
    let per_record: Vec<Vec<(f64, f64)>> = records
        .par_iter()
        .map(|r| -> Result<Vec<(f64, f64)>> {
            let truth = threshold(&r.final_design());
            let mut out = vec![(0.0, 0.0); methods * stop_iters.len()];
            for (j, &n) in stop_iters.iter().enumerate() {
                let base = ConfusionCounts::from_masks(&threshold(&r.design(n)?), &truth)?;
                out[j] = (base.accuracy(), base.iou());
                let (x, d) = network_input(r, n)?;
                for (m, (_, params)) in models.iter().enumerate() {
                    let y = toponet::predict(params, &x, &d)?;
                    let c = ConfusionCounts::from_masks(&threshold(y.data()), &truth)?;
                    out[(m + 1) * stop_iters.len() + j] = (c.accuracy(), c.iou());
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![(0.0, 0.0); methods * stop_iters.len()];
    for rec in &per_record {
        for (s, v) in sums.iter_mut().zip(rec) {
            s.0 += v.0;
            s.1 += v.1;
        }
    }
    let n = records.len() as f64;
    let names: Vec<String> = std::iter::once(BASELINE.to_string())
        .chain(models.iter().map(|(name, _)| name.clone()))
        .collect();
    let table = |metric: Metric, pick: fn(&(f64, f64)) -> f64| EvalTable {
        metric,
        stop_iters: stop_iters.to_vec(),
        rows: names
            .iter()
            .enumerate()
            .map(|(m, name)| EvalRow {
                method: name.clone(),
                cells: sums[m * stop_iters.len()..(m + 1) * stop_iters.len()]
                    .iter()
                    .map(|s| 100.0 * pick(s) / n)
                    .collect(),
            })
            .collect(),
    };
    Ok(EvalReport {
        accuracy: table(Metric::BinaryAccuracy, |s| s.0),
        iou: table(Metric::Iou, |s| s.1),
    })
}

/// Evaluates mechanically trained weights on heat-conduction records.
pub fn transfer_eval(
    name: &str,
    params: &NetworkParams,
    heat_records: &[DatasetRecord],
    stop_iters: &[usize],
) -> Result<EvalReport> {
    evaluate(&[(name.to_string(), params.clone())], heat_records, stop_iters)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HybridTiming {
    pub simp: Duration,
    pub inference: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridResult {
    /// Design after `n0` SIMP iterations.
    pub design: DensityField,
    pub prediction: Vec<f64>,
    pub mask: Vec<bool>,
    pub timing: HybridTiming,
}

impl HybridResult {
    pub fn volume_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&b| b).count() as f64 / self.mask.len() as f64
    }
}

/// `n0` SIMP iterations, one forward pass, then binarization.
pub fn hybrid_solve(
    problem: &Problem,
    n0: usize,
    params: &NetworkParams,
    cfg: &SimpConfig,
) -> Result<HybridResult> {
    if n0 == 0 {
        return Err(Error::InvalidParameter("hybrid solve needs at least one SIMP iteration".into()));
    }
    cfg.validate()?;
    let (h, w) = (problem.nely(), problem.nelx());
    if h % toponet::SIZE_MULTIPLE != 0 || w % toponet::SIZE_MULTIPLE != 0 {
        return Err(Error::shape(format!(
            "grid {h}x{w} must have sides divisible by {}",
            toponet::SIZE_MULTIPLE
        )));
    }
    let start = Instant::now();
    let mut prev = simp::initial_design(problem);
    let mut x = prev.clone();
    for it in 1..=n0 {
        let (next, _) = simp::step(problem, &x, cfg).map_err(|e| e.at_iteration(it))?;
        prev = std::mem::replace(&mut x, next);
    }
    let simp_time = start.elapsed();
    let t = Instant::now();
    let delta: Vec<f64> = x.values().iter().zip(prev.values()).map(|(a, b)| a - b).collect();
    let y = toponet::predict(
        params,
        &Tensor::new([1, h, w], x.values().to_vec())?,
        &Tensor::new([1, h, w], delta)?,
    )?;
    let mask = threshold(y.data());
    let inference = t.elapsed();
    Ok(HybridResult {
        design: x,
        prediction: y.into_data(),
        mask,
        timing: HybridTiming {
            simp: simp_time,
            inference,
            total: start.elapsed(),
        },
    })
}

/// Index ranges of a 90/10 train/validation split.
pub fn split_90_10(n: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let cut = n - n / 10;
    (0..cut, cut..n)
}

/// Grayscale PNG of a row-major `height × width` field: black is 1, white 0.
pub fn render_png(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    if values.len() != width * height || width == 0 || height == 0 {
        return Err(Error::shape(format!(
            "{height}x{width} image needs {} values, got {}",
            width * height,
            values.len()
        )));
    }
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8)
        .collect();
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer.write_image_data(&pixels).map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))
}

pub fn render_mask_png(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<()> {
    let v: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    render_png(&v, width, height, path)
}

/// Reads an 8-bit grayscale PNG back as `(width, height, luminance)`.
pub fn decode_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!(
            "expected 8-bit grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}
