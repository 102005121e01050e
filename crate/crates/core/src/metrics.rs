//! Disparity and segmentation metrics.
//!
//! The per-pixel functions take flat rasters of equal length. For evaluation
//! over tiles, [`MetricAccumulator`] keeps only integer counts and a
//! fixed-point error sum, so merging accumulators in any order or grouping
//! gives bit-identical results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 3.0;

/// Fractional bits of the fixed-point absolute-error sum.
const FIXED_BITS: i32 = 50;
/// Per-pixel errors are clamped here before quantisation so that the sum of
/// up to 2^40 pixels cannot overflow a `u128`.
const MAX_QUANTISED_ERROR: f64 = (1u64 << 36) as f64;

fn check_lengths(lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Precondition(format!("raster lengths differ: {lens:?}")));
    }
    Ok(())
}

fn abs_err(pred: f32, gt: f32) -> f64 {
    (pred as f64 - gt as f64).abs()
}

/// Mean absolute disparity error over valid pixels.
pub fn epe(pred: &[f32], gt: &[f32], valid: &[bool]) -> Result<f64> {
    check_lengths(&[pred.len(), gt.len(), valid.len()])?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if valid[i] {
            sum += abs_err(pred[i], gt[i]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask("EPE needs at least one valid pixel"));
    }
    Ok(sum / count as f64)
}

/// Percentage of valid pixels whose absolute error exceeds `threshold`.
pub fn d1_error(pred: &[f32], gt: &[f32], valid: &[bool], threshold: f64) -> Result<f64> {
    check_lengths(&[pred.len(), gt.len(), valid.len()])?;
    let mut bad = 0usize;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if valid[i] {
            count += 1;
            if !(abs_err(pred[i], gt[i]) <= threshold) {
                bad += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask("D1-Error needs at least one valid pixel"));
    }
    Ok(100.0 * bad as f64 / count as f64)
}

/// Row-major `K x K` counts, `cm[gt * K + pred]`, skipping `ignore` pixels.
///
/// Predicted labels outside `0..K` are an error; ground-truth labels outside
/// `0..K` other than `ignore` are too.
pub fn confusion_matrix(pred: &[u8], gt: &[u8], k: usize, ignore: u8) -> Result<Vec<u64>> {
    check_lengths(&[pred.len(), gt.len()])?;
    let mut cm = vec![0u64; k * k];
    for (&p, &t) in pred.iter().zip(gt) {
        if t == ignore {
            continue;
        }
        let (p, t) = (p as usize, t as usize);
        if p >= k || t >= k {
            return Err(Error::Precondition(format!("label out of range: gt {t}, pred {p}, K = {k}")));
        }
        cm[t * k + p] += 1;
    }
    Ok(cm)
}

fn unions(cm: &[u64], k: usize) -> Vec<u64> {
    (0..k)
        .map(|c| {
            let row: u64 = cm[c * k..(c + 1) * k].iter().sum();
            let col: u64 = (0..k).map(|r| cm[r * k + c]).sum();
            row + col - cm[c * k + c]
        })
        .collect()
}

fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn ratios(hits: impl Iterator<Item = u64>, unions: &[u64]) -> Vec<Option<f64>> {
    hits.zip(unions).map(|(h, &u)| (u > 0).then(|| h as f64 / u as f64)).collect()
}

/// Per-class IoU (`None` for classes with an empty union) and their mean.
pub fn miou(cm: &[u64], k: usize) -> (Vec<Option<f64>>, Option<f64>) {
    let per_class = ratios((0..k).map(|c| cm[c * k + c]), &unions(cm, k));
    let mean = mean_present(&per_class);
    (per_class, mean)
}

/// Joint metric: a pixel only counts towards the intersection when its class
/// is right and its disparity is valid and within `threshold`.
#[allow(clippy::too_many_arguments)]
pub fn miou3(
    pred_class: &[u8],
    gt_class: &[u8],
    pred_disp: &[f32],
    gt_disp: &[f32],
    valid: &[bool],
    k: usize,
    ignore: u8,
    threshold: f64,
) -> Result<f64> {
    check_lengths(&[pred_class.len(), gt_class.len(), pred_disp.len(), gt_disp.len(), valid.len()])?;
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptyMask("mIoU-3 needs at least one valid pixel"));
    }
    let cm = confusion_matrix(pred_class, gt_class, k, ignore)?;
    let mut tp3 = vec![0u64; k];
    for i in 0..pred_class.len() {
        if gt_class[i] != ignore && gt_class[i] == pred_class[i] && valid[i] && abs_err(pred_disp[i], gt_disp[i]) <= threshold {
            tp3[gt_class[i] as usize] += 1;
        }
    }
    mean_present(&ratios(tp3.into_iter(), &unions(&cm, k)))
        .ok_or(Error::EmptyMask("mIoU-3 needs at least one labelled pixel"))
}

/// Mergeable totals behind a [`MetricReport`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricAccumulator {
    pub num_classes: usize,
    pub ignore: u8,
    /// D1 and mIoU-3 threshold, stored as `f64` bits to keep `Eq`.
    threshold_bits: u64,
    /// Sum of `round(|err| * 2^FIXED_BITS)` over valid pixels.
    error_fixed: u128,
    non_finite_error: bool,
    valid: u64,
    over_threshold: u64,
    confusion: Vec<u64>,
    joint_hits: Vec<u64>,
}

impl MetricAccumulator {
    pub fn new(num_classes: usize, ignore: u8, threshold: f64) -> Self {
        Self {
            num_classes,
            ignore,
            threshold_bits: threshold.to_bits(),
            error_fixed: 0,
            non_finite_error: false,
            valid: 0,
            over_threshold: 0,
            confusion: vec![0; num_classes * num_classes],
            joint_hits: vec![0; num_classes],
        }
    }

    pub fn threshold(&self) -> f64 {
        f64::from_bits(self.threshold_bits)
    }

    /// Adds one raster's worth of pixels. Pass `None` for a task the model
    /// does not predict; its metrics then stay empty.
    pub fn add(
        &mut self,
        disparity: Option<(&[f32], &[f32], &[bool])>,
        classes: Option<(&[u8], &[u8])>,
    ) -> Result<()> {
        let k = self.num_classes;
        let threshold = self.threshold();
        if let Some((pred, gt)) = classes {
            let cm = confusion_matrix(pred, gt, k, self.ignore)?;
            for (a, b) in self.confusion.iter_mut().zip(cm) {
                *a += b;
            }
        }
        let Some((pd, gd, valid)) = disparity else { return Ok(()) };
        check_lengths(&[pd.len(), gd.len(), valid.len()])?;
        if let Some((pc, gc)) = classes {
            check_lengths(&[pd.len(), pc.len()])?;
            for i in 0..pd.len() {
                if valid[i] && gc[i] != self.ignore && gc[i] == pc[i] && abs_err(pd[i], gd[i]) <= threshold {
                    self.joint_hits[gc[i] as usize] += 1;
                }
            }
        }
        for i in 0..pd.len() {
            if !valid[i] {
                continue;
            }
            self.valid += 1;
            let e = abs_err(pd[i], gd[i]);
            if !(e <= threshold) {
                self.over_threshold += 1;
            }
            if e.is_finite() {
                let q = (e.min(MAX_QUANTISED_ERROR) * 2f64.powi(FIXED_BITS)).round();
                self.error_fixed += q as u128;
            } else {
                self.non_finite_error = true;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) -> Result<()> {
        if self.num_classes != other.num_classes || self.ignore != other.ignore || self.threshold_bits != other.threshold_bits {
            return Err(Error::Precondition("cannot merge accumulators with different settings".into()));
        }
        self.error_fixed += other.error_fixed;
        self.non_finite_error |= other.non_finite_error;
        self.valid += other.valid;
        self.over_threshold += other.over_threshold;
        for (a, b) in self.confusion.iter_mut().zip(&other.confusion) {
            *a += b;
        }
        for (a, b) in self.joint_hits.iter_mut().zip(&other.joint_hits) {
            *a += b;
        }
        Ok(())
    }

    pub fn confusion(&self) -> &[u64] {
        &self.confusion
    }

    pub fn report(&self, class_names: &[String], has_disparity: bool, has_classes: bool) -> MetricReport {
        let k = self.num_classes;
        let disparity_ok = has_disparity && self.valid > 0;
        let epe = disparity_ok.then(|| {
            if self.non_finite_error {
                f64::NAN
            } else {
                self.error_fixed as f64 / 2f64.powi(FIXED_BITS) / self.valid as f64
            }
        });
        let d1 = disparity_ok.then(|| 100.0 * self.over_threshold as f64 / self.valid as f64);
        let (per_class_iou, miou) = if has_classes { miou(&self.confusion, k) } else { (vec![None; k], None) };
        let miou3 = (has_classes && disparity_ok)
            .then(|| mean_present(&ratios(self.joint_hits.iter().copied(), &unions(&self.confusion, k))))
            .flatten();
        let labelled: u64 = self.confusion.iter().sum();
        let correct: u64 = (0..k).map(|c| self.confusion[c * k + c]).sum();
        let pixel_accuracy = (has_classes && labelled > 0).then(|| correct as f64 / labelled as f64);
        MetricReport {
            epe,
            d1_error: d1,
            per_class_iou,
            miou,
            miou3,
            pixel_accuracy,
            valid_pixel_count: self.valid,
            class_names: class_names.to_vec(),
        }
    }
}

/// Evaluation summary. `None` marks a metric that was not computed (task
/// disabled or nothing to measure) and renders as an em-dash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub epe: Option<f64>,
    /// Percent.
    pub d1_error: Option<f64>,
    /// Fractions in `[0, 1]`.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: Option<f64>,
    pub miou3: Option<f64>,
    /// Fraction of labelled pixels classified correctly (not a table row).
    pub pixel_accuracy: Option<f64>,
    pub valid_pixel_count: u64,
    pub class_names: Vec<String>,
}

pub const MISSING: &str = "\u{2014}";

pub fn format_cell(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => MISSING.to_string(),
    }
}

impl MetricReport {
    /// `label: value` lines. D1-Error and IoU rows are percentages.
    pub fn to_text(&self) -> String {
        let pct = |v: Option<f64>| format_cell(v.map(|x| 100.0 * x), 3);
        let mut out = String::new();
        out.push_str(&format!("D1-Error: {}\n", format_cell(self.d1_error, 3)));
        out.push_str(&format!("EPE: {}\n", format_cell(self.epe, 3)));
        for (name, iou) in self.class_names.iter().zip(&self.per_class_iou) {
            out.push_str(&format!("{name}: {}\n", pct(*iou)));
        }
        out.push_str(&format!("mIoU: {}\n", pct(self.miou)));
        out.push_str(&format!("mIoU-3: {}\n", pct(self.miou3)));
        out.push_str(&format!("Valid-Pixels: {}\n", self.valid_pixel_count));
        out
    }
}
