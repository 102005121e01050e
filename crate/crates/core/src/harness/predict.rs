//! Running a checkpoint on an image pair and rendering the results.
//!
//! Class colours (label: RGB):
//!
//! | label | colour          |
//! |-------|-----------------|
//! | 0     | 128, 96, 64     |
//! | 1     | 34, 139, 34     |
//! | 2     | 220, 20, 60     |
//! | 3     | 30, 144, 255    |
//! | 4     | 255, 215, 0     |
//! | 5     | 148, 103, 189   |
//! | 6     | 23, 190, 207    |
//! | 7     | 255, 127, 14    |
//!
//! Labels 8 and above reuse the table cyclically; the ignore label is black.
//!
//! Disparity is rendered with a piecewise-linear ramp through [`DISPARITY_RAMP`],
//! where `d_min` maps to the first stop and `d_max` to the last. Values
//! outside the range are clamped and non-finite values are black.

use std::path::{Path, PathBuf};

use super::checkpoint::Checkpoint;
use super::evaluate::{ModelPredictor, StereoPredictor};
use super::train::restore_model;
use crate::cost_volume::DisparityRange;
use crate::data::raster::{read_rgb, write_f32, write_labels, write_rgb8, Raster};
use crate::data::{crop_tiles, CropMode, StereoSample, IGNORE_CLASS, SIZE_MULTIPLE};
use crate::error::{precondition, Error, Result};

pub const CLASS_PALETTE: [[u8; 3]; 8] = [
    [128, 96, 64],
    [34, 139, 34],
    [220, 20, 60],
    [30, 144, 255],
    [255, 215, 0],
    [148, 103, 189],
    [23, 190, 207],
    [255, 127, 14],
];

/// Evenly spaced stops from dark blue through teal and yellow.
pub const DISPARITY_RAMP: [[u8; 3]; 5] = [[48, 18, 59], [40, 110, 200], [30, 190, 160], [200, 220, 50], [250, 250, 210]];

pub fn class_color(label: u8) -> [u8; 3] {
    if label == IGNORE_CLASS {
        [0, 0, 0]
    } else {
        CLASS_PALETTE[label as usize % CLASS_PALETTE.len()]
    }
}

pub fn disparity_color(d: f32, range: &DisparityRange) -> [u8; 3] {
    if !d.is_finite() {
        return [0, 0, 0];
    }
    let (lo, hi) = (range.d_min as f64, range.d_max as f64);
    let t = ((d as f64 - lo) / (hi - lo)).clamp(0.0, 1.0);
    let segments = (DISPARITY_RAMP.len() - 1) as f64;
    let pos = t * segments;
    let i = (pos.floor() as usize).min(DISPARITY_RAMP.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (DISPARITY_RAMP[i], DISPARITY_RAMP[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// Interleaved RGB bytes for a label map.
pub fn render_classes(labels: &[u8]) -> Vec<u8> {
    labels.iter().flat_map(|&l| class_color(l)).collect()
}

pub fn render_disparity(disparity: &[f32], range: &DisparityRange) -> Vec<u8> {
    disparity.iter().flat_map(|&d| disparity_color(d, range)).collect()
}

/// Predicts dense maps for a sample of any size. The sample is padded to a
/// multiple of 16; anything larger than `tile` is processed as a grid of
/// tiles and stitched. The result is cropped back to the input size.
pub fn predict_maps(predictor: &dyn StereoPredictor, sample: &StereoSample, tile: usize) -> Result<(Vec<f32>, Vec<u8>)> {
    let (h, w) = (sample.height, sample.width);
    let padded = sample.pad_to_multiple(SIZE_MULTIPLE);
    let (disp, classes, pw) = if padded.height <= tile && padded.width <= tile {
        let (d, c) = predictor.predict(&padded)?;
        (d, c, padded.width)
    } else {
        let padded = padded.pad_to_multiple(tile);
        let (ph, pw) = (padded.height, padded.width);
        let mut disp = vec![0f32; ph * pw];
        let mut classes = vec![0u8; ph * pw];
        for t in crop_tiles(&padded, tile, CropMode::Grid)? {
            let (d, c) = predictor.predict(&t.sample)?;
            for y in 0..tile {
                let dst = (t.y0 + y) * pw + t.x0;
                disp[dst..dst + tile].copy_from_slice(&d[y * tile..(y + 1) * tile]);
                classes[dst..dst + tile].copy_from_slice(&c[y * tile..(y + 1) * tile]);
            }
        }
        (disp, classes, pw)
    };
    let crop = |row: usize| row * pw..row * pw + w;
    Ok(((0..h).flat_map(|y| disp[crop(y)].to_vec()).collect(), (0..h).flat_map(|y| classes[crop(y)].to_vec()).collect()))
}

/// Paths of the files written by [`predict_files`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionFiles {
    pub disparity_raw: PathBuf,
    pub classes_raw: PathBuf,
    pub disparity_png: PathBuf,
    pub classes_png: PathBuf,
}

impl PredictionFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            disparity_raw: dir.join("disparity.tif"),
            classes_raw: dir.join("classes.tif"),
            disparity_png: dir.join("disparity.png"),
            classes_png: dir.join("classes.png"),
        }
    }
}

/// The in-memory prediction alongside the files it was written to.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictOutput {
    pub disparity: Raster<f32>,
    pub classes: Raster<u8>,
    pub files: PredictionFiles,
}

pub fn pair_sample(left: Raster<f32>, right: Raster<f32>) -> Result<StereoSample> {
    precondition(left.height == right.height && left.width == right.width, || {
        format!("left is {}x{} but right is {}x{}", left.height, left.width, right.height, right.width)
    })?;
    let p = left.height * left.width;
    Ok(StereoSample {
        id: "pair".into(),
        height: left.height,
        width: left.width,
        left: left.data,
        right: right.data,
        gt_disp: vec![0.0; p],
        gt_class: vec![IGNORE_CLASS; p],
        valid: vec![false; p],
    })
}

pub fn predict_files(checkpoint: &Checkpoint, left: &Path, right: &Path, out_dir: &Path) -> Result<PredictOutput> {
    let (net, params) = restore_model(&checkpoint.config, &checkpoint.params)?;
    let sample = pair_sample(read_rgb(left)?, read_rgb(right)?)?;
    let predictor = ModelPredictor { net: &net, params: &params };
    let (disp, classes) = predict_maps(&predictor, &sample, checkpoint.config.eval.tile)?;
    let (h, w) = (sample.height, sample.width);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = PredictionFiles::in_dir(out_dir);
    let disparity = Raster { height: h, width: w, data: disp };
    let classes = Raster { height: h, width: w, data: classes };
    write_f32(&files.disparity_raw, &disparity)?;
    write_labels(&files.classes_raw, &classes)?;
    write_rgb8(&files.disparity_png, h, w, render_disparity(&disparity.data, &checkpoint.config.model.range()))?;
    write_rgb8(&files.classes_png, h, w, render_classes(&classes.data))?;
    Ok(PredictOutput { disparity, classes, files })
}
