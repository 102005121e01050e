//! Tiled evaluation against ground truth.

use semstereo_autograd::{ParamStore, Tensor};

use crate::data::{crop_tiles, CropMode, StereoSample, IGNORE_CLASS, SIZE_MULTIPLE};
use crate::error::Result;
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::model::{ModelConfig, SemStereoNet};

/// Anything that maps a stereo tile to a disparity map and class map.
pub trait StereoPredictor {
    /// Returns `H * W` disparities and `H * W` class labels for one sample.
    fn predict(&self, sample: &StereoSample) -> Result<(Vec<f32>, Vec<u8>)>;
    fn predicts_disparity(&self) -> bool {
        true
    }
    fn predicts_classes(&self) -> bool {
        true
    }
}

/// A trained network with its parameters.
pub struct ModelPredictor<'a> {
    pub net: &'a SemStereoNet,
    pub params: &'a ParamStore<f32>,
}

impl StereoPredictor for ModelPredictor<'_> {
    fn predict(&self, sample: &StereoSample) -> Result<(Vec<f32>, Vec<u8>)> {
        let shape = [1, 3, sample.height, sample.width];
        let left = Tensor::new(&shape, sample.left.clone())?;
        let right = Tensor::new(&shape, sample.right.clone())?;
        let pred = self.net.predict(self.params, &left, &right)?;
        let classes = pred.class_map().pop().expect("batch of one");
        Ok((pred.disparity.into_data(), classes))
    }

    fn predicts_disparity(&self) -> bool {
        self.net.config.predicts_disparity()
    }

    fn predicts_classes(&self) -> bool {
        self.net.config.predicts_classes()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub tile: usize,
    pub threshold: f64,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl EvalSettings {
    pub fn new(model: &ModelConfig, tile: usize, threshold: f64) -> Self {
        Self { tile, threshold, num_classes: model.num_classes, class_names: model.class_names.clone() }
    }
}

/// Adds one sample's predictions to `acc`.
pub fn accumulate_sample(
    predictor: &dyn StereoPredictor,
    sample: &StereoSample,
    acc: &mut MetricAccumulator,
) -> Result<()> {
    let (disp, classes) = predictor.predict(sample)?;
    let disparity = predictor.predicts_disparity().then_some((&disp[..], &sample.gt_disp[..], &sample.valid[..]));
    let cls = predictor.predicts_classes().then_some((&classes[..], &sample.gt_class[..]));
    acc.add(disparity, cls)
}

/// Evaluates each sample tile by tile. Samples that fit in one tile are
/// evaluated whole; larger ones are padded to a multiple of the tile (the
/// padding is invalid and unlabelled) and cut into a grid.
pub fn evaluate_accumulate(
    predictor: &dyn StereoPredictor,
    samples: &[StereoSample],
    settings: &EvalSettings,
) -> Result<MetricAccumulator> {
    let mut total = MetricAccumulator::new(settings.num_classes, IGNORE_CLASS, settings.threshold);
    for sample in samples {
        let sample = sample.pad_to_multiple(SIZE_MULTIPLE);
        if sample.height <= settings.tile && sample.width <= settings.tile {
            accumulate_sample(predictor, &sample, &mut total)?;
            continue;
        }
        let padded = sample.pad_to_multiple(settings.tile);
        for tile in crop_tiles(&padded, settings.tile, CropMode::Grid)? {
            let mut acc = MetricAccumulator::new(settings.num_classes, IGNORE_CLASS, settings.threshold);
            accumulate_sample(predictor, &tile.sample, &mut acc)?;
            total.merge(&acc)?;
        }
    }
    Ok(total)
}

pub fn evaluate(predictor: &dyn StereoPredictor, samples: &[StereoSample], settings: &EvalSettings) -> Result<MetricReport> {
    let acc = evaluate_accumulate(predictor, samples, settings)?;
    Ok(acc.report(&settings.class_names, predictor.predicts_disparity(), predictor.predicts_classes()))
}

/// Returns the ground truth of the sample it is given. Only useful for
/// checking the evaluation plumbing.
pub struct OraclePredictor;

impl StereoPredictor for OraclePredictor {
    fn predict(&self, sample: &StereoSample) -> Result<(Vec<f32>, Vec<u8>)> {
        let classes = sample.gt_class.iter().map(|&c| if c == IGNORE_CLASS { 0 } else { c }).collect();
        Ok((sample.gt_disp.clone(), classes))
    }
}
