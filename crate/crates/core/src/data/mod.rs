//! Stereo samples, synthetic scene generation, raster I/O and tiling.

pub mod raster;
pub mod synth;
pub mod tiles;
pub mod us3d;

use semstereo_autograd::Tensor;

use crate::error::{precondition, Result};

pub use synth::{synth_scene, SynthConfig};
pub use tiles::{crop_tiles, CropMode, Tile};
pub use us3d::{load_us3d_sample, ClassRemap};

pub const IGNORE_CLASS: u8 = 255;
/// Side lengths fed to the network must be multiples of this.
pub const SIZE_MULTIPLE: usize = 16;

/// One rectified pair with dense ground truth. Images are planar RGB in
/// `[0, 1]` (`[3, H, W]`); all other rasters are `[H, W]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub left: Vec<f32>,
    pub right: Vec<f32>,
    pub gt_disp: Vec<f32>,
    pub gt_class: Vec<u8>,
    pub valid: Vec<bool>,
}

impl StereoSample {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn check(&self) -> Result<()> {
        let p = self.pixels();
        precondition(
            self.left.len() == 3 * p
                && self.right.len() == 3 * p
                && self.gt_disp.len() == p
                && self.gt_class.len() == p
                && self.valid.len() == p,
            || format!("sample {} has rasters inconsistent with {}x{}", self.id, self.height, self.width),
        )
    }

    /// Copies the window `[y0, y0 + h) x [x0, x0 + w)` from every raster.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<StereoSample> {
        precondition(y0 + h <= self.height && x0 + w <= self.width && h > 0 && w > 0, || {
            format!("crop {h}x{w} at ({y0}, {x0}) exceeds {}x{}", self.height, self.width)
        })?;
        fn window<T: Copy>(src: &[T], planes: usize, sh: usize, sw: usize, y0: usize, x0: usize, h: usize, w: usize) -> Vec<T> {
            let mut out = Vec::with_capacity(planes * h * w);
            for c in 0..planes {
                for y in y0..y0 + h {
                    let row = (c * sh + y) * sw;
                    out.extend_from_slice(&src[row + x0..row + x0 + w]);
                }
            }
            out
        }
        let (sh, sw) = (self.height, self.width);
        Ok(StereoSample {
            id: format!("{}@{y0},{x0}", self.id),
            height: h,
            width: w,
            left: window(&self.left, 3, sh, sw, y0, x0, h, w),
            right: window(&self.right, 3, sh, sw, y0, x0, h, w),
            gt_disp: window(&self.gt_disp, 1, sh, sw, y0, x0, h, w),
            gt_class: window(&self.gt_class, 1, sh, sw, y0, x0, h, w),
            valid: window(&self.valid, 1, sh, sw, y0, x0, h, w),
        })
    }

    /// Pads bottom and right so both sides are multiples of `multiple`.
    /// Padding is black, unlabelled and invalid.
    pub fn pad_to_multiple(&self, multiple: usize) -> StereoSample {
        let h = self.height.div_ceil(multiple) * multiple;
        let w = self.width.div_ceil(multiple) * multiple;
        if (h, w) == (self.height, self.width) {
            return self.clone();
        }
        fn pad<T: Copy>(src: &[T], planes: usize, sh: usize, sw: usize, h: usize, w: usize, fill: T) -> Vec<T> {
            let mut out = vec![fill; planes * h * w];
            for c in 0..planes {
                for y in 0..sh {
                    let s = (c * sh + y) * sw;
                    let d = (c * h + y) * w;
                    out[d..d + sw].copy_from_slice(&src[s..s + sw]);
                }
            }
            out
        }
        let (sh, sw) = (self.height, self.width);
        StereoSample {
            id: self.id.clone(),
            height: h,
            width: w,
            left: pad(&self.left, 3, sh, sw, h, w, 0.0),
            right: pad(&self.right, 3, sh, sw, h, w, 0.0),
            gt_disp: pad(&self.gt_disp, 1, sh, sw, h, w, 0.0),
            gt_class: pad(&self.gt_class, 1, sh, sw, h, w, IGNORE_CLASS),
            valid: pad(&self.valid, 1, sh, sw, h, w, false),
        }
    }
}

/// A stacked batch ready for the network.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[N, 3, H, W]`.
    pub left: Tensor<f32>,
    pub right: Tensor<f32>,
    /// `[N, H, W]` flattened.
    pub gt_disp: Vec<f32>,
    pub gt_class: Vec<u8>,
    pub valid: Vec<bool>,
}

impl Batch {
    pub fn from_samples(samples: &[&StereoSample]) -> Result<Batch> {
        precondition(!samples.is_empty(), || "empty batch".to_string())?;
        let (h, w) = (samples[0].height, samples[0].width);
        for s in samples {
            s.check()?;
            precondition(s.height == h && s.width == w, || {
                format!("batch mixes {}x{} and {}x{} samples", h, w, s.height, s.width)
            })?;
        }
        let n = samples.len();
        let cat = |f: &dyn Fn(&StereoSample) -> &[f32]| samples.iter().flat_map(|s| f(s).iter().copied()).collect::<Vec<_>>();
        Ok(Batch {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            left: Tensor::new(&[n, 3, h, w], cat(&|s| &s.left))?,
            right: Tensor::new(&[n, 3, h, w], cat(&|s| &s.right))?,
            gt_disp: cat(&|s| &s.gt_disp),
            gt_class: samples.iter().flat_map(|s| s.gt_class.iter().copied()).collect(),
            valid: samples.iter().flat_map(|s| s.valid.iter().copied()).collect(),
        })
    }
}
