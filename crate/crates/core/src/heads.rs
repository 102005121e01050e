//! Output heads: soft-argmax disparity regression and segmentation logits.

use rand::Rng;
use semstereo_autograd::{lit, Align, Float, Graph, ParamId, ParamStore, Var};

use crate::cost_volume::{DisparityRange, VOLUME_STRIDE};
use crate::error::{precondition, Error, Result};
use crate::layers::{Conv, ConvSpec, Rank};
use crate::sfm::{Sfm, SfmConfig};

/// Scores are matching costs: lower is better, so the softmax runs over
/// their negation.
pub const SCORE_SIGN: f64 = -1.0;

fn check_volume<T: Float>(g: &Graph<'_, T>, x: Var, channels: usize) -> Result<Vec<usize>> {
    let s = g.shape(x);
    precondition(s.len() == 5 && s[1] == channels && s[2] >= 2, || {
        format!("expected a [N, {channels}, D'+1, H', W'] volume, got {s:?}")
    })?;
    Ok(s)
}

/// Softmax over `SCORE_SIGN * scores` along axis 1 of `[N, D, H, W]`
/// followed by the expectation over candidates `d_min .. d_max - 1`.
pub fn soft_argmax<T: Float>(g: &Graph<'_, T>, scores: Var, range: &DisparityRange) -> Result<Var> {
    let s = g.shape(scores);
    let d = range.num_candidates();
    precondition(s.len() == 4 && s[1] == d, || format!("expected [N, {d}, H, W] scores, got {s:?}"))?;
    let p = g.softmax(g.scale(scores, lit(SCORE_SIGN)), 1)?;
    let coeffs = (range.d_min..range.d_max).map(|v| lit(v as f64)).collect();
    Ok(g.weighted_sum_axis(p, 1, coeffs)?)
}

/// Upsamples a `[N, 1, D', H', W']` score volume to `[N, D, H, W]`.
///
/// The disparity axis uses origin alignment so slice `j` lands exactly on
/// candidate `d_min + 4 j`; the spatial axes use half-pixel alignment.
pub fn upsample_scores<T: Float>(g: &Graph<'_, T>, scores: Var) -> Result<Var> {
    let s = g.shape(scores);
    precondition(s.len() == 5 && s[1] == 1, || format!("expected [N, 1, D', H', W'] scores, got {s:?}"))?;
    let f = VOLUME_STRIDE as usize;
    let up = g.upsample_linear(scores, &[(2, f, Align::Origin), (3, f, Align::HalfPixel), (4, f, Align::HalfPixel)])?;
    Ok(g.reshape(up, &[s[0], s[2] * f, s[3] * f, s[4] * f])?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisparityHead {
    pub channels: usize,
    pub range: DisparityRange,
    proj: Conv,
}

impl DisparityHead {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        range: DisparityRange,
        rng: &mut R,
    ) -> Result<Self> {
        range.validate()?;
        let proj = Conv::new(store, &format!("{name}.proj"), ConvSpec::new(Rank::Three, channels, 1, 3), rng);
        Ok(Self { channels, range, proj })
    }

    /// Raw `[N, 1, D', H', W']` matching scores for the disparity slices.
    pub fn scores<T: Float>(&self, g: &Graph<'_, T>, volume: Var) -> Result<Var> {
        let s = check_volume(g, volume, self.channels)?;
        precondition(s[2] - 1 == self.range.num_slices(), || {
            format!("volume has {} disparity slices, range needs {}", s[2] - 1, self.range.num_slices())
        })?;
        let disp = g.narrow(volume, 2, 1, s[2] - 1)?;
        self.proj.forward(g, disp)
    }

    /// Full-resolution `[N, H, W]` disparity.
    pub fn forward<T: Float>(&self, g: &Graph<'_, T>, volume: Var) -> Result<Var> {
        let scores = self.scores(g, volume)?;
        soft_argmax(g, upsample_scores(g, scores)?, &self.range)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.proj.params().to_vec()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationHead {
    pub channels: usize,
    pub num_classes: usize,
    pub sfm: Sfm,
    pub classifier: Conv,
}

impl SegmentationHead {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        num_classes: usize,
        gated_sfm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        let cfg = SfmConfig { gated: gated_sfm, ..SfmConfig::new(Rank::Two, channels, channels) };
        let sfm = Sfm::new(store, &format!("{name}.sfm"), cfg, rng)?;
        let classifier =
            Conv::new(store, &format!("{name}.cls"), ConvSpec::new(Rank::Two, channels, num_classes, 3), rng);
        Ok(Self { channels, num_classes, sfm, classifier })
    }

    /// Full-resolution `[N, K, H, W]` logits read from the semantic slot only.
    pub fn forward<T: Float>(&self, g: &Graph<'_, T>, volume: Var) -> Result<Var> {
        let s = check_volume(g, volume, self.channels)?;
        let slot = g.narrow(volume, 2, 0, 1)?;
        let slot = g.reshape(slot, &[s[0], s[1], s[3], s[4]])?;
        let x = self.sfm.forward(g, slot)?;
        let logits = self.classifier.forward(g, x)?;
        let f = VOLUME_STRIDE as usize;
        Ok(g.upsample_linear(logits, &[(2, f, Align::HalfPixel), (3, f, Align::HalfPixel)])?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = self.sfm.params();
        out.extend(self.classifier.params());
        out
    }
}
