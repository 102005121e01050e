//! Concatenation cost volume with a reserved semantic slot.
//!
//! Layout is `[N, C, D'+1, H', W']` with `C = 2 * F_d`. Slot 0 along the
//! disparity axis holds a learned projection of the semantic features; slot
//! `k >= 1` stacks the left disparity features with the right ones shifted
//! by `delta_k = (d_min + 4 (k - 1)) / 4` cells, so that for a positive
//! disparity `d` the right column `x - d/4` lines up with left column `x`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use semstereo_autograd::{Float, Graph, ParamId, ParamStore, Tensor, Var};

use crate::dcsfem::FeaturePair;
use crate::error::{precondition, Error, Result};
use crate::layers::{Conv, ConvSpec, Rank};

/// Cells per full-resolution pixel along each spatial axis.
pub const VOLUME_STRIDE: i64 = 4;

/// Candidate disparity range `[d_min, d_max)` in full-resolution pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisparityRange {
    pub d_min: i64,
    pub d_max: i64,
}

impl DisparityRange {
    pub fn new(d_min: i64, d_max: i64) -> Result<Self> {
        let r = Self { d_min, d_max };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_min >= self.d_max {
            return Err(Error::Config(format!("empty disparity range [{}, {})", self.d_min, self.d_max)));
        }
        if (self.d_max - self.d_min) % VOLUME_STRIDE != 0 {
            return Err(Error::Config(format!(
                "disparity range width {} is not a multiple of {VOLUME_STRIDE}",
                self.d_max - self.d_min
            )));
        }
        if self.d_min.rem_euclid(VOLUME_STRIDE) != 0 {
            return Err(Error::Config(format!("d_min ({}) must be a multiple of {VOLUME_STRIDE}", self.d_min)));
        }
        Ok(())
    }

    /// Number of disparity slices `D'` (excluding the semantic slot).
    pub fn num_slices(&self) -> usize {
        ((self.d_max - self.d_min) / VOLUME_STRIDE) as usize
    }

    /// Number of full-resolution candidates `D = d_max - d_min`.
    pub fn num_candidates(&self) -> usize {
        (self.d_max - self.d_min) as usize
    }

    /// Cell shift of disparity slice `k` (1-based, slot 0 is semantic).
    pub fn cell_shift(&self, k: usize) -> i64 {
        (self.d_min + VOLUME_STRIDE * (k as i64 - 1)) / VOLUME_STRIDE
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.d_min as f64 && d <= self.d_max as f64
    }
}

impl Default for DisparityRange {
    fn default() -> Self {
        Self { d_min: -64, d_max: 64 }
    }
}

/// Which images feed the semantic slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotSource {
    #[default]
    Both,
    Left,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostVolumeConfig {
    pub disp_features: usize,
    pub sem_features: usize,
    pub range: DisparityRange,
    pub slot_source: SlotSource,
    /// Zero-fill the disparity slices.
    pub disable_dcv: bool,
    /// Zero-fill the semantic slot.
    pub disable_scv: bool,
}

impl CostVolumeConfig {
    pub fn channels(&self) -> usize {
        2 * self.disp_features
    }
}

/// The learned part of the cost volume: the semantic slot projection.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolumeBuilder {
    pub config: CostVolumeConfig,
    projection: Conv,
}

impl CostVolumeBuilder {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: CostVolumeConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.range.validate()?;
        let cin = match config.slot_source {
            SlotSource::Both => 2 * config.sem_features,
            SlotSource::Left => config.sem_features,
        };
        let projection =
            Conv::new(store, &format!("{name}.slot_proj"), ConvSpec::new(Rank::Two, cin, config.channels(), 3), rng);
        Ok(Self { config, projection })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.projection.params().to_vec()
    }

    /// Builds the `[N, C, D'+1, H', W']` volume.
    pub fn build<T: Float>(&self, g: &Graph<'_, T>, left: &FeaturePair, right: &FeaturePair) -> Result<Var> {
        let (ls, rs) = (g.shape(left.disp), g.shape(right.disp));
        precondition(ls == rs, || format!("left/right disparity feature shapes differ: {ls:?} vs {rs:?}"))?;
        let (lsem, rsem) = (g.shape(left.sem), g.shape(right.sem));
        precondition(lsem == rsem, || format!("left/right semantic feature shapes differ: {lsem:?} vs {rsem:?}"))?;
        precondition(ls.len() == 4 && ls[1] == self.config.disp_features, || {
            format!("expected [N, {}, H', W'] disparity features, got {ls:?}", self.config.disp_features)
        })?;
        let (n, h, w) = (ls[0], ls[2], ls[3]);
        let c = self.config.channels();
        let slices = self.config.range.num_slices();

        let slot = if self.config.disable_scv {
            g.constant(Tensor::zeros(&[n, c, 1, h, w]))
        } else {
            let input = match self.config.slot_source {
                SlotSource::Both => g.concat(&[left.sem, right.sem], 1)?,
                SlotSource::Left => left.sem,
            };
            let proj = self.projection.forward(g, input)?;
            g.reshape(proj, &[n, c, 1, h, w])?
        };
        let disparity = if self.config.disable_dcv {
            g.constant(Tensor::zeros(&[n, c, slices, h, w]))
        } else {
            let shifts: Vec<i64> = (1..=slices).map(|k| self.config.range.cell_shift(k)).collect();
            shifted_stack(g, left.disp, right.disp, &shifts)?
        };
        Ok(g.concat(&[slot, disparity], 2)?)
    }
}

/// Stacks `[left, shift(right, s)]` along a new disparity axis for every
/// shift `s`, producing `[N, 2F, S, H, W]` from two `[N, F, H, W]` maps.
///
/// `shift(right, s)[.., x] = right[.., x - s]`, zero outside `[0, W)`.
pub fn shifted_stack<T: Float>(g: &Graph<'_, T>, left: Var, right: Var, shifts: &[i64]) -> Result<Var> {
    let (lv, rv) = (g.value(left), g.value(right));
    let shape = lv.shape().to_vec();
    precondition(shape.len() == 4 && shape == rv.shape(), || {
        format!("shifted_stack needs two equal [N, F, H, W] maps, got {shape:?} and {:?}", rv.shape())
    })?;
    let (n, f, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let s_len = shifts.len();
    let plane = h * w;
    let mut out = vec![T::zero(); n * 2 * f * s_len * plane];
    let (ld, rd) = (lv.data(), rv.data());
    for b in 0..n {
        for ch in 0..f {
            let src = (b * f + ch) * plane;
            for (k, &s) in shifts.iter().enumerate() {
                let l_dst = ((b * 2 * f + ch) * s_len + k) * plane;
                out[l_dst..l_dst + plane].copy_from_slice(&ld[src..src + plane]);
                let r_dst = ((b * 2 * f + f + ch) * s_len + k) * plane;
                let Some((x0, x1)) = valid_columns(w, s) else { continue };
                for y in 0..h {
                    let row = y * w;
                    let xs = (x0 as i64 - s) as usize;
                    out[r_dst + row + x0..r_dst + row + x1].copy_from_slice(&rd[src + row + xs..src + row + xs + (x1 - x0)]);
                }
            }
        }
    }
    let out = Tensor::new(&[n, 2 * f, s_len, h, w], out)?;
    let shifts = shifts.to_vec();
    Ok(g.op(out, &[left, right], move |grad, needs| {
        let gd = grad.data();
        let mut dl = needs[0].then(|| vec![T::zero(); n * f * plane]);
        let mut dr = needs[1].then(|| vec![T::zero(); n * f * plane]);
        for b in 0..n {
            for ch in 0..f {
                let dst = (b * f + ch) * plane;
                for (k, &s) in shifts.iter().enumerate() {
                    if let Some(dl) = dl.as_mut() {
                        let src = ((b * 2 * f + ch) * s_len + k) * plane;
                        for (d, &v) in dl[dst..dst + plane].iter_mut().zip(&gd[src..src + plane]) {
                            *d += v;
                        }
                    }
                    if let Some(dr) = dr.as_mut() {
                        let src = ((b * 2 * f + f + ch) * s_len + k) * plane;
                        let Some((x0, x1)) = valid_columns(w, s) else { continue };
                        for y in 0..h {
                            let row = y * w;
                            let xs = (x0 as i64 - s) as usize;
                            for i in 0..x1 - x0 {
                                dr[dst + row + xs + i] += gd[src + row + x0 + i];
                            }
                        }
                    }
                }
            }
        }
        let shape = [n, f, h, w];
        vec![
            dl.map(|d| Tensor::new(&shape, d).expect("left shape")),
            dr.map(|d| Tensor::new(&shape, d).expect("right shape")),
        ]
    }))
}

/// Output columns `[x0, x1)` whose source `x - s` lies inside `[0, w)`.
fn valid_columns(w: usize, s: i64) -> Option<(usize, usize)> {
    let w = w as i64;
    let x0 = s.max(0);
    let x1 = (w + s).min(w);
    (x0 < x1).then_some((x0 as usize, x1 as usize))
}
