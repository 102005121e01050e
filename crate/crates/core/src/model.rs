//! End-to-end network: shared feature extractor, cost volume, three fusion
//! rounds and per-round output heads.

use rand::Rng;
use serde::{Deserialize, Serialize};
use semstereo_autograd::{Float, Graph, ParamId, ParamStore, Tensor, Var};

use crate::cost_volume::{CostVolumeBuilder, CostVolumeConfig, DisparityRange, SlotSource};
use crate::dcsfem::{Dcsfem, DcsfemConfig, ExtractorToggles};
use crate::error::{precondition, Error, Result};
use crate::heads::{DisparityHead, SegmentationHead};
use crate::mfm::{Mfm, MfmConfig, NUM_ROUNDS};

pub const DEFAULT_CLASS_NAMES: [&str; 5] = ["Ground", "Tree", "Building", "Water", "Bridge"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub disp_features: usize,
    pub sem_features: usize,
    pub num_scales: usize,
    pub num_res_blocks: usize,
    pub d_min: i64,
    pub d_max: i64,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub disable_dm: bool,
    pub disable_sm: bool,
    pub disable_sfm: bool,
    pub disable_dcv: bool,
    pub disable_scv: bool,
    pub slot_source: SlotSource,
    pub intra_skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let f = DcsfemConfig::default();
        Self {
            base_channels: f.base_channels,
            disp_features: f.disp_features,
            sem_features: f.sem_features,
            num_scales: f.num_scales,
            num_res_blocks: f.num_res_blocks,
            d_min: -64,
            d_max: 64,
            num_classes: 5,
            class_names: DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            disable_dm: false,
            disable_sm: false,
            disable_sfm: false,
            disable_dcv: false,
            disable_scv: false,
            slot_source: SlotSource::Both,
            intra_skip: true,
        }
    }
}

impl ModelConfig {
    pub fn extractor(&self) -> DcsfemConfig {
        DcsfemConfig {
            base_channels: self.base_channels,
            disp_features: self.disp_features,
            sem_features: self.sem_features,
            num_scales: self.num_scales,
            num_res_blocks: self.num_res_blocks,
        }
    }

    pub fn range(&self) -> DisparityRange {
        DisparityRange { d_min: self.d_min, d_max: self.d_max }
    }

    pub fn channels(&self) -> usize {
        2 * self.disp_features
    }

    /// Whether the disparity output is trained and reported.
    pub fn predicts_disparity(&self) -> bool {
        !self.disable_dcv
    }

    /// Whether the segmentation output is trained and reported.
    pub fn predicts_classes(&self) -> bool {
        !self.disable_scv
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor().validate()?;
        self.range().validate()?;
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::Config(format!(
                "{} class names given for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Graph handles for one round's outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundOutput {
    /// `[N, H, W]`.
    pub disparity: Var,
    /// `[N, K, H, W]`.
    pub logits: Var,
}

/// Materialised inference output of the final round.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[N, H, W]` disparity in pixels.
    pub disparity: Tensor<f32>,
    /// `[N, K, H, W]` raw class scores.
    pub logits: Tensor<f32>,
    pub round_id: usize,
}

impl Prediction {
    /// Per-pixel argmax over classes, ties resolved to the lowest index.
    /// Returns one `H * W` map per batch element.
    pub fn class_map(&self) -> Vec<Vec<u8>> {
        argmax_classes(&self.logits)
    }
}

pub fn argmax_classes(logits: &Tensor<f32>) -> Vec<Vec<u8>> {
    let s = logits.shape();
    let (n, k, plane) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    (0..n)
        .map(|b| {
            (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for c in 1..k {
                        if d[(b * k + c) * plane + p] > d[(b * k + best) * plane + p] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemStereoNet {
    pub config: ModelConfig,
    pub extractor: Dcsfem,
    pub cost_volume: CostVolumeBuilder,
    pub mfm: Mfm,
    pub disparity_heads: Vec<DisparityHead>,
    pub segmentation_heads: Vec<SegmentationHead>,
}

impl SemStereoNet {
    /// Creates the network and registers its parameters in `store`.
    pub fn new<T: Float, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let toggles = ExtractorToggles {
            disable_dm: config.disable_dm,
            disable_sm: config.disable_sm,
            disable_sfm: config.disable_sfm,
        };
        let extractor = Dcsfem::new(store, "features", &config.extractor(), toggles, rng)?;
        let cv_config = CostVolumeConfig {
            disp_features: config.disp_features,
            sem_features: config.sem_features,
            range: config.range(),
            slot_source: config.slot_source,
            disable_dcv: config.disable_dcv,
            disable_scv: config.disable_scv,
        };
        let cost_volume = CostVolumeBuilder::new(store, "cost", cv_config, rng)?;
        let c = config.channels();
        let mfm_config = MfmConfig { channels: c, intra_skip: config.intra_skip, gated_sfm: !config.disable_sfm };
        let mfm = Mfm::new(store, "mfm", mfm_config, rng)?;
        let mut disparity_heads = Vec::with_capacity(NUM_ROUNDS);
        let mut segmentation_heads = Vec::with_capacity(NUM_ROUNDS);
        for r in 0..NUM_ROUNDS {
            disparity_heads.push(DisparityHead::new(store, &format!("head{r}.disp"), c, config.range(), rng)?);
            segmentation_heads.push(SegmentationHead::new(
                store,
                &format!("head{r}.seg"),
                c,
                config.num_classes,
                !config.disable_sfm,
                rng,
            )?);
        }
        Ok(Self { config: config.clone(), extractor, cost_volume, mfm, disparity_heads, segmentation_heads })
    }

    /// Runs the network on `[N, 3, H, W]` left/right images.
    pub fn forward<T: Float>(&self, g: &Graph<'_, T>, left: Var, right: Var) -> Result<Vec<RoundOutput>> {
        let (ls, rs) = (g.shape(left), g.shape(right));
        precondition(ls == rs, || format!("left and right images differ in shape: {ls:?} vs {rs:?}"))?;
        let lf = self.extractor.extract(g, left)?;
        let rf = self.extractor.extract(g, right)?;
        let volume = self.cost_volume.build(g, &lf, &rf)?;
        let rounds = self.mfm.forward(g, volume)?;
        rounds
            .iter()
            .zip(self.disparity_heads.iter().zip(&self.segmentation_heads))
            .map(|(&v, (dh, sh))| Ok(RoundOutput { disparity: dh.forward(g, v)?, logits: sh.forward(g, v)? }))
            .collect()
    }

    /// Final-round prediction without recording gradients.
    pub fn predict(&self, store: &ParamStore<f32>, left: &Tensor<f32>, right: &Tensor<f32>) -> Result<Prediction> {
        let g = Graph::inference(store);
        let outs = self.forward(&g, g.constant(left.clone()), g.constant(right.clone()))?;
        let last = outs.last().expect("three rounds");
        Ok(Prediction {
            disparity: (*g.value(last.disparity)).clone(),
            logits: (*g.value(last.logits)).clone(),
            round_id: NUM_ROUNDS,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = self.extractor.params();
        out.extend(self.cost_volume.params());
        out.extend(self.mfm.params());
        for (d, s) in self.disparity_heads.iter().zip(&self.segmentation_heads) {
            out.extend(d.params());
            out.extend(s.params());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn class_name_count_must_match() {
        let cfg = ModelConfig { num_classes: 3, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let logits = Tensor::new(&[1, 3, 1, 2], vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(argmax_classes(&logits), vec![vec![0, 1]]);
    }
}
