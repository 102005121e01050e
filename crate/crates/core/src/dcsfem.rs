//! Weight-shared feature extractor producing disparity and semantic features
//! at quarter resolution.
//!
//! The disparity path downsamples with two stride-2 convolutions and then
//! runs `num_scales` parallel dilated branches (dilation `1, 2, 4, ...`),
//! each closed by a 2D self-fuse block. The semantic path has its own
//! stride-2 stem followed by a sequence of residual blocks. The same
//! [`Dcsfem`] instance (and therefore the same parameters) is applied to
//! the left and the right image.

use rand::Rng;
use serde::{Deserialize, Serialize};
use semstereo_autograd::{Float, Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{precondition, Error, Result};
use crate::layers::{Conv, ConvSpec, Rank};
use crate::sfm::{Sfm, SfmConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcsfemConfig {
    pub base_channels: usize,
    /// Disparity feature channels, split as evenly as possible across
    /// scales (earlier scales take the remainder).
    pub disp_features: usize,
    pub sem_features: usize,
    pub num_scales: usize,
    pub num_res_blocks: usize,
}

impl Default for DcsfemConfig {
    fn default() -> Self {
        Self { base_channels: 32, disp_features: 64, sem_features: 32, num_scales: 3, num_res_blocks: 4 }
    }
}

impl DcsfemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.disp_features == 0 || self.sem_features == 0 || self.num_scales == 0 {
            return Err(Error::Config("feature extractor channel counts must be positive".into()));
        }
        if self.disp_features < self.num_scales {
            return Err(Error::Config(format!(
                "disp_features ({}) must be at least num_scales ({})",
                self.disp_features, self.num_scales
            )));
        }
        Ok(())
    }

    /// Output channels of each disparity branch.
    pub fn scale_channels(&self) -> Vec<usize> {
        let (q, r) = (self.disp_features / self.num_scales, self.disp_features % self.num_scales);
        (0..self.num_scales).map(|s| q + usize::from(s < r)).collect()
    }

    pub fn fused_channels(&self) -> usize {
        self.disp_features + self.sem_features
    }
}

/// Per-image extractor output, all at `H/4 x W/4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeaturePair {
    pub disp: Var,
    pub sem: Var,
    /// Channel concatenation `[disp, sem]`.
    pub fused: Var,
}

/// Ablation switches affecting the extractor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExtractorToggles {
    pub disable_dm: bool,
    pub disable_sm: bool,
    pub disable_sfm: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct ResBlock {
    first: Conv,
    second: Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dcsfem {
    pub config: DcsfemConfig,
    pub toggles: ExtractorToggles,
    disp_stem: [Conv; 2],
    branches: Vec<(Conv, Sfm)>,
    sem_stem: [Conv; 2],
    res_blocks: Vec<ResBlock>,
    sem_out: Conv,
}

fn stem<T: Float, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, base: usize, rng: &mut R) -> [Conv; 2] {
    [
        Conv::new(store, &format!("{name}.0"), ConvSpec::new(Rank::Two, 3, base, 3).stride(2).gain(2.0), rng),
        Conv::new(store, &format!("{name}.1"), ConvSpec::new(Rank::Two, base, base, 3).stride(2).gain(2.0), rng),
    ]
}

impl Dcsfem {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &DcsfemConfig,
        toggles: ExtractorToggles,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let base = config.base_channels;
        let disp_stem = stem(store, &format!("{name}.disp_stem"), base, rng);
        let mut branches = Vec::with_capacity(config.num_scales);
        for (s, per_scale) in config.scale_channels().into_iter().enumerate() {
            let dilation = 1 << s;
            let conv = Conv::new(
                store,
                &format!("{name}.branch{s}.conv"),
                ConvSpec::new(Rank::Two, base, per_scale, 3).dilation(dilation).gain(2.0),
                rng,
            );
            let sfm_cfg = SfmConfig { gated: !toggles.disable_sfm, ..SfmConfig::new(Rank::Two, per_scale, per_scale) };
            let sfm = Sfm::new(store, &format!("{name}.branch{s}.sfm"), sfm_cfg, rng)?;
            branches.push((conv, sfm));
        }
        let sem_stem = stem(store, &format!("{name}.sem_stem"), base, rng);
        let res_blocks = (0..config.num_res_blocks)
            .map(|i| ResBlock {
                first: Conv::new(store, &format!("{name}.res{i}.0"), ConvSpec::new(Rank::Two, base, base, 3).gain(2.0), rng),
                second: Conv::new(store, &format!("{name}.res{i}.1"), ConvSpec::new(Rank::Two, base, base, 3).gain(0.5), rng),
            })
            .collect();
        let sem_out = Conv::new(store, &format!("{name}.sem_out"), ConvSpec::new(Rank::Two, base, config.sem_features, 3), rng);
        Ok(Self { config: config.clone(), toggles, disp_stem, branches, sem_stem, res_blocks, sem_out })
    }

    fn run_stem<T: Float>(g: &Graph<'_, T>, stem: &[Conv; 2], image: Var) -> Result<Var> {
        let x = g.silu(stem[0].forward(g, image)?);
        Ok(g.silu(stem[1].forward(g, x)?))
    }

    fn disparity_path<T: Float>(&self, g: &Graph<'_, T>, image: Var) -> Result<Var> {
        let x = Self::run_stem(g, &self.disp_stem, image)?;
        let scales = self
            .branches
            .iter()
            .map(|(conv, sfm)| {
                let y = g.silu(conv.forward(g, x)?);
                sfm.forward(g, y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(g.concat(&scales, 1)?)
    }

    fn semantic_path<T: Float>(&self, g: &Graph<'_, T>, image: Var) -> Result<Var> {
        let mut x = Self::run_stem(g, &self.sem_stem, image)?;
        for block in &self.res_blocks {
            let h = g.silu(block.first.forward(g, x)?);
            let h = block.second.forward(g, h)?;
            x = g.silu(g.add(x, h)?);
        }
        self.sem_out.forward(g, x)
    }

    /// Extracts quarter-resolution features from an `[N, 3, H, W]` image.
    pub fn extract<T: Float>(&self, g: &Graph<'_, T>, image: Var) -> Result<FeaturePair> {
        let shape = g.shape(image);
        precondition(shape.len() == 4 && shape[1] == 3, || format!("expected an [N, 3, H, W] image, got {shape:?}"))?;
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        precondition(h % 16 == 0 && w % 16 == 0, || {
            format!("image height and width must be multiples of 16, got {h}x{w}")
        })?;
        let zeros = |c: usize| g.constant(Tensor::zeros(&[n, c, h / 4, w / 4]));
        let disp = if self.toggles.disable_dm {
            zeros(self.config.disp_features)
        } else {
            self.disparity_path(g, image)?
        };
        let sem = if self.toggles.disable_sm {
            zeros(self.config.sem_features)
        } else {
            self.semantic_path(g, image)?
        };
        let fused = g.concat(&[disp, sem], 1)?;
        Ok(FeaturePair { disp, sem, fused })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out: Vec<ParamId> = self.disp_stem.iter().flat_map(|c| c.params()).collect();
        for (conv, sfm) in &self.branches {
            out.extend(conv.params());
            out.extend(sfm.params());
        }
        out.extend(self.sem_stem.iter().flat_map(|c| c.params()));
        for b in &self.res_blocks {
            out.extend(b.first.params());
            out.extend(b.second.params());
        }
        out.extend(self.sem_out.params());
        out
    }

    /// Parameters of the first convolution of each path.
    pub fn first_layer_params(&self) -> Vec<ParamId> {
        let mut out = self.disp_stem[0].params().to_vec();
        out.extend(self.sem_stem[0].params());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DcsfemConfig {
        DcsfemConfig { base_channels: 4, disp_features: 6, sem_features: 4, num_scales: 3, num_res_blocks: 2 }
    }

    fn image(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[n, 3, h, w], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn default_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let net = Dcsfem::new(&mut store, "f", &DcsfemConfig::default(), ExtractorToggles::default(), &mut rng).unwrap();
        let g = Graph::inference(&store);
        let x = g.constant(image(2, 256, 256, 1));
        let f = net.extract(&g, x).unwrap();
        assert_eq!(g.shape(f.fused), vec![2, 96, 64, 64]);
        assert_eq!(g.shape(f.disp), vec![2, 64, 64, 64]);
        assert_eq!(g.shape(f.sem), vec![2, 32, 64, 64]);
    }

    #[test]
    fn rejects_sizes_not_multiple_of_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let net = Dcsfem::new(&mut store, "f", &small(), ExtractorToggles::default(), &mut rng).unwrap();
        let g = Graph::inference(&store);
        let x = g.constant(image(1, 40, 32, 1));
        let err = net.extract(&g, x).unwrap_err();
        assert!(err.to_string().contains("multiples of 16"), "{err}");
    }

    #[test]
    fn uneven_channel_split() {
        assert_eq!(DcsfemConfig::default().scale_channels(), vec![22, 21, 21]);
        let cfg = DcsfemConfig { disp_features: 2, ..small() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn wider_disparity_features_add_parameters() {
        let count = |cfg: &DcsfemConfig| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut store = ParamStore::<f32>::new();
            Dcsfem::new(&mut store, "f", cfg, ExtractorToggles::default(), &mut rng).unwrap();
            store.num_scalars()
        };
        let base = DcsfemConfig::default();
        let wide = DcsfemConfig { disp_features: 128, ..base.clone() };
        assert_eq!(wide.fused_channels(), 160);
        assert!(count(&wide) > count(&base));
    }

    #[test]
    fn ablation_zero_fills_disabled_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let toggles = ExtractorToggles { disable_dm: true, ..Default::default() };
        let net = Dcsfem::new(&mut store, "f", &small(), toggles, &mut rng).unwrap();
        let g = Graph::inference(&store);
        let x = g.constant(image(1, 32, 32, 2));
        let f = net.extract(&g, x).unwrap();
        assert_eq!(g.value(f.disp).max_abs(), 0.0);
        assert!(g.value(f.sem).max_abs() > 0.0);
    }
}
