//! Self-fuse block: a dual-branch gated convolution.
//!
//! Two convolutions `A` and `B` with independent weights see the same input;
//! their outputs are multiplied element-wise and passed through a trailing
//! convolution `G`:
//!
//! ```text
//! out = G(A(x) * B(x))
//! ```
//!
//! The product is the only nonlinearity. `B` starts with near-zero weights
//! and unit bias, so a freshly initialised block behaves like `G o A`.

use rand::Rng;
use semstereo_autograd::{Float, Graph, ParamId, ParamStore, Var};

use crate::error::{Error, Result};
use crate::layers::{Conv, ConvSpec, Rank};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SfmConfig {
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel_size: usize,
    pub rank: Rank,
    /// When false the block collapses to the single convolution `A`
    /// (the "without SFM" ablation).
    pub gated: bool,
}

impl SfmConfig {
    pub fn new(rank: Rank, channels_in: usize, channels_out: usize) -> Self {
        Self { channels_in, channels_out, kernel_size: 3, rank, gated: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("SFM kernel size must be odd, got {}", self.kernel_size)));
        }
        if self.channels_in == 0 || self.channels_out == 0 {
            return Err(Error::Config("SFM channel counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sfm {
    pub config: SfmConfig,
    pub branch_a: Conv,
    pub branch_b: Option<Conv>,
    pub fuse: Option<Conv>,
}

impl Sfm {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: SfmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let SfmConfig { channels_in: cin, channels_out: cout, kernel_size: k, rank, gated } = config;
        let branch_a = Conv::new(store, &format!("{name}.a"), ConvSpec::new(rank, cin, cout, k), rng);
        let (branch_b, fuse) = if gated {
            let b = Conv::new(store, &format!("{name}.b"), ConvSpec::new(rank, cin, cout, k).gain(1e-4).bias(1.0), rng);
            let g = Conv::new(store, &format!("{name}.g"), ConvSpec::new(rank, cout, cout, k), rng);
            (Some(b), Some(g))
        } else {
            (None, None)
        };
        Ok(Self { config, branch_a, branch_b, fuse })
    }

    pub fn forward<T: Float>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != self.config.rank.tensor_rank() {
            return Err(Error::Precondition(format!(
                "{:?} SFM expects a rank-{} input, got {:?}",
                self.config.rank,
                self.config.rank.tensor_rank(),
                shape
            )));
        }
        let a = self.branch_a.forward(g, x)?;
        match (&self.branch_b, &self.fuse) {
            (Some(b), Some(fuse)) => {
                let b = b.forward(g, x)?;
                let gated = g.mul(a, b)?;
                fuse.forward(g, gated)
            }
            _ => Ok(a),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = self.branch_a.params().to_vec();
        for c in self.branch_b.iter().chain(&self.fuse) {
            out.extend(c.params());
        }
        out
    }
}
