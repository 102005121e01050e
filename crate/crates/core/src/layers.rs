//! Convolution layers bound to a [`ParamStore`].

use rand::Rng;
use semstereo_autograd::{ConvOptions, Float, Graph, Init, ParamId, ParamStore, Var};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    Two,
    Three,
}

impl Rank {
    /// Rank of the `[N, C, spatial...]` tensors this rank operates on.
    pub fn tensor_rank(self) -> usize {
        match self {
            Rank::Two => 4,
            Rank::Three => 5,
        }
    }
}

/// Shape and initialisation of a single convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvSpec {
    pub rank: Rank,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub transposed: bool,
    pub weight_init: WeightInit,
    pub bias_init: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightInit {
    /// Variance `gain / fan_in`.
    FanIn(f64),
    Zeros,
}

impl ConvSpec {
    /// Stride-1 convolution that preserves spatial size (odd `kernel`).
    pub fn new(rank: Rank, cin: usize, cout: usize, kernel: usize) -> Self {
        Self {
            rank,
            cin,
            cout,
            kernel,
            stride: 1,
            padding: (kernel - 1) / 2,
            dilation: 1,
            transposed: false,
            weight_init: WeightInit::FanIn(1.0),
            bias_init: 0.0,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    /// Dilation with padding adjusted to keep stride-1 outputs same-sized.
    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self.padding = dilation * (self.kernel - 1) / 2;
        self
    }

    /// Transposed convolution, used for learned upsampling.
    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }

    pub fn gain(mut self, gain: f64) -> Self {
        self.weight_init = WeightInit::FanIn(gain);
        self
    }

    pub fn zero_weights(mut self) -> Self {
        self.weight_init = WeightInit::Zeros;
        self
    }

    pub fn bias(mut self, value: f64) -> Self {
        self.bias_init = value;
        self
    }

    fn weight_shape(&self) -> Vec<usize> {
        let (a, b) = if self.transposed { (self.cin, self.cout) } else { (self.cout, self.cin) };
        match self.rank {
            Rank::Two => vec![a, b, self.kernel, self.kernel],
            Rank::Three => vec![a, b, self.kernel, self.kernel, self.kernel],
        }
    }

    fn fan_in(&self) -> usize {
        let kvol = match self.rank {
            Rank::Two => self.kernel.pow(2),
            Rank::Three => self.kernel.pow(3),
        };
        if self.transposed {
            // Each output sees roughly cin * kvol / stride^rank inputs.
            let s = self.stride.pow(self.rank.tensor_rank() as u32 - 2);
            (self.cin * kvol / s).max(1)
        } else {
            self.cin * kvol
        }
    }

    fn options(&self) -> ConvOptions {
        let s = self.stride;
        let p = self.padding;
        let d = self.dilation;
        match self.rank {
            Rank::Two => ConvOptions::conv2d(s, p, d),
            Rank::Three => ConvOptions { stride: [s; 3], padding: [p; 3], dilation: [d; 3] },
        }
    }
}

/// A convolution (or transposed convolution) with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut R,
    ) -> Self {
        let shape = spec.weight_shape();
        let w = match spec.weight_init {
            WeightInit::FanIn(gain) => Init::FanIn { fan_in: spec.fan_in(), gain }.tensor(&shape, rng),
            WeightInit::Zeros => Init::Constant(0.0).tensor(&shape, rng),
        };
        let weight = store.insert(format!("{name}.weight"), w);
        let bias = store.insert(format!("{name}.bias"), Init::Constant(spec.bias_init).tensor(&[spec.cout], rng));
        Self { spec, weight, bias }
    }

    pub fn forward<T: Float>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let opts = self.spec.options();
        Ok(if self.spec.transposed {
            g.conv_transpose(x, w, Some(b), opts)?
        } else {
            g.conv(x, w, Some(b), opts)?
        })
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use semstereo_autograd::Tensor;

    #[test]
    fn dilated_conv_preserves_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let conv = Conv::new(&mut store, "c", ConvSpec::new(Rank::Two, 3, 5, 3).dilation(4), &mut rng);
        let g = Graph::new(&store);
        let x = g.constant(Tensor::ones(&[1, 3, 16, 12]));
        let y = conv.forward(&g, x).unwrap();
        assert_eq!(g.shape(y), vec![1, 5, 16, 12]);
    }

    #[test]
    fn strided_and_transposed_3d_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let down = Conv::new(&mut store, "d", ConvSpec::new(Rank::Three, 4, 8, 3).stride(2), &mut rng);
        let up = Conv::new(&mut store, "u", ConvSpec::new(Rank::Three, 8, 4, 4).stride(2).padding(1).transposed(), &mut rng);
        let g = Graph::new(&store);
        let x = g.constant(Tensor::ones(&[2, 4, 8, 16, 16]));
        let y = down.forward(&g, x).unwrap();
        assert_eq!(g.shape(y), vec![2, 8, 4, 8, 8]);
        let z = up.forward(&g, y).unwrap();
        assert_eq!(g.shape(z), vec![2, 4, 8, 16, 16]);
    }
}
