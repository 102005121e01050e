//! Three-round 3D encoder-decoder over the cost volume.
//!
//! Each round runs a 3D self-fuse block over the whole volume, splits off the
//! semantic slot, encodes the disparity slices to half and quarter
//! resolution (adding the previous round's intermediate volumes and the
//! pooled semantic slot broadcast along the disparity axis), decodes back
//! and re-attaches the semantic slot. Rounds never share parameters.

use rand::Rng;
use semstereo_autograd::{Float, Graph, ParamId, ParamStore, Var};

use crate::error::{precondition, Error, Result};
use crate::layers::{Conv, ConvSpec, Rank};
use crate::sfm::{Sfm, SfmConfig};

pub const NUM_ROUNDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MfmConfig {
    /// Cost volume channels `C`.
    pub channels: usize,
    /// Hourglass skip from the half-resolution encoder to the decoder.
    pub intra_skip: bool,
    pub gated_sfm: bool,
}

impl MfmConfig {
    pub fn new(channels: usize) -> Self {
        Self { channels, intra_skip: true, gated_sfm: true }
    }
}

/// Volumes threaded between rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MfmState {
    /// `[N, C, D'+1, H', W']`.
    pub cost1: Var,
    /// `[N, 2C, D'/2, H'/2, W'/2]`, absent before the first round.
    pub cost2: Option<Var>,
    /// `[N, 4C, D'/4, H'/4, W'/4]`, absent before the first round.
    pub cost3: Option<Var>,
    pub round_index: usize,
}

impl MfmState {
    pub fn initial(cost1: Var) -> Self {
        Self { cost1, cost2: None, cost3: None, round_index: 0 }
    }
}

/// Per-round parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MfmRound {
    sfm: Sfm,
    enc2: Conv,
    enc3: Conv,
    sem2: Conv,
    sem3: Conv,
    dec2: Conv,
    dec1: Conv,
}

impl MfmRound {
    fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &MfmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let c = config.channels;
        let r3 = Rank::Three;
        let sfm_cfg = SfmConfig { gated: config.gated_sfm, ..SfmConfig::new(r3, c, c) };
        Ok(Self {
            sfm: Sfm::new(store, &format!("{name}.sfm"), sfm_cfg, rng)?,
            enc2: Conv::new(store, &format!("{name}.enc2"), ConvSpec::new(r3, c, 2 * c, 3).stride(2).gain(2.0), rng),
            enc3: Conv::new(store, &format!("{name}.enc3"), ConvSpec::new(r3, 2 * c, 4 * c, 3).stride(2).gain(2.0), rng),
            sem2: Conv::new(store, &format!("{name}.sem2"), ConvSpec::new(r3, c, 2 * c, 1), rng),
            sem3: Conv::new(store, &format!("{name}.sem3"), ConvSpec::new(r3, c, 4 * c, 1), rng),
            dec2: Conv::new(
                store,
                &format!("{name}.dec2"),
                ConvSpec::new(r3, 4 * c, 2 * c, 4).stride(2).padding(1).transposed().gain(2.0),
                rng,
            ),
            dec1: Conv::new(
                store,
                &format!("{name}.dec1"),
                ConvSpec::new(r3, 2 * c, c, 4).stride(2).padding(1).transposed().gain(0.5),
                rng,
            ),
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = self.sfm.params();
        for c in [&self.enc2, &self.enc3, &self.sem2, &self.sem3, &self.dec2, &self.dec1] {
            out.extend(c.params());
        }
        out
    }
}

/// Pools the `[N, C, 1, H', W']` semantic slot spatially by `factor`.
fn pool_hw<T: Float>(g: &Graph<'_, T>, x: Var, factor: usize) -> Result<Var> {
    let x = g.avg_pool_axis(x, 3, factor)?;
    Ok(g.avg_pool_axis(x, 4, factor)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mfm {
    pub config: MfmConfig,
    pub rounds: Vec<MfmRound>,
}

impl Mfm {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: MfmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.channels == 0 {
            return Err(Error::Config("cost volume channel count must be positive".into()));
        }
        let rounds = (0..NUM_ROUNDS)
            .map(|r| MfmRound::new(store, &format!("{name}.round{r}"), &config, rng))
            .collect::<Result<_>>()?;
        Ok(Self { config, rounds })
    }

    /// Runs one round, returning the next state and the round output.
    pub fn round<T: Float>(&self, g: &Graph<'_, T>, state: MfmState) -> Result<(MfmState, Var)> {
        let r = state.round_index;
        let params = self.rounds.get(r).ok_or_else(|| {
            Error::Precondition(format!("round index {r} out of range (0..{})", NUM_ROUNDS))
        })?;
        let shape = g.shape(state.cost1);
        let c = self.config.channels;
        precondition(shape.len() == 5 && shape[1] == c && shape[2] >= 2, || {
            format!("expected a [N, {c}, D'+1, H', W'] volume, got {shape:?}")
        })?;
        let (n, slices, h, w) = (shape[0], shape[2] - 1, shape[3], shape[4]);
        precondition(slices % 4 == 0 && h % 4 == 0 && w % 4 == 0, || {
            format!("D', H', W' must be multiples of 4, got {slices}, {h}, {w}")
        })?;
        let half = [n, 2 * c, slices / 2, h / 2, w / 2];
        let quarter = [n, 4 * c, slices / 4, h / 4, w / 4];
        for (skip, want, label) in [(state.cost2, &half, "cost2"), (state.cost3, &quarter, "cost3")] {
            if let Some(v) = skip {
                let got = g.shape(v);
                precondition(got == want, || format!("{label} has shape {got:?}, expected {want:?}"))?;
            }
        }

        let x = params.sfm.forward(g, state.cost1)?;
        let sem = g.narrow(x, 2, 0, 1)?;
        let disp = g.narrow(x, 2, 1, slices)?;

        let mut e2 = params.enc2.forward(g, disp)?;
        if let Some(skip) = state.cost2 {
            e2 = g.add(e2, skip)?;
        }
        let sem2 = params.sem2.forward(g, pool_hw(g, sem, 2)?)?;
        let e2 = g.silu(g.add_broadcast(e2, sem2)?);

        let mut e3 = params.enc3.forward(g, e2)?;
        if let Some(skip) = state.cost3 {
            e3 = g.add(e3, skip)?;
        }
        let sem3 = params.sem3.forward(g, pool_hw(g, sem, 4)?)?;
        let e3 = g.silu(g.add_broadcast(e3, sem3)?);

        let mut d2 = params.dec2.forward(g, e3)?;
        if self.config.intra_skip {
            d2 = g.add(d2, e2)?;
        }
        let d2 = g.silu(d2);
        let d1 = g.add(params.dec1.forward(g, d2)?, disp)?;

        let out = g.concat(&[sem, d1], 2)?;
        let next = MfmState { cost1: out, cost2: Some(e2), cost3: Some(e3), round_index: r + 1 };
        Ok((next, out))
    }

    /// All round outputs, in order; the last one feeds inference.
    pub fn forward<T: Float>(&self, g: &Graph<'_, T>, cost: Var) -> Result<Vec<Var>> {
        let mut state = MfmState::initial(cost);
        let mut outputs = Vec::with_capacity(NUM_ROUNDS);
        for _ in 0..NUM_ROUNDS {
            let (next, out) = self.round(g, state)?;
            outputs.push(out);
            state = next;
        }
        Ok(outputs)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.rounds.iter().flat_map(MfmRound::params).collect()
    }
}
