//! Separable linear resampling and average pooling.
//!
//! Multi-linear interpolation (bilinear, trilinear) is the composition of
//! one 1D linear interpolation per axis, so every op here acts on a single
//! axis and callers chain them.

use crate::element::{lit, Float};
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::{split_axis, Tensor};

/// How output sample positions map onto the input grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Align {
    /// Cell centres line up: `src = (i + 0.5) * in / out - 0.5`.
    HalfPixel,
    /// Sample `i` of the output sits on input coordinate `i * in / out`, so
    /// input sample `j` is reproduced exactly at output `j * out / in`.
    Origin,
}

/// For each output index: the two input taps and their weights.
fn taps(in_len: usize, out_len: usize, align: Align) -> Vec<(usize, usize, f64, f64)> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = match align {
                Align::HalfPixel => (i as f64 + 0.5) * ratio - 0.5,
                Align::Origin => i as f64 * ratio,
            }
            .max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            if i0 + 1 >= in_len {
                return (i0, i0, 1.0, 0.0);
            }
            let frac = src - i0 as f64;
            (i0, i0 + 1, 1.0 - frac, frac)
        })
        .collect()
}

impl<'p, T: Float> Graph<'p, T> {
    /// Linearly resamples `axis` to `out_len` samples.
    pub fn resize_axis(&self, x: Var, axis: usize, out_len: usize, align: Align) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() || shape[axis] == 0 || out_len == 0 {
            return Err(TensorError::argument("resize_axis", format!("axis {axis} of {shape:?} to {out_len}")));
        }
        let (outer, in_len, inner) = split_axis(&shape, axis);
        let taps: Vec<(usize, usize, T, T)> =
            taps(in_len, out_len, align).into_iter().map(|(a, b, wa, wb)| (a, b, lit(wa), lit(wb))).collect();
        let mut out_shape = shape.clone();
        out_shape[axis] = out_len;
        let mut out = vec![T::zero(); outer * out_len * inner];
        let xd = xv.data();
        for o in 0..outer {
            for (i, &(a, b, wa, wb)) in taps.iter().enumerate() {
                let dst = &mut out[(o * out_len + i) * inner..][..inner];
                let sa = &xd[(o * in_len + a) * inner..][..inner];
                let sb = &xd[(o * in_len + b) * inner..][..inner];
                for ((d, &va), &vb) in dst.iter_mut().zip(sa).zip(sb) {
                    *d = wa * va + wb * vb;
                }
            }
        }
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.op(out, &[x], move |g, _| {
            let mut dx = vec![T::zero(); outer * in_len * inner];
            let gd = g.data();
            for o in 0..outer {
                for (i, &(a, b, wa, wb)) in taps.iter().enumerate() {
                    let src = &gd[(o * out_len + i) * inner..][..inner];
                    for (j, &v) in src.iter().enumerate() {
                        dx[(o * in_len + a) * inner + j] += wa * v;
                        dx[(o * in_len + b) * inner + j] += wb * v;
                    }
                }
            }
            vec![Some(Tensor::new(&shape, dx).expect("input shape"))]
        }))
    }

    /// Upsamples each listed `(axis, factor, align)` in turn.
    pub fn upsample_linear(&self, x: Var, axes: &[(usize, usize, Align)]) -> Result<Var> {
        let mut cur = x;
        for &(axis, factor, align) in axes {
            let len = self.shape(cur).get(axis).copied().unwrap_or(0);
            cur = self.resize_axis(cur, axis, len * factor, align)?;
        }
        Ok(cur)
    }

    /// Non-overlapping mean over windows of `factor` along `axis`.
    pub fn avg_pool_axis(&self, x: Var, axis: usize, factor: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() || factor == 0 || shape[axis] % factor != 0 {
            return Err(TensorError::shape(
                "avg_pool_axis",
                format!("axis {axis} of {shape:?} not divisible by {factor}"),
            ));
        }
        let (outer, in_len, inner) = split_axis(&shape, axis);
        let out_len = in_len / factor;
        let inv: T = T::one() / lit(factor as f64);
        let mut out_shape = shape.clone();
        out_shape[axis] = out_len;
        let mut out = vec![T::zero(); outer * out_len * inner];
        let xd = xv.data();
        for o in 0..outer {
            for i in 0..in_len {
                let src = &xd[(o * in_len + i) * inner..][..inner];
                let dst = &mut out[(o * out_len + i / factor) * inner..][..inner];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += v * inv;
                }
            }
        }
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.op(out, &[x], move |g, _| {
            let mut dx = vec![T::zero(); outer * in_len * inner];
            let gd = g.data();
            for o in 0..outer {
                for i in 0..in_len {
                    let src = &gd[(o * out_len + i / factor) * inner..][..inner];
                    for (d, &v) in dx[(o * in_len + i) * inner..][..inner].iter_mut().zip(src) {
                        *d = v * inv;
                    }
                }
            }
            vec![Some(Tensor::new(&shape, dx).expect("input shape"))]
        }))
    }
}
