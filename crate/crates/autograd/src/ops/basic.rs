//! Element-wise arithmetic, activations, reductions and layout ops.

use crate::element::{lit, Float};
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::{numel, split_axis, Tensor};

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Row-major strides of `shape`, with zero stride on broadcast (size-1) axes
/// that differ from `full`.
fn broadcast_strides(full: &[usize], shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == full[i] { acc } else { 0 };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_index, small_index)` for every element of `full`.
fn for_each_broadcast(full: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = full.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = full[rank - 1];
    let inner_stride = strides[rank - 1];
    let outer = numel(&full[..rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let mut out = 0;
    for _ in 0..outer {
        let base: usize = idx.iter().zip(strides).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            f(out, base + j * inner_stride);
            out += 1;
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < full[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

impl<'p, T: Float> Graph<'p, T> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va.shape(), vb.shape())?;
        let mut out = (*va).clone();
        out.add_assign(&vb);
        Ok(self.op(out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va.shape(), vb.shape())?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.op(out, &[a, b], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    /// Element-wise product of equally shaped values.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va.shape(), vb.shape())?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape(), data)?;
        Ok(self.op(out, &[a, b], move |g, needs| {
            let prod = |other: &Tensor<T>| {
                let d = g.data().iter().zip(other.data()).map(|(&x, &y)| x * y).collect();
                Tensor::new(g.shape(), d).expect("same shape")
            };
            vec![needs[0].then(|| prod(&vb)), needs[1].then(|| prod(&va))]
        }))
    }

    pub fn scale(&self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|v| v * factor);
        self.op(out, &[a], move |g, _| vec![Some(g.map(|v| v * factor))])
    }

    /// `a + b` where every axis of `b` either matches `a` or has extent 1.
    pub fn add_broadcast(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        if sa.len() != sb.len() || sa.iter().zip(&sb).any(|(&x, &y)| y != x && y != 1) {
            return Err(TensorError::shape("add_broadcast", format!("{sb:?} does not broadcast to {sa:?}")));
        }
        let strides = broadcast_strides(&sa, &sb);
        let mut out = (*va).clone();
        {
            let od = out.data_mut();
            let bd = vb.data();
            for_each_broadcast(&sa, &strides, |o, s| od[o] += bd[s]);
        }
        Ok(self.op(out, &[a, b], move |g, needs| {
            let gb = needs[1].then(|| {
                let mut acc = Tensor::zeros(&sb);
                let ad = acc.data_mut();
                let gd = g.data();
                for_each_broadcast(&sa, &strides, |o, s| ad[s] += gd[o]);
                acc
            });
            vec![needs[0].then(|| g.clone()), gb]
        }))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(|x| x / (T::one() + (-x).exp()));
        self.op(out, &[a], move |g, _| {
            let d = g
                .data()
                .iter()
                .zip(va.data())
                .map(|(&gv, &x)| {
                    let s = T::one() / (T::one() + (-x).exp());
                    gv * (s + x * s * (T::one() - s))
                })
                .collect();
            vec![Some(Tensor::new(g.shape(), d).expect("same shape"))]
        })
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        let va = self.value(a);
        let out = va.map(|x| if x > T::zero() { x } else { x * slope });
        self.op(out, &[a], move |g, _| {
            let d = g
                .data()
                .iter()
                .zip(va.data())
                .map(|(&gv, &x)| if x > T::zero() { gv } else { gv * slope })
                .collect();
            vec![Some(Tensor::new(g.shape(), d).expect("same shape"))]
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        self.op(Tensor::scalar(va.sum()), &[a], move |g, _| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / lit(n as f64))
    }

    /// Reinterprets the shape without moving data.
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let old = va.shape().to_vec();
        let out = (*va).clone().reshape(shape)?;
        Ok(self.op(out, &[a], move |g, _| vec![Some(g.clone().reshape(&old).expect("same numel"))]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::argument("concat", "no inputs"));
        }
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values[0].shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::argument("concat", format!("axis {axis} out of range for {first:?}")));
        }
        for v in &values[1..] {
            let s = v.shape();
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(TensorError::shape("concat", format!("{first:?} vs {s:?} along axis {axis}")));
            }
        }
        let extents: Vec<usize> = values.iter().map(|v| v.dim(axis)).collect();
        let total: usize = extents.iter().sum();
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for (v, &e) in values.iter().zip(&extents) {
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        Ok(self.op(out, parts, move |g, needs| {
            let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(extents.len());
            let mut offset = 0;
            for (i, &e) in extents.iter().enumerate() {
                if needs[i] {
                    let mut s = shape.clone();
                    s[axis] = e;
                    let mut d = Vec::with_capacity(outer * e * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[start..start + e * inner]);
                    }
                    grads.push(Some(Tensor::new(&s, d).expect("slice shape")));
                } else {
                    grads.push(None);
                }
                offset += e;
            }
            grads
        }))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::argument(
                "narrow",
                format!("[{start}, {}) along axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * extent + start) * inner;
            data.extend_from_slice(&va.data()[s..s + len * inner]);
        }
        let out = Tensor::new(&out_shape, data)?;
        Ok(self.op(out, &[a], move |g, _| {
            let mut full = Tensor::zeros(&shape);
            let fd = full.data_mut();
            for o in 0..outer {
                let s = (o * extent + start) * inner;
                fd[s..s + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(full)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_add_and_reduce() {
        let store = ParamStore::<f64>::new();
        let g = Graph::new(&store);
        let a = g.input(Tensor::zeros(&[1, 2, 3, 2]));
        let b = g.input(t(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let c = g.add_broadcast(a, b).unwrap();
        assert_eq!(
            g.value(c).data(),
            &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]
        );
        let loss = g.sum(c);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.input(b).unwrap().data(), &[3.0; 4]);
        assert!(g.add_broadcast(a, g.input(Tensor::zeros(&[1, 2, 2, 2]))).is_err());
    }

    #[test]
    fn concat_then_narrow_roundtrip() {
        let store = ParamStore::<f64>::new();
        let g = Graph::new(&store);
        let a = g.input(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.input(t(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), vec![2, 3, 2]);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]);
        let back = g.narrow(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(back).data(), g.value(b).data());
        let w = g.constant(Tensor::from_fn(&[2, 2, 2], |i| i as f64));
        let loss = g.sum(g.mul(back, w).unwrap());
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.input(b).unwrap().data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(grads.input(a).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let store = ParamStore::<f32>::new();
        let g = Graph::new(&store);
        let a = g.constant(Tensor::zeros(&[2]));
        let b = g.constant(Tensor::zeros(&[3]));
        assert!(g.add(a, b).is_err());
        assert!(g.mul(a, b).is_err());
        assert!(g.narrow(a, 0, 1, 2).is_err());
    }
}
