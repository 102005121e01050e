//! Softmax, axis contractions and masked loss functions.

use std::rc::Rc;

use crate::element::{lit, Float};
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::{split_axis, Tensor};

impl<'p, T: Float> Graph<'p, T> {
    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::argument("softmax", format!("axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xd = xv.data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |k: usize| (o * len + k) * inner + j;
                let mut m = T::neg_infinity();
                for k in 0..len {
                    m = m.max(xd[at(k)]);
                }
                let mut s = T::zero();
                for k in 0..len {
                    let e = (xd[at(k)] - m).exp();
                    out[at(k)] = e;
                    s += e;
                }
                for k in 0..len {
                    out[at(k)] /= s;
                }
            }
        }
        let y = Rc::new(Tensor::new(&shape, out)?);
        let yc = Rc::clone(&y);
        Ok(self.op((*y).clone(), &[x], move |g, _| {
            let (gd, yd) = (g.data(), yc.data());
            let mut dx = vec![T::zero(); gd.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + j;
                    let dot: T = (0..len).map(|k| gd[at(k)] * yd[at(k)]).sum();
                    for k in 0..len {
                        dx[at(k)] = yd[at(k)] * (gd[at(k)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(&shape, dx).expect("shape"))]
        }))
    }

    /// Contracts `axis` against fixed coefficients: `out = sum_k c[k] * x[.., k, ..]`.
    pub fn weighted_sum_axis(&self, x: Var, axis: usize, coeffs: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() || shape[axis] != coeffs.len() {
            return Err(TensorError::shape(
                "weighted_sum_axis",
                format!("{} coefficients for axis {axis} of {shape:?}", coeffs.len()),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xd = xv.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (k, &c) in coeffs.iter().enumerate() {
                for (d, &v) in dst.iter_mut().zip(&xd[(o * len + k) * inner..][..inner]) {
                    *d += c * v;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let out = Tensor::new(&out_shape, out)?;
        Ok(self.op(out, &[x], move |g, _| {
            let gd = g.data();
            let mut dx = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for (k, &c) in coeffs.iter().enumerate() {
                    for (d, &v) in dx[(o * len + k) * inner..][..inner].iter_mut().zip(&gd[o * inner..][..inner]) {
                        *d = c * v;
                    }
                }
            }
            vec![Some(Tensor::new(&shape, dx).expect("shape"))]
        }))
    }

    /// Mean smooth-L1 (Huber with transition `beta`) between `pred` and
    /// `target` over positions where `mask` is set; zero when the mask is empty.
    pub fn smooth_l1_masked(&self, pred: Var, target: &[T], mask: &[bool], beta: T) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != target.len() || pv.len() != mask.len() {
            return Err(TensorError::shape(
                "smooth_l1_masked",
                format!("pred {:?}, target {}, mask {}", pv.shape(), target.len(), mask.len()),
            ));
        }
        if beta <= T::zero() {
            return Err(TensorError::argument("smooth_l1_masked", "beta must be positive"));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let half: T = lit(0.5);
        let mut total = T::zero();
        let mut dpred = vec![T::zero(); pv.len()];
        if count > 0 {
            let inv: T = T::one() / lit(count as f64);
            for (i, ((&p, &t), &m)) in pv.data().iter().zip(target).zip(mask).enumerate() {
                if !m {
                    continue;
                }
                let d = p - t;
                let a = d.abs();
                if a < beta {
                    total += half * d * d / beta;
                    dpred[i] = d / beta * inv;
                } else {
                    total += a - half * beta;
                    dpred[i] = d.signum() * inv;
                }
            }
            total *= inv;
        }
        let shape = pv.shape().to_vec();
        Ok(self.op(Tensor::scalar(total), &[pred], move |g, _| {
            let s = g.item();
            vec![Some(Tensor::new(&shape, dpred.iter().map(|&v| v * s).collect()).expect("shape"))]
        }))
    }

    /// Mean cross-entropy of `[N, K, ...]` logits against integer labels,
    /// skipping positions labelled `ignore`; zero when nothing is labelled.
    pub fn cross_entropy_masked(&self, logits: Var, labels: &[u8], ignore: u8) -> Result<Var> {
        let lv = self.value(logits);
        let shape = lv.shape().to_vec();
        if shape.len() < 2 {
            return Err(TensorError::shape("cross_entropy_masked", format!("logits {shape:?}")));
        }
        let (n, k) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        if labels.len() != n * inner {
            return Err(TensorError::shape(
                "cross_entropy_masked",
                format!("{} labels for logits {shape:?}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != ignore && l as usize >= k) {
            return Err(TensorError::argument("cross_entropy_masked", format!("label {bad} with {k} classes")));
        }
        let count = labels.iter().filter(|&&l| l != ignore).count();
        let ld = lv.data();
        let mut total = T::zero();
        let mut dl = vec![T::zero(); ld.len()];
        if count > 0 {
            let inv: T = T::one() / lit(count as f64);
            for b in 0..n {
                for j in 0..inner {
                    let label = labels[b * inner + j];
                    if label == ignore {
                        continue;
                    }
                    let at = |c: usize| (b * k + c) * inner + j;
                    let m = (0..k).map(|c| ld[at(c)]).fold(T::neg_infinity(), T::max);
                    let s: T = (0..k).map(|c| (ld[at(c)] - m).exp()).sum();
                    let lse = m + s.ln();
                    total += lse - ld[at(label as usize)];
                    for c in 0..k {
                        let p = (ld[at(c)] - lse).exp();
                        let y = if c == label as usize { T::one() } else { T::zero() };
                        dl[at(c)] = (p - y) * inv;
                    }
                }
            }
            total *= inv;
        }
        Ok(self.op(Tensor::scalar(total), &[logits], move |g, _| {
            let s = g.item();
            vec![Some(Tensor::new(&shape, dl.iter().map(|&v| v * s).collect()).expect("shape"))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    #[test]
    fn softmax_rows_sum_to_one() {
        let store = ParamStore::<f64>::new();
        let g = Graph::new(&store);
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| (i as f64 * 0.37).sin() * 5.0));
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y);
        for o in 0..2 {
            for j in 0..4 {
                let s: f64 = (0..3).map(|k| v.data()[(o * 3 + k) * 4 + j]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smooth_l1_closed_form() {
        // errors 0.5 and 2.0 with beta 1: (0.125 + 1.5) / 2
        let store = ParamStore::<f64>::new();
        let g = Graph::new(&store);
        let p = g.input(Tensor::new(&[2, 2], vec![0.5, 2.0, 9.0, 9.0]).unwrap());
        let l = g.smooth_l1_masked(p, &[0.0; 4], &[true, true, false, false], 1.0).unwrap();
        assert_eq!(g.value(l).item(), 0.8125);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.input(p).unwrap().data(), &[0.25, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let store = ParamStore::<f64>::new();
        let g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(&[1, 4, 2]));
        let l = g.cross_entropy_masked(x, &[1, 255], 255).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
        assert!(g.cross_entropy_masked(x, &[7, 0], 255).is_err());
        let empty = g.cross_entropy_masked(x, &[255, 255], 255).unwrap();
        assert_eq!(g.value(empty).item(), 0.0);
    }
}
