//! 2D/3D convolution and transposed convolution via chunked im2col + GEMM.
//!
//! A 2D convolution is handled as a 3D one with unit depth, so both ranks
//! share every kernel below. Tensors are laid out as
//! `[N, C, D, H, W]` (or `[N, C, H, W]`), weights as `[C_out, C_in, k...]`
//! for convolution and `[C_in, C_out, k...]` for transposed convolution.

use crate::element::Float;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Target number of im2col columns processed per GEMM call.
const CHUNK_COLS: usize = 8192;

/// Stride, zero padding and dilation per spatial axis, in `[depth, height,
/// width]` order. For 2D convolutions the depth entries are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvOptions {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
}

impl ConvOptions {
    pub fn conv2d(stride: usize, padding: usize, dilation: usize) -> Self {
        Self { stride: [1, stride, stride], padding: [0, padding, padding], dilation: [1, dilation, dilation] }
    }

    pub fn conv3d(stride: usize, padding: usize) -> Self {
        Self { stride: [stride; 3], padding: [padding; 3], dilation: [1; 3] }
    }

    /// Stride 1 with the padding that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        let p = dilation * (kernel - 1) / 2;
        Self { stride: [1; 3], padding: [p; 3], dilation: [dilation; 3] }
    }
}

fn out_extent(input: usize, k: usize, s: usize, p: usize, d: usize) -> Option<usize> {
    let eff = d * (k - 1) + 1;
    if s == 0 || input + 2 * p < eff {
        return None;
    }
    Some((input + 2 * p - eff) / s + 1)
}

/// Geometry of a convolution mapping `inp` (with `cin` channels) to `out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geom {
    pub cin: usize,
    pub cout: usize,
    pub inp: [usize; 3],
    pub k: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub dil: [usize; 3],
    pub out: [usize; 3],
}

impl Geom {
    pub fn new(cin: usize, cout: usize, inp: [usize; 3], k: [usize; 3], opts: ConvOptions) -> Option<Self> {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = out_extent(inp[a], k[a], opts.stride[a], opts.padding[a], opts.dilation[a])?;
        }
        Some(Self { cin, cout, inp, k, stride: opts.stride, pad: opts.padding, dil: opts.dilation, out })
    }

    fn kvol(&self) -> usize {
        self.k.iter().product()
    }

    fn krows(&self) -> usize {
        self.cin * self.kvol()
    }

    fn in_len(&self) -> usize {
        self.inp.iter().product()
    }

    fn out_len(&self) -> usize {
        self.out.iter().product()
    }

    fn is_pointwise(&self) -> bool {
        self.kvol() == 1 && self.stride == [1; 3] && self.pad == [0; 3]
    }

    fn rows_per_chunk(&self) -> usize {
        (CHUNK_COLS / self.out[2].max(1)).max(1)
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `off`
/// (input index = o * s + off).
#[inline]
fn valid_range(out: usize, input: usize, s: usize, off: isize) -> (usize, usize) {
    let s_i = s as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s_i - 1) / s_i } as usize;
    let last = input as isize - 1 - off;
    let hi = if last < 0 { 0 } else { (last / s_i + 1) as usize };
    (lo.min(out), hi.min(out))
}

/// Fills `cols` (`krows x pc`) with the patches of output rows `[r0, r1)`,
/// where a row is one `(z, y)` pair of the output volume.
fn im2col<T: Float>(x: &[T], g: &Geom, r0: usize, r1: usize, cols: &mut [T]) {
    let [_, ih, iw] = g.inp;
    let [_, oh, ow] = g.out;
    let pc = (r1 - r0) * ow;
    let in_len = g.in_len();
    let mut row = 0;
    for ci in 0..g.cin {
        let xc = &x[ci * in_len..(ci + 1) * in_len];
        for kz in 0..g.k[0] {
            for ky in 0..g.k[1] {
                for kx in 0..g.k[2] {
                    let dst = &mut cols[row * pc..(row + 1) * pc];
                    let offx = (kx * g.dil[2]) as isize - g.pad[2] as isize;
                    let (lo, hi) = valid_range(ow, iw, g.stride[2], offx);
                    for (j, zy) in (r0..r1).enumerate() {
                        let drow = &mut dst[j * ow..(j + 1) * ow];
                        let iz = ((zy / oh) * g.stride[0] + kz * g.dil[0]) as isize - g.pad[0] as isize;
                        let iy = ((zy % oh) * g.stride[1] + ky * g.dil[1]) as isize - g.pad[1] as isize;
                        if iz < 0 || iz >= g.inp[0] as isize || iy < 0 || iy >= ih as isize || lo >= hi {
                            drow.fill(T::zero());
                            continue;
                        }
                        let src = &xc[(iz as usize * ih + iy as usize) * iw..][..iw];
                        drow[..lo].fill(T::zero());
                        drow[hi..].fill(T::zero());
                        if g.stride[2] == 1 {
                            let s0 = (lo as isize + offx) as usize;
                            drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        } else {
                            for (ox, d) in drow.iter_mut().enumerate().take(hi).skip(lo) {
                                *d = src[(ox as isize * g.stride[2] as isize + offx) as usize];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `cols` back into `x`.
fn col2im<T: Float>(cols: &[T], g: &Geom, r0: usize, r1: usize, x: &mut [T]) {
    let [_, ih, iw] = g.inp;
    let [_, oh, ow] = g.out;
    let pc = (r1 - r0) * ow;
    let in_len = g.in_len();
    let mut row = 0;
    for ci in 0..g.cin {
        let xc = &mut x[ci * in_len..(ci + 1) * in_len];
        for kz in 0..g.k[0] {
            for ky in 0..g.k[1] {
                for kx in 0..g.k[2] {
                    let src = &cols[row * pc..(row + 1) * pc];
                    let offx = (kx * g.dil[2]) as isize - g.pad[2] as isize;
                    let (lo, hi) = valid_range(ow, iw, g.stride[2], offx);
                    for (j, zy) in (r0..r1).enumerate() {
                        let iz = ((zy / oh) * g.stride[0] + kz * g.dil[0]) as isize - g.pad[0] as isize;
                        let iy = ((zy % oh) * g.stride[1] + ky * g.dil[1]) as isize - g.pad[1] as isize;
                        if iz < 0 || iz >= g.inp[0] as isize || iy < 0 || iy >= ih as isize || lo >= hi {
                            continue;
                        }
                        let dst = &mut xc[(iz as usize * ih + iy as usize) * iw..][..iw];
                        let srow = &src[j * ow..(j + 1) * ow];
                        for ox in lo..hi {
                            dst[(ox as isize * g.stride[2] as isize + offx) as usize] += srow[ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn chunks(g: &Geom) -> impl Iterator<Item = (usize, usize)> {
    let rows = g.out[0] * g.out[1];
    let step = g.rows_per_chunk();
    (0..rows).step_by(step).map(move |r0| (r0, (r0 + step).min(rows)))
}

/// `out[n] = W * im2col(x[n])`, without bias.
pub(crate) fn forward_raw<T: Float>(x: &[T], n: usize, w: &[T], g: &Geom) -> Vec<T> {
    let (in_len, out_len, krows, ow) = (g.in_len(), g.out_len(), g.krows(), g.out[2]);
    let mut out = vec![T::zero(); n * g.cout * out_len];
    let mut cols = Vec::new();
    for b in 0..n {
        let xb = &x[b * g.cin * in_len..(b + 1) * g.cin * in_len];
        let ob = &mut out[b * g.cout * out_len..(b + 1) * g.cout * out_len];
        if g.is_pointwise() {
            unsafe {
                T::gemm(
                    g.cout, krows, out_len, T::one(),
                    w.as_ptr(), krows as isize, 1,
                    xb.as_ptr(), in_len as isize, 1,
                    T::zero(), ob.as_mut_ptr(), out_len as isize, 1,
                );
            }
            continue;
        }
        for (r0, r1) in chunks(g) {
            let pc = (r1 - r0) * ow;
            cols.resize(krows * pc, T::zero());
            im2col(xb, g, r0, r1, &mut cols);
            unsafe {
                T::gemm(
                    g.cout, krows, pc, T::one(),
                    w.as_ptr(), krows as isize, 1,
                    cols.as_ptr(), pc as isize, 1,
                    T::zero(), ob.as_mut_ptr().add(r0 * ow), out_len as isize, 1,
                );
            }
        }
    }
    out
}

/// Gradient of [`forward_raw`] with respect to its input.
pub(crate) fn backward_input_raw<T: Float>(dout: &[T], n: usize, w: &[T], g: &Geom) -> Vec<T> {
    let (in_len, out_len, krows, ow) = (g.in_len(), g.out_len(), g.krows(), g.out[2]);
    let mut dx = vec![T::zero(); n * g.cin * in_len];
    let mut cols = Vec::new();
    for b in 0..n {
        let db = &dout[b * g.cout * out_len..(b + 1) * g.cout * out_len];
        let xb = &mut dx[b * g.cin * in_len..(b + 1) * g.cin * in_len];
        if g.is_pointwise() {
            unsafe {
                T::gemm(
                    krows, g.cout, out_len, T::one(),
                    w.as_ptr(), 1, krows as isize,
                    db.as_ptr(), out_len as isize, 1,
                    T::zero(), xb.as_mut_ptr(), in_len as isize, 1,
                );
            }
            continue;
        }
        for (r0, r1) in chunks(g) {
            let pc = (r1 - r0) * ow;
            cols.resize(krows * pc, T::zero());
            unsafe {
                T::gemm(
                    krows, g.cout, pc, T::one(),
                    w.as_ptr(), 1, krows as isize,
                    db.as_ptr().add(r0 * ow), out_len as isize, 1,
                    T::zero(), cols.as_mut_ptr(), pc as isize, 1,
                );
            }
            col2im(&cols, g, r0, r1, xb);
        }
    }
    dx
}

/// Gradient of [`forward_raw`] with respect to the weights, summed over the batch.
pub(crate) fn backward_weight_raw<T: Float>(x: &[T], dout: &[T], n: usize, g: &Geom) -> Vec<T> {
    let (in_len, out_len, krows, ow) = (g.in_len(), g.out_len(), g.krows(), g.out[2]);
    let mut dw = vec![T::zero(); g.cout * krows];
    let mut cols = Vec::new();
    for b in 0..n {
        let xb = &x[b * g.cin * in_len..(b + 1) * g.cin * in_len];
        let db = &dout[b * g.cout * out_len..(b + 1) * g.cout * out_len];
        if g.is_pointwise() {
            unsafe {
                T::gemm(
                    g.cout, out_len, krows, T::one(),
                    db.as_ptr(), out_len as isize, 1,
                    xb.as_ptr(), 1, in_len as isize,
                    T::one(), dw.as_mut_ptr(), krows as isize, 1,
                );
            }
            continue;
        }
        for (r0, r1) in chunks(g) {
            let pc = (r1 - r0) * ow;
            cols.resize(krows * pc, T::zero());
            im2col(xb, g, r0, r1, &mut cols);
            unsafe {
                T::gemm(
                    g.cout, pc, krows, T::one(),
                    db.as_ptr().add(r0 * ow), out_len as isize, 1,
                    cols.as_ptr(), 1, pc as isize,
                    T::one(), dw.as_mut_ptr(), krows as isize, 1,
                );
            }
        }
    }
    dw
}

fn add_bias<T: Float>(out: &mut [T], bias: &[T], n: usize, spatial: usize) {
    let c = bias.len();
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate() {
            for v in &mut out[(b * c + ch) * spatial..(b * c + ch + 1) * spatial] {
                *v += bv;
            }
        }
    }
}

fn bias_grad<T: Float>(dout: &[T], n: usize, c: usize, spatial: usize) -> Vec<T> {
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            *acc += dout[(b * c + ch) * spatial..(b * c + ch + 1) * spatial].iter().copied().sum::<T>();
        }
    }
    db
}

/// Normalises `[N, C, H, W]` / `[N, C, D, H, W]` inputs and matching weights
/// to 3D extents.
fn spatial3(op: &'static str, x: &[usize], w: &[usize]) -> Result<([usize; 3], [usize; 3])> {
    match (x.len(), w.len()) {
        (4, 4) => Ok(([1, x[2], x[3]], [1, w[2], w[3]])),
        (5, 5) => Ok(([x[2], x[3], x[4]], [w[2], w[3], w[4]])),
        _ => Err(TensorError::shape(op, format!("input {x:?} with weight {w:?}: expected rank 4 or 5 for both"))),
    }
}

fn flatten_opts(opts: ConvOptions, rank: usize) -> ConvOptions {
    if rank == 4 {
        ConvOptions {
            stride: [1, opts.stride[1], opts.stride[2]],
            padding: [0, opts.padding[1], opts.padding[2]],
            dilation: [1, opts.dilation[1], opts.dilation[2]],
        }
    } else {
        opts
    }
}

fn out_shape(n: usize, c: usize, sp: [usize; 3], rank: usize) -> Vec<usize> {
    if rank == 4 {
        vec![n, c, sp[1], sp[2]]
    } else {
        vec![n, c, sp[0], sp[1], sp[2]]
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor<impl Float>>, c: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [c] {
            return Err(TensorError::shape(op, format!("bias {:?}, expected [{c}]", b.shape())));
        }
    }
    Ok(())
}

impl<'p, T: Float> Graph<'p, T> {
    /// Cross-correlation of `x` with `w` (plus optional per-channel bias).
    pub fn conv(&self, x: Var, w: Var, bias: Option<Var>, opts: ConvOptions) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let bv = bias.map(|b| self.value(b));
        let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
        let rank = xs.len();
        let (inp, k) = spatial3("conv", &xs, &ws)?;
        if ws[1] != xs[1] {
            return Err(TensorError::shape("conv", format!("input channels {} vs weight {:?}", xs[1], ws)));
        }
        check_bias("conv", bv.as_deref(), ws[0])?;
        let opts = flatten_opts(opts, rank);
        let geom = Geom::new(xs[1], ws[0], inp, k, opts).ok_or_else(|| {
            TensorError::shape("conv", format!("kernel {k:?} with {opts:?} does not fit input {inp:?}"))
        })?;
        let n = xs[0];
        let mut out = forward_raw(xv.data(), n, wv.data(), &geom);
        if let Some(b) = &bv {
            add_bias(&mut out, b.data(), n, geom.out_len());
        }
        let out = Tensor::new(&out_shape(n, geom.cout, geom.out, rank), out)?;
        let mut parents = vec![x, w];
        parents.extend(bias);
        Ok(self.op(out, &parents, move |g, needs| {
            let dx = needs[0].then(|| {
                Tensor::new(&xs, backward_input_raw(g.data(), n, wv.data(), &geom)).expect("input shape")
            });
            let dw = needs[1].then(|| {
                Tensor::new(&ws, backward_weight_raw(xv.data(), g.data(), n, &geom)).expect("weight shape")
            });
            let mut grads = vec![dx, dw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| {
                    Tensor::new(&[geom.cout], bias_grad(g.data(), n, geom.cout, geom.out_len())).expect("bias")
                }));
            }
            grads
        }))
    }

    /// Transposed convolution (the adjoint of [`Graph::conv`] in `x`), with
    /// weights laid out `[C_in, C_out, k...]`.
    pub fn conv_transpose(&self, x: Var, w: Var, bias: Option<Var>, opts: ConvOptions) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let bv = bias.map(|b| self.value(b));
        let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
        let rank = xs.len();
        let (small, k) = spatial3("conv_transpose", &xs, &ws)?;
        if ws[0] != xs[1] {
            return Err(TensorError::shape(
                "conv_transpose",
                format!("input channels {} vs weight {:?}", xs[1], ws),
            ));
        }
        check_bias("conv_transpose", bv.as_deref(), ws[1])?;
        let opts = flatten_opts(opts, rank);
        let mut big = [0; 3];
        for a in 0..3 {
            let full = (small[a] - 1) * opts.stride[a] + opts.dilation[a] * (k[a] - 1) + 1;
            if full <= 2 * opts.padding[a] {
                return Err(TensorError::shape("conv_transpose", format!("padding {opts:?} too large")));
            }
            big[a] = full - 2 * opts.padding[a];
        }
        let geom = Geom::new(ws[1], ws[0], big, k, opts)
            .filter(|g| g.out == small)
            .ok_or_else(|| TensorError::shape("conv_transpose", format!("inconsistent geometry for {xs:?}")))?;
        let n = xs[0];
        let mut out = backward_input_raw(xv.data(), n, wv.data(), &geom);
        if let Some(b) = &bv {
            add_bias(&mut out, b.data(), n, geom.in_len());
        }
        let out = Tensor::new(&out_shape(n, geom.cin, big, rank), out)?;
        let mut parents = vec![x, w];
        parents.extend(bias);
        Ok(self.op(out, &parents, move |g, needs| {
            let dx = needs[0]
                .then(|| Tensor::new(&xs, forward_raw(g.data(), n, wv.data(), &geom)).expect("input shape"));
            let dw = needs[1].then(|| {
                Tensor::new(&ws, backward_weight_raw(g.data(), xv.data(), n, &geom)).expect("weight shape")
            });
            let mut grads = vec![dx, dw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| {
                    Tensor::new(&[geom.cin], bias_grad(g.data(), n, geom.cin, geom.in_len())).expect("bias")
                }));
            }
            grads
        }))
    }
}
