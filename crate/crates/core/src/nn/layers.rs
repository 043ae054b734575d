//! Forward and backward kernels for the fixed layer set.
//!
//! Convolutions are cross-correlations lowered to a matrix product through
//! an explicit patch matrix. Weights are stored as a `(kh·kw·c_in) x filters`
//! row-major matrix with row index `(ky·kw + kx)·c_in + ci`; fully connected
//! weights are `inputs x nodes`.

use rand::Rng;

use crate::error::{Error, Result};

use super::spec::{conv_extent, Padding};
use super::tensor::Tensor4;
use super::Real;

/// `C = op(A)·op(B) (+ C)` on row-major buffers. `A` is `m x k` after the
/// optional transpose, `B` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    a_trans: bool,
    b: &[Real],
    b_trans: bool,
    c: &mut [Real],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly m*k, k*n and m*n elements and the
    // strides above address them in bounds.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeometry {
    pub fn weight_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels * self.filters
    }

    fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }
}

/// Saved state for the convolution backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    input_dims: [usize; 4],
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
    cols: Vec<Real>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weights: Vec<Real>,
    pub bias: Vec<Real>,
}

pub fn conv2d_forward(x: &Tensor4, weights: &[Real], bias: &[Real], g: &ConvGeometry) -> Result<(Tensor4, ConvCache)> {
    let [batch, h, w, c] = x.dims();
    if c != g.in_channels || weights.len() != g.weight_len() || bias.len() != g.filters {
        return Err(Error::contract(format!(
            "conv on {:?} with {} weights / {} biases for geometry {g:?}",
            x.dims(),
            weights.len(),
            bias.len()
        )));
    }
    let (out_h, pad_top) = conv_extent(h, g.kernel_h, g.stride, g.padding)
        .ok_or_else(|| Error::contract("kernel does not fit the padded input"))?;
    let (out_w, pad_left) = conv_extent(w, g.kernel_w, g.stride, g.padding)
        .ok_or_else(|| Error::contract("kernel does not fit the padded input"))?;

    let rows = batch * out_h * out_w;
    let plen = g.patch_len();
    let mut cols = vec![0.0 as Real; rows * plen];
    let src = x.as_slice();
    for b in 0..batch {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let row = (b * out_h + oy) * out_w + ox;
                let dst = &mut cols[row * plen..(row + 1) * plen];
                for ky in 0..g.kernel_h {
                    let iy = (oy * g.stride + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel_w {
                        let ix = (ox * g.stride + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = ((b * h + iy as usize) * w + ix as usize) * c;
                        let d = (ky * g.kernel_w + kx) * c;
                        dst[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }

    let mut out = vec![0.0 as Real; rows * g.filters];
    for row in out.chunks_exact_mut(g.filters) {
        row.copy_from_slice(bias);
    }
    gemm(rows, plen, g.filters, &cols, false, weights, false, &mut out, true);
    let out = Tensor4::from_vec([batch, out_h, out_w, g.filters], out)?;
    Ok((out, ConvCache { input_dims: x.dims(), out_h, out_w, pad_top, pad_left, cols }))
}

pub fn conv2d_backward(cache: &ConvCache, weights: &[Real], g: &ConvGeometry, d_out: &Tensor4) -> Result<ConvGrads> {
    let [batch, h, w, c] = cache.input_dims;
    if d_out.dims() != [batch, cache.out_h, cache.out_w, g.filters] {
        return Err(Error::contract(format!(
            "conv gradient of dims {:?}, expected {:?}",
            d_out.dims(),
            [batch, cache.out_h, cache.out_w, g.filters]
        )));
    }
    let rows = batch * cache.out_h * cache.out_w;
    let plen = g.patch_len();
    let dy = d_out.as_slice();

    let mut d_weights = vec![0.0 as Real; plen * g.filters];
    gemm(plen, rows, g.filters, &cache.cols, true, dy, false, &mut d_weights, false);
    let mut d_bias = vec![0.0 as Real; g.filters];
    for row in dy.chunks_exact(g.filters) {
        for (acc, v) in d_bias.iter_mut().zip(row) {
            *acc += v;
        }
    }

    let mut d_cols = vec![0.0 as Real; rows * plen];
    gemm(rows, g.filters, plen, dy, false, weights, true, &mut d_cols, false);
    let mut d_input = vec![0.0 as Real; batch * h * w * c];
    for b in 0..batch {
        for oy in 0..cache.out_h {
            for ox in 0..cache.out_w {
                let row = (b * cache.out_h + oy) * cache.out_w + ox;
                let src = &d_cols[row * plen..(row + 1) * plen];
                for ky in 0..g.kernel_h {
                    let iy = (oy * g.stride + ky) as isize - cache.pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel_w {
                        let ix = (ox * g.stride + kx) as isize - cache.pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let d = ((b * h + iy as usize) * w + ix as usize) * c;
                        let s = (ky * g.kernel_w + kx) * c;
                        for (acc, v) in d_input[d..d + c].iter_mut().zip(&src[s..s + c]) {
                            *acc += v;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads { input: Tensor4::from_vec(cache.input_dims, d_input)?, weights: d_weights, bias: d_bias })
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let data = x.as_slice().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor4::from_vec(x.dims(), data).expect("same dims")
}

/// Masks `d_out` by `x > 0`; the derivative at exactly 0 is 0. `x` may be
/// either the layer input or its output (they share sign support).
pub fn relu_backward(x: &Tensor4, d_out: &Tensor4) -> Result<Tensor4> {
    if x.dims() != d_out.dims() {
        return Err(Error::contract("relu gradient dims differ from activation dims"));
    }
    let data = x.as_slice().iter().zip(d_out.as_slice()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
    Tensor4::from_vec(x.dims(), data)
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor4,
    pub weights: Vec<Real>,
    pub bias: Vec<Real>,
}

/// Affine map on the flattened sample: `y = x W + b`, output dims `(n, 1, 1, nodes)`.
pub fn fc_forward(x: &Tensor4, weights: &[Real], bias: &[Real]) -> Result<Tensor4> {
    let n = x.batch();
    let inputs = x.sample_len();
    let nodes = bias.len();
    if weights.len() != inputs * nodes {
        return Err(Error::contract(format!(
            "fully connected layer with {} weights for {inputs} inputs and {nodes} nodes",
            weights.len()
        )));
    }
    let mut out = vec![0.0 as Real; n * nodes];
    for row in out.chunks_exact_mut(nodes) {
        row.copy_from_slice(bias);
    }
    if n <= ROW_AXPY_BATCH {
        // Small batches are bound by streaming the weights; skipping the
        // rows of zero inputs (common after ReLU) halves that traffic.
        for (xs, acc) in x.as_slice().chunks_exact(inputs).zip(out.chunks_exact_mut(nodes)) {
            sparse_rows(xs, weights, acc);
        }
    } else {
        gemm(n, inputs, nodes, x.as_slice(), false, weights, false, &mut out, true);
    }
    Tensor4::from_vec([n, 1, 1, nodes], out)
}

const ROW_AXPY_BATCH: usize = 2;

/// `acc += Σ_i xs[i] · w[i, :]` over the non-zero `xs[i]`.
fn sparse_rows(xs: &[Real], weights: &[Real], acc: &mut [Real]) {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports the enabled features.
            unsafe { sparse_rows_avx2(xs, weights, acc) };
            return;
        }
    }
    sparse_rows_generic(xs, weights, acc);
}

// Same arithmetic (no contraction into FMA), so both paths agree bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn sparse_rows_avx2(xs: &[Real], weights: &[Real], acc: &mut [Real]) {
    sparse_rows_generic(xs, weights, acc);
}

#[inline(always)]
fn sparse_rows_generic(xs: &[Real], weights: &[Real], acc: &mut [Real]) {
    let nodes = acc.len();
    for (&xi, w) in xs.iter().zip(weights.chunks_exact(nodes)) {
        if xi != 0.0 {
            for (o, &wj) in acc.iter_mut().zip(w) {
                *o += xi * wj;
            }
        }
    }
}

pub fn fc_backward(x: &Tensor4, weights: &[Real], d_out: &Tensor4) -> Result<DenseGrads> {
    let n = x.batch();
    let inputs = x.sample_len();
    let nodes = d_out.sample_len();
    if d_out.batch() != n || weights.len() != inputs * nodes {
        return Err(Error::contract("fully connected gradient shapes disagree"));
    }
    let dy = d_out.as_slice();
    let mut d_weights = vec![0.0 as Real; inputs * nodes];
    gemm(inputs, n, nodes, x.as_slice(), true, dy, false, &mut d_weights, false);
    let mut d_bias = vec![0.0 as Real; nodes];
    for row in dy.chunks_exact(nodes) {
        for (acc, v) in d_bias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut d_input = vec![0.0 as Real; n * inputs];
    gemm(n, nodes, inputs, dy, false, weights, true, &mut d_input, false);
    Ok(DenseGrads { input: Tensor4::from_vec(x.dims(), d_input)?, weights: d_weights, bias: d_bias })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Inverted dropout. Returns the output and the per-unit multiplier
/// (0 or `1/(1-rate)`); in inference mode, or at rate 0, the input passes
/// through untouched and the mask is empty.
pub fn dropout(x: &Tensor4, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<(Tensor4, Vec<Real>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), Vec::new()));
    }
    let keep = (1.0 / (1.0 - rate)) as Real;
    let mask: Vec<Real> =
        (0..x.as_slice().len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
    let data = x.as_slice().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor4::from_vec(x.dims(), data)?, mask))
}

pub fn dropout_backward(mask: &[Real], d_out: &Tensor4) -> Tensor4 {
    if mask.is_empty() {
        return d_out.clone();
    }
    let data = d_out.as_slice().iter().zip(mask).map(|(g, m)| g * m).collect();
    Tensor4::from_vec(d_out.dims(), data).expect("same dims")
}
