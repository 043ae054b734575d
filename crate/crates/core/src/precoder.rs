//! Precoders for the partially connected hybrid transmitter.
//!
//! RF chain `j` drives the contiguous antenna block `[j·m, (j+1)·m)`, so the
//! analog precoder `F_RF` is block diagonal with one `m`-vector per column.
//! Every hybrid design produced here satisfies:
//!
//! - zeros outside the diagonal blocks (exact),
//! - equal magnitude `1/√m` on every active analog weight,
//! - total power `‖F_RF F_BB‖_F² = n_s`, the power of the unconstrained
//!   semi-unitary optimum (and within the `‖F_RF F_BB‖_F ≤ n_rf` budget).
//!
//! `snr` is always a linear power ratio here.

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, logdet_hermitian_psd, principal_eigvec_hermitian, svd, CMatrix, C64};

/// Tolerance used when validating constant-modulus and power constraints.
pub const CONSTRAINT_TOL: f64 = 1e-9;

const SIC_EIG_TOL: f64 = 1e-10;
const SIC_EIG_MAX_ITER: usize = 200_000;

/// Antenna-to-RF-chain partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    n_t: usize,
    n_rf: usize,
}

impl PartitionSpec {
    pub fn new(n_t: usize, n_rf: usize) -> Result<Self> {
        if n_rf == 0 || n_t == 0 || n_t % n_rf != 0 {
            return Err(Error::config(format!("{n_t} transmit antennas cannot be split evenly over {n_rf} RF chains")));
        }
        Ok(PartitionSpec { n_t, n_rf })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_rf(&self) -> usize {
        self.n_rf
    }

    /// Antennas per subarray.
    pub fn m(&self) -> usize {
        self.n_t / self.n_rf
    }

    pub fn block(&self, chain: usize) -> std::ops::Range<usize> {
        let m = self.m();
        chain * m..(chain + 1) * m
    }

    pub fn chain_of(&self, antenna: usize) -> usize {
        antenna / self.m()
    }
}

#[derive(Clone, Debug)]
pub struct HybridPrecoder {
    pub f_rf: CMatrix,
    pub f_bb: CMatrix,
}

impl HybridPrecoder {
    /// `F_RF F_BB`
    pub fn product(&self) -> CMatrix {
        self.f_rf.matmul(&self.f_bb).expect("hybrid factors are conformable by construction")
    }

    /// Checks block structure, constant modulus and the power normalization.
    pub fn validate(&self, spec: &PartitionSpec, n_s: usize) -> Result<()> {
        check_rf_structure(&self.f_rf, spec)?;
        if self.f_bb.shape() != (spec.n_rf(), n_s) {
            return Err(Error::contract(format!("F_BB is {:?}, expected ({}, {n_s})", self.f_bb.shape(), spec.n_rf())));
        }
        let norm = frobenius_norm(&self.product());
        if norm > spec.n_rf() as f64 + CONSTRAINT_TOL {
            return Err(Error::contract(format!("‖F_RF F_BB‖_F = {norm} exceeds {}", spec.n_rf())));
        }
        let target = power_norm(n_s);
        if (norm - target).abs() > CONSTRAINT_TOL {
            return Err(Error::contract(format!("‖F_RF F_BB‖_F = {norm}, expected {target}")));
        }
        Ok(())
    }
}

/// Frobenius norm every hybrid precoder is scaled to.
pub fn power_norm(n_s: usize) -> f64 {
    (n_s as f64).sqrt()
}

/// Block-diagonal support and `1/√m` magnitude on the support.
pub fn check_rf_structure(f_rf: &CMatrix, spec: &PartitionSpec) -> Result<()> {
    if f_rf.shape() != (spec.n_t(), spec.n_rf()) {
        return Err(Error::contract(format!("F_RF is {:?}, expected ({}, {})", f_rf.shape(), spec.n_t(), spec.n_rf())));
    }
    let amp = 1.0 / (spec.m() as f64).sqrt();
    for r in 0..spec.n_t() {
        let owner = spec.chain_of(r);
        for c in 0..spec.n_rf() {
            let z = f_rf[(r, c)];
            if c == owner {
                if (z.norm() - amp).abs() > CONSTRAINT_TOL {
                    return Err(Error::contract(format!("F_RF[{r},{c}] has magnitude {}, expected {amp}", z.norm())));
                }
            } else if z != C64::new(0.0, 0.0) {
                return Err(Error::contract(format!("F_RF[{r},{c}] lies outside the block-diagonal support")));
            }
        }
    }
    Ok(())
}

/// Unconstrained optimum: the top `n_s` right singular vectors of `h`.
#[derive(Clone, Debug)]
pub struct OptimalPrecoder {
    pub f: CMatrix,
    /// Numerical rank of the channel. When it is below `n_s` the trailing
    /// columns belong to zero singular values.
    pub rank: usize,
}

impl OptimalPrecoder {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.f.cols()
    }
}

pub fn optimal_precoder(h: &CMatrix, n_s: usize) -> Result<OptimalPrecoder> {
    if n_s == 0 || n_s > h.rows().min(h.cols()) {
        return Err(Error::contract(format!("{n_s} streams on a {}x{} channel", h.rows(), h.cols())));
    }
    let dec = svd(h)?;
    Ok(OptimalPrecoder { f: dec.v.leading_columns(n_s), rank: dec.rank(1e-12) })
}

/// `log2 det(I + snr/n_s · H F Fᴴ Hᴴ)` in bits/s/Hz.
pub fn spectral_efficiency(h: &CMatrix, f: &CMatrix, snr: f64, n_s: usize) -> Result<f64> {
    if f.rows() != h.cols() {
        return Err(Error::contract(format!("precoder with {} rows on a channel with {} columns", f.rows(), h.cols())));
    }
    if snr < 0.0 || n_s == 0 {
        return Err(Error::contract("snr must be non-negative and n_s positive"));
    }
    let hf = h.matmul(f)?;
    let c = C64::new(snr / n_s as f64, 0.0);
    // det(I + c A Aᴴ) = det(I + c Aᴴ A); use the smaller Gram matrix.
    let gram = if hf.cols() < hf.rows() { hf.adjoint().matmul(&hf)? } else { hf.matmul(&hf.adjoint())? };
    let n = gram.rows();
    let arg = CMatrix::identity(n).add(&gram.scale(c))?;
    logdet_hermitian_psd(&arg)
}

/// Per-entry phase extraction of `f_opt` on the block support: antenna `i` of
/// subarray `j` gets `exp(j·angle(f_opt[i, j])) / √m` (phase 0 for a zero
/// entry).
pub fn phase_extraction_rf(f_opt: &CMatrix, spec: &PartitionSpec) -> Result<CMatrix> {
    if f_opt.rows() != spec.n_t() || f_opt.cols() < spec.n_rf() {
        return Err(Error::contract(format!(
            "phase extraction needs a {}x(≥{}) matrix, got {:?}",
            spec.n_t(),
            spec.n_rf(),
            f_opt.shape()
        )));
    }
    let amp = 1.0 / (spec.m() as f64).sqrt();
    let mut f_rf = CMatrix::zeros(spec.n_t(), spec.n_rf());
    for i in 0..spec.n_t() {
        let j = spec.chain_of(i);
        f_rf[(i, j)] = unit_phasor(f_opt[(i, j)]) * amp;
    }
    Ok(f_rf)
}

fn unit_phasor(z: C64) -> C64 {
    let n = z.norm();
    if n > 0.0 && n.is_finite() {
        z / n
    } else {
        C64::new(1.0, 0.0)
    }
}

/// Baseband precoder from the effective channel `h·f_rf`: its top `n_s`
/// right singular vectors, scaled so `‖f_rf f_bb‖_F² = n_s`.
pub fn equivalent_channel_bb(h: &CMatrix, f_rf: &CMatrix, n_s: usize, n_rf: usize) -> Result<CMatrix> {
    if f_rf.cols() != n_rf || h.cols() != f_rf.rows() {
        return Err(Error::contract(format!(
            "channel {:?} and F_RF {:?} with {n_rf} RF chains",
            h.shape(),
            f_rf.shape()
        )));
    }
    if n_s == 0 || n_s > n_rf || n_s > h.rows() {
        return Err(Error::contract(format!("{n_s} streams with {n_rf} RF chains and {} receive antennas", h.rows())));
    }
    let h_eq = h.matmul(f_rf)?;
    let dec = svd(&h_eq)?;
    let f_bb = dec.v.leading_columns(n_s);
    let norm = frobenius_norm(&f_rf.matmul(&f_bb)?);
    if norm == 0.0 {
        return Err(Error::contract("F_RF has no usable column space"));
    }
    Ok(f_bb.scale_real(power_norm(n_s) / norm))
}

/// Completes an analog precoder with its equivalent-channel baseband stage.
pub fn hybrid_from_rf(h: &CMatrix, f_rf: CMatrix, n_s: usize) -> Result<HybridPrecoder> {
    let n_rf = f_rf.cols();
    let f_bb = equivalent_channel_bb(h, &f_rf, n_s, n_rf)?;
    Ok(HybridPrecoder { f_rf, f_bb })
}

/// Phase extraction of the channel's own unconstrained optimum, followed by
/// the equivalent-channel baseband stage.
pub fn phase_extraction_precoder(h: &CMatrix, spec: &PartitionSpec, n_s: usize) -> Result<HybridPrecoder> {
    let f_opt = optimal_precoder(h, spec.n_rf())?;
    let f_rf = phase_extraction_rf(&f_opt.f, spec)?;
    hybrid_from_rf(h, f_rf, n_s)
}

/// Successive interference cancellation over subarrays.
///
/// Starting from `T = HᴴH`, subarray `j` takes the dominant eigenvector `v`
/// of its diagonal block of `T`, sets its analog weights to the phases of
/// `v`, and the resulting column `p` (analog weights scaled by the best real
/// gain toward `v`) is removed from `T` by the rank-one update
/// `T <- T - c T p pᴴ T / (1 + c pᴴ T p)` with `c = snr / n_s`. The baseband
/// stage comes from the equivalent channel.
pub fn sic_precoder(h: &CMatrix, spec: &PartitionSpec, snr: f64, n_s: usize) -> Result<HybridPrecoder> {
    if h.cols() != spec.n_t() {
        return Err(Error::contract(format!("channel has {} columns, partition expects {}", h.cols(), spec.n_t())));
    }
    let n_t = spec.n_t();
    let m = spec.m();
    let amp = 1.0 / (m as f64).sqrt();
    let c = snr / n_s as f64;
    let mut t = h.adjoint().matmul(h)?;
    let mut f_rf = CMatrix::zeros(n_t, spec.n_rf());

    for j in 0..spec.n_rf() {
        let block = spec.block(j);
        let r = t.principal_block(block.start, m);
        let (_, v) = principal_eigvec_hermitian(&r, SIC_EIG_TOL, SIC_EIG_MAX_ITER)?;
        let gain = v.iter().map(|z| z.norm()).sum::<f64>() * amp;
        let mut p = vec![C64::new(0.0, 0.0); n_t];
        for (k, i) in block.clone().enumerate() {
            let a = unit_phasor(v[k]) * amp;
            f_rf[(i, j)] = a;
            p[i] = a * gain;
        }
        if c > 0.0 && j + 1 < spec.n_rf() {
            let tp = t.mul_vec(&p)?;
            let quad: f64 = p.iter().zip(&tp).map(|(a, b)| (a.conj() * b).re).sum();
            let k = c / (1.0 + c * quad);
            for r in 0..n_t {
                for col in 0..n_t {
                    t[(r, col)] -= tp[r] * tp[col].conj() * k;
                }
            }
        }
    }
    hybrid_from_rf(h, f_rf, n_s)
}

/// `‖F_opt − F_RF F_BB‖_F²`
pub fn precoder_distance(f_opt: &CMatrix, hp: &HybridPrecoder) -> Result<f64> {
    let diff = f_opt.sub(&hp.product())?;
    Ok(frobenius_norm(&diff).powi(2))
}

/// Encodes the analog phases as `[cos θ_0, sin θ_0, cos θ_1, sin θ_1, ...]`,
/// one pair per transmit antenna (the regression target).
pub fn rf_to_target(f_rf: &CMatrix, spec: &PartitionSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * spec.n_t());
    for i in 0..spec.n_t() {
        let z = unit_phasor(f_rf[(i, spec.chain_of(i))]);
        out.push(z.re);
        out.push(z.im);
    }
    out
}

/// Rebuilds a constraint-satisfying `F_RF` from (possibly unnormalized)
/// cos/sin pairs. A zero or non-finite pair maps to phase 0.
pub fn rf_from_target(target: &[f64], spec: &PartitionSpec) -> Result<CMatrix> {
    if target.len() != 2 * spec.n_t() {
        return Err(Error::contract(format!("target of length {} for {} antennas", target.len(), spec.n_t())));
    }
    let amp = 1.0 / (spec.m() as f64).sqrt();
    let mut f_rf = CMatrix::zeros(spec.n_t(), spec.n_rf());
    for i in 0..spec.n_t() {
        let z = C64::new(target[2 * i], target[2 * i + 1]);
        f_rf[(i, spec.chain_of(i))] = unit_phasor(z) * amp;
    }
    Ok(f_rf)
}
