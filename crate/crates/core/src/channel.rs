//! Clustered geometric (Saleh-Valenzuela style) narrowband mmWave channels
//! between two uniform planar arrays.
//!
//! Angle convention: azimuth in `[-π, π)`, elevation in `[0, π]` measured from
//! the array's vertical axis. Element `(w, v)` of a `width x height` array sits
//! at flat index `v * width + w` and has response
//! `exp(jπ(w sin(az) sin(el) + v cos(el))) / √N` (half-wavelength spacing).

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, CMatrix, C64};

/// Element spacing in wavelengths.
pub const ELEMENT_SPACING: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub width: usize,
    pub height: usize,
}

impl ArrayGeometry {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config(format!("array {width}x{height} has no elements")));
        }
        Ok(ArrayGeometry { width, height })
    }

    /// The most nearly square planar layout with `n` elements
    /// (16 -> 4x4, 144 -> 12x12, 8 -> 4x2).
    pub fn upa(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("array with zero elements"));
        }
        let mut height = (n as f64).sqrt().floor() as usize;
        while height > 1 && n % height != 0 {
            height -= 1;
        }
        Self::new(n / height, height)
    }

    pub fn total_elements(&self) -> usize {
        self.width * self.height
    }
}

/// Direction of departure or arrival, in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub gain: C64,
    pub departure: Angles,
    pub arrival: Angles,
}

#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub h: CMatrix,
    pub paths: Vec<Path>,
    pub pathloss: f64,
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
}

impl ChannelRealization {
    pub fn num_paths(&self) -> usize {
        self.paths.len()
    }

    /// Rebuilds the matrix from the stored path parameters.
    pub fn reassemble(&self) -> Result<CMatrix> {
        Ok(assemble_channel(self.tx, self.rx, &self.paths, self.pathloss)?.h)
    }
}

/// A channel observation corrupted by additive white Gaussian noise.
#[derive(Clone, Debug)]
pub struct NoisySample {
    pub h_tilde: CMatrix,
    pub noise_variance: f64,
}

/// Unit-norm UPA steering vector.
pub fn array_response_upa(geom: ArrayGeometry, azimuth: f64, elevation: f64) -> Vec<C64> {
    let n = geom.total_elements();
    let norm = 1.0 / (n as f64).sqrt();
    let kd = 2.0 * PI * ELEMENT_SPACING;
    let u = azimuth.sin() * elevation.sin();
    let v = elevation.cos();
    let mut out = Vec::with_capacity(n);
    for row in 0..geom.height {
        for col in 0..geom.width {
            let phase = kd * (col as f64 * u + row as f64 * v);
            out.push(C64::from_polar(norm, phase));
        }
    }
    out
}

/// Standard circularly-symmetric complex Gaussian, `E|z|² = 1`.
pub fn complex_normal(rng: &mut impl Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn uniform_angles(rng: &mut impl Rng) -> Angles {
    Angles { azimuth: rng.random_range(-PI..PI), elevation: rng.random_range(0.0..=PI) }
}

/// Draws `k` independent paths: CN(0, 1) gains and uniform angles.
pub fn draw_paths(rng: &mut impl Rng, k: usize) -> Result<Vec<Path>> {
    if k == 0 {
        return Err(Error::contract("a channel needs at least one path"));
    }
    Ok((0..k)
        .map(|_| {
            let gain = complex_normal(rng);
            let departure = uniform_angles(rng);
            let arrival = uniform_angles(rng);
            Path { gain, departure, arrival }
        })
        .collect())
}

/// `H = √(N_T N_R / (ε K)) Σ_k η_k a_R(arrival_k) a_T(departure_k)ᴴ`, summing
/// exactly `K` terms.
pub fn assemble_channel(
    tx: ArrayGeometry,
    rx: ArrayGeometry,
    paths: &[Path],
    pathloss: f64,
) -> Result<ChannelRealization> {
    if paths.is_empty() {
        return Err(Error::contract("a channel needs at least one path"));
    }
    if !(pathloss > 0.0 && pathloss.is_finite()) {
        return Err(Error::contract(format!("pathloss must be positive, got {pathloss}")));
    }
    let nt = tx.total_elements();
    let nr = rx.total_elements();
    let scale = (nt as f64 * nr as f64 / (pathloss * paths.len() as f64)).sqrt();
    let mut h = CMatrix::zeros(nr, nt);
    for p in paths {
        let ar = array_response_upa(rx, p.arrival.azimuth, p.arrival.elevation);
        let at = array_response_upa(tx, p.departure.azimuth, p.departure.elevation);
        for (r, &a) in ar.iter().enumerate() {
            let g = p.gain * a * scale;
            for (c, &t) in at.iter().enumerate() {
                h[(r, c)] += g * t.conj();
            }
        }
    }
    Ok(ChannelRealization { h, paths: paths.to_vec(), pathloss, tx, rx })
}

/// Adds element-wise CN(0, σ²) noise with
/// `σ² = ‖H‖_F² / (N_R N_T) · 10^(-snr_db/10)`. `snr_db = +inf` returns `H`
/// unchanged without consuming randomness.
pub fn add_channel_noise(h: &CMatrix, snr_db: f64, rng: &mut impl Rng) -> Result<NoisySample> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::contract(format!("noise snr {snr_db} dB is not usable")));
    }
    if snr_db == f64::INFINITY {
        return Ok(NoisySample { h_tilde: h.clone(), noise_variance: 0.0 });
    }
    let n = (h.rows() * h.cols()) as f64;
    let power = frobenius_norm(h).powi(2) / n;
    let variance = power * 10f64.powf(-snr_db / 10.0);
    let sigma = variance.sqrt();
    let mut h_tilde = h.clone();
    for z in h_tilde.as_mut_slice() {
        *z += complex_normal(rng) * sigma;
    }
    Ok(NoisySample { h_tilde, noise_variance: variance })
}

/// `y = √P · H F_RF F_BB s + n` with `n ~ CN(0, σ² I)`.
pub fn received_signal(
    h: &CMatrix,
    f_rf: &CMatrix,
    f_bb: &CMatrix,
    symbols: &[C64],
    p_avg: f64,
    noise_variance: f64,
    rng: &mut impl Rng,
) -> Result<Vec<C64>> {
    if p_avg < 0.0 || noise_variance < 0.0 {
        return Err(Error::contract("power and noise variance must be non-negative"));
    }
    let precoded = f_rf.matmul(f_bb)?.mul_vec(symbols)?;
    let mut y = h.mul_vec(&precoded)?;
    let amp = p_avg.sqrt();
    let sigma = noise_variance.sqrt();
    for yi in &mut y {
        *yi *= amp;
        if sigma > 0.0 {
            *yi += complex_normal(rng) * sigma;
        }
    }
    Ok(y)
}

/// Channel generator configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
    pub num_paths: usize,
    pub pathloss: f64,
}

impl ChannelModel {
    pub fn new(n_t: usize, n_r: usize) -> Result<Self> {
        Ok(ChannelModel { tx: ArrayGeometry::upa(n_t)?, rx: ArrayGeometry::upa(n_r)?, num_paths: 4, pathloss: 1.0 })
    }

    /// One realization driven entirely by `seed`.
    pub fn realize(&self, seed: u64) -> Result<ChannelRealization> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = draw_paths(&mut rng, self.num_paths)?;
        assemble_channel(self.tx, self.rx, &paths, self.pathloss)
    }
}
