//! Complex vector/matrix primitives, Rayleigh channel generation and the
//! SINR / sum-rate formulas of the MU-MISO downlink.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type C64 = Complex64;

/// A dense complex column vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVec(Vec<C64>);

impl CVec {
    pub fn new(elements: Vec<C64>) -> Self {
        CVec(elements)
    }

    pub fn zeros(dim: usize) -> Self {
        CVec(vec![C64::new(0.0, 0.0); dim])
    }

    /// The `i`-th standard basis vector.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = C64::new(1.0, 0.0);
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<C64> {
        self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Hermitian inner product `selfᴴ other`.
    pub fn dot(&self, other: &CVec) -> C64 {
        hdot(&self.0, &other.0)
    }

    pub fn scale(&self, s: C64) -> CVec {
        CVec(self.0.iter().map(|&x| x * s).collect())
    }
}

impl Index<usize> for CVec {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for CVec {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.0[i]
    }
}

impl From<Vec<C64>> for CVec {
    fn from(v: Vec<C64>) -> Self {
        CVec(v)
    }
}

/// Hermitian inner product `aᴴ b` of two equally long slices.
pub fn hdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// An `rows × cols` complex matrix stored column-major, so that column `k`
/// (a user's channel `h_k` or precoder `w_k`) is a contiguous slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    /// Builds a matrix from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} elements cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMat { rows, cols, data })
    }

    pub fn from_columns(columns: &[CVec]) -> Result<Self> {
        let rows = columns.first().map(CVec::dim).unwrap_or(0);
        if columns.iter().any(|c| c.dim() != rows) {
            return Err(Error::Shape("columns have different lengths".into()));
        }
        let data = columns.iter().flat_map(|c| c.0.iter().copied()).collect();
        Ok(CMat {
            rows,
            cols: columns.len(),
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, k: usize) -> &[C64] {
        &self.data[k * self.rows..(k + 1) * self.rows]
    }

    pub fn col_mut(&mut self, k: usize) -> &mut [C64] {
        &mut self.data[k * self.rows..(k + 1) * self.rows]
    }

    pub fn col_vec(&self, k: usize) -> CVec {
        CVec(self.col(k).to_vec())
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// `Tr(M Mᴴ)`, the squared Frobenius norm.
    pub fn power(&self) -> f64 {
        norm_sqr(&self.data)
    }

    /// Interleaved `(re, im)` pairs in column-major order.
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.data.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn from_interleaved(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != 2 * rows * cols {
            return Err(Error::Shape(format!(
                "{} reals cannot fill a {rows}x{cols} complex matrix",
                values.len()
            )));
        }
        let data = values.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect();
        Ok(CMat { rows, cols, data })
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[c * self.rows + r]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[c * self.rows + r]
    }
}

/// Downlink system parameters: `N` antennas, `K` users, noise variance σ²,
/// total power budget `P` and user priorities α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub n_users: usize,
    pub noise_variance: f64,
    pub power_budget: f64,
    pub priorities: Vec<f64>,
}

impl SystemConfig {
    /// Unit priorities.
    pub fn new(n_antennas: usize, n_users: usize, noise_variance: f64, power_budget: f64) -> Result<Self> {
        let cfg = SystemConfig {
            n_antennas,
            n_users,
            noise_variance,
            power_budget,
            priorities: vec![1.0; n_users],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Budget from an SNR in dB, `P = σ² · 10^(snr/10)`.
    pub fn from_snr_db(n_antennas: usize, n_users: usize, noise_variance: f64, snr_db: f64) -> Result<Self> {
        Self::new(
            n_antennas,
            n_users,
            noise_variance,
            noise_variance * db_to_linear(snr_db),
        )
    }

    pub fn with_priorities(mut self, priorities: Vec<f64>) -> Result<Self> {
        self.priorities = priorities;
        self.validate()?;
        Ok(self)
    }

    pub fn with_power(&self, power_budget: f64) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.power_budget = power_budget;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 || self.n_users == 0 {
            return Err(Error::Config("N and K must be at least 1".into()));
        }
        if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config(format!(
                "noise variance {} must be positive",
                self.noise_variance
            )));
        }
        if !(self.power_budget > 0.0 && self.power_budget.is_finite()) {
            return Err(Error::Config(format!(
                "power budget {} must be positive",
                self.power_budget
            )));
        }
        if self.priorities.len() != self.n_users {
            return Err(Error::Config(format!(
                "{} priorities for {} users",
                self.priorities.len(),
                self.n_users
            )));
        }
        if self.priorities.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("priorities must be positive".into()));
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power_budget / self.noise_variance).log10()
    }

    fn check_shape(&self, m: &CMat, what: &str) -> Result<()> {
        if m.rows() != self.n_antennas || m.cols() != self.n_users {
            return Err(Error::Shape(format!(
                "{what} is {}x{}, expected {}x{}",
                m.rows(),
                m.cols(),
                self.n_antennas,
                self.n_users
            )));
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Draws an `N × K` matrix of i.i.d. unit-variance circularly symmetric
/// complex Gaussians from `rng` (real and imaginary parts each `N(0, 1/2)`),
/// filled column-major with the real part drawn before the imaginary part.
pub fn rayleigh_from_rng<R: Rng + ?Sized>(n_antennas: usize, n_users: usize, rng: &mut R) -> CMat {
    let data = (0..n_antennas * n_users)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
        })
        .collect();
    CMat {
        rows: n_antennas,
        cols: n_users,
        data,
    }
}

/// Frequency-flat Rayleigh channel `H` for `cfg`, deterministic in `seed`.
pub fn gen_rayleigh_channel(cfg: &SystemConfig, seed: u64) -> CMat {
    rayleigh_from_rng(cfg.n_antennas, cfg.n_users, &mut rng::rng_from_seed(seed))
}

/// `|h_kᴴ w_j|²` for every pair, indexed `[k][j]`.
fn gains(h: &CMat, w: &CMat) -> Vec<Vec<f64>> {
    (0..h.cols())
        .map(|k| (0..w.cols()).map(|j| hdot(h.col(k), w.col(j)).norm_sqr()).collect())
        .collect()
}

fn sinrs_unchecked(cfg: &SystemConfig, h: &CMat, w: &CMat) -> Vec<f64> {
    let g = gains(h, w);
    (0..cfg.n_users)
        .map(|k| {
            let interference: f64 = (0..cfg.n_users).filter(|&j| j != k).map(|j| g[k][j]).sum();
            g[k][k] / (interference + cfg.noise_variance)
        })
        .collect()
}

/// SINR of user `k` (0-based).
pub fn sinr(cfg: &SystemConfig, h: &CMat, w: &CMat, k: usize) -> Result<f64> {
    cfg.check_shape(h, "H")?;
    cfg.check_shape(w, "W")?;
    if k >= cfg.n_users {
        return Err(Error::Shape(format!(
            "user index {k} out of range for K={}",
            cfg.n_users
        )));
    }
    Ok(sinrs_unchecked(cfg, h, w)[k])
}

/// SINR of every user.
pub fn sinrs(cfg: &SystemConfig, h: &CMat, w: &CMat) -> Result<Vec<f64>> {
    cfg.check_shape(h, "H")?;
    cfg.check_shape(w, "W")?;
    Ok(sinrs_unchecked(cfg, h, w))
}

/// Achievable sum rate `Σ_k log2(1 + SINR_k)` in bit/s/Hz.
pub fn sum_rate(cfg: &SystemConfig, h: &CMat, w: &CMat) -> Result<f64> {
    Ok(sinrs(cfg, h, w)?.iter().map(|s| s.ln_1p() / LN_2).sum())
}

/// Weighted sum rate `Σ_k α_k log2(1 + SINR_k)`.
pub fn weighted_sum_rate(cfg: &SystemConfig, h: &CMat, w: &CMat) -> Result<f64> {
    Ok(sinrs(cfg, h, w)?
        .iter()
        .zip(&cfg.priorities)
        .map(|(s, a)| a * s.ln_1p() / LN_2)
        .sum())
}

/// Gradient of the (unweighted) sum rate with respect to `W`, in the
/// convention `G = ∂R/∂Re W + j ∂R/∂Im W`.
///
/// Uses `R = Σ_k log2(T_k) − log2(I_k)` with `T_k` the total received power
/// plus noise and `I_k` the interference plus noise, and
/// `∂|h_kᴴ w_j|² = 2 h_k (h_kᴴ w_j)`.
pub fn sum_rate_grad(cfg: &SystemConfig, h: &CMat, w: &CMat) -> Result<CMat> {
    cfg.check_shape(h, "H")?;
    cfg.check_shape(w, "W")?;
    let k_users = cfg.n_users;
    let inner: Vec<Vec<C64>> = (0..k_users)
        .map(|k| (0..k_users).map(|j| hdot(h.col(k), w.col(j))).collect())
        .collect();
    let mut grad = CMat::zeros(cfg.n_antennas, k_users);
    for k in 0..k_users {
        let total: f64 = inner[k].iter().map(|z| z.norm_sqr()).sum::<f64>() + cfg.noise_variance;
        let interference = total - inner[k][k].norm_sqr();
        for j in 0..k_users {
            let mut coeff = 2.0 * inner[k][j] / total;
            if j != k {
                coeff -= 2.0 * inner[k][j] / interference;
            }
            coeff /= LN_2;
            for (g, hk) in grad.col_mut(j).iter_mut().zip(h.col(k)) {
                *g += hk * coeff;
            }
        }
    }
    Ok(grad)
}
