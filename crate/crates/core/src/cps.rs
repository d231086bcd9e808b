//! Points of the complex projective space CP^{N-1} and their complex
//! hyperspherical coordinates.
//!
//! A point is stored through its canonical representative: the unit vector
//! of the line whose first non-zero element is real and non-negative. The
//! hyperspherical chart writes such a vector as
//!
//! ```text
//! u_1     = cos θ_1
//! u_{m+1} = e^{jφ_m} cos θ_{m+1} sin θ_1 ⋯ sin θ_m      (m < N-1)
//! u_N     = e^{jφ_{N-1}} sin θ_1 ⋯ sin θ_{N-1}
//! ```
//!
//! with amplitude angles θ ∈ [0, π/2] and phase angles φ ∈ [-π, π], i.e.
//! exactly 2(N-1) real parameters.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::complex::{CVec, C64};
use crate::error::{Error, Result};

/// Canonical representative of a point of CP^{N-1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpsPoint(CVec);

impl CpsPoint {
    pub fn as_cvec(&self) -> &CVec {
        &self.0
    }

    pub fn into_cvec(self) -> CVec {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Real embedding with `2N-1` coordinates: the `N` real parts followed by
    /// the imaginary parts of elements `2..=N`.
    pub fn embedding(&self) -> Vec<f64> {
        let v = self.0.as_slice();
        v.iter().map(|z| z.re).chain(v[1..].iter().map(|z| z.im)).collect()
    }
}

/// Amplitude angles `theta` and phase angles `phi`, `N-1` of each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypersphericalCoords {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl HypersphericalCoords {
    /// Ambient dimension `N` of the described vector.
    pub fn ambient_dim(&self) -> usize {
        self.theta.len() + 1
    }

    fn validate(&self) -> Result<()> {
        if self.theta.len() != self.phi.len() {
            return Err(Error::Shape(format!(
                "{} amplitude angles but {} phase angles",
                self.theta.len(),
                self.phi.len()
            )));
        }
        if let Some(t) = self.theta.iter().find(|t| !(0.0..=FRAC_PI_2).contains(*t)) {
            return Err(Error::Domain(format!("amplitude angle {t} outside [0, pi/2]")));
        }
        if let Some(p) = self.phi.iter().find(|p| !(-PI..=PI).contains(*p)) {
            return Err(Error::Domain(format!("phase angle {p} outside [-pi, pi]")));
        }
        Ok(())
    }
}

/// Normalizes `x` and removes its global phase, using the first element as
/// phase reference (or the first non-zero element when `x_1 = 0`). Returns
/// the canonical point and `‖x‖`.
pub fn project_to_cps(x: &CVec) -> Result<(CpsPoint, f64)> {
    let norm = x.norm();
    if norm == 0.0 {
        return Err(Error::Domain("cannot project the zero vector".into()));
    }
    if !norm.is_finite() {
        return Err(Error::Domain("vector has non-finite entries".into()));
    }
    let reference = x
        .as_slice()
        .iter()
        .find(|z| z.norm_sqr() > 0.0)
        .expect("non-zero vector has a non-zero element");
    let rot = reference.conj() / (reference.norm() * norm);
    let mut v: Vec<C64> = x.as_slice().iter().map(|z| z * rot).collect();
    if let Some(z) = v.iter_mut().find(|z| z.norm_sqr() > 0.0) {
        // Exactly real after rotation up to rounding.
        *z = C64::new(z.norm(), 0.0);
    }
    Ok((CpsPoint(CVec::new(v)), norm))
}

/// Tail norms `‖u_{l:}‖` for `l = 1..=N` (0-based index `l-1`), plus a
/// trailing zero.
pub fn tail_norms(u: &[C64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = vec![0.0; u.len() + 1];
    for i in (0..u.len()).rev() {
        acc += u[i].norm_sqr();
        out[i] = acc.sqrt();
    }
    out
}

/// Hyperspherical coordinates of a canonical point:
/// `θ_m = atan2(‖u_{m+1:}‖, |u_m|)` and `φ_m = ∠u_{m+1}` (0 when `u_{m+1} = 0`).
pub fn to_hyperspherical(p: &CpsPoint) -> HypersphericalCoords {
    let u = p.0.as_slice();
    let n = u.len();
    let theta = amplitude_angles(u);
    let phi = (1..n)
        .map(|i| if u[i].norm_sqr() > 0.0 { u[i].arg() } else { 0.0 })
        .collect();
    HypersphericalCoords { theta, phi }
}

/// Amplitude angles `θ_m = atan2(‖u_{m+1:}‖, |u_m|)`.
pub(crate) fn amplitude_angles(u: &[C64]) -> Vec<f64> {
    let tails = tail_norms(u);
    (0..u.len() - 1).map(|m| tails[m + 1].atan2(u[m].norm())).collect()
}

/// Amplitudes `|u_m|` implied by the amplitude angles.
pub(crate) fn amplitudes(theta: &[f64]) -> Vec<f64> {
    let n = theta.len() + 1;
    let mut r = Vec::with_capacity(n);
    let mut prod = 1.0;
    for t in theta {
        r.push(prod * t.cos());
        prod *= t.sin();
    }
    r.push(prod);
    r
}

/// Builds the vector without range checks. Used by the differentiable
/// decoder, whose angles are in range by construction.
pub(crate) fn from_angles_unchecked(theta: &[f64], phi: &[f64]) -> CVec {
    let r = amplitudes(theta);
    let v = r
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            if i == 0 {
                C64::new(a, 0.0)
            } else {
                C64::from_polar(a, phi[i - 1])
            }
        })
        .collect();
    CVec::new(v)
}

/// Inverse of [`to_hyperspherical`], with the global phase fixed to zero.
pub fn from_hyperspherical(h: &HypersphericalCoords) -> Result<CpsPoint> {
    h.validate()?;
    Ok(CpsPoint(from_angles_unchecked(&h.theta, &h.phi)))
}
