//! Feature/label codecs for the four channel/precoder parameterizations.
//!
//! | kind | features        | labels      | phase removed |
//! |------|-----------------|-------------|---------------|
//! | RI   | `2NK + 1`       | `2NK`       | no            |
//! | NCV  | `2NK + K + 1`   | `2NK + K`   | no            |
//! | CPS  | `2NK + 1`       | `2NK`       | yes           |
//! | HSC  | `K(3N - 2) + 1` | `K(3N - 2)` | yes           |
//!
//! Layouts, per kind (user-major blocks, users in order `1..=K`):
//!
//! - RI features: scaled `(Re, Im)` of `H` interleaved column-major, scaled SNR.
//!   Labels: scaled `(Re, Im)` of `W`, same layout.
//! - NCV features: `(Re, Im)` of `a_k = h_k/‖h_k‖` interleaved, scaled norms,
//!   scaled SNR. Labels: `(Re, Im)` of `b_k = w_k/‖w_k‖`, then `ζ`.
//! - CPS features: the `2N-1` real embedding of each `g_k`, scaled norms,
//!   scaled SNR. Labels: embeddings of each `u_k`, then `ζ`.
//! - HSC features: `θ(g_k) - π/4`, then `(sin φ, cos φ)` pairs of `g_k`,
//!   scaled norms, scaled SNR. Labels: `θ(u_k)`, `(sin φ, cos φ)` pairs of
//!   `u_k`, then `ζ`.
//!
//! `ζ_k = ‖w_k‖² / Σ_j ‖w_j‖²` is the share of transmit power of user `k`.
//!
//! The decoders ([`postprocess`]) map raw network outputs to feasible
//! precoders and are differentiable almost everywhere; [`postprocess_backward`]
//! is their vector-Jacobian product.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::complex::{norm_sqr, CMat, CVec, SystemConfig, C64};
use crate::cps::{self, project_to_cps};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Ri,
    Ncv,
    Cps,
    Hsc,
}

impl ParamKind {
    pub const ALL: [ParamKind; 4] = [ParamKind::Ri, ParamKind::Ncv, ParamKind::Cps, ParamKind::Hsc];

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Ri => "ri",
            ParamKind::Ncv => "ncv",
            ParamKind::Cps => "cps",
            ParamKind::Hsc => "hsc",
        }
    }

    pub fn input_dim(self, n: usize, k: usize) -> usize {
        self.label_dim(n, k) + 1
    }

    pub fn label_dim(self, n: usize, k: usize) -> usize {
        match self {
            ParamKind::Ri | ParamKind::Cps => 2 * n * k,
            ParamKind::Ncv => 2 * n * k + k,
            ParamKind::Hsc => k * (3 * n - 2),
        }
    }

    /// Whether features and labels are invariant to per-user global phases.
    pub fn removes_global_phase(self) -> bool {
        matches!(self, ParamKind::Cps | ParamKind::Hsc)
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ri" => Ok(ParamKind::Ri),
            "ncv" => Ok(ParamKind::Ncv),
            "cps" => Ok(ParamKind::Cps),
            "hsc" => Ok(ParamKind::Hsc),
            other => Err(Error::Config(format!("unknown parameterization `{other}`"))),
        }
    }
}

/// Min-max scaling to `[-1, 1]`, fitted on training data only. The SNR uses
/// the fixed generation range instead of fitted bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub n_antennas: usize,
    pub n_users: usize,
    pub snr_range_db: (f64, f64),
    pub norm_min: Vec<f64>,
    pub norm_max: Vec<f64>,
    pub channel_min: Vec<f64>,
    pub channel_max: Vec<f64>,
    pub precoder_min: Vec<f64>,
    pub precoder_max: Vec<f64>,
    pub fitted: bool,
}

fn to_unit_range(x: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        2.0 * (x - lo) / (hi - lo) - 1.0
    } else {
        0.0
    }
}

fn from_unit_range(y: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + 0.5 * (y + 1.0) * (hi - lo)
    } else {
        lo
    }
}

impl Scaler {
    pub fn unfitted(n_antennas: usize, n_users: usize, snr_range_db: (f64, f64)) -> Self {
        let d = 2 * n_antennas * n_users;
        Scaler {
            n_antennas,
            n_users,
            snr_range_db,
            norm_min: vec![f64::INFINITY; n_users],
            norm_max: vec![f64::NEG_INFINITY; n_users],
            channel_min: vec![f64::INFINITY; d],
            channel_max: vec![f64::NEG_INFINITY; d],
            precoder_min: vec![f64::INFINITY; d],
            precoder_max: vec![f64::NEG_INFINITY; d],
            fitted: false,
        }
    }

    /// Fits on `(H, W)` pairs of the training split.
    pub fn fit<'a, I>(n_antennas: usize, n_users: usize, snr_range_db: (f64, f64), train: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a CMat, &'a CMat)>,
    {
        let mut s = Self::unfitted(n_antennas, n_users, snr_range_db);
        let mut count = 0usize;
        for (h, w) in train {
            if h.rows() != n_antennas || h.cols() != n_users || w.rows() != n_antennas || w.cols() != n_users {
                return Err(Error::Shape("scaler fit sample has the wrong shape".into()));
            }
            for k in 0..n_users {
                let nk = norm_sqr(h.col(k)).sqrt();
                s.norm_min[k] = s.norm_min[k].min(nk);
                s.norm_max[k] = s.norm_max[k].max(nk);
            }
            for (i, x) in h.to_interleaved().into_iter().enumerate() {
                s.channel_min[i] = s.channel_min[i].min(x);
                s.channel_max[i] = s.channel_max[i].max(x);
            }
            for (i, x) in w.to_interleaved().into_iter().enumerate() {
                s.precoder_min[i] = s.precoder_min[i].min(x);
                s.precoder_max[i] = s.precoder_max[i].max(x);
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Config("cannot fit a scaler on an empty training split".into()));
        }
        s.fitted = true;
        Ok(s)
    }

    pub fn require_fitted(&self) -> Result<()> {
        if self.fitted {
            Ok(())
        } else {
            Err(Error::State("scaler has not been fitted".into()))
        }
    }

    /// Affine SNR map; values outside the generation range extrapolate.
    pub fn scale_snr(&self, snr_db: f64) -> f64 {
        to_unit_range(snr_db, self.snr_range_db.0, self.snr_range_db.1)
    }

    pub fn scale_norm(&self, k: usize, norm: f64) -> f64 {
        to_unit_range(norm, self.norm_min[k], self.norm_max[k])
    }

    fn precoder_span(&self, i: usize) -> f64 {
        let (lo, hi) = (self.precoder_min[i], self.precoder_max[i]);
        if hi > lo {
            0.5 * (hi - lo)
        } else {
            0.0
        }
    }
}

/// Power shares `ζ_k = ‖w_k‖² / Σ_j ‖w_j‖²`; uniform when `W = 0`.
pub fn power_split(w: &CMat) -> Vec<f64> {
    let k_users = w.cols();
    let powers: Vec<f64> = (0..k_users).map(|k| norm_sqr(w.col(k))).collect();
    let total: f64 = powers.iter().sum();
    if total > 0.0 {
        powers.iter().map(|p| p / total).collect()
    } else {
        vec![1.0 / k_users as f64; k_users]
    }
}

fn check_shapes(cfg: &SystemConfig, m: &CMat, scaler: &Scaler) -> Result<()> {
    if m.rows() != cfg.n_antennas || m.cols() != cfg.n_users {
        return Err(Error::Shape(format!(
            "matrix is {}x{}, expected {}x{}",
            m.rows(),
            m.cols(),
            cfg.n_antennas,
            cfg.n_users
        )));
    }
    if scaler.n_antennas != cfg.n_antennas || scaler.n_users != cfg.n_users {
        return Err(Error::Shape("scaler was fitted for a different system size".into()));
    }
    Ok(())
}

/// `(sin φ, cos φ)` of every element after the first, read off the unit
/// phasor `u/|u|`; `(0, 1)` for a zero element.
fn push_phasors(out: &mut Vec<f64>, u: &[C64]) {
    for z in &u[1..] {
        let r = z.norm();
        if r > 0.0 {
            out.push(z.im / r);
            out.push(z.re / r);
        } else {
            out.push(0.0);
            out.push(1.0);
        }
    }
}

/// Network input for channel `h` at `snr_db`.
pub fn featurize(kind: ParamKind, cfg: &SystemConfig, h: &CMat, snr_db: f64, scaler: &Scaler) -> Result<Vec<f64>> {
    scaler.require_fitted()?;
    check_shapes(cfg, h, scaler)?;
    let (n, k_users) = (cfg.n_antennas, cfg.n_users);
    let mut out = Vec::with_capacity(kind.input_dim(n, k_users));
    match kind {
        ParamKind::Ri => {
            for (i, x) in h.to_interleaved().into_iter().enumerate() {
                out.push(to_unit_range(x, scaler.channel_min[i], scaler.channel_max[i]));
            }
        }
        ParamKind::Ncv => {
            for k in 0..k_users {
                let nk = norm_sqr(h.col(k)).sqrt();
                if nk == 0.0 {
                    return Err(Error::Domain(format!("channel of user {k} is zero")));
                }
                for z in h.col(k) {
                    out.push(z.re / nk);
                    out.push(z.im / nk);
                }
            }
        }
        ParamKind::Cps => {
            for k in 0..k_users {
                let (g, _) = project_to_cps(&h.col_vec(k))?;
                out.extend(g.embedding());
            }
        }
        ParamKind::Hsc => {
            let points = (0..k_users)
                .map(|k| project_to_cps(&h.col_vec(k)).map(|(g, _)| g))
                .collect::<Result<Vec<_>>>()?;
            for g in &points {
                out.extend(
                    cps::amplitude_angles(g.as_cvec().as_slice())
                        .iter()
                        .map(|t| t - FRAC_PI_4),
                );
            }
            for g in &points {
                push_phasors(&mut out, g.as_cvec().as_slice());
            }
        }
    }
    if kind != ParamKind::Ri {
        for k in 0..k_users {
            out.push(scaler.scale_norm(k, norm_sqr(h.col(k)).sqrt()));
        }
    }
    out.push(scaler.scale_snr(snr_db));
    debug_assert_eq!(out.len(), kind.input_dim(n, k_users));
    Ok(out)
}

/// Unit direction of `w_k`, with `e_1` standing in for a switched-off user.
fn direction_or_basis(w: &CMat, k: usize) -> CVec {
    let nk = norm_sqr(w.col(k)).sqrt();
    if nk > 0.0 {
        CVec::new(w.col(k).iter().map(|z| z / nk).collect())
    } else {
        CVec::basis(w.rows(), 0)
    }
}

fn canonical_direction(w: &CMat, k: usize) -> Result<cps::CpsPoint> {
    Ok(project_to_cps(&direction_or_basis(w, k))?.0)
}

/// Training target for precoders `w` on channel `h`.
pub fn labelize(kind: ParamKind, cfg: &SystemConfig, w: &CMat, scaler: &Scaler) -> Result<Vec<f64>> {
    check_shapes(cfg, w, scaler)?;
    let (n, k_users) = (cfg.n_antennas, cfg.n_users);
    let mut out = Vec::with_capacity(kind.label_dim(n, k_users));
    match kind {
        ParamKind::Ri => {
            scaler.require_fitted()?;
            for (i, x) in w.to_interleaved().into_iter().enumerate() {
                out.push(to_unit_range(x, scaler.precoder_min[i], scaler.precoder_max[i]));
            }
            return Ok(out);
        }
        ParamKind::Ncv => {
            for k in 0..k_users {
                for z in direction_or_basis(w, k).as_slice() {
                    out.push(z.re);
                    out.push(z.im);
                }
            }
        }
        ParamKind::Cps => {
            for k in 0..k_users {
                out.extend(canonical_direction(w, k)?.embedding());
            }
        }
        ParamKind::Hsc => {
            let points = (0..k_users)
                .map(|k| canonical_direction(w, k))
                .collect::<Result<Vec<_>>>()?;
            for u in &points {
                out.extend(cps::amplitude_angles(u.as_cvec().as_slice()));
            }
            for u in &points {
                push_phasors(&mut out, u.as_cvec().as_slice());
            }
        }
    }
    out.extend(power_split(w));
    debug_assert_eq!(out.len(), kind.label_dim(n, k_users));
    Ok(out)
}

/// Structured view of a label vector, as consumed by the losses.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelParts {
    pub zeta: Vec<f64>,
    /// Unit precoder directions (NCV, CPS).
    pub directions: Vec<CVec>,
    /// Amplitude and phase angles, user-major, `K(N-1)` each (HSC).
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

pub fn split_label(kind: ParamKind, n: usize, k_users: usize, label: &[f64]) -> Result<LabelParts> {
    if label.len() != kind.label_dim(n, k_users) {
        return Err(Error::Shape(format!(
            "{kind} label has {} values, expected {}",
            label.len(),
            kind.label_dim(n, k_users)
        )));
    }
    let mut parts = LabelParts {
        zeta: Vec::new(),
        directions: Vec::new(),
        theta: Vec::new(),
        phi: Vec::new(),
    };
    let zeta_start = label.len() - k_users;
    match kind {
        ParamKind::Ri => return Ok(parts),
        ParamKind::Ncv => {
            parts.directions = label[..zeta_start]
                .chunks_exact(2 * n)
                .map(|c| CVec::new(c.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect()))
                .collect();
        }
        ParamKind::Cps => {
            parts.directions = label[..zeta_start]
                .chunks_exact(2 * n - 1)
                .map(|c| assemble_cps(c, n))
                .collect();
        }
        ParamKind::Hsc => {
            let m = k_users * (n - 1);
            parts.theta = label[..m].to_vec();
            parts.phi = label[m..3 * m].chunks_exact(2).map(|p| p[0].atan2(p[1])).collect();
        }
    }
    parts.zeta = label[zeta_start..].to_vec();
    Ok(parts)
}

fn assemble_cps(chunk: &[f64], n: usize) -> CVec {
    CVec::new(
        (0..n)
            .map(|i| C64::new(chunk[i], if i == 0 { 0.0 } else { chunk[n + i - 1] }))
            .collect(),
    )
}

const LOGIT_FLOOR: f64 = 1e-300;

/// Raw network output that decodes exactly to `label`: `ln ζ` for the
/// softmax inputs and `atanh(4θ/π - 1)` for the tanh-squashed angles.
pub fn label_to_raw(kind: ParamKind, n: usize, k_users: usize, label: &[f64]) -> Result<Vec<f64>> {
    if label.len() != kind.label_dim(n, k_users) {
        return Err(Error::Shape("label length does not match its kind".into()));
    }
    let mut raw = label.to_vec();
    if kind == ParamKind::Ri {
        return Ok(raw);
    }
    let zeta_start = raw.len() - k_users;
    for z in &mut raw[zeta_start..] {
        *z = z.max(LOGIT_FLOOR).ln();
    }
    if kind == ParamKind::Hsc {
        let limit = 1.0 - f64::EPSILON;
        for t in &mut raw[..k_users * (n - 1)] {
            *t = (*t / FRAC_PI_4 - 1.0).clamp(-limit, limit).atanh();
        }
    }
    Ok(raw)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Decoded network output with the intermediates its backward pass needs.
#[derive(Clone, Debug)]
pub struct Decoded {
    /// Predicted power shares (empty for RI).
    pub zeta: Vec<f64>,
    /// Predicted unit directions (empty for RI).
    pub directions: Vec<CVec>,
    /// Predicted angles, user-major (HSC only).
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// Feasible precoders.
    pub precoders: CMat,
    /// Per-user pre-normalization norms (CPS, NCV); 0 marks the fallback.
    pre_norms: Vec<f64>,
    /// Sign applied to keep the first element non-negative (CPS).
    signs: Vec<f64>,
    /// Frobenius norm of the unprojected RI precoders when projected.
    ri_projection: Option<f64>,
}

/// Upstream gradients for [`postprocess_backward`]. Complex gradients use the
/// convention `∂L/∂Re z + j ∂L/∂Im z`.
#[derive(Clone, Debug, Default)]
pub struct DecodedGrad {
    pub zeta: Option<Vec<f64>>,
    pub directions: Option<Vec<CVec>>,
    pub theta: Option<Vec<f64>>,
    pub phi: Option<Vec<f64>>,
    pub precoders: Option<CMat>,
}

fn normalize_or_fallback(v: CVec, k: usize) -> (CVec, f64) {
    let nv = v.norm();
    if nv > 0.0 && nv.is_finite() {
        (v.scale(C64::new(1.0 / nv, 0.0)), nv)
    } else {
        log::warn!("zero-norm predicted direction for user {k}; using e_1");
        (CVec::basis(v.dim(), 0), 0.0)
    }
}

/// Maps raw outputs to feasible precoders for the power budget
/// `cfg.power_budget`. `scaler` is only read for RI.
pub fn postprocess(kind: ParamKind, cfg: &SystemConfig, raw: &[f64], scaler: &Scaler) -> Result<Decoded> {
    let (n, k_users) = (cfg.n_antennas, cfg.n_users);
    if raw.len() != kind.label_dim(n, k_users) {
        return Err(Error::Shape(format!(
            "{kind} output has {} values, expected {}",
            raw.len(),
            kind.label_dim(n, k_users)
        )));
    }
    let budget = cfg.power_budget;
    let mut d = Decoded {
        zeta: Vec::new(),
        directions: Vec::new(),
        theta: Vec::new(),
        phi: Vec::new(),
        precoders: CMat::zeros(n, k_users),
        pre_norms: Vec::new(),
        signs: Vec::new(),
        ri_projection: None,
    };

    if kind == ParamKind::Ri {
        scaler.require_fitted()?;
        let vals: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(i, &r)| from_unit_range(r, scaler.precoder_min[i], scaler.precoder_max[i]))
            .collect();
        let mut w = CMat::from_interleaved(n, k_users, &vals)?;
        let p = w.power();
        if p > budget {
            let fro = p.sqrt();
            let s = budget.sqrt() / fro;
            for z in w.as_mut_slice() {
                *z *= s;
            }
            d.ri_projection = Some(fro);
        }
        d.precoders = w;
        return Ok(d);
    }

    let zeta_start = raw.len() - k_users;
    d.zeta = softmax(&raw[zeta_start..]);
    match kind {
        ParamKind::Ncv => {
            for (k, c) in raw[..zeta_start].chunks_exact(2 * n).enumerate() {
                let v = CVec::new(c.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect());
                let (u, nv) = normalize_or_fallback(v, k);
                d.directions.push(u);
                d.pre_norms.push(nv);
            }
        }
        ParamKind::Cps => {
            for (k, c) in raw[..zeta_start].chunks_exact(2 * n - 1).enumerate() {
                let (mut u, nv) = normalize_or_fallback(assemble_cps(c, n), k);
                let sign = if u[0].re < 0.0 { -1.0 } else { 1.0 };
                if sign < 0.0 {
                    u = u.scale(C64::new(-1.0, 0.0));
                }
                d.directions.push(u);
                d.pre_norms.push(nv);
                d.signs.push(sign);
            }
        }
        ParamKind::Hsc => {
            let m = k_users * (n - 1);
            d.theta = raw[..m].iter().map(|r| (r.tanh() + 1.0) * FRAC_PI_4).collect();
            d.phi = raw[m..3 * m]
                .chunks_exact(2)
                .map(|p| {
                    if p[0] == 0.0 && p[1] == 0.0 {
                        0.0
                    } else {
                        p[0].atan2(p[1])
                    }
                })
                .collect();
            for k in 0..k_users {
                let span = k * (n - 1)..(k + 1) * (n - 1);
                d.directions
                    .push(cps::from_angles_unchecked(&d.theta[span.clone()], &d.phi[span]));
            }
        }
        ParamKind::Ri => unreachable!(),
    }
    for k in 0..k_users {
        let amp = (d.zeta[k] * budget).sqrt();
        for (wi, ui) in d.precoders.col_mut(k).iter_mut().zip(d.directions[k].as_slice()) {
            *wi = ui * amp;
        }
    }
    Ok(d)
}

/// Gradient of a unit-normalization `u = s·v/‖v‖` in real coordinates.
fn normalize_backward(u: &CVec, sign: f64, pre_norm: f64, g: &CVec) -> CVec {
    if pre_norm == 0.0 {
        return CVec::zeros(u.dim());
    }
    // û = v/‖v‖ = s·u
    let dot: f64 = u
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(a, b)| a.re * b.re + a.im * b.im)
        .sum();
    CVec::new(
        u.as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, b)| (b - a * dot) * (sign / pre_norm))
            .collect(),
    )
}

/// Vector-Jacobian product of [`postprocess`]: the gradient of a scalar
/// with respect to `raw`, given its gradients with respect to the decoded
/// quantities.
pub fn postprocess_backward(
    kind: ParamKind,
    cfg: &SystemConfig,
    raw: &[f64],
    decoded: &Decoded,
    grad: &DecodedGrad,
    scaler: &Scaler,
) -> Vec<f64> {
    let (n, k_users) = (cfg.n_antennas, cfg.n_users);
    let budget = cfg.power_budget;
    let mut out = vec![0.0; raw.len()];

    if kind == ParamKind::Ri {
        let Some(gw) = &grad.precoders else {
            return out;
        };
        let mut g: Vec<C64> = gw.as_slice().to_vec();
        if let Some(fro) = decoded.ri_projection {
            // w = √P · x/‖x‖
            let unit: Vec<C64> = decoded.precoders.as_slice().iter().map(|z| z / budget.sqrt()).collect();
            let dot: f64 = unit.iter().zip(&g).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
            for (gi, ui) in g.iter_mut().zip(&unit) {
                *gi = (*gi - ui * dot) * (budget.sqrt() / fro);
            }
        }
        for (i, gi) in g.iter().enumerate() {
            out[2 * i] = gi.re * scaler.precoder_span(2 * i);
            out[2 * i + 1] = gi.im * scaler.precoder_span(2 * i + 1);
        }
        return out;
    }

    let mut g_zeta = grad.zeta.clone().unwrap_or_else(|| vec![0.0; k_users]);
    let mut g_dir: Vec<CVec> = grad.directions.clone().unwrap_or_else(|| vec![CVec::zeros(n); k_users]);
    if let Some(gw) = &grad.precoders {
        for k in 0..k_users {
            let z = decoded.zeta[k];
            let amp = (z * budget).sqrt();
            let gk = gw.col(k);
            let u = decoded.directions[k].as_slice();
            if z > 0.0 {
                let proj: f64 = gk.iter().zip(u).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
                g_zeta[k] += proj * budget.sqrt() / (2.0 * z.sqrt());
            }
            for (gd, gi) in g_dir[k].as_mut_slice().iter_mut().zip(gk) {
                *gd += gi * amp;
            }
        }
    }

    // softmax
    let zeta_start = raw.len() - k_users;
    let inner: f64 = decoded.zeta.iter().zip(&g_zeta).map(|(a, b)| a * b).sum();
    for k in 0..k_users {
        out[zeta_start + k] = decoded.zeta[k] * (g_zeta[k] - inner);
    }

    match kind {
        ParamKind::Ncv => {
            for k in 0..k_users {
                let gv = normalize_backward(&decoded.directions[k], 1.0, decoded.pre_norms[k], &g_dir[k]);
                for (i, z) in gv.as_slice().iter().enumerate() {
                    out[k * 2 * n + 2 * i] = z.re;
                    out[k * 2 * n + 2 * i + 1] = z.im;
                }
            }
        }
        ParamKind::Cps => {
            let stride = 2 * n - 1;
            for k in 0..k_users {
                let gv = normalize_backward(
                    &decoded.directions[k],
                    decoded.signs[k],
                    decoded.pre_norms[k],
                    &g_dir[k],
                );
                let gv = gv.as_slice();
                for i in 0..n {
                    out[k * stride + i] = gv[i].re;
                }
                for i in 1..n {
                    out[k * stride + n + i - 1] = gv[i].im;
                }
            }
        }
        ParamKind::Hsc => {
            let m = k_users * (n - 1);
            let mut g_theta = grad.theta.clone().unwrap_or_else(|| vec![0.0; m]);
            let mut g_phi = grad.phi.clone().unwrap_or_else(|| vec![0.0; m]);
            for k in 0..k_users {
                let span = k * (n - 1)..(k + 1) * (n - 1);
                let theta = &decoded.theta[span.clone()];
                let phi = &decoded.phi[span.clone()];
                let u = decoded.directions[k].as_slice();
                let g = g_dir[k].as_slice();
                // amplitudes r_i: u_0 = r_0, u_i = r_i e^{jφ_{i-1}}
                let mut g_amp = vec![0.0; n];
                for i in 0..n {
                    let phase = if i == 0 {
                        C64::new(1.0, 0.0)
                    } else {
                        C64::from_polar(1.0, phi[i - 1])
                    };
                    g_amp[i] = (g[i].conj() * phase).re;
                    if i > 0 {
                        g_phi[span.start + i - 1] += (g[i].conj() * C64::new(0.0, 1.0) * u[i]).re;
                    }
                }
                for t in 0..n - 1 {
                    let mut acc = 0.0;
                    for (i, ga) in g_amp.iter().enumerate() {
                        acc += ga * amplitude_partial(theta, i, t);
                    }
                    g_theta[span.start + t] += acc;
                }
            }
            for (i, g) in g_theta.iter().enumerate() {
                let th = raw[i].tanh();
                out[i] = g * (1.0 - th * th) * FRAC_PI_4;
            }
            for (j, g) in g_phi.iter().enumerate() {
                let (s, c) = (raw[m + 2 * j], raw[m + 2 * j + 1]);
                let r2 = s * s + c * c;
                if r2 > 0.0 {
                    out[m + 2 * j] = g * c / r2;
                    out[m + 2 * j + 1] = -g * s / r2;
                }
            }
        }
        ParamKind::Ri => unreachable!(),
    }
    out
}

/// `∂r_i/∂θ_t` for the amplitudes of the hyperspherical chart.
fn amplitude_partial(theta: &[f64], i: usize, t: usize) -> f64 {
    let last = theta.len();
    if t > i || (t == i && i == last) {
        return 0.0;
    }
    let mut p = 1.0;
    for (s, th) in theta.iter().enumerate().take(i) {
        p *= if s == t { th.cos() } else { th.sin() };
    }
    if i < last {
        p *= if t == i { -theta[i].sin() } else { theta[i].cos() };
    }
    p
}
