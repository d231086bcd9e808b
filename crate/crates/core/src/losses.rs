//! Training objectives.
//!
//! Component losses are per sample. A batch total weights each sample by the
//! rate penalty `β = R / R̃` (WMMSE rate over the rate of the reconstructed
//! prediction), clamped to [`BETA_MIN`, `BETA_MAX`] and treated as a constant:
//!
//! ```text
//! L = Σ_i β_i ℓ_i / Σ_i β_i
//! ```
//!
//! with `ℓ = L_ζ + L_u` (CPS), `L_ζ + L_b` (NCV), `L_ζ + L_Θ + 0.5 L_Φ` (HSC)
//! and `‖w − w̃‖² / 2NK` (RI, in scaled label space).

use crate::complex::{hdot, sum_rate, CMat, CVec, SystemConfig};
use crate::error::{Error, Result};
use crate::param::{postprocess, postprocess_backward, split_label, DecodedGrad, ParamKind, Scaler};

/// Floor applied to predicted shares inside the logarithm.
pub const KL_FLOOR: f64 = 1e-12;
pub const BETA_MIN: f64 = 1e-3;
pub const BETA_MAX: f64 = 100.0;
/// Weight of the phase-angle term in the HSC loss.
pub const HSC_PHI_WEIGHT: f64 = 0.5;

const UNIT_TOL: f64 = 1e-9;

/// KL divergence `Σ ζ ln ζ − Σ ζ ln ζ̃` (natural log, `0 ln 0 = 0`).
pub fn loss_power_split(zeta: &[f64], pred: &[f64]) -> Result<f64> {
    if zeta.len() != pred.len() {
        return Err(Error::Shape("power splits differ in length".into()));
    }
    Ok(zeta
        .iter()
        .zip(pred)
        .filter(|(z, _)| **z > 0.0)
        .map(|(z, p)| z * (z.ln() - p.max(KL_FLOOR).ln()))
        .sum())
}

/// Gradient of [`loss_power_split`] with respect to `pred`.
pub fn loss_power_split_grad(zeta: &[f64], pred: &[f64]) -> Vec<f64> {
    zeta.iter()
        .zip(pred)
        .map(|(z, p)| if *p > KL_FLOOR { -z / p } else { 0.0 })
        .collect()
}

fn check_unit(v: &[CVec], what: &str) -> Result<()> {
    for (k, z) in v.iter().enumerate() {
        if (z.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain(format!("{what} direction {k} has norm {}", z.norm())));
        }
    }
    Ok(())
}

/// `(1/K) Σ_k (1 − |z_kᴴ z̃_k|²)` over unit vectors.
pub fn loss_direction(z: &[CVec], pred: &[CVec]) -> Result<f64> {
    if z.len() != pred.len() || z.is_empty() {
        return Err(Error::Shape("direction sets differ in size or are empty".into()));
    }
    check_unit(z, "target")?;
    check_unit(pred, "predicted")?;
    let mut acc = 0.0;
    for (a, b) in z.iter().zip(pred) {
        acc += 1.0 - hdot(a.as_slice(), b.as_slice()).norm_sqr();
    }
    Ok(acc / z.len() as f64)
}

/// Gradient of [`loss_direction`] with respect to `pred`, complex convention
/// `∂/∂Re + j ∂/∂Im`.
pub fn loss_direction_grad(z: &[CVec], pred: &[CVec]) -> Vec<CVec> {
    let scale = -2.0 / z.len() as f64;
    z.iter()
        .zip(pred)
        .map(|(a, b)| {
            let s = hdot(a.as_slice(), b.as_slice());
            CVec::new(a.as_slice().iter().map(|ai| s * ai * scale).collect())
        })
        .collect()
}

/// Mean circular distance `1 − cos(ψ − ψ̃)`.
pub fn loss_angles(psi: &[f64], pred: &[f64]) -> Result<f64> {
    if psi.len() != pred.len() || psi.is_empty() {
        return Err(Error::Shape("angle sets differ in size or are empty".into()));
    }
    let s: f64 = psi.iter().zip(pred).map(|(a, b)| 1.0 - (a - b).cos()).sum();
    Ok(s / psi.len() as f64)
}

pub fn loss_angles_grad(psi: &[f64], pred: &[f64]) -> Vec<f64> {
    let m = psi.len() as f64;
    psi.iter().zip(pred).map(|(a, b)| -(a - b).sin() / m).collect()
}

/// `β = R/R̃`, clamped. A zero predicted rate yields the upper clamp.
pub fn rate_penalty(label_rate: f64, pred_rate: f64) -> f64 {
    if pred_rate <= 0.0 {
        return BETA_MAX;
    }
    (label_rate / pred_rate).clamp(BETA_MIN, BETA_MAX)
}

/// One sample as seen by the objective.
#[derive(Clone, Copy, Debug)]
pub struct Target<'a> {
    /// System with this sample's power budget.
    pub cfg: &'a SystemConfig,
    pub channel: &'a CMat,
    /// Label as produced by [`crate::param::labelize`].
    pub label: &'a [f64],
    /// Sum rate of the WMMSE precoders behind `label`.
    pub label_rate: f64,
}

/// Unweighted loss of one sample with its gradient and rate penalty.
#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub value: f64,
    /// `∂value/∂raw`; empty when not requested.
    pub grad: Vec<f64>,
    pub pred_rate: f64,
    pub beta: f64,
}

/// Component loss `ℓ` of `raw` against `target`, the rate of the decoded
/// prediction and, if `with_grad`, `∂ℓ/∂raw`.
pub fn sample_loss(
    kind: ParamKind,
    target: Target<'_>,
    raw: &[f64],
    scaler: &Scaler,
    with_grad: bool,
) -> Result<SampleLoss> {
    let cfg = target.cfg;
    let (n, k_users) = (cfg.n_antennas, cfg.n_users);
    let decoded = postprocess(kind, cfg, raw, scaler)?;
    let pred_rate = sum_rate(cfg, target.channel, &decoded.precoders)?;
    let beta = rate_penalty(target.label_rate, pred_rate);

    if kind == ParamKind::Ri {
        if target.label.len() != raw.len() {
            return Err(Error::Shape("RI label and output lengths differ".into()));
        }
        let denom = (2 * n * k_users) as f64;
        let value = target
            .label
            .iter()
            .zip(raw)
            .map(|(t, p)| (t - p) * (t - p))
            .sum::<f64>()
            / denom;
        let grad = if with_grad {
            target
                .label
                .iter()
                .zip(raw)
                .map(|(t, p)| 2.0 * (p - t) / denom)
                .collect()
        } else {
            Vec::new()
        };
        return Ok(SampleLoss {
            value,
            grad,
            pred_rate,
            beta,
        });
    }

    let parts = split_label(kind, n, k_users, target.label)?;
    let mut value = loss_power_split(&parts.zeta, &decoded.zeta)?;
    let mut g = DecodedGrad::default();
    if with_grad {
        g.zeta = Some(loss_power_split_grad(&parts.zeta, &decoded.zeta));
    }
    match kind {
        ParamKind::Ncv | ParamKind::Cps => {
            value += loss_direction(&parts.directions, &decoded.directions)?;
            if with_grad {
                g.directions = Some(loss_direction_grad(&parts.directions, &decoded.directions));
            }
        }
        ParamKind::Hsc => {
            value += loss_angles(&parts.theta, &decoded.theta)?;
            value += HSC_PHI_WEIGHT * loss_angles(&parts.phi, &decoded.phi)?;
            if with_grad {
                g.theta = Some(loss_angles_grad(&parts.theta, &decoded.theta));
                g.phi = Some(
                    loss_angles_grad(&parts.phi, &decoded.phi)
                        .into_iter()
                        .map(|x| HSC_PHI_WEIGHT * x)
                        .collect(),
                );
            }
        }
        ParamKind::Ri => unreachable!(),
    }
    let grad = if with_grad {
        postprocess_backward(kind, cfg, raw, &decoded, &g, scaler)
    } else {
        Vec::new()
    };
    Ok(SampleLoss {
        value,
        grad,
        pred_rate,
        beta,
    })
}

/// `Σ β ℓ / Σ β` and the per-sample weights `β_i / Σ β`.
pub fn weighted_total(values: &[f64], betas: &[f64]) -> Result<(f64, Vec<f64>)> {
    if values.len() != betas.len() || values.is_empty() {
        return Err(Error::Shape("loss and penalty counts differ or are empty".into()));
    }
    let sb: f64 = betas.iter().sum();
    if !(sb > 0.0) {
        return Err(Error::Domain("rate penalties sum to zero".into()));
    }
    let weights: Vec<f64> = betas.iter().map(|b| b / sb).collect();
    let total = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
    Ok((total, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::{gen_rayleigh_channel, C64};
    use crate::param::{label_to_raw, labelize};
    use crate::rng::substream;
    use crate::wmmse::{solve, WmmseOptions};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::{LN_2, PI};

    fn random_unit(n: usize, rng: &mut impl Rng) -> CVec {
        let v = CVec::new(
            (0..n)
                .map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
                .collect(),
        );
        let s = 1.0 / v.norm();
        v.scale(C64::new(s, 0.0))
    }

    fn random_simplex(k: usize, rng: &mut impl Rng) -> Vec<f64> {
        let x: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = x.iter().sum();
        x.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn kl_zero_at_equality() {
        let z = [0.1, 0.2, 0.7];
        assert_eq!(loss_power_split(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn kl_one_hot_against_uniform() {
        assert_relative_eq!(
            loss_power_split(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            LN_2,
            max_relative = 1e-15
        );
    }

    #[test]
    fn kl_non_negative() {
        let mut rng = substream(3, 0);
        for _ in 0..10_000 {
            let k = rng.random_range(1..6);
            let a = random_simplex(k, &mut rng);
            let b = random_simplex(k, &mut rng);
            assert!(loss_power_split(&a, &b).unwrap() >= -1e-15);
        }
    }

    #[test]
    fn kl_floor_keeps_it_finite() {
        let v = loss_power_split(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_relative_eq!(v, -(KL_FLOOR.ln()), max_relative = 1e-15);
    }

    #[test]
    fn direction_loss_is_phase_blind() {
        let mut rng = substream(4, 0);
        let z: Vec<CVec> = (0..4).map(|_| random_unit(4, &mut rng)).collect();
        let rotated: Vec<CVec> = z
            .iter()
            .enumerate()
            .map(|(k, v)| v.scale(C64::from_polar(1.0, 0.7 * k as f64)))
            .collect();
        assert!(loss_direction(&z, &rotated).unwrap().abs() < 1e-15);
        let a = loss_direction(&z, &z).unwrap();
        assert!(a.abs() < 1e-15);
    }

    #[test]
    fn direction_loss_orthogonal_is_one() {
        let z = vec![CVec::basis(3, 0), CVec::basis(3, 1)];
        let p = vec![CVec::basis(3, 2), CVec::basis(3, 0)];
        assert_eq!(loss_direction(&z, &p).unwrap(), 1.0);
    }

    #[test]
    fn direction_loss_matches_elementwise_loop() {
        let mut rng = substream(5, 0);
        let z: Vec<CVec> = (0..3).map(|_| random_unit(5, &mut rng)).collect();
        let p: Vec<CVec> = (0..3).map(|_| random_unit(5, &mut rng)).collect();
        let mut acc = 0.0;
        for k in 0..3 {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..5 {
                let (a, b) = (z[k][i], p[k][i]);
                re += a.re * b.re + a.im * b.im;
                im += a.re * b.im - a.im * b.re;
            }
            acc += 1.0 - (re * re + im * im);
        }
        assert_relative_eq!(loss_direction(&z, &p).unwrap(), acc / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn direction_loss_rejects_non_unit() {
        let z = vec![CVec::basis(2, 0)];
        let p = vec![CVec::new(vec![C64::new(2.0, 0.0), C64::new(0.0, 0.0)])];
        assert!(matches!(loss_direction(&z, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn angle_loss_cases() {
        let a = [0.3, -1.2, 2.0];
        assert_eq!(loss_angles(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + 2.0 * PI).collect();
        assert!(loss_angles(&a, &shifted).unwrap() < 1e-15);
        let opposite: Vec<f64> = a.iter().map(|x| x + PI).collect();
        assert_relative_eq!(loss_angles(&a, &opposite).unwrap(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn angle_loss_matches_loop() {
        let mut rng = substream(6, 0);
        let a: Vec<f64> = (0..12).map(|_| rng.random_range(-PI..PI)).collect();
        let b: Vec<f64> = (0..12).map(|_| rng.random_range(-PI..PI)).collect();
        let mut acc = 0.0;
        for i in 0..12 {
            acc += 1.0 - (a[i] - b[i]).cos();
        }
        assert_relative_eq!(loss_angles(&a, &b).unwrap(), acc / 12.0, max_relative = 1e-12);
    }

    #[test]
    fn penalty_clamps() {
        assert_eq!(rate_penalty(5.0, 0.0), BETA_MAX);
        assert_eq!(rate_penalty(1e-9, 10.0), BETA_MIN);
        assert_eq!(rate_penalty(3.0, 2.0), 1.5);
    }

    #[test]
    fn weighted_total_cases() {
        let (t, w) = weighted_total(&[0.2, 0.4, 0.9], &[1.0; 3]).unwrap();
        assert_relative_eq!(t, 0.5, max_relative = 1e-15);
        assert_eq!(w, vec![1.0 / 3.0; 3]);
        let (t, _) = weighted_total(&[2.0, 6.0], &[1.0, 3.0]).unwrap();
        assert_relative_eq!(t, (2.0 + 18.0) / 4.0, max_relative = 1e-15);
        assert!(weighted_total(&[], &[]).is_err());
    }

    fn fixture(kind: ParamKind, seed: u64) -> (SystemConfig, CMat, Vec<f64>, f64, Scaler) {
        let cfg = SystemConfig::from_snr_db(4, 3, 1.0, 8.0).unwrap();
        let h = gen_rayleigh_channel(&cfg, seed);
        let w = solve(&cfg, &h, &WmmseOptions::labels()).unwrap().precoders;
        let scaler = Scaler::fit(4, 3, (0.0, 20.0), [(&h, &w)]).unwrap();
        let label = labelize(kind, &cfg, &w, &scaler).unwrap();
        let rate = sum_rate(&cfg, &h, &w).unwrap();
        (cfg, h, label, rate, scaler)
    }

    #[test]
    fn perfect_prediction_gives_zero() {
        for kind in ParamKind::ALL {
            let (cfg, h, label, rate, scaler) = fixture(kind, 11);
            let raw = label_to_raw(kind, 4, 3, &label).unwrap();
            let t = Target {
                cfg: &cfg,
                channel: &h,
                label: &label,
                label_rate: rate,
            };
            let s = sample_loss(kind, t, &raw, &scaler, false).unwrap();
            assert!(s.value.abs() < 1e-12, "{kind}: {}", s.value);
            if kind != ParamKind::Ri {
                assert_relative_eq!(s.beta, 1.0, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn sample_gradients_match_finite_differences() {
        for kind in ParamKind::ALL {
            let (cfg, h, label, rate, scaler) = fixture(kind, 12);
            let mut rng = substream(13, kind as u64);
            let raw: Vec<f64> = (0..label.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let t = Target {
                cfg: &cfg,
                channel: &h,
                label: &label,
                label_rate: rate,
            };
            let g = sample_loss(kind, t, &raw, &scaler, true).unwrap().grad;
            let step = 1e-6;
            for i in 0..raw.len() {
                let mut p = raw.clone();
                p[i] += step;
                let fp = sample_loss(kind, t, &p, &scaler, false).unwrap().value;
                p[i] -= 2.0 * step;
                let fm = sample_loss(kind, t, &p, &scaler, false).unwrap().value;
                let fd = (fp - fm) / (2.0 * step);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                assert!(err < 1e-4, "{kind} coord {i}: fd {fd} analytic {}", g[i]);
            }
        }
    }

    #[test]
    fn single_sample_weighting_keeps_minimizer() {
        let (t, w) = weighted_total(&[0.37], &[42.0]).unwrap();
        assert_eq!(t, 0.37);
        assert_eq!(w, vec![1.0]);
    }
}
