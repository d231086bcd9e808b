//! Weighted MMSE solver for weighted sum-rate maximization under a total
//! power constraint.
//!
//! One iteration updates, in order, the MMSE receive filters `q`, the MSE
//! weights `c = 1/e`, and the precoders `W`. The precoder step solves
//! `(G + λI) w_k = α_k c_k q_k* h_k` with a Cholesky factorization of the
//! Hermitian matrix `G + λI`, choosing λ = 0 when that is feasible and
//! otherwise bisecting on λ until the budget is met.

use serde::{Deserialize, Serialize};

use crate::complex::{hdot, norm_sqr, rayleigh_from_rng, weighted_sum_rate, CMat, SystemConfig, C64};
use crate::error::{Error, Result};
use crate::rng;

/// Multiplier tried when `G` is singular at λ = 0.
const SINGULAR_RETRY_LAMBDA: f64 = 1e-12;

/// Cholesky pivots below this fraction of the largest diagonal entry are
/// treated as zero; a rank-deficient `G` otherwise factors on round-off.
const PIVOT_RTOL: f64 = 1e-11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    /// `w_k ∝ h_k`, equal power `P/K` per user.
    MrtFullPower,
    /// i.i.d. complex Gaussian precoders scaled to the full budget.
    ScaledRandom { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WmmseOptions {
    pub max_iter: usize,
    /// Stop when the relative WSR change between iterations drops below this.
    pub convergence_tol: f64,
    /// Accept λ once `P(1 - tol) ≤ Σ‖w_k‖² ≤ P`.
    pub bisection_tol: f64,
    pub bisection_max_steps: usize,
    pub init_mode: InitMode,
    /// When false every run performs exactly `max_iter` iterations.
    pub early_stop: bool,
}

impl Default for WmmseOptions {
    fn default() -> Self {
        WmmseOptions {
            max_iter: 100,
            convergence_tol: 1e-5,
            bisection_tol: 1e-12,
            bisection_max_steps: 200,
            init_mode: InitMode::MrtFullPower,
            early_stop: true,
        }
    }
}

impl WmmseOptions {
    /// Exactly 10 iterations from MRT, no early stop. Used for dataset labels.
    pub fn labels() -> Self {
        WmmseOptions {
            max_iter: 10,
            early_stop: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) || !(self.bisection_tol > 0.0) {
            return Err(Error::Config("WMMSE tolerances must be positive".into()));
        }
        if self.bisection_max_steps == 0 {
            return Err(Error::Config("bisection_max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Iterate of the solver.
#[derive(Clone, Debug)]
pub struct WmmseState {
    pub precoders: CMat,
    pub filters: Vec<C64>,
    pub weights: Vec<f64>,
    pub mse: Vec<f64>,
    pub lambda: f64,
    pub iteration: usize,
}

#[derive(Clone, Debug)]
pub struct WmmseSolution {
    pub precoders: CMat,
    /// WSR of the initial point followed by the WSR after every iteration.
    pub wsr_trace: Vec<f64>,
    pub state: WmmseState,
}

/// A feasible starting point using the whole budget.
pub fn init_precoders(cfg: &SystemConfig, h: &CMat, mode: InitMode) -> CMat {
    let (n, k_users) = (cfg.n_antennas, cfg.n_users);
    match mode {
        InitMode::MrtFullPower => {
            let per_user = (cfg.power_budget / k_users as f64).sqrt();
            let mut w = CMat::zeros(n, k_users);
            for k in 0..k_users {
                let norm = norm_sqr(h.col(k)).sqrt();
                if norm > 0.0 {
                    for (wi, hi) in w.col_mut(k).iter_mut().zip(h.col(k)) {
                        *wi = hi * (per_user / norm);
                    }
                } else {
                    // Degenerate user: random direction, still deterministic.
                    let r = rayleigh_from_rng(n, 1, &mut rng::substream(0x4D52_5446, k as u64));
                    let rn = r.power().sqrt();
                    for (wi, ri) in w.col_mut(k).iter_mut().zip(r.col(0)) {
                        *wi = ri * (per_user / rn);
                    }
                }
            }
            w
        }
        InitMode::ScaledRandom { seed } => {
            let mut w = rayleigh_from_rng(n, k_users, &mut rng::rng_from_seed(seed));
            let scale = (cfg.power_budget / w.power()).sqrt();
            for z in w.as_mut_slice() {
                *z *= scale;
            }
            w
        }
    }
}

/// MMSE receive filters `q_k = w_kᴴ h_k / (Σ_j |h_kᴴ w_j|² + σ²)`.
pub fn update_receive_filters(cfg: &SystemConfig, h: &CMat, w: &CMat) -> Vec<C64> {
    (0..cfg.n_users)
        .map(|k| {
            let hk = h.col(k);
            let total: f64 = (0..cfg.n_users).map(|j| hdot(hk, w.col(j)).norm_sqr()).sum();
            hdot(w.col(k), hk) / (total + cfg.noise_variance)
        })
        .collect()
}

/// Per-user MSE `e_k` and weights `c_k = 1/e_k` for filters `q`.
pub fn update_weights(cfg: &SystemConfig, h: &CMat, w: &CMat, q: &[C64]) -> (Vec<f64>, Vec<f64>) {
    let e: Vec<f64> = (0..cfg.n_users)
        .map(|k| {
            let hk = h.col(k);
            let mut e = (q[k] * hdot(hk, w.col(k)) - 1.0).norm_sqr();
            for j in (0..cfg.n_users).filter(|&j| j != k) {
                e += (q[k] * hdot(hk, w.col(j))).norm_sqr();
            }
            e + q[k].norm_sqr() * cfg.noise_variance
        })
        .collect();
    assert!(
        e.iter().all(|&x| x > 0.0),
        "MSE must be positive for positive noise variance"
    );
    let c = e.iter().map(|x| 1.0 / x).collect();
    (e, c)
}

/// Dense Hermitian `N × N` matrix, row-major.
struct Hermitian {
    n: usize,
    a: Vec<C64>,
}

impl Hermitian {
    /// Solves `(A + λI) X = B` for the columns of `B` by Cholesky
    /// factorization. Returns `None` if `A + λI` is not numerically positive
    /// definite.
    fn shifted_solve(&self, lambda: f64, b: &CMat) -> Option<CMat> {
        let n = self.n;
        let max_diag = (0..n).map(|i| self.a[i * n + i].re + lambda).fold(0.0, f64::max);
        let min_pivot = PIVOT_RTOL * max_diag;
        let mut l = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.a[i * n + j];
                if i == j {
                    s += lambda;
                }
                for p in 0..j {
                    s -= l[i * n + p] * l[j * n + p].conj();
                }
                if i == j {
                    let d = s.re;
                    if !(d > min_pivot) || !d.is_finite() {
                        return None;
                    }
                    l[i * n + i] = C64::new(d.sqrt(), 0.0);
                } else {
                    l[i * n + j] = s / l[j * n + j].re;
                }
            }
        }
        let mut x = b.clone();
        for k in 0..b.cols() {
            let col = x.col_mut(k);
            // L y = b
            for i in 0..n {
                let mut s = col[i];
                for p in 0..i {
                    s -= l[i * n + p] * col[p];
                }
                col[i] = s / l[i * n + i].re;
            }
            // Lᴴ x = y
            for i in (0..n).rev() {
                let mut s = col[i];
                for p in i + 1..n {
                    s -= l[p * n + i].conj() * col[p];
                }
                col[i] = s / l[i * n + i].re;
            }
        }
        Some(x)
    }
}

/// Precoder update for fixed `q` and `c`. Returns the precoders and the
/// multiplier λ that was used.
pub fn update_precoders(
    cfg: &SystemConfig,
    h: &CMat,
    q: &[C64],
    c: &[f64],
    opts: &WmmseOptions,
) -> Result<(CMat, f64)> {
    let (n, k_users) = (cfg.n_antennas, cfg.n_users);
    let budget = cfg.power_budget;

    // G = Σ α_k c_k |q_k|² h_k h_kᴴ
    let mut g = Hermitian {
        n,
        a: vec![C64::new(0.0, 0.0); n * n],
    };
    let mut rhs = CMat::zeros(n, k_users);
    for k in 0..k_users {
        let hk = h.col(k);
        let s = cfg.priorities[k] * c[k] * q[k].norm_sqr();
        for i in 0..n {
            for j in 0..n {
                g.a[i * n + j] += hk[i] * hk[j].conj() * s;
            }
        }
        let coeff = q[k].conj() * (cfg.priorities[k] * c[k]);
        for (r, hi) in rhs.col_mut(k).iter_mut().zip(hk) {
            *r = hi * coeff;
        }
    }
    if rhs.power() == 0.0 {
        return Ok((CMat::zeros(n, k_users), 0.0));
    }

    let eval = |lambda: f64| {
        g.shifted_solve(lambda, &rhs).map(|w| {
            let p = w.power();
            (w, p)
        })
    };

    // λ = 0, or the tiny retry if G is singular.
    let mut lo = 0.0;
    match eval(0.0) {
        Some((w, p)) if p <= budget => return Ok((w, 0.0)),
        Some(_) => {}
        None => {
            lo = SINGULAR_RETRY_LAMBDA;
            if let Some((w, p)) = eval(lo) {
                if p <= budget {
                    return Ok((w, lo));
                }
            }
        }
    }

    let within = |p: f64| p <= budget && p >= budget * (1.0 - opts.bisection_tol);

    // Bracket: double λ_high from 1 until the budget is met.
    let mut hi = 1.0;
    let mut steps = 0;
    let mut best = loop {
        match eval(hi) {
            Some((w, p)) if p <= budget => break (w, p, hi),
            other => {
                steps += 1;
                if steps >= opts.bisection_max_steps {
                    return Err(Error::BisectionBracket {
                        steps,
                        power: other.map(|(_, p)| p).unwrap_or(f64::INFINITY),
                        budget,
                    });
                }
                lo = hi;
                hi *= 2.0;
            }
        }
    };
    if within(best.1) {
        return Ok((best.0, best.2));
    }

    for _ in 0..opts.bisection_max_steps {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match eval(mid) {
            Some((w, p)) if p <= budget => {
                hi = mid;
                best = (w, p, mid);
                if within(p) {
                    break;
                }
            }
            _ => lo = mid,
        }
    }
    Ok((best.0, best.2))
}

/// One pass of steps (a)-(c).
pub fn iterate(cfg: &SystemConfig, h: &CMat, w: &CMat, opts: &WmmseOptions) -> Result<WmmseState> {
    let q = update_receive_filters(cfg, h, w);
    let (e, c) = update_weights(cfg, h, w, &q);
    let (w_next, lambda) = update_precoders(cfg, h, &q, &c, opts)?;
    Ok(WmmseState {
        precoders: w_next,
        filters: q,
        weights: c,
        mse: e,
        lambda,
        iteration: 0,
    })
}

/// Runs the solver from the configured initialization.
pub fn solve(cfg: &SystemConfig, h: &CMat, opts: &WmmseOptions) -> Result<WmmseSolution> {
    cfg.validate()?;
    opts.validate()?;
    if h.rows() != cfg.n_antennas || h.cols() != cfg.n_users {
        return Err(Error::Shape(format!(
            "H is {}x{}, expected {}x{}",
            h.rows(),
            h.cols(),
            cfg.n_antennas,
            cfg.n_users
        )));
    }
    let w0 = init_precoders(cfg, h, opts.init_mode);
    let mut trace = vec![weighted_sum_rate(cfg, h, &w0)?];
    let mut w = w0;
    let mut last_state = None;
    for it in 1..=opts.max_iter {
        let mut state = iterate(cfg, h, &w, opts)?;
        state.iteration = it;
        let wsr = weighted_sum_rate(cfg, h, &state.precoders)?;
        let prev = *trace.last().unwrap();
        trace.push(wsr);
        w = state.precoders.clone();
        last_state = Some(state);
        if opts.early_stop && (wsr - prev).abs() <= opts.convergence_tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let state = last_state.expect("max_iter >= 1");
    Ok(WmmseSolution {
        precoders: w,
        wsr_trace: trace,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::{gen_rayleigh_channel, sum_rate};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_cfg(seed: u64, n: usize, k: usize) -> SystemConfig {
        let snr = rng::rng_from_seed(seed ^ 0xABCD).random_range(0.0..20.0);
        SystemConfig::from_snr_db(n, k, 1.0, snr).unwrap()
    }

    #[test]
    fn mrt_init_uses_full_budget() {
        let cfg = SystemConfig::new(4, 4, 1.0, 7.5).unwrap();
        let h = gen_rayleigh_channel(&cfg, 3);
        let w = init_precoders(&cfg, &h, InitMode::MrtFullPower);
        assert_relative_eq!(w.power(), 7.5, max_relative = 1e-12);
    }

    #[test]
    fn mrt_single_user_is_matched_filter() {
        let cfg = SystemConfig::new(3, 1, 1.0, 4.0).unwrap();
        let h = gen_rayleigh_channel(&cfg, 5);
        let w = init_precoders(&cfg, &h, InitMode::MrtFullPower);
        let hn = norm_sqr(h.col(0)).sqrt();
        for (wi, hi) in w.col(0).iter().zip(h.col(0)) {
            assert_relative_eq!(wi.re, 2.0 * hi.re / hn, max_relative = 1e-12);
            assert_relative_eq!(wi.im, 2.0 * hi.im / hn, max_relative = 1e-12);
        }
    }

    #[test]
    fn mrt_zero_column_falls_back() {
        let cfg = SystemConfig::new(2, 2, 1.0, 2.0).unwrap();
        let mut h = gen_rayleigh_channel(&cfg, 5);
        h.col_mut(1).fill(c(0.0, 0.0));
        let w = init_precoders(&cfg, &h, InitMode::MrtFullPower);
        assert_relative_eq!(norm_sqr(w.col(1)), 1.0, max_relative = 1e-12);
        assert_eq!(w, init_precoders(&cfg, &h, InitMode::MrtFullPower));
    }

    #[test]
    fn scaled_random_is_reproducible() {
        let cfg = SystemConfig::new(4, 4, 1.0, 3.0).unwrap();
        let h = gen_rayleigh_channel(&cfg, 1);
        let a = init_precoders(&cfg, &h, InitMode::ScaledRandom { seed: 9 });
        let b = init_precoders(&cfg, &h, InitMode::ScaledRandom { seed: 9 });
        assert_eq!(a, b);
        assert_relative_eq!(a.power(), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn filters_for_zero_precoders_vanish() {
        let cfg = SystemConfig::new(4, 4, 1.0, 1.0).unwrap();
        let h = gen_rayleigh_channel(&cfg, 1);
        let q = update_receive_filters(&cfg, &h, &CMat::zeros(4, 4));
        assert!(q.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn scalar_filter_and_weight() {
        let cfg = SystemConfig::new(1, 1, 1.0, 1.0).unwrap();
        let one = CMat::from_col_major(1, 1, vec![c(1.0, 0.0)]).unwrap();
        let q = update_receive_filters(&cfg, &one, &one);
        assert_eq!(q, vec![c(0.5, 0.0)]);
        let (e, cw) = update_weights(&cfg, &one, &one, &q);
        assert_relative_eq!(e[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(cw[0], 2.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_filter_gives_unit_mse() {
        let cfg = SystemConfig::new(4, 4, 1.0, 1.0).unwrap();
        let h = gen_rayleigh_channel(&cfg, 1);
        let w = gen_rayleigh_channel(&cfg, 2);
        let (e, cw) = update_weights(&cfg, &h, &w, &[c(0.0, 0.0); 4]);
        assert!(e.iter().all(|&x| x == 1.0));
        assert!(cw.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn mmse_filter_is_locally_optimal() {
        for seed in 0..20 {
            let cfg = random_cfg(seed, 4, 4);
            let h = gen_rayleigh_channel(&cfg, seed);
            let w = init_precoders(&cfg, &h, InitMode::ScaledRandom { seed: seed + 100 });
            let q = update_receive_filters(&cfg, &h, &w);
            let (e, _) = update_weights(&cfg, &h, &w, &q);
            for k in 0..4 {
                for delta in [c(1e-3, 0.0), c(-1e-3, 0.0), c(0.0, 1e-3), c(0.0, -1e-3)] {
                    let mut qp = q.clone();
                    qp[k] *= c(1.0, 0.0) + delta;
                    let (ep, _) = update_weights(&cfg, &h, &w, &qp);
                    assert!(ep[k] >= e[k], "seed {seed} user {k}");
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_precoders() {
        let cfg = SystemConfig::new(4, 4, 1.0, 1.0).unwrap();
        let h = gen_rayleigh_channel(&cfg, 1);
        let (w, lambda) = update_precoders(&cfg, &h, &[c(0.0, 0.0); 4], &[0.0; 4], &WmmseOptions::default()).unwrap();
        assert_eq!(w.power(), 0.0);
        assert_eq!(lambda, 0.0);
    }

    #[test]
    fn single_user_precoder_is_colinear_with_channel() {
        for seed in 0..10 {
            let cfg = random_cfg(seed, 4, 1);
            let h = gen_rayleigh_channel(&cfg, seed);
            let w0 = init_precoders(&cfg, &h, InitMode::ScaledRandom { seed: 77 });
            let q = update_receive_filters(&cfg, &h, &w0);
            let (_, cw) = update_weights(&cfg, &h, &w0, &q);
            let (w, _) = update_precoders(&cfg, &h, &q, &cw, &WmmseOptions::default()).unwrap();
            let lhs = hdot(h.col(0), w.col(0)).norm();
            let rhs = norm_sqr(h.col(0)).sqrt() * norm_sqr(w.col(0)).sqrt();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-9);
        }
    }

    #[test]
    fn bisection_meets_budget() {
        let opts = WmmseOptions::default();
        let mut active = 0;
        for seed in 0..50 {
            let cfg = random_cfg(seed, 4, 4);
            let h = gen_rayleigh_channel(&cfg, seed);
            let w = init_precoders(&cfg, &h, InitMode::MrtFullPower);
            let st = iterate(&cfg, &h, &w, &opts).unwrap();
            let p = st.precoders.power();
            assert!(p <= cfg.power_budget * (1.0 + 1e-9));
            if st.lambda > 0.0 {
                active += 1;
                assert!((p - cfg.power_budget).abs() <= 1e-8 * cfg.power_budget);
            }
        }
        assert!(active > 0);
    }

    #[test]
    fn power_strictly_decreases_in_lambda() {
        for seed in 0..100 {
            let cfg = random_cfg(seed, 4, 4);
            let h = gen_rayleigh_channel(&cfg, seed);
            let w = init_precoders(&cfg, &h, InitMode::MrtFullPower);
            let q = update_receive_filters(&cfg, &h, &w);
            let (_, cw) = update_weights(&cfg, &h, &w, &q);
            let mut g = Hermitian {
                n: 4,
                a: vec![c(0.0, 0.0); 16],
            };
            let mut rhs = CMat::zeros(4, 4);
            for k in 0..4 {
                let hk = h.col(k);
                for i in 0..4 {
                    for j in 0..4 {
                        g.a[i * 4 + j] += hk[i] * hk[j].conj() * (cw[k] * q[k].norm_sqr());
                    }
                    rhs.col_mut(k)[i] = hk[i] * q[k].conj() * cw[k];
                }
            }
            let mut last = f64::INFINITY;
            for lambda in [1e-3, 1e-2, 0.1, 0.5, 1.0, 4.0, 32.0] {
                let p = g.shifted_solve(lambda, &rhs).unwrap().power();
                assert!(p < last, "seed {seed} lambda {lambda}");
                last = p;
            }
        }
    }

    #[test]
    fn trace_is_monotone_and_feasible() {
        let opts = WmmseOptions {
            max_iter: 30,
            early_stop: false,
            ..Default::default()
        };
        for seed in 0..50 {
            let cfg = random_cfg(seed, 4, 4);
            let h = gen_rayleigh_channel(&cfg, seed);
            let sol = solve(&cfg, &h, &opts).unwrap();
            for pair in sol.wsr_trace.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-9, "seed {seed}: {:?}", sol.wsr_trace);
            }
            assert!(sol.precoders.power() <= cfg.power_budget * (1.0 + 1e-9));
        }
    }

    #[test]
    fn single_user_reaches_capacity() {
        for seed in 0..20 {
            let cfg = random_cfg(seed, 4, 1);
            let h = gen_rayleigh_channel(&cfg, seed);
            let sol = solve(&cfg, &h, &WmmseOptions::default()).unwrap();
            let cap = (1.0 + cfg.power_budget * norm_sqr(h.col(0)) / cfg.noise_variance).log2();
            assert_relative_eq!(sum_rate(&cfg, &h, &sol.precoders).unwrap(), cap, max_relative = 1e-6);
        }
    }

    #[test]
    fn label_options_run_exactly_ten_iterations() {
        let cfg = random_cfg(1, 4, 4);
        let h = gen_rayleigh_channel(&cfg, 1);
        let sol = solve(&cfg, &h, &WmmseOptions::labels()).unwrap();
        assert_eq!(sol.wsr_trace.len(), 11);
        assert_eq!(sol.state.iteration, 10);
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = random_cfg(1, 4, 4);
        let h = gen_rayleigh_channel(&cfg, 1);
        let opts = WmmseOptions {
            max_iter: 0,
            ..Default::default()
        };
        assert!(matches!(solve(&cfg, &h, &opts), Err(Error::Config(_))));
    }

    #[test]
    fn phase_rotated_channels_give_same_rates() {
        let opts = WmmseOptions::labels();
        for seed in 0..10 {
            let cfg = random_cfg(seed, 4, 4);
            let h = gen_rayleigh_channel(&cfg, seed);
            let mut h2 = h.clone();
            for k in 0..4 {
                let rot = C64::from_polar(1.0, 0.7 * k as f64 + 0.1);
                for z in h2.col_mut(k) {
                    *z *= rot;
                }
            }
            let a = solve(&cfg, &h, &opts).unwrap();
            let b = solve(&cfg, &h2, &opts).unwrap();
            let ra = sum_rate(&cfg, &h, &a.precoders).unwrap();
            let rb = sum_rate(&cfg, &h2, &b.precoders).unwrap();
            assert!((ra - rb).abs() <= 1e-8, "{ra} vs {rb}");
        }
    }

    #[test]
    fn weights_are_inverse_mse() {
        let cfg = random_cfg(4, 4, 4);
        let h = gen_rayleigh_channel(&cfg, 4);
        let st = iterate(
            &cfg,
            &h,
            &init_precoders(&cfg, &h, InitMode::MrtFullPower),
            &WmmseOptions::default(),
        )
        .unwrap();
        for (c, e) in st.weights.iter().zip(&st.mse) {
            assert_eq!(*c, 1.0 / e);
        }
    }

    proptest::proptest! {
        #[test]
        fn trace_monotone_and_power_feasible(
            n in 1usize..7,
            k in 1usize..7,
            snr in -5.0..25.0f64,
            seed in proptest::prelude::any::<u64>(),
        ) {
            let cfg = SystemConfig::from_snr_db(n, k, 1.0, snr).unwrap();
            let h = gen_rayleigh_channel(&cfg, seed);
            let sol = solve(&cfg, &h, &WmmseOptions::default()).unwrap();
            for w in sol.wsr_trace.windows(2) {
                proptest::prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", sol.wsr_trace);
            }
            proptest::prop_assert!(sol.precoders.power() <= cfg.power_budget * (1.0 + 1e-8));
        }
    }
}
