use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ModelBundle;
use crate::data::ChannelSample;
use crate::error::{Error, Result};
use crate::param::postprocess;
use crate::rng::rng_from_seed;
use crate::wmmse::{solve, WmmseOptions};

/// Seed of the per-repeat method order.
const ORDER_SEED: u64 = 0xBE7C;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch: usize,
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch: 256,
            warmup: 100,
            repeats: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub method: String,
    /// Mean wall time per batch in milliseconds.
    pub mean_ms: f64,
}

fn dnn_pipeline(bundle: &ModelBundle, batch: &[&ChannelSample]) -> Result<()> {
    let y = bundle.model.infer(bundle.features(batch)?.view())?;
    for (s, raw) in batch.iter().zip(y.rows()) {
        let cfg = s.system(bundle.noise_variance)?;
        std::hint::black_box(postprocess(
            bundle.kind,
            &cfg,
            raw.as_slice().expect("row-major"),
            &bundle.scaler,
        )?);
    }
    Ok(())
}

fn wmmse_batch(batch: &[&ChannelSample], noise_variance: f64, opts: &WmmseOptions) -> Result<()> {
    for s in batch {
        let sys = s.system(noise_variance)?;
        std::hint::black_box(solve(&sys, &s.channel, opts)?);
    }
    Ok(())
}

/// Mean time per batch of 10-iteration WMMSE and of each network pipeline
/// (features, forward pass, decoding). Runs on the calling thread. Methods
/// take turns within every repeat in a freshly shuffled order, so host drift
/// and the cache state left by the preceding method affect them alike. A
/// fixed rotation would always run the same network right after WMMSE.
pub fn bench_latency(
    bundles: &[ModelBundle],
    samples: &[ChannelSample],
    noise_variance: f64,
    cfg: &BenchConfig,
) -> Result<Vec<LatencyRow>> {
    if cfg.repeats == 0 || cfg.batch == 0 {
        return Err(Error::Config("bench needs positive batch and repeats".into()));
    }
    if samples.len() < cfg.batch {
        return Err(Error::Shape(format!(
            "{} samples for a batch of {}",
            samples.len(),
            cfg.batch
        )));
    }
    let batch: Vec<&ChannelSample> = samples[..cfg.batch].iter().collect();
    let opts = WmmseOptions::labels();
    let run = |m: usize| {
        if m == 0 {
            wmmse_batch(&batch, noise_variance, &opts)
        } else {
            dnn_pipeline(&bundles[m - 1], &batch)
        }
    };
    let methods = bundles.len() + 1;
    for _ in 0..cfg.warmup {
        for m in 0..methods {
            run(m)?;
        }
    }
    let mut total = vec![0.0; methods];
    let mut order: Vec<usize> = (0..methods).collect();
    let mut rng = rng_from_seed(ORDER_SEED);
    for _ in 0..cfg.repeats {
        order.shuffle(&mut rng);
        for &m in &order {
            let t0 = Instant::now();
            run(m)?;
            total[m] += t0.elapsed().as_secs_f64();
        }
    }
    Ok(total
        .into_iter()
        .enumerate()
        .map(|(m, t)| LatencyRow {
            method: if m == 0 {
                "wmmse".into()
            } else {
                bundles[m - 1].kind.name().into()
            },
            mean_ms: t * 1e3 / cfg.repeats as f64,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenerateConfig};
    use crate::param::{ParamKind, Scaler};

    #[test]
    fn zero_repeats_is_an_error() {
        let cfg = BenchConfig {
            repeats: 0,
            ..BenchConfig::default()
        };
        assert!(matches!(bench_latency(&[], &[], 1.0, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn reports_every_method() {
        let ds = generate(
            &GenerateConfig {
                n_samples: 8,
                seed: 1,
                ..GenerateConfig::default()
            },
            1,
        )
        .unwrap();
        let scaler = Scaler::fit(4, 4, (0.0, 20.0), ds.samples.iter().map(|s| (&s.channel, &s.precoders))).unwrap();
        let bundles: Vec<ModelBundle> = ParamKind::ALL
            .iter()
            .map(|&k| ModelBundle::untrained(k, scaler.clone(), 1.0, 0).unwrap())
            .collect();
        let cfg = BenchConfig {
            batch: 8,
            warmup: 1,
            repeats: 2,
        };
        let rows = bench_latency(&bundles, &ds.samples, 1.0, &cfg).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["wmmse", "ri", "ncv", "cps", "hsc"]);
        assert!(rows.iter().all(|r| r.mean_ms > 0.0));
        assert!(bench_latency(&bundles, &ds.samples[..4], 1.0, &cfg).is_err());
    }
}
