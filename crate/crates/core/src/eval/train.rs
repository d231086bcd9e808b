use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_prepared, ModelBundle, Prepared};
use crate::data::{split, Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{sample_loss, weighted_total, Target};
use crate::nn::{Adam, AdamConfig, Checkpoint, Mode};
use crate::param::{ParamKind, Scaler};
use crate::rng::{derive_seed, rng_from_seed};

const INIT_TAG: u64 = 0x494E_4954;
const SHUFFLE_TAG: u64 = 0x5348_5546;
const SESSION_TAG: u64 = 0x5345_5353;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ParamKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Independent sessions with seeds derived from `seed`.
    pub sessions: usize,
    /// Seed of the train/validation/test partition, shared by all kinds.
    pub split_seed: u64,
    pub snr_range_db: (f64, f64),
    /// Training samples scored in eval mode for the per-epoch train accuracy.
    pub train_eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: ParamKind::Cps,
            lr: 1e-3,
            batch_size: 1024,
            epochs: 200,
            seed: 0,
            sessions: 1,
            split_seed: 0,
            snr_range_db: (0.0, 20.0),
            train_eval_samples: 10_000,
        }
    }
}

impl TrainConfig {
    /// 100 epochs, batch 1024, three sessions.
    pub fn desk(kind: ParamKind) -> Self {
        Self {
            kind,
            epochs: 100,
            sessions: 3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.epochs == 0 || self.sessions == 0 || self.train_eval_samples == 0 {
            return Err(Error::Config(
                "epochs, sessions and train_eval_samples must be positive".into(),
            ));
        }
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
        .validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

pub struct TrainOutcome {
    pub session_seed: u64,
    pub metrics: Vec<EpochMetrics>,
    /// 1-based epoch of the best validation accuracy.
    pub best_epoch: usize,
    /// Model at `best_epoch`.
    pub best: Checkpoint,
}

impl TrainOutcome {
    pub fn best_val_accuracy(&self) -> f64 {
        self.metrics[self.best_epoch - 1].val_accuracy
    }
}

fn fit_scaler(cfg: &TrainConfig, ds: &Dataset, parts: &Split) -> Result<Scaler> {
    Scaler::fit(
        ds.n_antennas,
        ds.n_users,
        cfg.snr_range_db,
        parts
            .train
            .iter()
            .map(|&i| (&ds.samples[i].channel, &ds.samples[i].precoders)),
    )
}

/// Trains one session with `session_seed`. The scaler is fitted on the
/// training split only.
pub fn train(cfg: &TrainConfig, ds: &Dataset, session_seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let parts = split(ds.samples.len(), cfg.split_seed)?;
    if parts.train.len() < 2 || parts.val.is_empty() {
        return Err(Error::Config("dataset too small to train".into()));
    }
    let scaler = fit_scaler(cfg, ds, &parts)?;
    let mut bundle = ModelBundle::untrained(cfg.kind, scaler, ds.noise_variance, derive_seed(session_seed, INIT_TAG))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &ds.samples[i]).collect::<Vec<_>>();
    let train_set = Prepared::new(&bundle, pick(&parts.train))?;
    let val_set = Prepared::new(&bundle, pick(&parts.val))?;
    let train_eval_rows: Vec<usize> = (0..cfg.train_eval_samples.min(train_set.len())).collect();
    let val_rows: Vec<usize> = (0..val_set.len()).collect();

    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        bundle.model.params().len(),
    )?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = rng_from_seed(derive_seed(session_seed, SHUFFLE_TAG));
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Checkpoint)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            if rows.len() < 2 {
                // BN needs two samples; a lone remainder is skipped
                continue;
            }
            let loss = train_step(&mut bundle, &mut adam, &train_set, rows).map_err(|e| match e {
                Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail,
                },
                other => other,
            })?;
            loss_sum += loss * rows.len() as f64;
            seen += rows.len();
        }
        let (_, train_accuracy) = evaluate_prepared(&bundle, &train_set, &train_eval_rows)?;
        let (val_loss, val_accuracy) = evaluate_prepared(&bundle, &val_set, &val_rows)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
            train_accuracy,
            val_accuracy,
        };
        log::info!(
            "{} epoch {epoch}: train loss {:.5} val loss {:.5} train acc {:.4} val acc {:.4}",
            cfg.kind,
            m.train_loss,
            m.val_loss,
            m.train_accuracy,
            m.val_accuracy
        );
        if best.as_ref().is_none_or(|(_, a, _)| val_accuracy > *a) {
            best = Some((epoch, val_accuracy, bundle.checkpoint(session_seed)));
        }
        metrics.push(m);
    }
    let (best_epoch, _, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        session_seed,
        metrics,
        best_epoch,
        best,
    })
}

/// One optimizer step on `rows`; returns the batch loss.
fn train_step(bundle: &mut ModelBundle, adam: &mut Adam, set: &Prepared<'_>, rows: &[usize]) -> Result<f64> {
    let x = set.features.select(Axis(0), rows);
    let y = bundle.model.forward(x.view(), Mode::Train)?;
    let (kind, noise, scaler) = (bundle.kind, bundle.noise_variance, &bundle.scaler);
    let losses = rows
        .par_iter()
        .enumerate()
        .map(|(r, &i)| {
            let raw = y.row(r);
            let s = set.samples[i];
            let cfg = s.system(noise)?;
            let t = Target {
                cfg: &cfg,
                channel: &s.channel,
                label: &set.labels[i],
                label_rate: set.label_rates[i],
            };
            sample_loss(kind, t, raw.as_slice().expect("row-major"), scaler, true)
        })
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = losses.iter().map(|l| l.value).collect();
    let betas: Vec<f64> = losses.iter().map(|l| l.beta).collect();
    let (total, weights) = weighted_total(&values, &betas)?;
    let bad: Vec<u64> = losses
        .iter()
        .zip(rows)
        .filter(|(l, _)| !l.value.is_finite() || l.grad.iter().any(|g| !g.is_finite()))
        .map(|(_, &i)| set.samples[i].id)
        .collect();
    if !total.is_finite() || !bad.is_empty() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            batch: 0,
            detail: format!("loss {total}; offending sample ids {bad:?}"),
        });
    }
    let mut upstream = Array2::zeros(y.dim());
    for ((mut row, l), w) in upstream.rows_mut().into_iter().zip(&losses).zip(&weights) {
        for (u, g) in row.iter_mut().zip(&l.grad) {
            *u = g * w;
        }
    }
    let grad = bundle.model.backward(upstream.view())?;
    adam.step(bundle.model.params_mut(), &grad)?;
    Ok(total)
}

/// Runs `cfg.sessions` sessions with seeds derived from `cfg.seed`.
pub fn train_sessions(cfg: &TrainConfig, ds: &Dataset) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    (0..cfg.sessions as u64)
        .map(|s| train(cfg, ds, derive_seed(cfg.seed ^ SESSION_TAG, s)))
        .collect()
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,train_loss,val_loss,train_loss_norm,val_loss_norm,train_accuracy,val_accuracy";

/// Per-epoch metrics. The `_norm` columns divide both loss series by the
/// largest training loss.
pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let peak = metrics.iter().map(|m| m.train_loss).fold(0.0, f64::max);
    let norm = if peak > 0.0 { peak } else { 1.0 };
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for m in metrics {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.epoch,
            m.train_loss,
            m.val_loss,
            m.train_loss / norm,
            m.val_loss / norm,
            m.train_accuracy,
            m.val_accuracy
        )
        .expect("string write");
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenerateConfig};

    fn dataset(n: usize) -> Dataset {
        generate(
            &GenerateConfig {
                n_antennas: 2,
                n_users: 2,
                n_samples: n,
                seed: 4,
                ..GenerateConfig::default()
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn one_epoch_smoke() {
        let ds = dataset(2048);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &ds, 1).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.best_epoch, 1);
        let m = &out.metrics[0];
        assert!(m.train_loss.is_finite() && m.val_loss.is_finite());
        assert!(m.val_accuracy > 0.0);
    }

    #[test]
    fn config_errors() {
        let ds = dataset(20);
        for cfg in [
            TrainConfig {
                batch_size: 1,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr: -1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(train(&cfg, &ds, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn metrics_csv_normalizes_by_peak_train_loss() {
        let metrics = vec![
            EpochMetrics {
                epoch: 1,
                train_loss: 4.0,
                val_loss: 3.0,
                train_accuracy: 0.5,
                val_accuracy: 0.6,
            },
            EpochMetrics {
                epoch: 2,
                train_loss: 2.0,
                val_loss: 1.0,
                train_accuracy: 0.7,
                val_accuracy: 0.8,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &metrics).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_CSV_HEADER);
        assert_eq!(lines[1], "1,4,3,1,0.75,0.5,0.6");
        assert_eq!(lines[2], "2,2,1,0.5,0.25,0.7,0.8");
    }
}
