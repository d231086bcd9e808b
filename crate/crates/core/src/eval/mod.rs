//! Training, accuracy, SNR sweeps and latency measurement.
//!
//! Accuracy is the mean over samples of `R̃ / R`: the sum rate of the decoded
//! network prediction over the sum rate of the stored WMMSE label. All
//! metrics use eval-mode (running-statistics) forward passes.

mod bench;
mod sweep;
mod train;

pub use bench::{bench_latency, BenchConfig, LatencyRow};
pub use sweep::{snr_sweep, write_sweep_csv, SweepBins, SweepRow, SWEEP_CSV_HEADER};
pub use train::{
    train, train_sessions, write_metrics_csv, EpochMetrics, TrainConfig, TrainOutcome, METRICS_CSV_HEADER,
};

use ndarray::Array2;
use rayon::prelude::*;

use crate::complex::{sum_rate, CMat};
use crate::data::ChannelSample;
use crate::error::{Error, Result};
use crate::losses::{sample_loss, weighted_total, Target};
use crate::nn::{Checkpoint, Mlp, MlpSpec};
use crate::param::{featurize, labelize, postprocess, ParamKind, Scaler};

/// Rows per eval-mode forward pass.
const EVAL_CHUNK: usize = 4096;

/// A runnable model: network, scaler and the system it serves.
#[derive(Clone)]
pub struct ModelBundle {
    pub kind: ParamKind,
    pub model: Mlp,
    pub scaler: Scaler,
    pub noise_variance: f64,
}

impl ModelBundle {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self {
            kind: ck.kind,
            model: ck.model()?,
            scaler: ck.scaler.clone(),
            noise_variance: ck.noise_variance,
        })
    }

    /// Freshly initialized network of the standard shape.
    pub fn untrained(kind: ParamKind, scaler: Scaler, noise_variance: f64, seed: u64) -> Result<Self> {
        let (n, k) = (scaler.n_antennas, scaler.n_users);
        let model = Mlp::new(MlpSpec::standard(kind.input_dim(n, k), kind.label_dim(n, k)), seed)?;
        Ok(Self {
            kind,
            model,
            scaler,
            noise_variance,
        })
    }

    pub fn checkpoint(&self, train_seed: u64) -> Checkpoint {
        Checkpoint::new(self.kind, self.noise_variance, train_seed, &self.model, &self.scaler)
    }

    fn check_sample(&self, s: &ChannelSample) -> Result<()> {
        if s.channel.rows() != self.scaler.n_antennas || s.channel.cols() != self.scaler.n_users {
            return Err(Error::Shape(format!(
                "sample {} is {}x{}, model serves {}x{}",
                s.id,
                s.channel.rows(),
                s.channel.cols(),
                self.scaler.n_antennas,
                self.scaler.n_users
            )));
        }
        Ok(())
    }

    /// Feature matrix, one row per sample.
    pub fn features(&self, samples: &[&ChannelSample]) -> Result<Array2<f64>> {
        let (n, k) = (self.scaler.n_antennas, self.scaler.n_users);
        let dim = self.kind.input_dim(n, k);
        let mut x = Array2::zeros((samples.len(), dim));
        for (mut row, s) in x.rows_mut().into_iter().zip(samples) {
            self.check_sample(s)?;
            let cfg = s.system(self.noise_variance)?;
            let f = featurize(self.kind, &cfg, &s.channel, s.snr_db, &self.scaler)?;
            row.assign(&ndarray::ArrayView1::from(&f));
        }
        Ok(x)
    }

    /// Raw network outputs for `samples` (eval mode).
    pub fn raw_outputs(&self, samples: &[&ChannelSample]) -> Result<Array2<f64>> {
        let dim = self.model.spec().output_dim;
        let mut out = Array2::zeros((samples.len(), dim));
        for (c, chunk) in samples.chunks(EVAL_CHUNK).enumerate() {
            let y = self.model.infer(self.features(chunk)?.view())?;
            out.slice_mut(ndarray::s![c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len(), ..])
                .assign(&y);
        }
        Ok(out)
    }

    /// Feasible precoders predicted for `samples`.
    pub fn predict(&self, samples: &[&ChannelSample]) -> Result<Vec<CMat>> {
        let raw = self.raw_outputs(samples)?;
        samples
            .iter()
            .zip(raw.rows())
            .map(|(s, r)| {
                let cfg = s.system(self.noise_variance)?;
                Ok(postprocess(self.kind, &cfg, r.as_slice().expect("row-major"), &self.scaler)?.precoders)
            })
            .collect()
    }
}

/// Per-sample `R̃ / R` for precoders `pred` against the stored labels.
pub fn rate_ratios(samples: &[&ChannelSample], pred: &[CMat], noise_variance: f64) -> Result<Vec<f64>> {
    if samples.len() != pred.len() {
        return Err(Error::Shape("one prediction per sample required".into()));
    }
    samples
        .iter()
        .zip(pred)
        .map(|(s, w)| {
            let cfg = s.system(noise_variance)?;
            let r = sum_rate(&cfg, &s.channel, &s.precoders)?;
            let r_pred = sum_rate(&cfg, &s.channel, w)?;
            Ok(if r > 0.0 { r_pred / r } else { 1.0 })
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean rate accuracy of `bundle` on `samples`. Fails if the bundle is not of
/// the `expected` kind.
pub fn accuracy(bundle: &ModelBundle, expected: ParamKind, samples: &[&ChannelSample]) -> Result<f64> {
    if bundle.kind != expected {
        return Err(Error::Config(format!(
            "model is {}, {} requested",
            bundle.kind, expected
        )));
    }
    if samples.is_empty() {
        return Err(Error::Shape("no samples to evaluate".into()));
    }
    let pred = bundle.predict(samples)?;
    Ok(mean(&rate_ratios(samples, &pred, bundle.noise_variance)?))
}

/// Features, labels and label rates of a sample set, ready for training.
pub(crate) struct Prepared<'a> {
    pub samples: Vec<&'a ChannelSample>,
    pub features: Array2<f64>,
    pub labels: Vec<Vec<f64>>,
    pub label_rates: Vec<f64>,
}

impl<'a> Prepared<'a> {
    pub fn new(bundle: &ModelBundle, samples: Vec<&'a ChannelSample>) -> Result<Self> {
        let features = bundle.features(&samples)?;
        let (labels, label_rates) = samples
            .par_iter()
            .map(|s| {
                let cfg = s.system(bundle.noise_variance)?;
                let label = labelize(bundle.kind, &cfg, &s.precoders, &bundle.scaler)?;
                let rate = sum_rate(&cfg, &s.channel, &s.precoders)?;
                Ok((label, rate))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self {
            samples,
            features,
            labels,
            label_rates,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }
}

/// β-weighted loss and mean accuracy of `bundle` on a prepared set.
pub(crate) fn evaluate_prepared(bundle: &ModelBundle, set: &Prepared<'_>, rows: &[usize]) -> Result<(f64, f64)> {
    let mut values = Vec::with_capacity(rows.len());
    let mut betas = Vec::with_capacity(rows.len());
    let mut acc = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = set.features.select(ndarray::Axis(0), chunk);
        let y = bundle.model.infer(x.view())?;
        let losses = chunk
            .par_iter()
            .enumerate()
            .map(|(r, &i)| {
                let raw = y.row(r);
                let s = set.samples[i];
                let cfg = s.system(bundle.noise_variance)?;
                let t = Target {
                    cfg: &cfg,
                    channel: &s.channel,
                    label: &set.labels[i],
                    label_rate: set.label_rates[i],
                };
                sample_loss(
                    bundle.kind,
                    t,
                    raw.as_slice().expect("row-major"),
                    &bundle.scaler,
                    false,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        for (l, &i) in losses.iter().zip(chunk) {
            values.push(l.value);
            betas.push(l.beta);
            let r = set.label_rates[i];
            acc += if r > 0.0 { l.pred_rate / r } else { 1.0 };
        }
    }
    let (loss, _) = weighted_total(&values, &betas)?;
    Ok((loss, acc / rows.len() as f64))
}
