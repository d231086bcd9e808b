use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{mean, rate_ratios, ModelBundle};
use crate::complex::sum_rate;
use crate::data::ChannelSample;
use crate::error::{Error, Result};

/// Bins of width `step` centred on `start + i·step`, `i < count`. A sample
/// belongs to the bin with `center − step/2 ≤ snr < center + step/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepBins {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Default for SweepBins {
    /// 0, 2, …, 20 dB.
    fn default() -> Self {
        Self {
            start: 0.0,
            step: 2.0,
            count: 11,
        }
    }
}

impl SweepBins {
    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.start + i as f64 * self.step).collect()
    }

    fn bin_of(&self, snr: f64) -> Option<usize> {
        let pos = ((snr - self.start) / self.step + 0.5).floor();
        (pos >= 0.0 && pos < self.count as f64).then_some(pos as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub kind: String,
    pub accuracy: f64,
    pub sum_rate_dnn: f64,
    pub sum_rate_wmmse: f64,
    pub samples: usize,
}

/// Per-bin accuracy and mean sum rates. Empty bins are left out.
pub fn snr_sweep(bundle: &ModelBundle, samples: &[&ChannelSample], bins: SweepBins) -> Result<Vec<SweepRow>> {
    if !(bins.step > 0.0) || bins.count == 0 {
        return Err(Error::Config("sweep needs a positive step and at least one bin".into()));
    }
    let mut members: Vec<Vec<&ChannelSample>> = vec![Vec::new(); bins.count];
    for s in samples {
        if let Some(b) = bins.bin_of(s.snr_db) {
            members[b].push(s);
        }
    }
    let mut rows = Vec::new();
    for (center, group) in bins.centers().into_iter().zip(&members) {
        if group.is_empty() {
            log::warn!("no samples in the {center} dB bin");
            continue;
        }
        let pred = bundle.predict(group)?;
        let mut dnn = Vec::with_capacity(group.len());
        let mut wmmse = Vec::with_capacity(group.len());
        for (s, w) in group.iter().zip(&pred) {
            let cfg = s.system(bundle.noise_variance)?;
            dnn.push(sum_rate(&cfg, &s.channel, w)?);
            wmmse.push(sum_rate(&cfg, &s.channel, &s.precoders)?);
        }
        rows.push(SweepRow {
            snr_db: center,
            kind: bundle.kind.name().to_string(),
            accuracy: mean(&rate_ratios(group, &pred, bundle.noise_variance)?),
            sum_rate_dnn: mean(&dnn),
            sum_rate_wmmse: mean(&wmmse),
            samples: group.len(),
        });
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "snr_db,kind,accuracy,sum_rate_dnn,sum_rate_wmmse";

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.snr_db, r.kind, r.accuracy, r.sum_rate_dnn, r.sum_rate_wmmse
        )
        .expect("string write");
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
