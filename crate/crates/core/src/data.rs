//! Dataset generation, storage and splitting.
//!
//! File layout (little-endian):
//!
//! ```text
//! "CPSD" | version u32 | N u32 | K u32 | σ² f64 | count u64
//! count × ( snr_db f64 | H: 2NK f64 | W: 2NK f64 )
//! ```
//!
//! `H` and `W` are stored as interleaved `(re, im)` pairs in column-major
//! order. A JSON manifest describing how the file was produced sits next to
//! it (`<name>.json`).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{rayleigh_from_rng, CMat, SystemConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, substream};
use crate::wmmse::{solve, WmmseOptions};

pub const MAGIC: [u8; 4] = *b"CPSD";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

const SAMPLE_TAG: u64 = 0x5341_4D50;
const SPLIT_TAG: u64 = 0x5350_4C54;

/// Train/validation/test fractions; the test split takes the remainder.
pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.70, 0.15, 0.15);
pub const MIN_SPLIT_SAMPLES: usize = 10;

/// One channel instance with its WMMSE label.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    pub id: u64,
    pub snr_db: f64,
    pub channel: CMat,
    pub precoders: CMat,
}

impl ChannelSample {
    /// System seen by this sample: budget `P = σ²·10^{snr/10}`.
    pub fn system(&self, noise_variance: f64) -> Result<SystemConfig> {
        SystemConfig::from_snr_db(self.channel.rows(), self.channel.cols(), noise_variance, self.snr_db)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_antennas: usize,
    pub n_users: usize,
    pub noise_variance: f64,
    pub samples: Vec<ChannelSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    pub n_antennas: usize,
    pub n_users: usize,
    pub noise_variance: f64,
    pub n_samples: usize,
    pub snr_range_db: (f64, f64),
    pub seed: u64,
    pub wmmse: WmmseOptions,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n_antennas: 4,
            n_users: 4,
            noise_variance: 1.0,
            n_samples: 100_000,
            snr_range_db: (0.0, 20.0),
            seed: 0,
            wmmse: WmmseOptions::labels(),
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        SystemConfig::new(self.n_antennas, self.n_users, self.noise_variance, 1.0)?;
        self.wmmse.validate()?;
        let (lo, hi) = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("bad SNR range [{lo}, {hi}] dB")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_antennas: usize,
    pub n_users: usize,
    pub noise_variance: f64,
    pub count: usize,
    pub snr_range_db: (f64, f64),
    pub seed: u64,
    pub wmmse: WmmseOptions,
    pub split_fractions: (f64, f64, f64),
    pub split_counts: SplitCounts,
}

impl DatasetManifest {
    pub fn for_config(cfg: &GenerateConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n_antennas: cfg.n_antennas,
            n_users: cfg.n_users,
            noise_variance: cfg.noise_variance,
            count: cfg.n_samples,
            snr_range_db: cfg.snr_range_db,
            seed: cfg.seed,
            wmmse: cfg.wmmse.clone(),
            split_fractions: SPLIT_FRACTIONS,
            split_counts: split_counts(cfg.n_samples),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Path of the manifest that accompanies dataset `path`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Draws sample `id` of the dataset described by `cfg`. Depends only on
/// `(cfg, id)`.
pub fn generate_sample(cfg: &GenerateConfig, id: u64) -> Result<ChannelSample> {
    let mut rng = substream(derive_seed(cfg.seed, SAMPLE_TAG), id);
    let (lo, hi) = cfg.snr_range_db;
    let snr_db = if lo == hi { lo } else { rng.random_range(lo..hi) };
    let channel = rayleigh_from_rng(cfg.n_antennas, cfg.n_users, &mut rng);
    let sys = SystemConfig::from_snr_db(cfg.n_antennas, cfg.n_users, cfg.noise_variance, snr_db)?;
    let precoders = solve(&sys, &channel, &cfg.wmmse)
        .map_err(|e| Error::Sample {
            id,
            source: Box::new(e),
        })?
        .precoders;
    Ok(ChannelSample {
        id,
        snr_db,
        channel,
        precoders,
    })
}

/// Generates the whole dataset on `threads` workers (0 = all cores). The
/// result does not depend on the worker count.
pub fn generate(cfg: &GenerateConfig, threads: usize) -> Result<Dataset> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let samples = pool.install(|| {
        (0..cfg.n_samples as u64)
            .into_par_iter()
            .map(|id| generate_sample(cfg, id))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(Dataset {
        n_antennas: cfg.n_antennas,
        n_users: cfg.n_users,
        noise_variance: cfg.noise_variance,
        samples,
    })
}

fn push_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl Dataset {
    fn record_len(&self) -> usize {
        8 * (1 + 4 * self.n_antennas * self.n_users)
    }

    fn header(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN);
        b.extend_from_slice(&MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.n_antennas as u32).to_le_bytes());
        b.extend_from_slice(&(self.n_users as u32).to_le_bytes());
        b.extend_from_slice(&self.noise_variance.to_le_bytes());
        b.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        b
    }

    fn record(&self, s: &ChannelSample) -> Vec<u8> {
        let mut b = Vec::with_capacity(self.record_len());
        b.extend_from_slice(&s.snr_db.to_le_bytes());
        push_f64s(&mut b, &s.channel.to_interleaved());
        push_f64s(&mut b, &s.precoders.to_interleaved());
        b
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = self.header();
        for s in &self.samples {
            b.extend(self.record(s));
        }
        b
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.header())
            .map_err(|e| Error::io(format!("writing header of {}", path.display()), e))?;
        for s in &self.samples {
            w.write_all(&self.record(s))
                .map_err(|e| Error::io(format!("writing sample {} to {}", s.id, path.display()), e))?;
        }
        w.flush()
            .map_err(|e| Error::io(format!("flushing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err("truncated header".into());
        }
        if bytes[..4] != MAGIC {
            return Err("bad magic".into());
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(format!("format version {version} (supported: {FORMAT_VERSION})"));
        }
        let (n, k) = (u32_at(8) as usize, u32_at(12) as usize);
        let noise_variance = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        if n == 0 || k == 0 {
            return Err(format!("degenerate dimensions N={n}, K={k}"));
        }
        let mut ds = Dataset {
            n_antennas: n,
            n_users: k,
            noise_variance,
            samples: Vec::with_capacity(count),
        };
        let rec = ds.record_len();
        let expected = count.checked_mul(rec).and_then(|b| b.checked_add(HEADER_LEN));
        if expected != Some(bytes.len()) {
            return Err(format!("{} bytes for {count} samples of {rec} bytes", bytes.len()));
        }
        let m = 2 * n * k;
        for (id, chunk) in bytes[HEADER_LEN..].chunks_exact(rec).enumerate() {
            let vals: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let channel = CMat::from_interleaved(n, k, &vals[1..1 + m]).map_err(|e| e.to_string())?;
            let precoders = CMat::from_interleaved(n, k, &vals[1 + m..]).map_err(|e| e.to_string())?;
            ds.samples.push(ChannelSample {
                id: id as u64,
                snr_db: vals[0],
                channel,
                precoders,
            });
        }
        Ok(ds)
    }
}

/// Sizes of the three splits for `count` samples.
pub fn split_counts(count: usize) -> SplitCounts {
    let train = (count as f64 * SPLIT_FRACTIONS.0).round() as usize;
    let val = ((count as f64 * SPLIT_FRACTIONS.1).round() as usize).min(count - train);
    SplitCounts {
        train,
        val,
        test: count - train - val,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..count` with `seed` and cuts it 70/15/15.
pub fn split(count: usize, seed: u64) -> Result<Split> {
    if count < MIN_SPLIT_SAMPLES {
        return Err(Error::Config(format!(
            "{count} samples cannot be split (need at least {MIN_SPLIT_SAMPLES})"
        )));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut rng_from_seed(derive_seed(seed, SPLIT_TAG)));
    let c = split_counts(count);
    let test = idx.split_off(c.train + c.val);
    let val = idx.split_off(c.train);
    Ok(Split { train: idx, val, test })
}
