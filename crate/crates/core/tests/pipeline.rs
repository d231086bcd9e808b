use cps_precoding::data::{generate, split, ChannelSample, Dataset, GenerateConfig};
use cps_precoding::eval::{accuracy, snr_sweep, train, ModelBundle, SweepBins, TrainConfig};
use cps_precoding::nn::{Adam, AdamConfig, Checkpoint, Mlp, MlpSpec, Mode};
use cps_precoding::ParamKind;
use ndarray::Array2;

fn dataset(count: usize, seed: u64) -> Dataset {
    generate(
        &GenerateConfig {
            n_samples: count,
            seed,
            ..GenerateConfig::default()
        },
        0,
    )
    .unwrap()
}

#[test]
fn adam_fits_a_fixed_batch() {
    let mut net = Mlp::new(MlpSpec::standard(8, 4), 11).unwrap();
    let x = Array2::from_shape_fn((32, 8), |(i, j)| ((i * 8 + j) as f64 * 0.37).cos());
    let t = Array2::from_shape_fn((32, 4), |(i, j)| (i as f64 * 0.3 + j as f64).sin());
    let mut opt = Adam::new(AdamConfig::default(), net.params().len()).unwrap();
    let mut losses = Vec::new();
    for _ in 0..50 {
        let y = net.forward(x.view(), Mode::Train).unwrap();
        let diff = &y - &t;
        losses.push(0.5 * diff.mapv(|v| v * v).sum() / 32.0);
        let grad = net.backward((diff / 32.0).view()).unwrap();
        opt.step(net.params_mut(), &grad).unwrap();
    }
    assert!(losses[49] < 0.5 * losses[0], "{} -> {}", losses[0], losses[49]);
}

#[test]
fn wmmse_rate_grows_with_snr() {
    let ds = dataset(12_000, 21);
    let scaler =
        cps_precoding::param::Scaler::fit(4, 4, (0.0, 20.0), ds.samples.iter().map(|s| (&s.channel, &s.precoders)))
            .unwrap();
    let bundle = ModelBundle::untrained(ParamKind::Cps, scaler, ds.noise_variance, 0).unwrap();
    let refs: Vec<&ChannelSample> = ds.samples.iter().collect();
    let bins = SweepBins {
        start: 1.0,
        step: 2.0,
        count: 10,
    };
    let rows = snr_sweep(&bundle, &refs, bins).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.samples >= 1000));
    assert!(rows.windows(2).all(|w| w[1].sum_rate_wmmse >= w[0].sum_rate_wmmse));
}

#[test]
fn checkpoint_reload_predicts_identically() {
    let ds = dataset(200, 4);
    let cfg = TrainConfig {
        kind: ParamKind::Hsc,
        epochs: 2,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let outcome = train(&cfg, &ds, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    outcome.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, outcome.best);

    let parts = split(ds.samples.len(), 0).unwrap();
    let test: Vec<&ChannelSample> = parts.test.iter().map(|&i| &ds.samples[i]).collect();
    let a = ModelBundle::from_checkpoint(&outcome.best).unwrap();
    let b = ModelBundle::from_checkpoint(&loaded).unwrap();
    assert_eq!(a.predict(&test).unwrap(), b.predict(&test).unwrap());
    let acc = accuracy(&b, ParamKind::Hsc, &test).unwrap();
    assert!(acc > 0.0 && acc <= 1.5, "{acc}");
}

#[test]
fn dataset_file_roundtrip() {
    let ds = dataset(25, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    ds.write(&path).unwrap();
    assert_eq!(Dataset::read(&path).unwrap(), ds);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 1);
    assert!(Dataset::from_bytes(&bytes).is_err());
}

#[test]
fn training_improves_on_initialization() {
    let ds = dataset(2_000, 13);
    let cfg = TrainConfig {
        kind: ParamKind::Cps,
        epochs: 8,
        batch_size: 128,
        ..TrainConfig::default()
    };
    let o = train(&cfg, &ds, 1).unwrap();
    let first = &o.metrics[0];
    let last = o.metrics.last().unwrap();
    assert!(last.train_loss < first.train_loss, "{first:?} {last:?}");
    assert!(o.best_val_accuracy() >= first.val_accuracy);
}
