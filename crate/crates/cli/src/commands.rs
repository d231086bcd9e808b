use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cps_precoding::complex::gen_rayleigh_channel;
use cps_precoding::data::{self, generate, manifest_path, ChannelSample, Dataset, DatasetManifest, GenerateConfig};
use cps_precoding::eval::{
    accuracy, bench_latency, snr_sweep, train_sessions, write_metrics_csv, write_sweep_csv, BenchConfig, ModelBundle,
    SweepBins, TrainConfig,
};
use cps_precoding::nn::Checkpoint;
use cps_precoding::param::Scaler;
use cps_precoding::wmmse::{solve, WmmseOptions};
use cps_precoding::{CMat, SystemConfig};

use crate::{parse_kinds, BenchArgs, Cli, Command, EvaluateArgs, GenerateArgs, InspectArgs, SolveArgs, TrainArgs};

/// Contents of `--config`; every section is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    generate: Option<GenerateConfig>,
    train: Option<TrainConfig>,
    bench: Option<BenchConfig>,
    sweep: Option<SweepBins>,
}

struct Ctx {
    seed: u64,
    threads: usize,
    out: PathBuf,
    file: FileConfig,
}

pub fn run(cli: Cli) -> Result<()> {
    let file: FileConfig = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        threads: cli.threads.or(file.threads).unwrap_or(0),
        out: cli.out,
        file,
    };
    if ctx.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(ctx.threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Solve(a) => cmd_solve(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn cmd_generate(ctx: &Ctx, a: GenerateArgs) -> Result<()> {
    let mut cfg = ctx.file.generate.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    if let Some(v) = a.samples {
        cfg.n_samples = v;
    }
    if let Some(v) = a.antennas {
        cfg.n_antennas = v;
    }
    if let Some(v) = a.users {
        cfg.n_users = v;
    }
    if let Some(v) = a.noise_variance {
        cfg.noise_variance = v;
    }
    if let Some(v) = a.snr_min {
        cfg.snr_range_db.0 = v;
    }
    if let Some(v) = a.snr_max {
        cfg.snr_range_db.1 = v;
    }
    ensure_dir(&ctx.out)?;
    let path = ctx.out.join(&a.name);
    log::info!(
        "generating {} samples (N={}, K={}) into {}",
        cfg.n_samples,
        cfg.n_antennas,
        cfg.n_users,
        path.display()
    );
    let ds = generate(&cfg, ctx.threads)?;
    ds.write(&path)?;
    DatasetManifest::for_config(&cfg).save(&manifest_path(&path))?;
    println!("wrote {} samples to {}", ds.samples.len(), path.display());
    Ok(())
}

#[derive(Deserialize)]
struct SolveInput {
    n_antennas: usize,
    n_users: usize,
    snr_db: f64,
    #[serde(default = "one")]
    noise_variance: f64,
    channel: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

fn cmd_solve(ctx: &Ctx, a: SolveArgs) -> Result<()> {
    let (cfg, h) = match &a.input {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let inp: SolveInput = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            let cfg = SystemConfig::from_snr_db(inp.n_antennas, inp.n_users, inp.noise_variance, inp.snr_db)?;
            (cfg, CMat::from_interleaved(inp.n_antennas, inp.n_users, &inp.channel)?)
        }
        None => {
            let cfg = SystemConfig::from_snr_db(a.antennas, a.users, 1.0, a.snr_db)?;
            let h = gen_rayleigh_channel(&cfg, ctx.seed);
            (cfg, h)
        }
    };
    let opts = WmmseOptions {
        max_iter: a.iterations,
        early_stop: false,
        ..WmmseOptions::labels()
    };
    let sol = solve(&cfg, &h, &opts)?;
    println!("iteration,wsr");
    for (i, r) in sol.wsr_trace.iter().enumerate() {
        println!("{i},{r:.12}");
    }
    println!(
        "# power {:.12} of budget {:.12}",
        sol.precoders.power(),
        cfg.power_budget
    );
    Ok(())
}

#[derive(Serialize)]
struct SessionSummary {
    session_seed: u64,
    best_epoch: usize,
    best_val_accuracy: f64,
    test_accuracy: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    kind: String,
    sessions: Vec<SessionSummary>,
    mean_test_accuracy: f64,
    best_session: usize,
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn split_samples<'a>(ds: &'a Dataset, which: &str, split_seed: u64) -> Result<Vec<&'a ChannelSample>> {
    let idx = match which {
        "all" => (0..ds.samples.len()).collect(),
        "test" => data::split(ds.samples.len(), split_seed)?.test,
        "val" => data::split(ds.samples.len(), split_seed)?.val,
        "train" => data::split(ds.samples.len(), split_seed)?.train,
        other => bail!("unknown split `{other}` (train, val, test, all)"),
    };
    Ok(idx.into_iter().map(|i| &ds.samples[i]).collect())
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let kinds = parse_kinds(&a.kind)?;
    let ds = load_dataset(&a.data)?;
    let mut base = ctx.file.train.clone().unwrap_or_default();
    if let Ok(m) = DatasetManifest::load(&manifest_path(&a.data)) {
        base.snr_range_db = m.snr_range_db;
    }
    if a.desk {
        base.epochs = 100;
        base.sessions = 3;
    }
    base.seed = ctx.seed;
    if let Some(v) = a.epochs {
        base.epochs = v;
    }
    if let Some(v) = a.batch_size {
        base.batch_size = v;
    }
    if let Some(v) = a.sessions {
        base.sessions = v;
    }
    if let Some(v) = a.lr {
        base.lr = v;
    }
    if let Some(v) = a.split_seed {
        base.split_seed = v;
    }
    for kind in kinds {
        let cfg = TrainConfig { kind, ..base.clone() };
        let dir = ctx.out.join(kind.name());
        ensure_dir(&dir)?;
        let outcomes = train_sessions(&cfg, &ds)?;
        let test = split_samples(&ds, "test", cfg.split_seed)?;
        let mut sessions = Vec::new();
        for (i, o) in outcomes.iter().enumerate() {
            write_metrics_csv(&dir.join(format!("session{i}_metrics.csv")), &o.metrics)?;
            o.best.save(&dir.join(format!("session{i}.json")))?;
            let bundle = ModelBundle::from_checkpoint(&o.best)?;
            sessions.push(SessionSummary {
                session_seed: o.session_seed,
                best_epoch: o.best_epoch,
                best_val_accuracy: o.best_val_accuracy(),
                test_accuracy: accuracy(&bundle, kind, &test)?,
            });
        }
        let best_session = (0..outcomes.len())
            .max_by(|&x, &y| sessions[x].best_val_accuracy.total_cmp(&sessions[y].best_val_accuracy))
            .expect("at least one session");
        outcomes[best_session].best.save(&dir.join("checkpoint.json"))?;
        let summary = TrainSummary {
            kind: kind.name().into(),
            mean_test_accuracy: sessions.iter().map(|s| s.test_accuracy).sum::<f64>() / sessions.len() as f64,
            sessions,
            best_session,
        };
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        println!("{}: mean test accuracy {:.4}", kind, summary.mean_test_accuracy);
    }
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let split_seed = a
        .split_seed
        .or(ctx.file.train.as_ref().map(|t| t.split_seed))
        .unwrap_or(0);
    let samples = split_samples(&ds, &a.split, split_seed)?;
    let mut bins = ctx.file.sweep.unwrap_or_default();
    if let Some(v) = a.snr_start {
        bins.start = v;
    }
    if let Some(v) = a.snr_step {
        bins.step = v;
    }
    if let Some(v) = a.snr_count {
        bins.count = v;
    }
    ensure_dir(&ctx.out)?;
    let mut rows = Vec::new();
    let mut acc_csv = String::from("kind,accuracy,samples\n");
    for p in &a.checkpoint {
        let ck = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
        if (ck.n_antennas, ck.n_users) != (ds.n_antennas, ds.n_users) {
            bail!(
                "checkpoint {} is for N={}, K={} but the dataset has N={}, K={}",
                p.display(),
                ck.n_antennas,
                ck.n_users,
                ds.n_antennas,
                ds.n_users
            );
        }
        let bundle = ModelBundle::from_checkpoint(&ck)?;
        let acc = accuracy(&bundle, ck.kind, &samples)?;
        println!("{}: accuracy {:.4} on {} samples", ck.kind, acc, samples.len());
        acc_csv.push_str(&format!("{},{},{}\n", ck.kind, acc, samples.len()));
        rows.extend(snr_sweep(&bundle, &samples, bins)?);
    }
    fs::write(ctx.out.join("accuracy.csv"), acc_csv)?;
    write_sweep_csv(&ctx.out.join("snr_sweep.csv"), &rows)?;
    println!("wrote {}", ctx.out.join("snr_sweep.csv").display());
    Ok(())
}

fn cmd_bench(ctx: &Ctx, a: BenchArgs) -> Result<()> {
    let mut cfg = ctx.file.bench.unwrap_or_default();
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup = v;
    }
    if let Some(v) = a.repeats {
        cfg.repeats = v;
    }
    let checkpoints = a
        .checkpoint
        .iter()
        .map(|p| Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let (n, k, noise) = match checkpoints.first() {
        Some(c) => (c.n_antennas, c.n_users, c.noise_variance),
        None => (a.antennas, a.users, 1.0),
    };
    let gen = GenerateConfig {
        n_antennas: n,
        n_users: k,
        noise_variance: noise,
        n_samples: cfg.batch,
        seed: ctx.seed,
        ..GenerateConfig::default()
    };
    let ds = generate(&gen, ctx.threads)?;
    let bundles = if checkpoints.is_empty() {
        let scaler = Scaler::fit(
            n,
            k,
            gen.snr_range_db,
            ds.samples.iter().map(|s| (&s.channel, &s.precoders)),
        )?;
        cps_precoding::ParamKind::ALL
            .iter()
            .map(|&kind| ModelBundle::untrained(kind, scaler.clone(), noise, ctx.seed))
            .collect::<cps_precoding::Result<Vec<_>>>()?
    } else {
        checkpoints
            .iter()
            .map(ModelBundle::from_checkpoint)
            .collect::<cps_precoding::Result<Vec<_>>>()?
    };
    let rows = bench_latency(&bundles, &ds.samples, noise, &cfg)?;
    let wmmse = rows[0].mean_ms;
    println!("method,mean_ms,speedup_vs_wmmse");
    for r in &rows {
        println!("{},{:.4},{:.2}", r.method, r.mean_ms, wmmse / r.mean_ms);
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let head = {
        let bytes = fs::read(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
        bytes.get(..4).map(|b| b.to_vec()).unwrap_or_default()
    };
    if head == data::MAGIC {
        let ds = load_dataset(&a.path)?;
        println!("dataset {}", a.path.display());
        println!("N={}", ds.n_antennas);
        println!("K={}", ds.n_users);
        println!("noise_variance={}", ds.noise_variance);
        println!("count={}", ds.samples.len());
        if let Ok(m) = DatasetManifest::load(&manifest_path(&a.path)) {
            println!("snr_range_db=[{}, {}]", m.snr_range_db.0, m.snr_range_db.1);
            println!("seed={}", m.seed);
            println!(
                "splits train={} val={} test={}",
                m.split_counts.train, m.split_counts.val, m.split_counts.test
            );
        }
        return Ok(());
    }
    let ck = Checkpoint::load(&a.path)
        .with_context(|| format!("{} is neither a dataset nor a checkpoint", a.path.display()))?;
    println!("checkpoint {}", a.path.display());
    println!("kind={}", ck.kind);
    println!("N={}", ck.n_antennas);
    println!("K={}", ck.n_users);
    println!("noise_variance={}", ck.noise_variance);
    println!("train_seed={}", ck.train_seed);
    println!(
        "layers={} -> {:?} -> {}",
        ck.spec.input_dim, ck.spec.hidden_dims, ck.spec.output_dim
    );
    println!("parameters={}", ck.spec.param_count());
    Ok(())
}
