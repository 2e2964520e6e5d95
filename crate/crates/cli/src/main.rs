//! `speechdiff`: simulate paired data, train the score network, enhance or
//! edit recordings and evaluate checkpoints.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 numeric-check failure,
//! 3 I/O error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use speechdiff::checks;
use speechdiff::config::{RunConfig, TaskFilter};
use speechdiff::dsp::{read_wav, write_wav};
use speechdiff::metrics::{decay_rt60, estimate_rt60, log_spectral_distance, si_sdr, write_report_csv};
use speechdiff::pipeline::{evaluate_manifest, parse_for, Pipeline};
use speechdiff::rng::{derive_seed, seeded};
use speechdiff::score::{load_checkpoint, save_checkpoint, train, ScoreNet, TrainState};
use speechdiff::sim::{build_dataset, entry_path, load_manifest, write_clean_corpus, write_noise_corpus};
use speechdiff::Error;

#[derive(Parser, Debug)]
#[command(name = "speechdiff", version, about = "Score-based diffusion for speech enhancement and editing")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate a paired dataset and write its manifest.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_pairs: Option<usize>,
        /// Clean corpus directory (generated under OUT when omitted).
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Noise corpus directory (generated under OUT when omitted).
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Train the score network on a manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output checkpoint; the loss log goes to `<out>.loss.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Entries to train on: all, enhance or edit.
        #[arg(long)]
        task: Option<TaskFilter>,
        /// Continue from the optimizer state stored with `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Remove noise or reverberation.
    Enhance(RunArgs),
    /// Add background sound or reverberation.
    Edit(RunArgs),
    /// Run a checkpoint over a manifest and write a metric report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// CSV report path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the forward kernel, analytic reverse sampling and gradients.
    KernelCheck,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    prompt: String,
}

enum Failure {
    Usage(String),
    Check(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else if matches!(
            e,
            Error::NonFiniteLoss { .. } | Error::NoDecay | Error::Silent(_) | Error::TimeOutOfRange { .. }
        ) {
            Failure::Check(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.validate()?;
    match cli.cmd {
        Cmd::Simulate { out, n_pairs, clean, noise } => {
            if let Some(n) = n_pairs {
                cfg.data.n_pairs = n;
            }
            cfg.data.clean_dir = clean.or(cfg.data.clean_dir);
            cfg.data.noise_dir = noise.or(cfg.data.noise_dir);
            cmd_simulate(&cfg, &out)
        }
        Cmd::Train { manifest, out, steps, task, resume } => {
            cfg.data.manifest = manifest.or(cfg.data.manifest);
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(t) = task {
                cfg.data.task = t;
            }
            cmd_train(&cfg, &out, resume)
        }
        Cmd::Enhance(a) => cmd_generate(&cfg, &a, true),
        Cmd::Edit(a) => cmd_generate(&cfg, &a, false),
        Cmd::Eval { checkpoint, manifest, out } => {
            cfg.data.manifest = manifest.or(cfg.data.manifest);
            cmd_eval(&cfg, &checkpoint, &out)
        }
        Cmd::KernelCheck => cmd_kernel_check(&cfg),
    }
}

fn seed(cfg: &RunConfig) -> u64 {
    cfg.seed().expect("validated")
}

fn manifest_path(cfg: &RunConfig) -> Result<&Path, Failure> {
    cfg.data.manifest.as_deref().ok_or_else(|| Failure::Usage("a manifest is required (--manifest or data.manifest)".into()))
}

fn create_dir(p: &Path) -> CmdResult {
    fs::create_dir_all(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> CmdResult {
    let seed = seed(cfg);
    create_dir(out)?;
    let clean = match &cfg.data.clean_dir {
        Some(d) => d.clone(),
        None => {
            let d = out.join("corpus/clean");
            write_clean_corpus(&d, cfg.data.synth_clean, derive_seed(seed, 1))?;
            d
        }
    };
    let noise = match &cfg.data.noise_dir {
        Some(d) => d.clone(),
        None => {
            let d = out.join("corpus/noise");
            write_noise_corpus(&d, cfg.data.synth_noise_per_label, derive_seed(seed, 2))?;
            d
        }
    };
    let (manifest, path) = build_dataset(&clean, &noise, cfg.data.n_pairs, &cfg.data.mix, derive_seed(seed, 3), out)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &manifest.entries {
        *counts.entry(format!("{:?}", e.command.action())).or_default() += 1;
    }
    println!("wrote {} pairs to {}", manifest.entries.len(), path.display());
    for (action, n) in counts {
        println!("  {action}: {n}");
    }
    Ok(())
}

fn loss_csv_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".loss.csv");
    PathBuf::from(p)
}

/// Loss rows before `step`, read back from an earlier run.
fn read_loss_rows(path: &Path, step: u64) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < step))
        .map(str::to_string)
        .collect())
}

fn write_loss_rows(path: &Path, rows: &[String]) -> speechdiff::Result<()> {
    let mut text = String::from("step,loss\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn cmd_train(cfg: &RunConfig, out: &Path, resume: bool) -> CmdResult {
    let seed = seed(cfg);
    let mpath = manifest_path(cfg)?;
    let manifest = load_manifest(mpath)?;
    let pipeline = Pipeline::default();
    let task = cfg.data.task;
    let store = pipeline.load_pairs(mpath, &manifest, &|e| task.accepts(&e.command))?;
    let csv = loss_csv_path(out);

    let (mut net, mut state, mut rows) = if resume {
        let ck = load_checkpoint(out)?;
        if ck.sched != cfg.schedule || *ck.net.config() != cfg.model {
            return Err(Failure::Usage(format!("{}: schedule or model differs from the config", out.display())));
        }
        let state = ck.state.ok_or_else(|| Failure::Usage(format!("{}: no optimizer state to resume", out.display())))?;
        let rows = read_loss_rows(&csv, state.step())?;
        (ck.net, state, rows)
    } else {
        let net = ScoreNet::init(cfg.model, &mut seeded(derive_seed(seed, 10)))?;
        let state = TrainState::new(&net);
        (net, state, Vec::new())
    };
    println!(
        "training {} parameters on {} pairs from step {} to {}",
        net.num_params(),
        store.pairs.len(),
        state.step(),
        cfg.train.steps
    );

    let every = cfg.train.checkpoint_every as u64;
    let sched = cfg.schedule;
    let mut on_step = |net: &ScoreNet, st: &TrainState, loss: f64| -> speechdiff::Result<()> {
        rows.push(format!("{},{loss}", st.step() - 1));
        if every > 0 && st.step() % every == 0 {
            save_checkpoint(out, net, &sched, Some(st))?;
            write_loss_rows(&csv, &rows)?;
            println!("step {} loss {loss:.5}", st.step());
        }
        Ok(())
    };
    train(&mut net, &store, &cfg.schedule, &cfg.train, derive_seed(seed, 11), &mut state, &mut on_step)?;
    save_checkpoint(out, &net, &cfg.schedule, Some(&state))?;
    write_loss_rows(&csv, &rows)?;
    println!("wrote {} and {} ({} steps)", out.display(), csv.display(), rows.len());
    Ok(())
}

/// Network and schedule of a checkpoint; a config file, when given, must agree.
fn load_model(cfg: &RunConfig, explicit_config: bool, path: &Path) -> Result<(ScoreNet, speechdiff::sde::SdeSchedule), Failure> {
    let ck = load_checkpoint(path)?;
    if explicit_config && (ck.sched != cfg.schedule || *ck.net.config() != cfg.model) {
        return Err(Failure::Usage(format!("{}: checkpoint does not match the config's schedule or model", path.display())));
    }
    Ok((ck.net, ck.sched))
}

fn cmd_generate(cfg: &RunConfig, a: &RunArgs, enhancement: bool) -> CmdResult {
    parse_for(&a.prompt, enhancement)?;
    let (net, sched) = load_model(cfg, false, &a.checkpoint)?;
    let input = read_wav(&a.input)?;
    let pipeline = Pipeline::default();
    let out = pipeline.generate(&net, &sched, &cfg.solver, &input, &a.prompt, seed(cfg))?;
    write_wav(&a.out, &out)?;
    let show = |r: speechdiff::Result<f64>| r.map_or("none".to_string(), |v| format!("{v:.3} s"));
    let (rt60, tail) = (show(estimate_rt60(&out)), show(decay_rt60(&out, &input)));
    println!(
        "wrote {} ({} samples): lsd_vs_input {:.3}, si_sdr_vs_input {:.2} dB, rt60 {rt60}, tail_rt60 {tail}",
        a.out.display(),
        out.len(),
        log_spectral_distance(&input, &out)?,
        si_sdr(&input, &out)?
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> CmdResult {
    let (net, sched) = load_model(cfg, false, checkpoint)?;
    let mpath = manifest_path(cfg)?;
    let manifest = load_manifest(mpath)?;
    let pipeline = Pipeline::default();
    let rows = evaluate_manifest(&pipeline, &net, &sched, &cfg.solver, mpath, &manifest, seed(cfg))?;
    write_report_csv(out, &rows)?;
    let mut base = 0.0;
    for e in &manifest.entries {
        let src = read_wav(entry_path(mpath, &e.source_path))?;
        let tgt = read_wav(entry_path(mpath, &e.target_path))?;
        base += si_sdr(&tgt, &src)?;
    }
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&speechdiff::metrics::MetricReport) -> f64| rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    println!(
        "{} entries: si_sdr {:.2} dB (source {:.2} dB), seg_snr {:.2} dB, lsd {:.3}; report {}",
        rows.len(),
        mean(&|r| r.si_sdr_db),
        base / n,
        mean(&|r| r.seg_snr_db),
        mean(&|r| r.lsd),
        out.display()
    );
    Ok(())
}

fn cmd_kernel_check(cfg: &RunConfig) -> CmdResult {
    let outcomes = checks::run_all(&cfg.schedule, seed(cfg))?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} check(s) failed")));
    }
    Ok(())
}
