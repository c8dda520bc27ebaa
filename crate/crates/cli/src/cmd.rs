use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sise_core::augment::{
    build_test, build_train_dev, generate_toy_corpus, generate_toy_noise_pool, CorpusManifest, NoiseKind, NoiseSpec,
    SnrPolicy, Split, ToyCorpusConfig,
};
use sise_core::eval::{
    build_report, relative_table_from_csv, render_figure, run_model, summarize, EvalOptions, EvalSummary,
    FigureInput, PpmcMode, ReportGrid, ScorerAdapter,
};
use sise_core::scenario::Scenario;
use sise_core::signal::wav::{read_wav_16k, write_wav, WavFormat};
use sise_core::track::channel_index;
use sise_core::train::{invert, load_pipeline, train_scenario, StageSelection, TrainConfig};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_STATE: u8 = 4;

/// Marks an argument combination clap cannot reject on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "sise", version, about = "Joint speech enhancement and articulatory inversion")]
pub struct Cli {
    /// Directory searched for relative `--config` files.
    #[arg(long, env = "SISE_CONFIG_ROOT", global = true)]
    pub config_root: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build toy or noise-augmented corpora.
    #[command(subcommand)]
    Augment(AugmentCmd),
    /// Train one scenario with the two-stage schedule.
    Train(TrainArgs),
    /// Enhance one file with a trained model.
    Enhance(EnhanceArgs),
    /// Estimate articulatory tracks for one file.
    Invert(InvertArgs),
    /// Score a trained model on a test manifest.
    Evaluate(EvaluateArgs),
    /// Assemble tables and figures from evaluation summaries.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum AugmentCmd {
    /// Synthetic corpus with exact articulatory ground truth.
    Toy(ToyArgs),
    /// Noise-augmented train/dev manifest.
    BuildTrain(BuildArgs),
    /// Noise-augmented test manifest over the fixed SNR ladder.
    BuildTest(BuildTestArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    /// Also write disjoint train and test noise pools under `pools/`.
    #[arg(long)]
    pub pools: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of babble source utterances (`.wav`).
    #[arg(long)]
    pub babble_pool: Option<PathBuf>,
    /// Directory of non-babble noise recordings (`.wav`).
    #[arg(long)]
    pub nonbabble_pool: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output root; defaults to the input manifest's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildTestArgs {
    #[command(flatten)]
    pub build: BuildArgs,
    /// Training pool directories that must not overlap the test pools.
    #[arg(long = "train-pool")]
    pub train_pools: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenario: Scenario,
    /// TOML training config; relative names are also looked up in the config root.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run only this stage.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: Option<u8>,
    /// Stage-1 checkpoint to continue from with `--stage 2`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// SE-Base checkpoint for the sise-p scenario.
    #[arg(long)]
    pub se_base: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Parent of the run directory.
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Exact run directory instead of `<runs>/<scenario>-seed<seed>-<unix time>`.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InvertArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// `.csv` or `.f32` track file.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum PpmcModeArg {
    Corpus,
    PerUtterance,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "corpus")]
    pub ppmc_mode: PpmcModeArg,
    /// External scorer command with `{clean}` and `{degraded}` placeholders.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long, default_value_t = 60.0)]
    pub scorer_timeout: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// `summary.json` files written by `evaluate`.
    #[arg(long = "summary")]
    pub summaries: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<Scenario>>,
    #[arg(long, value_delimiter = ',')]
    pub noises: Option<Vec<NoiseKind>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snrs: Option<Vec<f64>>,
    #[arg(long)]
    pub no_clean: bool,
    #[arg(long, value_enum, default_value = "csv")]
    pub output_format: OutputFormat,
    /// Utterance key to draw as a spectrogram + trajectory figure.
    #[arg(long)]
    pub figure: Option<String>,
    #[arg(long, default_value = "TTCD")]
    pub channel: String,
    /// Test manifest holding the figure utterance.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Enhancement model for the figure.
    #[arg(long)]
    pub enhancer: Option<PathBuf>,
    /// Inversion models whose estimates are overlaid, as `label=path`.
    #[arg(long = "estimate")]
    pub estimates: Vec<String>,
    /// CSV of `label,new,base` rows to turn into relative improvements.
    #[arg(long)]
    pub relative: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let root = cli.config_root.clone();
    match cli.command {
        Command::Augment(AugmentCmd::Toy(a)) => cmd_toy(&a),
        Command::Augment(AugmentCmd::BuildTrain(a)) => cmd_build(&a, None),
        Command::Augment(AugmentCmd::BuildTest(a)) => cmd_build(&a.build, Some(&a.train_pools)),
        Command::Train(a) => cmd_train(&a, root.as_deref()),
        Command::Enhance(a) => cmd_enhance(&a),
        Command::Invert(a) => cmd_invert(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Records the fully resolved invocation next to a command's outputs.
fn snapshot(path: &Path, command: &str, args: &impl Serialize) -> Result<()> {
    #[derive(Serialize)]
    struct Snapshot<'a, T: Serialize> {
        command: &'a str,
        version: &'a str,
        args: &'a T,
    }
    let text = toml::to_string(&Snapshot {
        command,
        version: env!("CARGO_PKG_VERSION"),
        args,
    })
    .context("serializing resolved config")?;
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading pool {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    Ok(v)
}

fn cmd_toy(a: &ToyArgs) -> Result<()> {
    let cfg = ToyCorpusConfig {
        n_utts: a.n,
        duration_s: a.duration,
        seed: a.seed,
        ..Default::default()
    };
    let m = generate_toy_corpus(&cfg, &a.out)?;
    let path = a.out.join("manifest.jsonl");
    m.write(&path)?;
    if a.pools {
        for (split, seed) in [("train", a.seed.wrapping_add(1000)), ("test", a.seed.wrapping_add(2000))] {
            let dir = a.out.join("pools").join(split);
            generate_toy_noise_pool(NoiseKind::Babble, 24, a.duration, seed, &dir.join("babble"))?;
            generate_toy_noise_pool(NoiseKind::Nonbabble, 6, a.duration, seed, &dir.join("nonbabble"))?;
        }
    }
    snapshot(&a.out.join("toy.resolved.toml"), "augment toy", a)?;
    println!("{} ({} utterances, digest {})", path.display(), m.entries.len(), m.digest()?);
    Ok(())
}

fn cmd_build(a: &BuildArgs, train_pools: Option<&[PathBuf]>) -> Result<()> {
    let manifest = CorpusManifest::read(&a.manifest)?;
    let out = a.out.clone().unwrap_or_else(|| manifest.root.clone());
    let pool = |p: &Option<PathBuf>, what: &str| -> Result<Vec<PathBuf>> {
        match p {
            Some(d) => wav_files(d),
            None => Err(sise_core::Error::InsufficientPool(format!("no {what} pool given")).into()),
        }
    };
    let test = train_pools.is_some();
    let policy = if test { SnrPolicy::test_default() } else { SnrPolicy::train_default() };
    let babble = NoiseSpec {
        kind: NoiseKind::Babble,
        source_pool: pool(&a.babble_pool, "babble")?,
        snr_policy: policy.clone(),
        seed: a.seed,
    };
    let nonbabble = NoiseSpec {
        kind: NoiseKind::Nonbabble,
        source_pool: pool(&a.nonbabble_pool, "non-babble")?,
        snr_policy: policy,
        seed: a.seed.wrapping_add(1),
    };
    let (built, name) = match train_pools {
        Some(dirs) => {
            let mut files = Vec::new();
            for d in dirs {
                files.extend(wav_files(d)?);
            }
            (build_test(&manifest, &babble, &nonbabble, &files, &out)?, "test_manifest.jsonl")
        }
        None => (build_train_dev(&manifest, &babble, &nonbabble, a.seed, &out)?, "train_manifest.jsonl"),
    };
    let path = out.join(name);
    built.write(&path)?;
    let cmd = if test { "augment build-test" } else { "augment build-train" };
    snapshot(&path.with_extension("resolved.toml"), cmd, a)?;
    println!(
        "{} ({} entries, digest {})",
        path.display(),
        built.entries.len(),
        built.digest()?
    );
    Ok(())
}

fn resolve_config(p: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if p.is_relative() && !p.exists() => r.join(p),
        _ => p.to_path_buf(),
    }
}

fn cmd_train(a: &TrainArgs, root: Option<&Path>) -> Result<()> {
    let mut cfg = match (&a.config, root) {
        (Some(p), _) => TrainConfig::read(&resolve_config(p, root))?,
        (None, Some(r)) if r.join("train.toml").is_file() => TrainConfig::read(&r.join("train.toml"))?,
        _ => TrainConfig::default(),
    };
    cfg.scenario = a.scenario;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = &a.manifest {
        cfg.train_manifest = Some(m.clone());
    }
    if let Some(p) = &a.se_base {
        cfg.se_base_checkpoint = Some(p.clone());
    }
    if let Some(n) = a.max_epochs {
        cfg.max_epochs = n;
    }
    if let Some(n) = a.patience {
        cfg.patience = n;
    }
    if let Some(r) = &a.runs {
        cfg.checkpoint_root = r.clone();
    }
    if a.stage == Some(2) && a.resume.is_none() {
        return Err(usage("--stage 2 needs --resume <stage-1 checkpoint>"));
    }
    if a.resume.is_some() && a.stage != Some(2) {
        return Err(usage("--resume is only meaningful with --stage 2"));
    }
    cfg.validate()?;
    let manifest_path = cfg
        .train_manifest
        .clone()
        .ok_or_else(|| usage("no training manifest: pass --manifest or set train_manifest"))?;
    let manifest = CorpusManifest::read(&manifest_path)?;
    let run_dir = a.run_dir.clone().unwrap_or_else(|| {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        cfg.checkpoint_root.join(format!("{}-seed{}-{ts}", cfg.scenario, cfg.seed))
    });
    let out = train_scenario(
        &cfg,
        &manifest,
        &run_dir,
        &StageSelection {
            only: a.stage,
            resume: a.resume.clone(),
        },
    )?;
    for r in &out.records {
        println!(
            "stage {}: best epoch {} dev loss {:.6} ({} epochs, {:.1} s)",
            r.stage,
            r.best_epoch,
            r.best_dev_loss,
            r.epochs.len(),
            r.wall_clock_s
        );
    }
    for c in &out.checkpoints {
        println!("{}", c.display());
    }
    Ok(())
}

fn cmd_enhance(a: &EnhanceArgs) -> Result<()> {
    let (model, pre) = load_pipeline(&a.checkpoint)?;
    let enhancer = if model.heads.se { &model } else { pre.as_ref().ok_or_else(|| {
        sise_core::Error::InvalidState(format!("{} has no enhancement path", a.checkpoint.display()))
    })? };
    let wave = read_wav_16k(&a.input)?;
    let out = enhancer.se_forward(&wave)?.enhanced;
    write_wav(&a.output, &out, WavFormat::Float32)?;
    snapshot(&a.output.with_extension("resolved.toml"), "enhance", a)?;
    Ok(())
}

fn cmd_invert(a: &InvertArgs) -> Result<()> {
    let (model, pre) = load_pipeline(&a.checkpoint)?;
    let wave = read_wav_16k(&a.input)?;
    let track = invert(&model, pre.as_ref(), &wave)?;
    track.write(&a.output)?;
    snapshot(&a.output.with_extension("resolved.toml"), "invert", a)?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let (model, pre) = load_pipeline(&a.checkpoint)?;
    let scenario = model
        .scenario
        .ok_or_else(|| sise_core::Error::InvalidState("checkpoint has no scenario".into()))?;
    let manifest = CorpusManifest::read(&a.manifest)?;
    let outputs = run_model(&model, pre.as_ref(), &manifest, Split::Test)?;
    if outputs.is_empty() {
        return Err(sise_core::Error::InvalidInput("manifest has no test entries".into()).into());
    }
    let opts = EvalOptions {
        ppmc_mode: match a.ppmc_mode {
            PpmcModeArg::Corpus => PpmcMode::Corpus,
            PpmcModeArg::PerUtterance => PpmcMode::PerUtterance,
        },
        adapter: a.scorer.as_ref().map(|c| ScorerAdapter {
            command: c.clone(),
            timeout_s: a.scorer_timeout,
        }),
        scratch: Some(a.out.join("scorer")),
    };
    let summary = summarize(scenario, &outputs, &opts)?;
    std::fs::create_dir_all(&a.out)?;
    summary.write(&a.out.join("summary.json"))?;
    snapshot(&a.out.join("evaluate.resolved.toml"), "evaluate", a)?;
    for c in &summary.cells {
        let ppmc = c.ppmc.as_ref().map_or(String::new(), |p| format!(" ppmc {:.4}", p.avg_all));
        let se = c.se.as_ref().map_or(String::new(), |s| {
            format!(" stoi {:.3}->{:.3} snr gain {:.2} dB", s.stoi_input, s.stoi_enhanced, s.snr_gain_median)
        });
        println!("{:<16} n={}{ppmc}{se}", c.cell.label(), c.n_utterances);
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let mut wrote = false;
    if let Some(p) = &a.relative {
        let rows = relative_table_from_csv(&std::fs::read_to_string(p).with_context(|| p.display().to_string())?)?;
        let body = match a.output_format {
            OutputFormat::Json => serde_json::to_string_pretty(&rows)?,
            OutputFormat::Csv => {
                let mut s = String::from("label,new,base,relative_improvement_pct\n");
                for r in &rows {
                    s.push_str(&format!("{},{},{},{:.2}\n", r.label, r.new, r.base, r.percent));
                }
                s
            }
        };
        let ext = match a.output_format {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        };
        std::fs::write(a.out.join(format!("relative.{ext}")), &body)?;
        print!("{body}");
        wrote = true;
    }
    if !a.summaries.is_empty() {
        let summaries = a
            .summaries
            .iter()
            .map(|p| EvalSummary::read(p))
            .collect::<sise_core::Result<Vec<_>>>()?;
        let mut grid = ReportGrid::default();
        if let Some(s) = &a.scenarios {
            grid.scenarios = s.clone();
        }
        if let Some(n) = &a.noises {
            grid.noises = n.clone();
        }
        if let Some(s) = &a.snrs {
            grid.snrs = s.clone();
        }
        grid.include_clean = !a.no_clean;
        if grid.scenarios.is_empty() || (grid.cells().is_empty()) {
            return Err(sise_core::Error::InvalidInput("report grid is empty".into()).into());
        }
        let tables = build_report(&grid, &summaries)?;
        match a.output_format {
            OutputFormat::Csv => {
                std::fs::write(a.out.join("si_table.csv"), tables.si_csv())?;
                std::fs::write(a.out.join("se_table.csv"), tables.se_csv())?;
                print!("{}", tables.si_csv());
            }
            OutputFormat::Json => {
                let s = serde_json::to_string_pretty(&tables)?;
                std::fs::write(a.out.join("report.json"), &s)?;
                println!("{s}");
            }
        }
        wrote = true;
    }
    if let Some(key) = &a.figure {
        figure(a, key)?;
        wrote = true;
    }
    if !wrote {
        return Err(usage("nothing to report: pass --summary, --relative or --figure"));
    }
    snapshot(&a.out.join("report.resolved.toml"), "report", a)?;
    Ok(())
}

fn figure(a: &ReportArgs, key: &str) -> Result<()> {
    let channel = channel_index(&a.channel).ok_or_else(|| usage(format!("unknown channel '{}'", a.channel)))?;
    let manifest_path = a.manifest.as_ref().ok_or_else(|| usage("--figure needs --manifest"))?;
    let enhancer_path = a.enhancer.as_ref().ok_or_else(|| usage("--figure needs --enhancer"))?;
    let manifest = CorpusManifest::read(manifest_path)?;
    let entry = manifest
        .entries
        .iter()
        .find(|e| e.key() == key)
        .ok_or_else(|| anyhow!("no manifest entry '{key}'"))?;
    let u = sise_core::train::load_entry(&manifest, entry, true)?;
    let (enh_model, enh_pre) = load_pipeline(enhancer_path)?;
    let enhancer = if enh_model.heads.se { &enh_model } else { enh_pre.as_ref().ok_or_else(|| usage("--enhancer has no enhancement path"))? };
    let enhanced = enhancer.se_forward(u.input())?.enhanced;
    let reference = sise_core::track::ArticulatoryTrack::new(u.track.clone(), 50.0)?;
    let mut estimates = Vec::new();
    for spec in &a.estimates {
        let (label, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--estimate expects label=path, got '{spec}'")))?;
        let (m, p) = load_pipeline(Path::new(path))?;
        estimates.push((label.to_string(), invert(&m, p.as_ref(), u.input())?.fitted(reference.frames())));
    }
    if estimates.is_empty() {
        bail!(usage("--figure needs at least one --estimate label=checkpoint"));
    }
    let path = a.out.join(format!("figure_{key}_{}.png", a.channel.to_ascii_uppercase()));
    let layout = render_figure(
        &FigureInput {
            clean: &u.clean,
            noisy: u.input(),
            enhanced: &enhanced,
            channel,
            reference: &reference,
            estimates: estimates.iter().map(|(l, t)| (l.clone(), t)).collect(),
        },
        &path,
    )?;
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&layout)?)?;
    println!("{}", path.display());
    Ok(())
}
