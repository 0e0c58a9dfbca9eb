use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array3;
use serde_json::json;

use vartex::config::{Resolved, RunConfig};
use vartex::exec::Execution;
use vartex::griddata::{generate_synthetic, read_grid, write_grid, write_sidecar, GridSeries, SynthConfig};
use vartex::inference::{evaluate_with, grid_csv, maps_with, predict_split, skill_vs_persistence, InferenceError};
use vartex::model::{census_of_config, Checkpoint, Model};
use vartex::presets::{Preset, WEATHERBENCH_VARIABLES};
use vartex::training::{split_cost, CropMode, TrainPlan, Trainer};

#[derive(Parser)]
#[command(name = "vartex", version, about = "Multi-representative aggregation transformer for gridded forecasting")]
struct Cli {
    /// Global seed override for data generation, initialization and shuffling.
    #[arg(long, global = true, env = "VARTEX_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// JSON run config: {"preset": ..., "model": {...}, "train": {...}}.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset, e.g. paper-r2 or desk-tiny.
    #[arg(long)]
    preset: Option<Preset>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CropArg {
    Canonical,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Parallel,
    Sequential,
}

/// Reference forecasters that need no checkpoint.
#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    /// Forecast = input.
    Persistence,
    /// Forecast = the true target, a perfect forecaster.
    Replay,
}

#[derive(Args)]
struct ForecastSource {
    #[arg(long, required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    /// Score a reference forecaster instead of a checkpoint.
    #[arg(long, value_enum, conflicts_with = "checkpoint")]
    baseline: Option<Baseline>,
    /// Predict with this many canonical crops per side (1 = whole grid).
    #[arg(long, default_value_t = 1)]
    split: usize,
    /// Lead time in hours; defaults to the checkpoint's training plan, or 6.
    #[arg(long)]
    lead_time: Option<i64>,
}

impl From<ExecArg> for Execution {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Parallel => Execution::Parallel,
            ExecArg::Sequential => Execution::Sequential,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic VTXG series and its JSON manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = WEATHERBENCH_VARIABLES)]
        variables: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        step_hours: i64,
    },
    /// Train a model and write checkpoint, log and cost summary to a directory.
    Train {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        split: Option<usize>,
        #[arg(long, value_enum)]
        crop_mode: Option<CropArg>,
        /// Lead time in hours.
        #[arg(long)]
        lead_time: Option<i64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        execution: Option<ExecArg>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the test range (ACC and RMSE per target).
    Eval {
        #[command(flatten)]
        source: ForecastSource,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variable keys.
        #[arg(long, value_delimiter = ',', default_value = "u10,t2m,z500,t850")]
        targets: Vec<String>,
        /// Output path; `.json` writes JSON, anything else CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the per-group parameter census.
    CountParams {
        #[command(flatten)]
        source: ConfigSource,
    },
    /// Print attention-score entry counts for global and split inputs.
    BenchAttention {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        split: Vec<usize>,
    },
    /// Write initial, truth, prediction and bias grids per target as CSV.
    ExportMaps {
        #[command(flatten)]
        source: ForecastSource,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        time_index: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "u10,t2m,z500,t850")]
        targets: Vec<String>,
    },
    /// Print the fully expanded config as JSON.
    Config {
        #[command(flatten)]
        source: ConfigSource,
    },
}

fn resolve(source: &ConfigSource, seed: Option<u64>) -> Result<(Option<Preset>, Resolved)> {
    let run = match (&source.config, source.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        (None, Some(p)) => RunConfig::from_preset(p),
        (None, None) => bail!("pass --config FILE or --preset NAME"),
    };
    let mut resolved = run.resolve().context("invalid config")?;
    if let Some(s) = seed {
        resolved.train.seed = s;
    }
    Ok((run.preset()?, resolved))
}

fn load_series(path: &Path) -> Result<GridSeries> {
    read_grid(path).context("loading grid series")
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("checkpoint file not found: {}", path.display());
    }
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

const DEFAULT_LEAD_HOURS: i64 = 6;

enum Forecaster {
    Model(Box<Model>),
    Baseline(Baseline),
}

/// Loads the forecaster and settles the lead time: the flag, else the
/// checkpoint's training plan, else six hours.
fn forecaster(source: &ForecastSource) -> Result<(Forecaster, i64)> {
    let Some(path) = &source.checkpoint else {
        let b = source.baseline.expect("clap requires checkpoint or baseline");
        return Ok((Forecaster::Baseline(b), source.lead_time.unwrap_or(DEFAULT_LEAD_HOURS)));
    };
    let ck = load_checkpoint(path)?;
    let model = ck.to_model(None).context("rebuilding model")?;
    let lead = match source.lead_time {
        Some(l) => l,
        None => {
            let plan: TrainPlan = serde_json::from_value(ck.meta.get("plan").cloned().unwrap_or_default())
                .context("checkpoint has no training plan; pass --lead-time")?;
            plan.lead_time_hours
        }
    };
    Ok((Forecaster::Model(Box::new(model)), lead))
}

impl Forecaster {
    /// Standardized forecast from input index `t`.
    fn predict(&self, series: &GridSeries, t: usize, lead: usize, split: usize) -> Result<Array3<f64>, InferenceError> {
        match self {
            Forecaster::Model(m) => predict_split(m, series.field(t).view(), split, Execution::Sequential),
            Forecaster::Baseline(Baseline::Persistence) => Ok(series.field(t).clone()),
            Forecaster::Baseline(Baseline::Replay) => Ok(series.field(t + lead).clone()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(out: &Path, cfg: SynthConfig) -> Result<()> {
    let series = generate_synthetic(&cfg).context("generating synthetic series")?;
    write_grid(out, &series).with_context(|| format!("writing {}", out.display()))?;
    let manifest = out.with_extension("json");
    write_sidecar(&manifest, &series).with_context(|| format!("writing {}", manifest.display()))?;
    let (v, h, w) = series.dims();
    println!("wrote {} ({} steps of {v}x{h}x{w}) and {}", out.display(), series.len(), manifest.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    mut resolved: Resolved,
    data: &Path,
    out: &Path,
    split: Option<usize>,
    crop: Option<CropArg>,
    lead: Option<i64>,
    epochs: Option<usize>,
    exec: Option<ExecArg>,
    resume: Option<&Path>,
) -> Result<()> {
    let plan = &mut resolved.train;
    plan.split = split.unwrap_or(plan.split);
    plan.lead_time_hours = lead.unwrap_or(plan.lead_time_hours);
    plan.epochs = epochs.unwrap_or(plan.epochs);
    if let Some(c) = crop {
        plan.crop_mode = match c {
            CropArg::Canonical => CropMode::Canonical,
            CropArg::Random => CropMode::Random,
        };
    }
    if let Some(e) = exec {
        plan.execution = e.into();
    }
    let series = load_series(data)?;
    let cost = split_cost(&resolved.model, resolved.train.split).context("invalid split")?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(&load_checkpoint(path)?, &series, Some(&resolved.model), Some(&resolved.train))
            .with_context(|| format!("resuming from {}", path.display()))?,
        None => {
            let model = Model::new(resolved.model.clone(), resolved.train.seed).context("building model")?;
            Trainer::new(model, resolved.train.clone(), &series).context("preparing training")?
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    println!(
        "{} parameters; {} crops of {}x{} per sample ({} tokens each); {} steps per epoch",
        trainer.model.params.total_count(),
        cost.crops,
        cost.crop_height,
        cost.crop_width,
        cost.tokens_per_crop,
        trainer.steps_per_epoch()
    );
    let log_path = out.join("train_log.jsonl");
    let log_file = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(log_file);
    let ckpt = out.join("checkpoint.vtxc");
    let mut epochs = Vec::new();
    while !trainer.is_finished() {
        let stats = vartex::training::regional_train_epoch(&mut trainer, &series, Some(&mut log))?;
        log.flush().with_context(|| format!("writing {}", log_path.display()))?;
        trainer.save(&ckpt).with_context(|| format!("writing {}", ckpt.display()))?;
        println!("epoch {:>3}  loss {:.6}", stats.epoch, stats.mean_loss());
        epochs.push(json!({ "epoch": stats.epoch, "mean_loss": stats.mean_loss() }));
    }
    let skill =
        skill_vs_persistence(&trainer.model, &series, trainer.plan.lead_time_hours, trainer.plan.execution).ok();
    if let Some(s) = &skill {
        println!("test lat-MSE {:.6} vs persistence {:.6} (ratio {:.4})", s.model_mse, s.persistence_mse, s.ratio());
    }
    let summary = json!({
        "config": { "model": trainer.model.config, "train": trainer.plan },
        "ledger": trainer.ledger,
        "split": cost,
        "epochs": epochs,
        "skill": skill,
    });
    write_file(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn eval(source: &ForecastSource, data: &Path, targets: &[String], report: Option<&Path>) -> Result<()> {
    let (f, lead_hours) = forecaster(source)?;
    let series = load_series(data)?;
    let lead = series.lead_steps(lead_hours)?;
    let keys: Vec<&str> = targets.iter().map(String::as_str).collect();
    let report_data = evaluate_with(&series, &keys, lead_hours, source.split, Execution::Parallel, |t, _| {
        f.predict(&series, t, lead, source.split)
    })
    .context("evaluating")?;
    print!("{}", report_data.to_csv());
    if let Some(path) = report {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => report_data.to_json(),
            _ => report_data.to_csv(),
        };
        write_file(path, &text)?;
    }
    Ok(())
}

fn count_params(preset: Option<Preset>, resolved: &Resolved) -> Result<()> {
    let c = &resolved.model;
    let census = census_of_config(c);
    let mixing = match c.mixing_interval {
        0 => "no mixing blocks".to_string(),
        m => format!("mixing after every {m} spatial blocks ({} total)", c.num_mixing_blocks()),
    };
    let sharing = if c.share_spatial_weights { "shared across streams" } else { "separate per stream" };
    println!(
        "R={} D={} blocks={} heads={} patch={}",
        c.num_representatives, c.embed_dim, c.num_blocks, c.heads, c.patch_size
    );
    println!("{mixing}; spatial weights {sharing}");
    println!("{:<16}{:>14}", "group", "parameters");
    for (name, n) in census.groups() {
        println!("{name:<16}{n:>14}");
    }
    println!("{:<16}{:>14}  ({:.2}M)", "total", census.total, census.millions());
    if let Some(reference) = preset.and_then(Preset::reference_millions) {
        let dev = (census.millions() - reference) / reference * 100.0;
        println!("reference {reference:.2}M, deviation {dev:+.2}%");
    }
    Ok(())
}

fn bench_attention(resolved: &Resolved, splits: &[usize]) -> Result<()> {
    let global = split_cost(&resolved.model, 1)?;
    println!("split,crop,crops,tokens_per_crop,entries_per_crop,entries_total,ratio_to_global,per_crop_ratio");
    for &s in std::iter::once(&1).chain(splits) {
        let c = split_cost(&resolved.model, s)?;
        println!(
            "{s},{}x{},{},{},{},{},{},{}",
            c.crop_height,
            c.crop_width,
            c.crops,
            c.tokens_per_crop,
            c.entries_per_crop,
            c.entries_total,
            c.ratio_to(&global),
            c.entries_per_crop as f64 / global.entries_per_crop as f64
        );
    }
    Ok(())
}

fn export_maps(source: &ForecastSource, data: &Path, t: usize, out: &Path, targets: &[String]) -> Result<()> {
    let (f, lead) = forecaster(source)?;
    let series = load_series(data)?;
    let steps = series.lead_steps(lead)?;
    let keys: Vec<&str> = targets.iter().map(String::as_str).collect();
    let maps =
        maps_with(&series, t, lead, &keys, |_| f.predict(&series, t, steps, source.split)).context("building maps")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = Vec::new();
    for m in &maps {
        for (panel, grid) in m.panels() {
            let name = format!("{}_{panel}.csv", m.variable);
            write_file(&out.join(&name), &grid_csv(grid))?;
            manifest.push(json!({ "file": name, "variable": m.variable, "panel": panel, "units": m.units }));
        }
    }
    let index = json!({ "time_index": t, "lead_time_hours": lead, "latitudes": series.latitudes, "panels": manifest });
    write_file(&out.join("maps.json"), &serde_json::to_string_pretty(&index)?)?;
    println!("wrote {} panels to {}", manifest.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, variables, height, width, steps, step_hours } => gen_data(
            &out,
            SynthConfig {
                variables,
                height,
                width,
                steps,
                step_hours,
                seed: cli.seed.unwrap_or(0),
                ..Default::default()
            },
        ),
        Command::Train { source, data, out, split, crop_mode, lead_time, epochs, execution, resume } => {
            let (_, resolved) = resolve(&source, cli.seed)?;
            train(resolved, &data, &out, split, crop_mode, lead_time, epochs, execution, resume.as_deref())
        }
        Command::Eval { source, data, targets, report } => eval(&source, &data, &targets, report.as_deref()),
        Command::CountParams { source } => {
            let (preset, resolved) = resolve(&source, cli.seed)?;
            count_params(preset, &resolved)
        }
        Command::BenchAttention { source, split } => bench_attention(&resolve(&source, cli.seed)?.1, &split),
        Command::ExportMaps { source, data, time_index, out, targets } => {
            export_maps(&source, &data, time_index, &out, &targets)
        }
        Command::Config { source } => {
            let (_, resolved) = resolve(&source, cli.seed)?;
            println!("{}", serde_json::to_string_pretty(&resolved)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
