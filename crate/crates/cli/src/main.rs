use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use projscan::harness::{
    self, ablation, report, AblationConfig, AgeHistogram, PhantomKind, PhantomParams,
};
use projscan::projection::ChannelSelection;
use projscan::train::{self, Dataset, Predictor, RunConfig};
use projscan::volume::{GridSpec, VolumeFormat};
use projscan::{Error, Result};

#[derive(Parser)]
#[command(name = "projscan", version, about = "Projection-based age regression toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Project volumes to 2D statistic images (.pjsn).
    Project(ProjectArgs),
    /// Generate synthetic phantom volumes and a labels CSV.
    Phantom(PhantomArgs),
    /// Train a model from a TOML run configuration.
    Train(TrainArgs),
    /// Score a checkpoint on a directory of projections.
    Eval(EvalArgs),
    /// Train every channel subset for every learning rate.
    Ablate(AblateArgs),
    /// Marginal channel contributions from an ablation CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Channel list, e.g. `mean,std` or `axial-std,skew,eigen2`.
    #[arg(long, default_value = "mean,std")]
    channels: String,
    /// Zero-pad every volume to this grid first, e.g. `256,256,208`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Histogram {
    Uniform,
    Skewed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Anatomical,
    VarianceOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Nifti,
    Raw,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value = "64,64,52")]
    dims: String,
    #[arg(long, default_value_t = 0.03)]
    noise: f32,
    #[arg(long, value_enum, default_value_t = Kind::Anatomical)]
    kind: Kind,
    #[arg(long, value_enum, default_value_t = Histogram::Uniform)]
    histogram: Histogram,
    #[arg(long, value_enum, default_value_t = Format::Nifti)]
    format: Format,
}

#[derive(Args)]
struct TrainArgs {
    /// Projection directory; overrides `[data] dir`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Defaults to `labels.csv` inside the data directory.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    lrs: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Stop after this many new trainings (the sweep resumes on rerun).
    #[arg(long)]
    max_cells: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let summary = match cli.command {
        Command::Project(a) => project(c, a)?,
        Command::Phantom(a) => phantom(c, a)?,
        Command::Train(a) => train_cmd(c, a)?,
        Command::Eval(a) => eval(a)?,
        Command::Ablate(a) => ablate(c, a)?,
        Command::Report(a) => report_cmd(c, a)?,
    };
    if c.json {
        println!("{}", serde_json::to_string(&summary.0)?);
    } else {
        print!("{}", summary.1);
    }
    Ok(())
}

type Summary = (serde_json::Value, String);

fn require_out(c: &Common) -> Result<&Path> {
    c.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn parse_dims(s: &str) -> Result<[usize; 3]> {
    Ok(GridSpec::parse(s)?.target_dims)
}

fn project(c: &Common, a: ProjectArgs) -> Result<Summary> {
    let out = require_out(c)?;
    let selection = ChannelSelection::parse(&a.channels)?;
    let grid = a.grid.as_deref().map(GridSpec::parse).transpose()?;
    let n = harness::project_dir(&a.input, out, &selection, grid.as_ref(), a.workers)?;
    let channels: Vec<String> = selection.channels().iter().map(ToString::to_string).collect();
    Ok((
        json!({"subjects": n, "channels": channels, "out": out}),
        format!("projected {n} volume(s) to {} channel(s) in {}\n", channels.len(), out.display()),
    ))
}

fn phantom(c: &Common, a: PhantomArgs) -> Result<Summary> {
    let out = require_out(c)?;
    let params = PhantomParams {
        dims: parse_dims(&a.dims)?,
        noise: a.noise,
        kind: match a.kind {
            Kind::Anatomical => PhantomKind::Anatomical,
            Kind::VarianceOnly => PhantomKind::VarianceOnly,
        },
        jitter: true,
    };
    let hist = match a.histogram {
        Histogram::Uniform => AgeHistogram::uniform(38),
        Histogram::Skewed => AgeHistogram::right_skewed(38),
    };
    let format = match a.format {
        Format::Nifti => VolumeFormat::Nifti1,
        Format::Raw => VolumeFormat::Raw,
    };
    let labels = harness::write_phantoms(out, a.count, &hist, c.seed.unwrap_or(0), &params, format)?;
    Ok((
        json!({"subjects": labels.len(), "dims": params.dims, "out": out}),
        format!("wrote {} phantom(s) and labels.csv to {}\n", labels.len(), out.display()),
    ))
}

fn train_cmd(c: &Common, a: TrainArgs) -> Result<Summary> {
    let out = require_out(c)?;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = a.data {
        cfg.data.dir = Some(d);
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = c.seed {
        cfg.train.seed = s;
        cfg.model.seed = s;
    }
    let dir = cfg
        .data
        .dir
        .clone()
        .ok_or_else(|| Error::Config("no data directory: pass --data or set [data] dir".into()))?;
    let labels = cfg.data.labels.clone().unwrap_or_else(|| dir.join("labels.csv"));
    let ds = Dataset::load_dir(&dir, &labels)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)
        .map_err(|e| Error::io(out.join("config.toml"), e))?;
    let res = train::run(&cfg, &ds, Some(out))?;
    let r = &res.train.report;
    let mut text = format!(
        "trained {} epoch(s) on {} / {} / {} subjects; best epoch {:?}, val MSE {:.4}\n",
        r.epochs.len(),
        res.split_sizes[0],
        res.split_sizes[1],
        res.split_sizes[2],
        r.best_epoch,
        r.best_val_loss
    );
    if let Some(m) = res.test {
        text.push_str(&format!("test MAE {:.3} years (RMSE {:.3})\n", m.mae, m.rmse));
    }
    Ok((
        json!({
            "epochs": r.epochs.len(),
            "best_epoch": r.best_epoch,
            "best_val_loss": r.best_val_loss,
            "checkpoint_epochs": r.checkpoint_epochs,
            "split": res.split_sizes,
            "test": res.test,
            "checkpoint": res.checkpoint,
        }),
        text,
    ))
}

fn eval(a: EvalArgs) -> Result<Summary> {
    let p = Predictor::load(&a.checkpoint)?;
    let labels = a.labels.unwrap_or_else(|| a.data.join("labels.csv"));
    let ds = Dataset::load_dir(&a.data, &labels)?;
    let m = p.evaluate(&ds)?;
    Ok((
        serde_json::to_value(m)?,
        format!("{} subject(s): MAE {:.3} years, RMSE {:.3}\n", m.n, m.mae, m.rmse),
    ))
}

fn ablate(c: &Common, a: AblateArgs) -> Result<Summary> {
    let out = require_out(c)?;
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<AblationConfig>(&text)?
        }
        None => AblationConfig::default(),
    };
    if let Some(l) = a.lrs {
        cfg.lrs = l;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let ds = Dataset::load_dir(&a.data, &a.data.join("labels.csv"))?;
    let res = harness::with_workers(a.workers, || harness::ablation_sweep(&ds, &cfg, out, a.max_cells))??;
    Ok((
        json!({"records": res.results.len(), "trained": res.trained, "results": res.results_path}),
        format!(
            "{} record(s) in {} ({} trained now)\n",
            res.results.len(),
            res.results_path.display(),
            res.trained
        ),
    ))
}

fn report_cmd(c: &Common, a: ReportArgs) -> Result<Summary> {
    let results = ablation::read_results(&a.results)?;
    let dir = a.results.parent().unwrap_or(Path::new("."));
    let manifest = dir.join(ablation::MANIFEST_FILE);
    let channels: Vec<String> = if manifest.exists() {
        let bytes = fs::read(&manifest).map_err(|e| Error::io(manifest, e))?;
        serde_json::from_slice::<ablation::SweepManifest>(&bytes)?.channels
    } else {
        let max = results.iter().map(|r| r.subset_bitmask).max().unwrap_or(0);
        (0..32 - max.leading_zeros()).map(|i| format!("c{i}")).collect()
    };
    let rep = harness::marginal_contribution(&results, &channels)?;
    let out = c.out.as_deref().unwrap_or(dir);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    ablation::write_report_json(&rep, &out.join("marginal.json"))?;
    let svg = out.join("marginal.svg");
    fs::write(&svg, report::render_svg(&rep)).map_err(|e| Error::io(svg, e))?;
    Ok((serde_json::to_value(&rep)?, report::render_text(&rep)))
}
