//! `actprompt` command line: fine-tuning, feature extraction, evaluation,
//! attention inspection and synthetic data generation.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use actprompt_core::data::{generate_synthetic, load_annotations, AnnotationSet, SyntheticSpec, VideoStore};
use actprompt_core::model::PreparedQuery;
use actprompt_core::pipeline::{
    evaluate_highlight, evaluate_retrieval, extract, finetune, inspect_attention, load_predictions, Checkpoint,
    ExtractMode, PreparedDataset, RunConfig,
};
use actprompt_core::{Error, Model, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(
    name = "actprompt",
    version,
    about = "Action-aware prompt tuning for a frozen image encoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    /// Moment retrieval.
    Mr,
    /// Highlight detection.
    Hl,
}

#[derive(Subcommand)]
enum Command {
    /// Fine-tune the prompt modules on a dataset directory.
    Finetune {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding annotations.jsonl and videos/.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; telemetry goes to `<out>.telemetry.jsonl`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-clip features of one or all videos as `.actp` bundles.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        /// Video id, or `all`.
        #[arg(long)]
        video: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = ".")]
        data: PathBuf,
        #[arg(long, default_value = "vid")]
        mode: ExtractMode,
        /// Query text; required by `vid+veb`.
        #[arg(long)]
        query: Option<String>,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, value_enum, default_value = "mr")]
        task: Task,
    },
    /// Render prompt-to-patch attention of one frame as text grids.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        video: String,
        /// Clip index whose representative frame is inspected.
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = ".")]
        data: PathBuf,
        /// Adds the verb-guided stream.
        #[arg(long)]
        query: Option<String>,
    },
    /// Generate the synthetic motion dataset.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn telemetry_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".telemetry.jsonl");
    out.with_file_name(name)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn run_finetune(config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let config = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut model = Model::new(&config.model())?;
    println!("{}", model.parameter_counts().freeze(&config.train.freeze).banner());
    let extractor = config.verb_extractor.build();
    let dataset = PreparedDataset::load(&model, data, config.data.clip_length, extractor.as_ref())?;
    let log_path = telemetry_path(out);
    let file = fs::File::create(&log_path).map_err(io(&log_path))?;
    let mut log = BufWriter::new(file);
    let report = finetune(&mut model, &dataset, &config, Some(&mut log))?;
    log.flush().map_err(io(&log_path))?;
    Checkpoint::from_model(&model, &config, config.train.epochs).save(out)?;
    if let (Some(first), Some(last)) = (report.first_epoch_mean(), report.last_epoch_mean()) {
        println!("mean L_total: first epoch {first:.6}, last epoch {last:.6}");
    }
    println!(
        "{} steps, {} skipped quadruples; checkpoint {}; telemetry {}",
        report.steps.len(),
        report.skipped_quadruples,
        out.display(),
        log_path.display()
    );
    Ok(())
}

fn query_for(model: &Model, config: &RunConfig, text: Option<&str>) -> Result<Option<PreparedQuery>> {
    let extractor = config.verb_extractor.build();
    text.map(|q| model.prepare_query(q, None, extractor.as_ref()))
        .transpose()
}

fn run_extract(
    ckpt: &Path,
    video: &str,
    out: &Path,
    data: &Path,
    mode: ExtractMode,
    query: Option<&str>,
) -> Result<()> {
    if mode == ExtractMode::VidVeb && query.is_none() {
        return Err(Error::Usage("--mode vid+veb needs --query".into()));
    }
    let checkpoint = Checkpoint::load(ckpt)?;
    let model = checkpoint.restore()?;
    let config = &checkpoint.config;
    let query = query_for(&model, config, query)?;
    let store = VideoStore::new(data.join("videos"));
    let ids = if video == "all" {
        store.ids()?
    } else {
        vec![video.to_string()]
    };
    if ids.is_empty() {
        return Err(Error::Input(format!("no videos under {}", store.dir.display())));
    }
    fs::create_dir_all(out).map_err(io(out))?;
    for id in &ids {
        let prepared = model.prepare_video(&store.load(id)?, config.data.clip_length, None)?;
        let bundle = extract(&model, &prepared, mode, query.as_ref())?;
        let path = out.join(format!("{id}.actp"));
        bundle.save(&path)?;
        info!("{id}: {} clips -> {}", bundle.num_clips, path.display());
    }
    println!("wrote {} bundle(s) to {}", ids.len(), out.display());
    Ok(())
}

fn run_eval(preds: &Path, gts: &Path, task: Task) -> Result<()> {
    let preds = load_predictions(preds)?;
    let gts: AnnotationSet = load_annotations(gts)?;
    let json = match task {
        Task::Mr => {
            let thresholds = RunConfig::default().eval.map_thresholds;
            serde_json::to_string(&evaluate_retrieval(&preds, &gts, &thresholds)?)
        }
        Task::Hl => serde_json::to_string(&evaluate_highlight(&preds, &gts)?),
    }
    .map_err(|e| Error::Format(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn run_inspect(ckpt: &Path, video: &str, frame: usize, out: &Path, data: &Path, query: Option<&str>) -> Result<()> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let model = checkpoint.restore()?;
    let config = &checkpoint.config;
    let query = query_for(&model, config, query)?;
    let raw = VideoStore::new(data.join("videos")).load(video)?;
    let prepared = model.prepare_video(&raw, config.data.clip_length, None)?;
    let views = inspect_attention(&model, &prepared, frame, query.as_ref(), out)?;
    println!("wrote {} attention grid(s) to {}", views.len(), out.display());
    Ok(())
}

fn run_synth(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    let dataset = generate_synthetic(&spec)?;
    dataset.save(out)?;
    println!(
        "wrote {} videos and {} queries to {}",
        dataset.videos.len(),
        dataset.annotations.records.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Finetune { config, data, out } => run_finetune(config.as_deref(), &data, &out),
        Command::Extract {
            ckpt,
            video,
            out,
            data,
            mode,
            query,
        } => run_extract(&ckpt, &video, &out, &data, mode, query.as_deref()),
        Command::Eval { preds, gts, task } => run_eval(&preds, &gts, task),
        Command::Inspect {
            ckpt,
            video,
            frame,
            out,
            data,
            query,
        } => run_inspect(&ckpt, &video, frame, &out, &data, query.as_deref()),
        Command::Synth { spec, out } => run_synth(spec.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
