use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sedtune::agent::{extract_best_params, write_log, Checkpoint, Trainer, TrainerConfig};
use sedtune::dataset::{
    load_dataset, load_manifest, load_params, save_params, synth_generate, write_dataset,
    write_events_tsv, Dataset, ParamsFile, SynthConfig,
};
use sedtune::env::RewardMode;
use sedtune::eval::{evaluate_dataset, predict_dataset};
use sedtune::grid::{grid_search_independent, grid_search_per_class, write_score_table};
use sedtune::metric::{CollarConfig, ScoreReport};
use sedtune::postproc::{
    default_params, default_thresholds, ParamGrid, PostProcParams, StackOptions, WINDOW_SET,
};

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "sedtune",
    version,
    about = "Tune event-detector post-processing by grid search or policy gradient"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (manifest, posteriors, annotations).
    Synth(SynthArgs),
    /// Score fixed parameters against annotations.
    Evaluate(EvaluateArgs),
    /// Exhaustive search over the parameter grid.
    Grid(GridArgs),
    /// Train the policy and extract parameters from it.
    Train(TrainArgs),
    /// Post-process posteriors into an event list.
    Apply(ApplyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Heterogeneous,
    Noiseless,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    #[arg(long)]
    clips: Option<usize>,
    /// Number of classes (noiseless preset only).
    #[arg(long)]
    classes: Option<usize>,
    /// JSON generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite an existing dataset in the output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Parameter file; threshold 0.5 and window 7 when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Threshold only, skip the median filter.
    #[arg(long)]
    no_median: bool,
    /// Report file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridFlags {
    /// Comma-separated thresholds in (0, 1).
    #[arg(long, value_delimiter = ',')]
    grid_thresholds: Option<Vec<f64>>,
    /// Comma-separated odd window sizes.
    #[arg(long, value_delimiter = ',')]
    grid_windows: Option<Vec<usize>>,
    /// Separate parameters per class (default).
    #[arg(long, conflicts_with = "class_independent")]
    per_class: bool,
    /// One parameter pair shared by all classes.
    #[arg(long)]
    class_independent: bool,
}

impl GridFlags {
    fn grid(&self, num_classes: usize) -> sedtune::Result<ParamGrid> {
        ParamGrid::new(
            self.grid_thresholds
                .clone()
                .unwrap_or_else(default_thresholds),
            self.grid_windows
                .clone()
                .unwrap_or_else(|| WINDOW_SET.to_vec()),
            num_classes,
            !self.class_independent,
        )
    }
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    grid: GridFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    PerSegment,
    Terminal,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    grid: GridFlags,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_enum)]
    reward_mode: Option<RewardArg>,
    /// JSON trainer settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    no_median: bool,
    /// Output TSV.
    #[arg(long)]
    out: PathBuf,
}

/// Bad input maps to exit code 1, everything else to 2.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

// library messages already include their cause
fn flat(e: &sedtune::Error) -> anyhow::Error {
    anyhow!("{e}")
}

impl From<sedtune::Error> for Failure {
    fn from(e: sedtune::Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(flat(&e))
        } else {
            Failure::Runtime(flat(&e))
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Any error while reading inputs counts as bad input.
fn input<T>(r: sedtune::Result<T>) -> Outcome<T> {
    r.map_err(|e| Failure::Invalid(flat(&e)))
}

fn invalid<T>(msg: impl std::fmt::Display) -> Outcome<T> {
    Err(Failure::Invalid(anyhow!("{msg}")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Invalid(anyhow!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Invalid(anyhow!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).context("serializing output")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create_dir(dir: &Path) -> Outcome<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn dir_is_empty(dir: &Path) -> bool {
    fs::read_dir(dir)
        .map(|mut d| d.next().is_none())
        .unwrap_or(true)
}

fn load_params_or_default(path: Option<&Path>, ds: &Dataset) -> Outcome<PostProcParams> {
    let Some(path) = path else {
        return Ok(default_params(ds.num_classes())?);
    };
    let file = input(load_params(path))?;
    if file.class_labels != ds.class_labels() {
        return invalid(format!(
            "{}: class labels {:?} do not match the dataset's {:?}",
            path.display(),
            file.class_labels,
            ds.class_labels()
        ));
    }
    input(file.params())
}

#[derive(Serialize)]
struct ClassLine<'a> {
    label: &'a str,
    f1: f64,
    true_positives: usize,
    false_positives: usize,
    false_negatives: usize,
    included: bool,
}

#[derive(Serialize)]
struct Report<'a> {
    label: String,
    macro_f1: f64,
    macro_f1_percent: f64,
    classes: Vec<ClassLine<'a>>,
}

fn report<'a>(label: String, r: &ScoreReport, labels: &'a [String]) -> Report<'a> {
    Report {
        label,
        macro_f1: r.macro_f1,
        macro_f1_percent: r.macro_f1_percent(),
        classes: r
            .classes
            .iter()
            .zip(labels)
            .map(|(c, l)| ClassLine {
                label: l,
                f1: c.f1,
                true_positives: c.scores.true_positives,
                false_positives: c.scores.false_positives,
                false_negatives: c.scores.false_negatives,
                included: c.included,
            })
            .collect(),
    }
}

fn print_report(r: &Report) {
    say!("{}: macro F1 {:.2}%", r.label, r.macro_f1_percent);
    for c in &r.classes {
        say!(
            "  {:<16} F1 {:6.2}%  tp {} fp {} fn {}",
            c.label,
            100.0 * c.f1,
            c.true_positives,
            c.false_positives,
            c.false_negatives
        );
    }
}

fn cmd_synth(a: SynthArgs) -> Outcome<()> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(path), _) => read_json::<SynthConfig>(path)?,
        (None, Preset::Default) => SynthConfig::default(),
        (None, Preset::Heterogeneous) => SynthConfig::heterogeneous(200, 0),
        (None, Preset::Noiseless) => SynthConfig::noiseless(100, a.classes.unwrap_or(10), 0),
    };
    if a.classes.is_some() && !matches!(a.preset, Preset::Noiseless) {
        return invalid("--classes applies to the noiseless preset only");
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.clips {
        cfg.num_clips = n;
    }
    input(cfg.validate())?;
    if !dir_is_empty(&a.out) {
        if !a.force {
            return invalid(format!(
                "{} is not empty; pass --force to overwrite",
                a.out.display()
            ));
        }
        for name in ["manifest.csv", "classes.txt", "annotations.tsv"] {
            let p = a.out.join(name);
            if p.exists() {
                fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
        let post = a.out.join("posteriors");
        if post.exists() {
            fs::remove_dir_all(&post).with_context(|| format!("removing {}", post.display()))?;
        }
    }
    let ds = synth_generate(&cfg)?;
    create_dir(&a.out)?;
    let manifest = write_dataset(&a.out, &ds)?;
    say!(
        "wrote {} clips, {} classes, {} events to {}",
        ds.len(),
        ds.num_classes(),
        ds.references().len(),
        manifest.display()
    );
    Ok(())
}

fn load_data(d: &DataArgs) -> Outcome<Dataset> {
    input(load_dataset(&d.manifest, Some(&d.annotations)))
}

fn cmd_evaluate(a: EvaluateArgs) -> Outcome<()> {
    let ds = load_data(&a.data)?;
    let params = load_params_or_default(a.params.as_deref(), &ds)?;
    let median = !a.no_median;
    let r = evaluate_dataset(
        &ds,
        &params,
        StackOptions { median },
        &CollarConfig::default(),
    )?;
    let rep = report(params.label(median), &r, ds.class_labels());
    print_report(&rep);
    if let Some(out) = &a.out {
        write_json(out, &rep)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GridSummary {
    class_dependent: bool,
    independent_macro_f1: f64,
    per_class_macro_f1: f64,
    chosen_macro_f1: f64,
    grid: ParamGrid,
}

fn cmd_grid(a: GridArgs) -> Outcome<()> {
    let ds = load_data(&a.data)?;
    let grid = input(a.grid.grid(ds.num_classes()))?;
    create_dir(&a.out)?;
    let collar = CollarConfig::default();
    let indep = grid_search_independent(&ds, &grid, &collar)?;
    let per_class = grid_search_per_class(&ds, &grid, &collar)?;
    let chosen = if grid.class_dependent {
        &per_class
    } else {
        &indep
    };
    write_score_table(
        &a.out.join("score_table.csv"),
        &chosen.table,
        ds.class_labels(),
    )?;
    save_params(
        &a.out.join("params.json"),
        &ParamsFile::new(&chosen.best, ds.class_labels(), Some(grid.clone())),
    )?;
    let summary = GridSummary {
        class_dependent: grid.class_dependent,
        independent_macro_f1: indep.best_macro_f1,
        per_class_macro_f1: per_class.best_macro_f1,
        chosen_macro_f1: chosen.best_macro_f1,
        grid,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    say!(
        "shared parameters: macro F1 {:.2}%, per-class parameters: macro F1 {:.2}%",
        100.0 * indep.best_macro_f1,
        100.0 * per_class.best_macro_f1
    );
    say!(
        "best thresholds {:?}, windows {:?}",
        chosen.best.thresholds,
        chosen.best.window_sizes
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    episodes: usize,
    class_dependent: bool,
    default: Report<'a>,
    per_clip: Report<'a>,
    modal: Report<'a>,
    improvement_points: f64,
}

fn cmd_train(a: TrainArgs) -> Outcome<()> {
    let ds = load_data(&a.data)?;
    if ds.is_empty() {
        return invalid("cannot train on an empty dataset");
    }
    let ck_path = a.out.join("checkpoint.json");
    let mut trainer = if a.resume {
        let mut ck = input(Checkpoint::load(&ck_path))?;
        if let Some(e) = a.episodes {
            ck.config.episodes = e;
        }
        input(Trainer::from_checkpoint(&ds, ck))?
    } else {
        if !dir_is_empty(&a.out) && !a.force {
            return invalid(format!(
                "{} is not empty; pass --resume to continue or --force to start over",
                a.out.display()
            ));
        }
        let mut cfg: TrainerConfig = match &a.config {
            Some(p) => read_json(p)?,
            None => TrainerConfig::default(),
        };
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        if let Some(e) = a.episodes {
            cfg.episodes = e;
        }
        if let Some(m) = a.reward_mode {
            cfg.reward_mode = match m {
                RewardArg::PerSegment => RewardMode::PerSegment,
                RewardArg::Terminal => RewardMode::Terminal,
            };
        }
        let grid = input(a.grid.grid(ds.num_classes()))?;
        input(Trainer::new(&ds, grid, cfg))?
    };
    create_dir(&a.out)?;
    let curve = a.out.join("learning_curve.csv");
    while !trainer.is_finished() {
        let row = trainer.run_episode()?;
        trainer.checkpoint().save(&ck_path)?;
        write_log(&curve, trainer.log())?;
        say!(
            "episode {:>4}  step {:>7}  reward {:.4}  macro F1 {:.2}%  loss {:.4}  entropy {:.3}",
            row.episode,
            row.step,
            row.mean_reward,
            100.0 * row.macro_f1,
            row.loss,
            row.entropy
        );
    }
    write_log(&curve, trainer.log())?;

    let ck = trainer.checkpoint();
    let collar = ck.config.collar;
    let extracted = extract_best_params(&ck.policy, &ds, &ck.grid, &collar)?;
    save_params(
        &a.out.join("params.json"),
        &ParamsFile::new(&extracted.modal, ds.class_labels(), Some(ck.grid.clone())),
    )?;
    let per_clip: Vec<ParamsFile> = extracted
        .per_clip
        .iter()
        .map(|p| ParamsFile::new(p, ds.class_labels(), None))
        .collect();
    write_json(&a.out.join("per_clip_params.json"), &per_clip)?;

    let defaults = default_params(ds.num_classes())?;
    let base = evaluate_dataset(&ds, &defaults, StackOptions::default(), &collar)?;
    let labels = ds.class_labels();
    let rep = TrainReport {
        episodes: ck.episode,
        class_dependent: ck.grid.class_dependent,
        default: report(defaults.label(true), &base, labels),
        per_clip: report(
            "policy, per clip".into(),
            &extracted.per_clip_report,
            labels,
        ),
        modal: report(extracted.modal.label(true), &extracted.modal_report, labels),
        improvement_points: extracted.per_clip_report.macro_f1_percent() - base.macro_f1_percent(),
    };
    write_json(&a.out.join("report.json"), &rep)?;
    print_report(&rep.default);
    print_report(&rep.per_clip);
    print_report(&rep.modal);
    Ok(())
}

fn cmd_apply(a: ApplyArgs) -> Outcome<()> {
    let ds = input(load_manifest(&a.manifest))?;
    let params = load_params_or_default(a.params.as_deref(), &ds)?;
    let events = predict_dataset(
        &ds,
        &params,
        StackOptions {
            median: !a.no_median,
        },
    )?;
    write_events_tsv(&a.out, &events, ds.class_labels())?;
    say!(
        "wrote {} events for {} clips to {}",
        events.len(),
        ds.len(),
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Train(a) => cmd_train(a),
        Command::Apply(a) => cmd_apply(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
