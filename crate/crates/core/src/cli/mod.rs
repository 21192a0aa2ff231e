//! Command-line surface: `toy`, `pretrain`, `score`, `adapt`, `eval`.
//!
//! Each command resolves its run configuration (defaults, then `--config`
//! JSON, then flags), writes the effective configuration to
//! `<out>/config.json` and then its artefacts next to it.

pub mod config;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::adaptation::{adapt_log_to_csv, cowa_adapt, jmds_quantiles_to_csv, EpochState, QUANTILE_LEVELS};
use crate::data::{generate_toy, load_features, save_features, FeatureFormat, FeatureSet};
use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy, compare_entries, compare_score_set, comparison_to_csv, compute_scores, labeler_for, AccuracyMode,
    ComparisonRow,
};
use crate::gmm::gmm_to_text;
use crate::model::{load_checkpoint, model_probability, pretrain_source, save_checkpoint, MlpModel};
use crate::scores::{score_true_labels_from_csv, scores_from_csv, scores_to_csv, ScoreVector};

use config::{load_config, require, AdaptRun, EvalRun, PretrainRun, ScoreRun, ToyRun, SNAPSHOT_FILE};
use svg::LineChart;

#[derive(Debug, Parser)]
#[command(name = "cowa", version, about = "JMDS confidence scoring and CoWA-JMDS adaptation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the shifted three-mode toy (source.csv, target.csv).
    Toy(ToyArgs),
    /// Train the classifier on a labelled source set.
    Pretrain(PretrainArgs),
    /// Score a target set with all six confidence scores.
    Score(ScoreArgs),
    /// Adapt a source model to a target set with CoWA-JMDS.
    Adapt(AdaptArgs),
    /// Evaluate a model on labelled data and/or re-rank a score file.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file; keys mirror the long flags with `_` for `-`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Ring radius, in standard deviations.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Target shift length, in standard deviations.
    #[arg(long)]
    pub offset: Option<f64>,
    /// Inward tilt of the tangential shift, in degrees.
    #[arg(long, allow_hyphen_values = true)]
    pub tilt: Option<f64>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub covariance_scale: Option<f64>,
    /// Classes kept in the target (partial set), e.g. `0,2,4`.
    #[arg(long, value_delimiter = ',')]
    pub target_classes: Option<Vec<usize>>,
    /// Size of a planted unknown cluster (open set).
    #[arg(long)]
    pub unknown_count: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub unknown_mean: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Labelled source feature CSV.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub extractor_lr: Option<f64>,
    #[arg(long)]
    pub classifier_lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GmmArgs {
    /// Absolute covariance regulariser (overrides --reg-scale).
    #[arg(long)]
    pub reg_epsilon: Option<f64>,
    /// Regulariser as a fraction of the mean feature variance.
    #[arg(long)]
    pub reg_scale: Option<f64>,
    /// full | diagonal
    #[arg(long, value_parser = enum_arg::<crate::gmm::CovarianceKind>)]
    pub covariance: Option<crate::gmm::CovarianceKind>,
    #[arg(long)]
    pub em_iterations: Option<usize>,
    /// pre_activation | hidden
    #[arg(long, value_parser = enum_arg::<crate::gmm::FeatureLayer>)]
    pub gmm_layer: Option<crate::gmm::FeatureLayer>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[command(flatten)]
    pub gmm: GmmArgs,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// closed | open | partial
    #[arg(long, value_parser = enum_arg::<crate::adaptation::Scenario>)]
    pub scenario: Option<crate::adaptation::Scenario>,
    /// Beta(alpha, alpha) parameter of weight Mixup.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Partial-set class threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub extractor_lr: Option<f64>,
    #[arg(long)]
    pub classifier_lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long, conflicts_with = "no_weight_mixup")]
    pub weight_mixup: bool,
    #[arg(long)]
    pub no_weight_mixup: bool,
    /// per_batch | per_sample
    #[arg(long, value_parser = enum_arg::<crate::adaptation::GammaMode>)]
    pub gamma_mode: Option<crate::adaptation::GammaMode>,
    /// Pin every Mixup coefficient to this value.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// jmds | lpg | mppl | uniform
    #[arg(long, value_parser = enum_arg::<crate::adaptation::Weighting>)]
    pub weighting: Option<crate::adaptation::Weighting>,
    /// overall | per_class_mean
    #[arg(long, value_parser = enum_arg::<AccuracyMode>)]
    pub accuracy_mode: Option<AccuracyMode>,
    #[command(flatten)]
    pub gmm: GmmArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model checkpoint; with --data reports accuracy.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Labelled feature CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Score CSV with a true_label column; recomputes curves and AURCs.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

/// Parses a lowercase enum name through its serde representation.
fn enum_arg<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = v; } )*
    };
}

macro_rules! overlay_opt {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = Some(v); } )*
    };
}

fn resolve<C: DeserializeOwned + Default>(common: &CommonArgs) -> Result<C> {
    load_config(common.config.as_deref())
}

fn overlay_common(seed: &mut u64, out: &mut PathBuf, common: &CommonArgs) {
    if let Some(s) = common.seed {
        *seed = s;
    }
    if let Some(o) = &common.out {
        *out = o.clone();
    }
}

/// Collects written files so the caller can report them.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents)?;
        self.written.push(path);
        Ok(())
    }

    fn snapshot<C: Serialize>(&mut self, cfg: &C) -> Result<()> {
        let mut json = serde_json::to_string_pretty(cfg)?;
        json.push('\n');
        self.text(SNAPSHOT_FILE, &json)
    }
}

pub fn cmd_toy(args: &ToyArgs) -> Result<Vec<PathBuf>> {
    let mut cfg: ToyRun = resolve(&args.common)?;
    overlay_common(&mut cfg.seed, &mut cfg.out, &args.common);
    overlay!(cfg, args; classes, dim, radius, offset, tilt, per_class, covariance_scale, unknown_count);
    overlay_opt!(cfg, args; target_classes, unknown_mean);
    let toy = cfg.toy_config()?;
    let (source, target) = generate_toy::<f64>(&toy)?;
    let mut out = Outputs::create(&cfg.out)?;
    out.snapshot(&cfg)?;
    save_features(&source, &out.path("source.csv"))?;
    out.written.push(out.path("source.csv"));
    save_features(&target, &out.path("target.csv"))?;
    out.written.push(out.path("target.csv"));
    Ok(out.written)
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<Vec<PathBuf>> {
    let mut cfg: PretrainRun = resolve(&args.common)?;
    overlay_common(&mut cfg.seed, &mut cfg.out, &args.common);
    overlay!(cfg, args; hidden, lr, momentum, weight_decay, batch_size, epochs, label_smoothing);
    overlay_opt!(cfg, args; source, extractor_lr, classifier_lr);
    let source: FeatureSet<f64> = load_features(require(&cfg.source, "source")?, FeatureFormat::Csv)?;
    if source.labels().is_none() {
        return Err(Error::MissingLabels("pretraining needs a labelled source set".into()));
    }
    let train = cfg.train_config();
    train.validate()?;
    let mut model = MlpModel::init(source.dim(), cfg.hidden, source.class_count(), cfg.seed)?;
    let log = pretrain_source(&mut model, &source, &train)?;
    let mut out = Outputs::create(&cfg.out)?;
    out.snapshot(&cfg)?;
    save_checkpoint(&model, &out.path("model.ckpt"))?;
    out.written.push(out.path("model.ckpt"));
    out.text("train_log.csv", &log.to_csv())?;
    if let Some(last) = log.last() {
        log::info!("source accuracy after {} epochs: {:.4}", last.epoch + 1, last.accuracy);
    }
    Ok(out.written)
}

/// Loads a feature file for a model: checks the input width and widens the
/// class count to the model's when the file's labels do not cover it.
fn load_for_model(path: &Path, model: &MlpModel<f64>) -> Result<FeatureSet<f64>> {
    let set: FeatureSet<f64> = load_features(path, FeatureFormat::Csv)?;
    if set.dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "{} has {} features, model expects {}",
            path.display(),
            set.dim(),
            model.input_dim()
        )));
    }
    let k = set.class_count().max(model.class_count());
    set.with_class_count(k)
}

fn curve_chart(title: &str, rows: &[ComparisonRow<f64>]) -> LineChart {
    let mut chart = LineChart::new(title, "coverage", "risk");
    chart.x_range = Some((0.0, 1.0));
    for r in rows {
        let pts = r.curve.points.iter().map(|&(c, k)| (c, k)).collect();
        chart = chart.with_series(&format!("{} + {} ({:.4})", r.pseudo_labeler, r.score, r.aurc()), pts);
    }
    chart
}

fn write_comparison(out: &mut Outputs, rows: &[ComparisonRow<f64>], title: &str) -> Result<()> {
    out.text("comparison.csv", &comparison_to_csv(rows))?;
    for r in rows {
        out.text(&format!("curve_{}.csv", r.score), &r.curve.to_csv())?;
    }
    out.text("rc_curves.svg", &curve_chart(title, rows).render())
}

pub fn cmd_score(args: &ScoreArgs) -> Result<Vec<PathBuf>> {
    let mut cfg: ScoreRun = resolve(&args.common)?;
    overlay_common(&mut cfg.seed, &mut cfg.out, &args.common);
    overlay!(cfg, args.gmm; reg_scale, covariance, em_iterations, gmm_layer);
    overlay_opt!(cfg, args.gmm; reg_epsilon);
    overlay_opt!(cfg, args; model, target);
    let gmm_cfg = cfg.gmm_config()?;
    let model: MlpModel<f64> = load_checkpoint(require(&cfg.model, "model")?)?;
    let target = load_for_model(require(&cfg.target, "target")?, &model)?;
    let set = compute_scores(&model, target.features(), &gmm_cfg)?;
    let vectors: Vec<ScoreVector<f64>> = set.entries.iter().map(|(_, s)| s.clone()).collect();

    let mut out = Outputs::create(&cfg.out)?;
    out.snapshot(&cfg)?;
    out.text("scores.csv", &scores_to_csv(&vectors, target.labels()))?;
    out.text("gmm.txt", &gmm_to_text(&set.gmm))?;
    match target.labels() {
        Some(truth) => {
            let rows = compare_score_set(&set, truth)?;
            write_comparison(&mut out, &rows, "Risk-coverage curves")?;
        }
        None => log::warn!("target has no labels; AURC and curves skipped"),
    }
    Ok(out.written)
}

fn quantile_chart(log: &[EpochState<f64>]) -> LineChart {
    let mut chart = LineChart::new("JMDS quantiles per epoch", "quantile level", "JMDS");
    chart.x_range = Some((0.0, 1.0));
    chart.y_range = Some((0.0, 1.0));
    let last = log.len().saturating_sub(1);
    let picks: Vec<usize> = {
        let mut p: Vec<usize> = (0..5).map(|i| i * last / 4).collect();
        p.dedup();
        p
    };
    for &e in &picks {
        let st = &log[e];
        let pts = QUANTILE_LEVELS.iter().map(|&q| (q, st.jmds.quantile(q))).collect();
        chart = chart.with_series(&format!("epoch {}", st.epoch), pts);
    }
    chart
}

pub fn cmd_adapt(args: &AdaptArgs) -> Result<Vec<PathBuf>> {
    let mut cfg: AdaptRun = resolve(&args.common)?;
    overlay_common(&mut cfg.seed, &mut cfg.out, &args.common);
    overlay!(cfg, args; scenario, alpha, tau, epochs, batch_size, lr, momentum, weight_decay, gamma_mode,
        weighting, accuracy_mode);
    overlay_opt!(cfg, args; model, target, extractor_lr, classifier_lr, gamma);
    overlay!(cfg, args.gmm; reg_scale, covariance, em_iterations, gmm_layer);
    overlay_opt!(cfg, args.gmm; reg_epsilon);
    if args.weight_mixup {
        cfg.weight_mixup = Some(true);
    }
    if args.no_weight_mixup {
        cfg.weight_mixup = Some(false);
    }
    let adapt_cfg = cfg.adapt_config()?;
    let model: MlpModel<f64> = load_checkpoint(require(&cfg.model, "model")?)?;
    let target = load_for_model(require(&cfg.target, "target")?, &model)?;
    let outcome = cowa_adapt(model, &target, &adapt_cfg)?;

    let mut out = Outputs::create(&cfg.out)?;
    out.snapshot(&cfg)?;
    save_checkpoint(&outcome.model, &out.path("model.ckpt"))?;
    out.written.push(out.path("model.ckpt"));
    out.text("adapt_log.csv", &adapt_log_to_csv(&outcome.log))?;
    out.text("jmds_quantiles.csv", &jmds_quantiles_to_csv(&outcome.log))?;
    out.text("jmds_quantiles.svg", &quantile_chart(&outcome.log).render())?;
    if target.labels().is_some() {
        let pts = outcome
            .log
            .iter()
            .filter_map(|st| st.metrics.accuracy.map(|a| (st.epoch as f64, a)))
            .collect();
        let chart = LineChart::new("Target accuracy", "epoch", "accuracy").with_series("accuracy", pts);
        out.text("accuracy.svg", &chart.render())?;
    }
    Ok(out.written)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<PathBuf>> {
    let mut cfg: EvalRun = resolve(&args.common)?;
    overlay_common(&mut cfg.seed, &mut cfg.out, &args.common);
    overlay_opt!(cfg, args; model, data, scores);
    if cfg.scores.is_none() && (cfg.model.is_none() || cfg.data.is_none()) {
        return Err(Error::Config("eval needs --scores, or --model together with --data".into()));
    }
    let mut out = Outputs::create(&cfg.out)?;
    out.snapshot(&cfg)?;
    if let (Some(model_path), Some(data_path)) = (&cfg.model, &cfg.data) {
        let model: MlpModel<f64> = load_checkpoint(model_path)?;
        let data = load_for_model(data_path, &model)?;
        let truth = data
            .labels()
            .ok_or_else(|| Error::MissingLabels(format!("{} has no label column", data_path.display())))?;
        let pred = model_probability(&model.forward(data.features())?.logits).argmax();
        let overall = accuracy(&pred, truth, AccuracyMode::Overall)?;
        let per_class = accuracy(&pred, truth, AccuracyMode::PerClassMean)?;
        out.text(
            "metrics.csv",
            &format!("metric,value\nsamples,{}\naccuracy,{overall}\nper_class_mean_accuracy,{per_class}\n", truth.len()),
        )?;
    }
    if let Some(scores_path) = &cfg.scores {
        let text = std::fs::read_to_string(scores_path)?;
        let truth = score_true_labels_from_csv(&text)?
            .ok_or_else(|| Error::MissingLabels(format!("{} has no true_label column", scores_path.display())))?;
        let entries: Vec<_> =
            scores_from_csv::<f64>(&text)?.into_iter().map(|s| (labeler_for(s.kind()), s)).collect();
        let rows = compare_entries(&entries, &truth)?;
        write_comparison(&mut out, &rows, "Risk-coverage curves")?;
    }
    Ok(out.written)
}

pub fn dispatch(cli: &Cli) -> Result<Vec<PathBuf>> {
    match &cli.command {
        Command::Toy(a) => cmd_toy(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Score(a) => cmd_score(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

/// Single-line JSON error report, e.g. `{"error":"config","message":"..."}`.
pub fn error_line(kind: &str, message: &str) -> String {
    let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code; errors are reported on stderr as one JSON line.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", error_line("usage", first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
