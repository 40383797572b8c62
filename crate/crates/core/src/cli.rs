//! The `gauss-ad` command-line front end.
//!
//! Every failure is reported as one line on stderr,
//! `gauss-ad: error[<kind>]: <message>`, and the process exits with the
//! kind's code (1 usage, 2 data, 3 numeric).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, ErrorKind, Result};
use crate::eval::{fit_levels, run_kfold, score_metrics, select_levels, KFoldConfig};
use crate::feature_store::{load_dataset, Label, LabelTable, Pool};
use crate::gaussian::Shrinkage;
use crate::io::{atomic_write, write_json};
use crate::model_store::{load_models, save_models, store_working_point, ModelIndex, FORMAT_VERSION};
use crate::par::{init_thread_pool, Exec};
use crate::scoring::{score_table, FitOptions, Metric, ScoreTable};
use crate::spectral::Compression;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "GAUSS_AD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gauss-ad", version, about = "Gaussian anomaly detection on deep features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model per level on the normal train pool.
    Fit(FitCmd),
    /// Score samples with a fitted model directory and write a scores CSV.
    Score(ScoreCmd),
    /// Derive a level's decision threshold from a target false positive rate.
    Threshold(ThresholdCmd),
    /// Compute AUROC (and optionally FPR/TPR at a working point) for a scores CSV.
    Evaluate(EvaluateCmd),
    /// Run k-fold cross-validation over the train pool and report AUROC.
    Kfold(KfoldCmd),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Distance used for scoring: mahalanobis, sed or l2.
    #[arg(long, default_value = "mahalanobis", value_parser = parse_metric)]
    pub metric: Metric,
    /// Covariance shrinkage: auto (Ledoit-Wolf), none, or fixed:<rho> with rho in [0, 1].
    #[arg(long, default_value = "auto", value_parser = parse_shrinkage)]
    pub shrinkage: Shrinkage,
    /// Feature compression: none, pca:<q> or npca:<q> with q in (0, 1).
    #[arg(long, default_value = "none", value_parser = parse_compression)]
    pub compression: Compression,
    /// Comma-separated levels to use (default: every level in the manifest).
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<String>>,
    /// Floor applied to per-feature standard deviations for the sed metric.
    #[arg(long, value_name = "EPS")]
    pub sed_eps: Option<f64>,
}

impl FitArgs {
    fn options(&self) -> Result<FitOptions> {
        if let Some(eps) = self.sed_eps {
            if self.metric != Metric::Sed {
                return Err(Error::InvalidArgument("--sed-eps only applies to --metric sed".into()));
            }
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidArgument(format!("--sed-eps must be positive, got {eps}")));
            }
        }
        Ok(FitOptions {
            metric: self.metric,
            shrinkage: self.shrinkage,
            compression: self.compression,
            sed_eps: self.sed_eps,
        })
    }
}

#[derive(Debug, Args)]
pub struct FitCmd {
    /// Dataset manifest (manifest.json).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output model directory.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct ScoreCmd {
    /// Dataset manifest (manifest.json).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fitted model directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Which samples to score.
    #[arg(long, value_enum, default_value = "test")]
    pub pool: PoolArg,
}

#[derive(Debug, Args)]
pub struct ThresholdCmd {
    /// Fitted model directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Target false positive rate: a fraction (0.003) or a percentage (0.3%).
    #[arg(long, value_parser = parse_fpr)]
    pub fpr: f64,
    /// Level to threshold; may be omitted for single-level models. "sum" is refused.
    #[arg(long)]
    pub level: Option<String>,
    /// Request a threshold on summed scores (always refused).
    #[arg(long, conflicts_with = "level")]
    pub sum: bool,
    /// Also write the working point JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateCmd {
    /// Scores CSV produced by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Labels CSV (sample_id,label,category).
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub labels: Option<PathBuf>,
    /// Dataset manifest whose labels to use.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Score column to evaluate.
    #[arg(long, default_value = "sum")]
    pub column: String,
    /// Target false positive rate for a working point (needs --model).
    #[arg(long, value_parser = parse_fpr, requires = "model")]
    pub fpr: Option<f64>,
    /// Model directory used to derive the working point threshold.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KfoldCmd {
    /// Dataset manifest (manifest.json).
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Seed for the fold assignment.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Evaluate a per-level working point at this false positive rate (single level only).
    #[arg(long, value_parser = parse_fpr)]
    pub fpr: Option<f64>,
    /// Write the JSON report here.
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    /// Write the text report here (default: stdout).
    #[arg(long)]
    pub out_txt: Option<PathBuf>,
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_compression(s: &str) -> std::result::Result<Compression, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn parse_shrinkage(s: &str) -> std::result::Result<Shrinkage, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "auto" => Ok(Shrinkage::Auto),
        "none" => Ok(Shrinkage::None),
        other => {
            let rho = other
                .strip_prefix("fixed:")
                .ok_or_else(|| format!("expected auto, none or fixed:<rho>, got {s:?}"))?;
            let rho: f64 = rho.parse().map_err(|_| format!("invalid shrinkage intensity {rho:?}"))?;
            if !(0.0..=1.0).contains(&rho) {
                return Err(format!("shrinkage intensity must lie in [0, 1], got {rho}"));
            }
            Ok(Shrinkage::Fixed(rho))
        }
    }
}

/// Parses a false positive rate. Bare numbers are fractions; a `%` suffix
/// divides by 100.
pub fn parse_fpr(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let (num, scale) = match s.strip_suffix('%') {
        Some(n) => (n.trim(), 100.0),
        None => (s, 1.0),
    };
    let v: f64 = num.parse().map_err(|_| format!("invalid false positive rate {s:?}"))?;
    let fpr = v / scale;
    if !(fpr > 0.0 && fpr < 1.0) {
        return Err(format!("false positive rate must lie in (0, 1), got {s}"));
    }
    Ok(fpr)
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => atomic_write(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

fn json_string<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn cmd_fit(cmd: &FitCmd, exec: Exec) -> Result<()> {
    let opts = cmd.fit.options()?;
    let dataset = load_dataset(&cmd.manifest)?;
    let levels = select_levels(&dataset, cmd.fit.levels.as_deref())?;
    let rows = dataset.normal_train_rows()?;
    let scorers = fit_levels(&dataset, &levels, &rows, &opts, exec)?;
    let index = ModelIndex {
        format_version: FORMAT_VERSION,
        model_id: dataset.manifest.model_id.clone(),
        metric: opts.metric,
        shrinkage: opts.shrinkage,
        compression: opts.compression,
        sed_eps: opts.sed_eps,
        levels,
    };
    save_models(&cmd.model, &index, &scorers)
}

fn cmd_score(cmd: &ScoreCmd, exec: Exec) -> Result<()> {
    let models = load_models(&cmd.model)?;
    let dataset = load_dataset(&cmd.manifest)?;
    let rows = match cmd.pool {
        PoolArg::Train => dataset.pool_rows(Pool::Train)?,
        PoolArg::Test => dataset.pool_rows(Pool::Test)?,
        PoolArg::All => (0..dataset.sample_ids().len()).collect(),
    };
    if rows.is_empty() {
        return Err(Error::Empty);
    }
    let table = score_table(&models.scorers, &dataset.levels, &rows, exec)?;
    emit(cmd.out.as_deref(), &table.to_csv_string())
}

fn cmd_threshold(cmd: &ThresholdCmd) -> Result<()> {
    let models = load_models(&cmd.model)?;
    let level = match (&cmd.level, cmd.sum) {
        (_, true) => return Err(Error::SumModeThreshold),
        (Some(l), _) if l == "sum" => return Err(Error::SumModeThreshold),
        (Some(l), _) => l.clone(),
        (None, false) if models.scorers.len() == 1 => models.scorers[0].level_name().to_string(),
        (None, false) => return Err(Error::SumModeThreshold),
    };
    let (scorer, _) = models.scorer(&level).ok_or_else(|| Error::MissingLevel(level.clone()))?;
    let wp = scorer.working_point(cmd.fpr)?;
    store_working_point(&cmd.model, &level, wp)?;
    if let Some(out) = &cmd.out {
        write_json(out, &wp)?;
    }
    emit(None, &json_string(&wp))
}

fn cmd_evaluate(cmd: &EvaluateCmd) -> Result<()> {
    let table = ScoreTable::read_csv(&cmd.scores)?;
    let labels = match (&cmd.labels, &cmd.manifest) {
        (Some(p), _) => LabelTable::read_csv(p)?,
        (None, Some(m)) => load_dataset(m)?.labels,
        (None, None) => return Err(Error::InvalidArgument("either --labels or --manifest is required".into())),
    };
    let scores = table
        .column(&cmd.column)
        .ok_or_else(|| Error::MissingLevel(cmd.column.clone()))?;
    let y: Vec<Label> = table
        .sample_ids
        .iter()
        .map(|id| labels.label(id).ok_or_else(|| Error::MissingLabel(id.clone())))
        .collect::<Result<_>>()?;
    let threshold = match (cmd.fpr, &cmd.model) {
        (Some(_), _) if cmd.column == "sum" => return Err(Error::SumModeThreshold),
        (Some(fpr), Some(dir)) => {
            let models = load_models(dir)?;
            let (scorer, _) = models
                .scorer(&cmd.column)
                .ok_or_else(|| Error::MissingLevel(cmd.column.clone()))?;
            Some((fpr, scorer.working_point(fpr)?.threshold))
        }
        (Some(_), None) => return Err(Error::InvalidArgument("--fpr needs --model".into())),
        (None, _) => None,
    };
    let metrics = score_metrics(&cmd.column, scores, &y, threshold)?;
    let text = json_string(&metrics);
    if let Some(out) = &cmd.out {
        atomic_write(out, text.as_bytes())?;
    }
    emit(None, &text)
}

fn cmd_kfold(cmd: &KfoldCmd, exec: Exec) -> Result<()> {
    let dataset = load_dataset(&cmd.manifest)?;
    let cfg = KFoldConfig {
        fit: cmd.fit.options()?,
        levels: cmd.fit.levels.clone(),
        k: cmd.k,
        seed: cmd.seed,
        target_fpr: cmd.fpr,
    };
    let report = run_kfold(&dataset, &cfg, exec)?;
    if let Some(p) = &cmd.out_json {
        write_json(p, &report)?;
    }
    emit(cmd.out_txt.as_deref(), &report.to_text())
}

/// Runs a parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    init_thread_pool(threads_from_env()?);
    let exec = Exec::default();
    match &cli.command {
        Command::Fit(c) => cmd_fit(c, exec),
        Command::Score(c) => cmd_score(c, exec),
        Command::Threshold(c) => cmd_threshold(c),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::Kfold(c) => cmd_kfold(c, exec),
    }
}

fn report(kind: ErrorKind, message: &str) -> i32 {
    let line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("gauss-ad: error[{}]: {line}", kind.as_str());
    kind.exit_code()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            return report(ErrorKind::Usage, first.trim_start_matches("error: "));
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => report(e.kind(), &e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn fpr_accepts_fractions_and_percentages() {
        assert_eq!(parse_fpr("0.003").unwrap(), 0.003);
        assert!((parse_fpr("0.3%").unwrap() - 0.003).abs() < 1e-18);
        assert!((parse_fpr(" 5 %").unwrap() - 0.05).abs() < 1e-18);
        for bad in ["0", "1", "100%", "-0.1", "abc", "%", "nan"] {
            assert!(parse_fpr(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn shrinkage_modes_parse() {
        assert_eq!(parse_shrinkage("auto").unwrap(), Shrinkage::Auto);
        assert_eq!(parse_shrinkage("NONE").unwrap(), Shrinkage::None);
        assert_eq!(parse_shrinkage("fixed:0.25").unwrap(), Shrinkage::Fixed(0.25));
        assert!(parse_shrinkage("fixed:1.5").is_err());
        assert!(parse_shrinkage("ledoit").is_err());
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(main_with_args(["gauss-ad", "fit", "--bogus"]), 1);
        assert_eq!(main_with_args(["gauss-ad"]), 1);
        assert_eq!(main_with_args(["gauss-ad", "--help"]), 0);
    }

    #[test]
    fn sed_eps_requires_sed() {
        let args = FitArgs {
            metric: Metric::Mahalanobis,
            shrinkage: Shrinkage::Auto,
            compression: Compression::None,
            levels: None,
            sed_eps: Some(1e-3),
        };
        assert_eq!(args.options().unwrap_err().kind(), ErrorKind::Usage);
    }
}
