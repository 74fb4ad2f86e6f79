//! Command-line pipelines: `consensus`, `synth`, `experiment` and `plot`.
//!
//! Every parameter resolves as flag, then `--config` file, then default
//! (the seed default can be overridden through `SLEEPCONS_SEED`). Each run
//! writes a `manifest.txt` that can be fed back through `--config` to
//! reproduce it.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use thiserror::Error;

use crate::consensus::{analyze, ConsensusError};
use crate::harness::{
    emit_report, format_grid, format_report, grid_search_alpha, make_folds, paired_acs_pvalue, run_arm, Arm, ArmRun,
    Dataset, ExperimentConfig, HarnessError, ReportRow, RunManifest,
};
use crate::model::{AdamConfig, TrainConfig};
use crate::records::{
    parse_features, parse_labels, write_features, write_labels, Hypnogram, MultiScoredRecord, NcPolicy, RecordsError,
};
use crate::synthgen::{
    axis_class_means, calibrate_agreement, diagonal_confusion, generate, mean_soft_agreement, GeneratorSpec,
    SynthError, DEFAULT_SEPARATION,
};
use crate::table::{fmt_f64, parse_distribution, write_atomic};
use crate::viz::{emit_hypnodensity, emit_hypnogram, HypnodensitySeries, SeriesSource, VizError};

pub const SEED_ENV: &str = "SLEEPCONS_SEED";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Manifest keys that describe a run rather than configure it.
const INFO_KEYS: [&str; 3] = ["subcommand", "version", "commit"];
const RESULT_PREFIX: &str = "result.";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => CliError::Usage(e.to_string()),
            HarnessError::Data(_) | HarnessError::Records(_) | HarnessError::Consensus(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Spec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ConsensusError> for CliError {
    fn from(e: ConsensusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<VizError> for CliError {
    fn from(e: VizError) -> Self {
        match e {
            VizError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "sleepcons",
    version,
    about = "Multi-scorer sleep staging: consensus, soft-consensus label smoothing and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scorer ranking, majority-vote consensus and soft-consensus for a label file.
    Consensus(ConsensusArgs),
    /// Generate a synthetic multi-scorer cohort.
    Synth(SynthArgs),
    /// Cross-validated training and evaluation of the requested arms.
    Experiment(ExperimentArgs),
    /// Hypnogram and hypnodensity plots for one subject.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ConsensusArgs {
    /// Label table (`subject,epoch,<scorer>...`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Which NC epochs to drop: `unanimous` or `any`.
    #[arg(long)]
    pub nc_policy: Option<String>,
    /// `key=value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub scorers: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    pub features: Option<usize>,
    /// Distance of each stage mean from the origin along its own axis.
    #[arg(long)]
    pub separation: Option<f64>,
    /// Standard deviation of the feature noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Shared confusion-diagonal mass (ignored with --target-sa).
    #[arg(long)]
    pub diagonal: Option<f64>,
    /// Calibrate the confusion diagonal to this mean Soft-Agreement.
    #[arg(long)]
    pub target_sa: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Directory holding `labels.csv` and `features.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated arms: base, ls_u, ls_sc.
    #[arg(long)]
    pub arms: Option<String>,
    /// Fixed α for the smoothing arms; without it α is grid-searched.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Grid-search α on validation macro-F1 (the default without --alpha).
    #[arg(long)]
    pub alpha_grid: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Neighbouring epochs on each side added to every feature row.
    #[arg(long)]
    pub context: Option<usize>,
    /// MC-dropout passes; adds a "w/ MC" row per arm.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Number of test subjects to plot per arm.
    #[arg(long)]
    pub plots: Option<usize>,
    /// Run folds and grid points one after another.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub subject: Option<String>,
    /// Model probability table (`subject,epoch,W,N1,N2,N3,R`) to plot against the soft-consensus.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Resolves parameters as flag > config file > default and records each
/// effective value in the manifest.
struct Settings {
    file: RunManifest,
    manifest: RunManifest,
}

impl Settings {
    fn load(subcommand: &str, config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                let parsed =
                    RunManifest::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                if let Some(sub) = parsed.get("subcommand") {
                    if sub != subcommand {
                        return Err(CliError::Usage(format!(
                            "{} configures `{sub}`, not `{subcommand}`",
                            path.display()
                        )));
                    }
                }
                parsed
            }
            None => RunManifest::default(),
        };
        let mut manifest = RunManifest::default();
        manifest.set("subcommand", subcommand);
        manifest.set("version", env!("CARGO_PKG_VERSION"));
        manifest.set("commit", option_env!("SLEEPCONS_COMMIT").unwrap_or("unknown"));
        Ok(Self { file, manifest })
    }

    fn check_keys(&self, known: &[&str]) -> Result<()> {
        for key in self.file.entries.keys() {
            if !known.contains(&key.as_str()) && !INFO_KEYS.contains(&key.as_str()) && !key.starts_with(RESULT_PREFIX) {
                return Err(CliError::Usage(format!("unknown configuration key {key:?}")));
            }
        }
        Ok(())
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("configuration key {key}: cannot parse {raw:?}"))),
        }
    }

    fn pick<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let value = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.manifest.set(key, value.to_string());
        Ok(value)
    }

    fn pick_f64(&mut self, key: &str, flag: Option<f64>, default: f64) -> Result<f64> {
        let value = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.manifest.set(key, fmt_f64(value));
        Ok(value)
    }

    fn pick_optional<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some("off") => None,
                _ => self.file_value(key)?,
            },
        };
        self.manifest
            .set(key, value.as_ref().map_or("off".to_string(), ToString::to_string));
        Ok(value)
    }

    fn require_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let value = match flag {
            Some(p) => p,
            None => self
                .file
                .get(key)
                .map(PathBuf::from)
                .ok_or_else(|| CliError::Usage(format!("missing --{key}")))?,
        };
        self.manifest.set(key, value.display());
        Ok(value)
    }

    fn seed(&mut self, flag: Option<u64>) -> Result<u64> {
        let default = match std::env::var(SEED_ENV) {
            Ok(raw) => raw
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?,
            Err(_) => 0,
        };
        self.pick("seed", flag, default)
    }

    fn result(&mut self, key: &str, value: impl ToString) {
        self.manifest.set(format!("{RESULT_PREFIX}{key}"), value.to_string());
    }

    fn write(&self, out: &Path) -> Result<()> {
        self.manifest.write(&out.join(MANIFEST_FILE)).map_err(CliError::from)
    }
}

fn save(path: &Path, contents: &str) -> Result<()> {
    write_atomic(path, contents.as_bytes()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn records_error(path: &Path, e: RecordsError) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load_labels(path: &Path) -> Result<Vec<MultiScoredRecord>> {
    parse_labels(open(path)?).map_err(|e| records_error(path, e))
}

fn nc_policy(raw: &str) -> Result<NcPolicy> {
    match raw {
        "unanimous" => Ok(NcPolicy::DropUnanimous),
        "any" => Ok(NcPolicy::DropAny),
        other => Err(CliError::Usage(format!(
            "unknown NC policy {other:?} (expected unanimous or any)"
        ))),
    }
}

// ---------------------------------------------------------------------------

pub fn cmd_consensus(args: ConsensusArgs) -> Result<()> {
    let mut s = Settings::load("consensus", args.config.as_deref())?;
    s.check_keys(&["labels", "out", "nc_policy"])?;
    let labels = s.require_path("labels", args.labels)?;
    let out = s.require_path("out", args.out)?;
    let policy = nc_policy(&s.pick("nc_policy", args.nc_policy, "unanimous".to_string())?)?;

    let records = load_labels(&labels)?;
    let mut hyp = Vec::new();
    let mut soft = Vec::new();
    let mut sa_table = String::from("subject,scorer,soft_agreement,rank\n");
    // per scorer id: (sum, count), in first-seen order
    let mut summary: Vec<(String, f64, usize)> = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let record = record.drop_unclassified(policy);
        let c = analyze(&record)?;
        c.hypnogram.write_table(&mut hyp, i == 0).expect("writing to memory");
        c.soft.write_table(&mut soft, i == 0).expect("writing to memory");
        for (rank, e) in c.ranking.entries.iter().enumerate() {
            let _ = writeln!(
                sa_table,
                "{},{},{},{}",
                record.subject_id(),
                e.scorer_id,
                fmt_f64(e.soft_agreement),
                rank + 1
            );
            match summary.iter_mut().find(|(id, _, _)| *id == e.scorer_id) {
                Some(entry) => {
                    entry.1 += e.soft_agreement;
                    entry.2 += 1;
                }
                None => summary.push((e.scorer_id.clone(), e.soft_agreement, 1)),
            }
        }
    }
    let mut sa_summary = String::from("scorer,soft_agreement,subjects\n");
    let mut total = 0.0;
    for (id, sum, n) in &summary {
        let mean = sum / *n as f64;
        total += mean;
        let _ = writeln!(sa_summary, "{id},{},{n}", fmt_f64(mean));
    }
    let average = total / summary.len().max(1) as f64;
    let _ = writeln!(sa_summary, "Average,{},{}", fmt_f64(average), records.len());

    save(&out.join("consensus.csv"), std::str::from_utf8(&hyp).expect("ascii"))?;
    save(
        &out.join("soft_consensus.csv"),
        std::str::from_utf8(&soft).expect("ascii"),
    )?;
    save(&out.join("soft_agreement.csv"), &sa_table)?;
    save(&out.join("sa_summary.csv"), &sa_summary)?;
    s.result("subjects", records.len());
    s.result("mean_soft_agreement", fmt_f64(average));
    s.write(&out)?;
    print!("{sa_summary}");
    Ok(())
}

pub fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut s = Settings::load("synth", args.config.as_deref())?;
    s.check_keys(&[
        "out",
        "subjects",
        "epochs",
        "scorers",
        "features",
        "separation",
        "noise",
        "diagonal",
        "target_sa",
        "seed",
    ])?;
    let out = s.require_path("out", args.out)?;
    let defaults = GeneratorSpec::default();
    let subjects = s.pick("subjects", args.subjects, defaults.subjects)?;
    let epochs = s.pick("epochs", args.epochs, defaults.epochs)?;
    let scorers = s.pick("scorers", args.scorers, defaults.scorers)?;
    let dim = s.pick("features", args.features, defaults.feature_dim)?;
    let separation = s.pick_f64("separation", args.separation, DEFAULT_SEPARATION)?;
    let noise = s.pick_f64("noise", args.noise, defaults.noise_scale)?;
    let diagonal = s.pick_f64("diagonal", args.diagonal, defaults.confusion[0][0][0])?;
    let target = s.pick_optional("target_sa", args.target_sa)?;
    let seed = s.seed(args.seed)?;
    if !(0.0..=1.0).contains(&diagonal) {
        return Err(CliError::Usage(format!("diagonal {diagonal} outside [0, 1]")));
    }

    let template = GeneratorSpec {
        subjects,
        epochs,
        scorers,
        confusion: vec![diagonal_confusion(diagonal); scorers],
        feature_dim: dim,
        class_means: axis_class_means(dim, separation),
        noise_scale: noise,
        seed,
        ..defaults
    };
    template.validate()?;
    let spec = match target {
        Some(t) => calibrate_agreement(t, &template)?,
        None => template,
    };
    let cohort = generate(&spec)?;
    let records: Vec<MultiScoredRecord> = cohort.iter().map(|c| c.record.clone()).collect();
    let realized = mean_soft_agreement(&records)?;
    log::info!(
        "generated {} subjects, realized mean Soft-Agreement {realized:.4}",
        cohort.len()
    );

    let mut labels = Vec::new();
    write_labels(&records, &mut labels).map_err(|e| CliError::Runtime(e.to_string()))?;
    let features: Vec<_> = cohort.iter().map(|c| c.features.clone()).collect();
    let mut feats = Vec::new();
    write_features(&features, &mut feats).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut latent = String::from("subject,epoch,stage\n");
    for c in &cohort {
        for (t, stage) in c.latent.stages.iter().enumerate() {
            let _ = writeln!(latent, "{},{t},{stage}", c.latent.subject_id);
        }
    }
    save(&out.join("labels.csv"), std::str::from_utf8(&labels).expect("ascii"))?;
    save(&out.join("features.csv"), std::str::from_utf8(&feats).expect("ascii"))?;
    save(&out.join("latent.csv"), &latent)?;
    s.result("confusion_diagonal", fmt_f64(spec.confusion[0][0][0]));
    s.result("mean_soft_agreement", fmt_f64(realized));
    s.write(&out)?;
    println!("subjects={} mean_soft_agreement={realized:.4}", cohort.len());
    Ok(())
}

fn parse_arms(raw: &str) -> Result<Vec<Arm>> {
    let mut arms = Vec::new();
    for token in raw.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let arm: Arm = token.parse().map_err(CliError::Usage)?;
        if !arms.contains(&arm) {
            arms.push(arm);
        }
    }
    if arms.is_empty() {
        return Err(CliError::Usage("no arms requested".into()));
    }
    arms.sort();
    Ok(arms)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let labels_path = dir.join("labels.csv");
    let features_path = dir.join("features.csv");
    let records = load_labels(&labels_path)?;
    let features = parse_features(open(&features_path)?).map_err(|e| records_error(&features_path, e))?;
    Ok(Dataset::new(records, features)?)
}

pub fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let mut s = Settings::load("experiment", args.config.as_deref())?;
    s.check_keys(&[
        "data",
        "out",
        "arms",
        "alpha",
        "folds",
        "val_count",
        "test_count",
        "seed",
        "hidden_width",
        "dropout_rate",
        "lr",
        "beta1",
        "beta2",
        "epsilon",
        "batch_size",
        "max_iterations",
        "patience",
        "context_radius",
        "mc_passes",
        "n_bins",
        "plots",
        "sequential",
    ])?;
    let data_dir = s.require_path("data", args.data)?;
    let out = s.require_path("out", args.out)?;
    let arms = parse_arms(&s.pick("arms", args.arms, "base,ls_u,ls_sc".to_string())?)?;
    let alpha_flag = if args.alpha_grid {
        if args.alpha.is_some() {
            return Err(CliError::Usage("--alpha and --alpha-grid are exclusive".into()));
        }
        s.file.entries.remove("alpha");
        None
    } else {
        args.alpha
    };
    let alpha = s.pick_optional("alpha", alpha_flag)?;
    let d = ExperimentConfig::default();
    let td = TrainConfig::default();
    let ad = AdamConfig::default();
    let sequential_flag = args.sequential.then_some(true);
    let config = ExperimentConfig {
        folds: s.pick("folds", args.folds, d.folds)?,
        val_count: s.pick("val_count", args.val, d.val_count)?,
        test_count: s.pick("test_count", args.test, d.test_count)?,
        seed: s.seed(args.seed)?,
        hidden_width: s.pick("hidden_width", args.hidden, d.hidden_width)?,
        dropout_rate: s.pick_f64("dropout_rate", args.dropout, d.dropout_rate)?,
        train: TrainConfig {
            adam: AdamConfig {
                lr: s.pick_f64("lr", args.lr, ad.lr)?,
                beta1: s.pick_f64("beta1", None, ad.beta1)?,
                beta2: s.pick_f64("beta2", None, ad.beta2)?,
                epsilon: s.pick_f64("epsilon", None, ad.epsilon)?,
            },
            batch_size: s.pick("batch_size", args.batch, td.batch_size)?,
            max_iterations: s.pick("max_iterations", args.max_iterations, td.max_iterations)?,
            patience: s.pick("patience", args.patience, td.patience)?,
            seed: 0,
        },
        context_radius: s.pick("context_radius", args.context, d.context_radius)?,
        mc_passes: s.pick_optional("mc_passes", args.mc)?,
        n_bins: s.pick("n_bins", args.bins, d.n_bins)?,
        parallel: !s.pick("sequential", sequential_flag, false)?,
    };
    let plots = s.pick("plots", args.plots, 2usize)?;

    let dataset = load_dataset(&data_dir)?;
    let plan = make_folds(
        &dataset.subject_ids(),
        config.folds,
        config.val_count,
        config.test_count,
        config.seed,
    )?;

    let mut runs: Vec<ArmRun> = Vec::new();
    let mut failed = Vec::new();
    for &arm in &arms {
        let outcome = match (arm, alpha) {
            (Arm::Base, _) => run_arm(&dataset, arm, 0.0, &plan, &config),
            (_, Some(a)) => run_arm(&dataset, arm, a, &plan, &config),
            (_, None) => grid_search_alpha(&dataset, arm, &arm.alpha_grid(), &plan, &config).and_then(|g| {
                save(&out.join(format!("grid_{}.csv", arm.token())), &format_grid(&g))
                    .map_err(|e| HarnessError::Data(e.to_string()))?;
                Ok(g.best().clone())
            }),
        };
        match outcome {
            Ok(run) => {
                for (fold, reason) in &run.failures {
                    log::warn!("{}: fold {fold} failed: {reason}", arm.label());
                }
                s.result(&format!("alpha.{}", arm.token()), fmt_f64(run.alpha));
                s.result(&format!("failed_folds.{}", arm.token()), run.failures.len());
                runs.push(run);
            }
            Err(e) => {
                log::error!("{} failed: {e}", arm.label());
                failed.push((arm, e));
            }
        }
    }

    if !runs.is_empty() {
        let rows: Vec<ReportRow> = runs.iter().flat_map(ReportRow::from_run).collect();
        emit_report(&rows, &out)?;
        save(&out.join("pvalues.csv"), &pvalue_table(&runs))?;
        plot_runs(&dataset, &runs, plots, &out.join("plots"))?;
        print!("{}", format_report(&rows));
    }
    s.write(&out)?;
    match failed.into_iter().next() {
        Some((_, e)) => Err(e.into()),
        None => Ok(()),
    }
}

fn pvalue_table(runs: &[ArmRun]) -> String {
    let mut out = String::from("arm_a,arm_b,metric,mean_a,mean_b,p_value\n");
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            let p = paired_acs_pvalue(&a.report, &b.report).map_or("-".to_string(), fmt_f64);
            let _ = writeln!(
                out,
                "{},{},acs,{},{},{p}",
                a.arm.label(),
                b.arm.label(),
                fmt_f64(a.report.acs_mean()),
                fmt_f64(b.report.acs_mean())
            );
        }
    }
    out
}

/// Consensus hypnogram and hypnodensity graphs for the first `count` subjects.
fn plot_runs(dataset: &Dataset, runs: &[ArmRun], count: usize, dir: &Path) -> Result<()> {
    let mut ids = dataset.subject_ids();
    ids.sort();
    for id in ids.into_iter().take(count) {
        let subject = dataset
            .subjects
            .iter()
            .find(|s| s.subject_id() == id)
            .expect("id from dataset");
        let c = &subject.consensus;
        let hyp = Hypnogram::new(id.clone(), "consensus", c.hypnogram.stages.clone());
        emit_hypnogram(&hyp, &dir.join(format!("{id}_consensus_hypnogram.svg")))?;
        let sc = HypnodensitySeries::new(
            id.clone(),
            SeriesSource::SoftConsensus,
            c.soft.epochs.clone(),
            c.soft.values.clone(),
        )?;
        emit_hypnodensity(
            &sc,
            None,
            &dir.join(format!("{id}_soft_consensus.svg")),
            &dir.join(format!("{id}_soft_consensus.csv")),
        )?;
        for run in runs {
            if let Some(probs) = run.probs(&id) {
                let series = HypnodensitySeries::new(
                    id.clone(),
                    SeriesSource::ModelProbs,
                    c.soft.epochs.clone(),
                    probs.clone(),
                )?;
                let stem = format!("{id}_{}", run.arm.token());
                emit_hypnodensity(
                    &series,
                    Some(&sc),
                    &dir.join(format!("{stem}.svg")),
                    &dir.join(format!("{stem}.csv")),
                )?;
            }
        }
    }
    Ok(())
}

pub fn cmd_plot(args: PlotArgs) -> Result<()> {
    let mut s = Settings::load("plot", args.config.as_deref())?;
    s.check_keys(&["labels", "subject", "probs", "out"])?;
    let labels = s.require_path("labels", args.labels)?;
    let out = s.require_path("out", args.out)?;
    let records = load_labels(&labels)?;
    let first = records.first().map(|r| r.subject_id().to_string()).unwrap_or_default();
    let subject = s.pick("subject", args.subject, first)?;
    let probs_path = s.pick_optional("probs", args.probs.map(|p| p.display().to_string()))?;
    let record = records
        .into_iter()
        .find(|r| r.subject_id() == subject)
        .ok_or_else(|| CliError::Data(format!("{}: no subject {subject:?}", labels.display())))?
        .drop_unclassified(NcPolicy::DropUnanimous);
    let c = analyze(&record)?;

    let hyp = Hypnogram::new(subject.clone(), "consensus", c.hypnogram.stages.clone());
    emit_hypnogram(&hyp, &out.join(format!("{subject}_consensus_hypnogram.svg")))?;
    let sc = HypnodensitySeries::new(
        subject.clone(),
        SeriesSource::SoftConsensus,
        c.soft.epochs.clone(),
        c.soft.values.clone(),
    )?;
    emit_hypnodensity(
        &sc,
        None,
        &out.join(format!("{subject}_soft_consensus.svg")),
        &out.join(format!("{subject}_soft_consensus.csv")),
    )?;
    if let Some(path) = probs_path {
        let path = PathBuf::from(path);
        let table = parse_distribution(open(&path)?).map_err(|e| records_error(&path, e))?;
        if table.subject_id != subject {
            return Err(CliError::Data(format!(
                "{}: holds subject {}, not {subject}",
                path.display(),
                table.subject_id
            )));
        }
        let values: Array2<f64> = table.values;
        let series = HypnodensitySeries::new(subject.clone(), SeriesSource::ModelProbs, table.epochs, values)?;
        let acs_value = emit_hypnodensity(
            &series,
            Some(&sc),
            &out.join(format!("{subject}_model.svg")),
            &out.join(format!("{subject}_model.csv")),
        )?;
        if let Some(v) = acs_value {
            s.result("acs", fmt_f64(v));
            println!("acs={v:.4}");
        }
    }
    s.write(&out)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Consensus(a) => cmd_consensus(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
