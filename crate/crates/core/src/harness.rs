//! Subject-level cross-validation, the three training arms, α grid search
//! and report emission.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::consensus::{analyze, ConsensusError, SubjectConsensus};
use crate::metrics::{
    aggregate, evaluate_subject, paired_test, MetricsError, MetricsReport, SubjectMetrics, DEFAULT_BINS,
};
use crate::model::{
    init_model, train, with_context, ModelError, ReferenceModel, TrainConfig, TrainHistory, TrainingSet, ValidationSet,
};
use crate::records::{FeatureMatrix, MultiScoredRecord, NcPolicy, RecordsError, NUM_CLASSES};
use crate::smoothing::{sc_smooth, uniform_smooth, SmoothedTarget, SmoothingError, SmoothingMode};
use crate::table::{fmt_f64, write_atomic};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("every fold failed for {arm}: {reasons}")]
    AllFoldsFailed { arm: String, reasons: String },
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Base,
    LsUniform,
    LsSoftConsensus,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Base, Arm::LsUniform, Arm::LsSoftConsensus];

    pub fn token(self) -> &'static str {
        match self {
            Arm::Base => "base",
            Arm::LsUniform => "ls_u",
            Arm::LsSoftConsensus => "ls_sc",
        }
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Arm::Base => "base",
            Arm::LsUniform => "base+LS_U",
            Arm::LsSoftConsensus => "base+LS_SC",
        }
    }

    pub fn smoothing(self) -> SmoothingMode {
        match self {
            Arm::Base => SmoothingMode::None,
            Arm::LsUniform => SmoothingMode::Uniform,
            Arm::LsSoftConsensus => SmoothingMode::SoftConsensus,
        }
    }

    /// Largest admissible α.
    pub fn max_alpha(self) -> f64 {
        match self {
            Arm::Base => 0.0,
            Arm::LsUniform => 0.5,
            Arm::LsSoftConsensus => 1.0,
        }
    }

    /// α values searched for this arm, in steps of 0.1.
    pub fn alpha_grid(self) -> Vec<f64> {
        let steps = (self.max_alpha() * 10.0).round() as usize;
        (1..=steps).map(|i| i as f64 / 10.0).collect()
    }

    pub fn check_alpha(self, alpha: f64) -> Result<()> {
        match self {
            Arm::Base => Ok(()),
            _ if alpha > 0.0 && alpha <= self.max_alpha() => Ok(()),
            _ => Err(HarnessError::Config(format!(
                "{} needs alpha in (0, {}], got {alpha}",
                self.token(),
                self.max_alpha()
            ))),
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "base" => Ok(Arm::Base),
            "ls_u" | "base+LS_U" => Ok(Arm::LsUniform),
            "ls_sc" | "base+LS_SC" => Ok(Arm::LsSoftConsensus),
            other => Err(format!("unknown arm {other:?} (expected base, ls_u or ls_sc)")),
        }
    }
}

/// Everything except the arm and α needed to run one arm over a fold plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub seed: u64,
    pub hidden_width: usize,
    pub dropout_rate: f64,
    pub train: TrainConfig,
    /// Neighbouring epochs concatenated on each side of every feature row.
    pub context_radius: usize,
    /// MC-dropout passes for the extra "w/ MC" evaluation; `None` disables it.
    pub mc_passes: Option<usize>,
    pub n_bins: usize,
    /// Run folds and grid points on the rayon pool.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            val_count: 4,
            test_count: 8,
            seed: 0,
            hidden_width: 32,
            dropout_rate: 0.3,
            train: TrainConfig::default(),
            context_radius: 0,
            mc_passes: None,
            n_bins: DEFAULT_BINS,
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    /// Flat key/value view used by run manifests.
    pub fn entries(&self) -> Vec<(String, String)> {
        let t = &self.train;
        vec![
            ("folds".into(), self.folds.to_string()),
            ("val_count".into(), self.val_count.to_string()),
            ("test_count".into(), self.test_count.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("hidden_width".into(), self.hidden_width.to_string()),
            ("dropout_rate".into(), fmt_f64(self.dropout_rate)),
            ("lr".into(), fmt_f64(t.adam.lr)),
            ("beta1".into(), fmt_f64(t.adam.beta1)),
            ("beta2".into(), fmt_f64(t.adam.beta2)),
            ("epsilon".into(), fmt_f64(t.adam.epsilon)),
            ("batch_size".into(), t.batch_size.to_string()),
            ("max_iterations".into(), t.max_iterations.to_string()),
            ("patience".into(), t.patience.to_string()),
            ("context_radius".into(), self.context_radius.to_string()),
            (
                "mc_passes".into(),
                self.mc_passes.map_or("off".into(), |p| p.to_string()),
            ),
            ("n_bins".into(), self.n_bins.to_string()),
        ]
    }
}

/// SplitMix64 finaliser, used to derive independent seeds from a base seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    mix(mix(mix(base) ^ tag) ^ index)
}

const TAG_FOLDS: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_MC: u64 = 4;

// ---------------------------------------------------------------------------
// Dataset

/// One subject with its retained-epoch features and consensus artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub record: MultiScoredRecord,
    pub features: FeatureMatrix,
    pub consensus: SubjectConsensus,
}

impl SubjectData {
    pub fn subject_id(&self) -> &str {
        self.record.subject_id()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<SubjectData>,
}

impl Dataset {
    /// Pairs records with feature matrices by subject, masks unanimous-NC
    /// epochs and computes each subject's consensus from its own labels.
    pub fn new(records: Vec<MultiScoredRecord>, features: Vec<FeatureMatrix>) -> Result<Self> {
        let mut by_id: HashMap<String, FeatureMatrix> =
            features.into_iter().map(|f| (f.subject_id.clone(), f)).collect();
        let mut subjects = Vec::with_capacity(records.len());
        for record in records {
            let record = record.drop_unclassified(NcPolicy::DropUnanimous);
            let features = by_id
                .remove(record.subject_id())
                .ok_or_else(|| HarnessError::Data(format!("no features for subject {}", record.subject_id())))?;
            features.check_alignment(&record)?;
            let consensus = analyze(&record)?;
            subjects.push(SubjectData {
                record,
                features,
                consensus,
            });
        }
        if let Some(extra) = by_id.keys().min() {
            return Err(HarnessError::Data(format!("features for unknown subject {extra}")));
        }
        let dims: HashSet<usize> = subjects.iter().map(|s| s.features.dim()).collect();
        if dims.len() > 1 {
            return Err(HarnessError::Data(format!("inconsistent feature dimensions {dims:?}")));
        }
        Ok(Self { subjects })
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id().to_string()).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.subjects.first().map_or(0, |s| s.features.dim())
    }

    fn index(&self) -> HashMap<&str, &SubjectData> {
        self.subjects.iter().map(|s| (s.subject_id(), s)).collect()
    }
}

// ---------------------------------------------------------------------------
// Folds

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Checks role disjointness within each fold and, for k ≥ 2, that the
    /// test sets partition `subjects`.
    pub fn check(&self, subjects: &[String]) -> Result<()> {
        let all: HashSet<&str> = subjects.iter().map(String::as_str).collect();
        for (i, f) in self.folds.iter().enumerate() {
            let mut seen = HashSet::new();
            for id in f.train.iter().chain(&f.val).chain(&f.test) {
                if !all.contains(id.as_str()) || !seen.insert(id.as_str()) {
                    return Err(HarnessError::Config(format!(
                        "fold {i}: subject {id} repeated or unknown"
                    )));
                }
            }
        }
        if self.k >= 2 {
            let mut tested: Vec<&str> = self
                .folds
                .iter()
                .flat_map(|f| f.test.iter().map(String::as_str))
                .collect();
            tested.sort_unstable();
            let mut expected: Vec<&str> = all.into_iter().collect();
            expected.sort_unstable();
            if tested != expected {
                return Err(HarnessError::Config(
                    "fold test sets do not partition the cohort".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Shuffled subject-level folds.
///
/// With `k ≥ 2` the test sets partition the cohort: each fold gets
/// `test_count` subjects and the remaining `n - k·test_count` are dealt out
/// one per fold in turn. `k = 1` is a single split with `test_count` test
/// subjects. Validation subjects come from each fold's non-test remainder.
pub fn make_folds(subjects: &[String], k: usize, val_count: usize, test_count: usize, seed: u64) -> Result<FoldPlan> {
    let n = subjects.len();
    let unique: HashSet<&String> = subjects.iter().collect();
    if unique.len() != n {
        return Err(HarnessError::Config("duplicate subject ids".into()));
    }
    if k == 0 || test_count == 0 || k * test_count > n {
        return Err(HarnessError::Config(format!(
            "cannot form {k} folds of {test_count} test subjects from {n} subjects"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_FOLDS, 0));
    let mut order: Vec<String> = subjects.to_vec();
    order.shuffle(&mut rng);

    let mut tests: Vec<Vec<String>> = vec![Vec::new(); k];
    if k == 1 {
        tests[0] = order[..test_count].to_vec();
    } else {
        let mut sizes = vec![test_count; k];
        for i in 0..n - k * test_count {
            sizes[i % k] += 1;
        }
        let mut start = 0;
        for (f, size) in sizes.into_iter().enumerate() {
            tests[f] = order[start..start + size].to_vec();
            start += size;
        }
    }
    let largest = tests.iter().map(Vec::len).max().unwrap_or(0);
    if val_count + largest >= n {
        return Err(HarnessError::Config(format!(
            "{val_count} validation + {largest} test subjects leave no training subjects out of {n}"
        )));
    }

    let folds = tests
        .into_iter()
        .map(|test| {
            let test_set: HashSet<&String> = test.iter().collect();
            let mut rest: Vec<String> = order.iter().filter(|s| !test_set.contains(s)).cloned().collect();
            rest.shuffle(&mut rng);
            let train = rest.split_off(val_count);
            Fold { train, val: rest, test }
        })
        .collect();
    let plan = FoldPlan { k, folds };
    plan.check(subjects)?;
    Ok(plan)
}

// ---------------------------------------------------------------------------
// Targets and features

/// Training target for one epoch under `arm`.
pub fn arm_target(arm: Arm, alpha: f64, consensus_class: usize, sc_row: &[f64]) -> Result<SmoothedTarget> {
    let mut onehot = [0.0; NUM_CLASSES];
    onehot[consensus_class] = 1.0;
    Ok(match arm {
        Arm::Base => SmoothedTarget::one_hot(consensus_class),
        Arm::LsUniform => uniform_smooth(&onehot, alpha)?,
        Arm::LsSoftConsensus => sc_smooth(&onehot, alpha, sc_row)?,
    })
}

/// Per-subject target matrix for `arm`.
pub fn subject_targets(subject: &SubjectData, arm: Arm, alpha: f64) -> Result<Array2<f64>> {
    let labels = subject.consensus.hypnogram.class_indices();
    let sc = &subject.consensus.soft.values;
    let mut out = Array2::zeros((labels.len(), NUM_CLASSES));
    for (t, &c) in labels.iter().enumerate() {
        let row = sc.row(t);
        let target = arm_target(arm, alpha, c, row.as_slice().expect("standard layout"))?;
        out.row_mut(t).assign(&Array1::from(target.values.to_vec()));
    }
    Ok(out)
}

/// Column-wise standardisation fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty training rows");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.scale
    }
}

fn subject_inputs(s: &SubjectData, radius: usize) -> Array2<f64> {
    with_context(&s.features.values, radius)
}

fn stack(parts: Vec<Array2<f64>>) -> Result<Array2<f64>> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| HarnessError::Data(e.to_string()))
}

// ---------------------------------------------------------------------------
// Running arms

/// Outcome of one fold for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub history: TrainHistory,
    pub test: Vec<SubjectMetrics>,
    pub test_mc: Option<Vec<SubjectMetrics>>,
    /// Test-subject probabilities, keyed by subject id.
    pub probs: Vec<(String, Array2<f64>)>,
}

/// Pooled results of one arm at one α.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRun {
    pub arm: Arm,
    pub alpha: f64,
    pub folds: Vec<FoldOutcome>,
    pub failures: Vec<(usize, String)>,
    /// Test metrics pooled across folds, sorted by subject id.
    pub report: MetricsReport,
    pub mc_report: Option<MetricsReport>,
}

impl ArmRun {
    /// Mean over folds of the best validation macro-F1.
    pub fn val_macro_f1(&self) -> f64 {
        let n = self.folds.len() as f64;
        self.folds.iter().map(|f| f.history.best_val_macro_f1()).sum::<f64>() / n
    }

    pub fn probs(&self, subject_id: &str) -> Option<&Array2<f64>> {
        self.folds
            .iter()
            .flat_map(|f| f.probs.iter())
            .find(|(id, _)| id == subject_id)
            .map(|(_, p)| p)
    }
}

/// Trains one fold's model and evaluates its test subjects.
pub fn run_fold(
    dataset: &Dataset,
    arm: Arm,
    alpha: f64,
    fold_index: usize,
    fold: &Fold,
    config: &ExperimentConfig,
) -> Result<FoldOutcome> {
    let index = dataset.index();
    let lookup = |ids: &[String]| -> Result<Vec<&SubjectData>> {
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| HarnessError::Data(format!("fold references unknown subject {id}")))
            })
            .collect()
    };
    let train_subjects = lookup(&fold.train)?;
    let val_subjects = lookup(&fold.val)?;
    let test_subjects = lookup(&fold.test)?;
    if train_subjects.is_empty() || val_subjects.is_empty() {
        return Err(HarnessError::Config(format!(
            "fold {fold_index} lacks training or validation subjects"
        )));
    }

    let r = config.context_radius;
    let raw_train = stack(train_subjects.iter().map(|s| subject_inputs(s, r)).collect())?;
    let scaler = Standardizer::fit(&raw_train);
    let targets = stack(
        train_subjects
            .iter()
            .map(|s| subject_targets(s, arm, alpha))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let data = TrainingSet {
        features: scaler.apply(&raw_train),
        targets,
    };
    let val = ValidationSet {
        features: scaler.apply(&stack(val_subjects.iter().map(|s| subject_inputs(s, r)).collect())?),
        labels: val_subjects
            .iter()
            .flat_map(|s| s.consensus.hypnogram.class_indices())
            .collect(),
    };

    let fi = fold_index as u64;
    let model = init_model(
        derive_seed(config.seed, TAG_INIT, fi),
        data.features.ncols(),
        config.hidden_width,
        config.dropout_rate,
    )?;
    let train_config = TrainConfig {
        seed: derive_seed(config.seed, TAG_TRAIN, fi),
        ..config.train
    };
    let (model, history) = train(model, &data, &val, &train_config)?;

    let mut test = Vec::with_capacity(test_subjects.len());
    let mut test_mc = config.mc_passes.map(|_| Vec::with_capacity(test_subjects.len()));
    let mut probs_out = Vec::with_capacity(test_subjects.len());
    for s in test_subjects {
        let x = scaler.apply(&subject_inputs(s, r));
        let (metrics, probs) = evaluate(&model, s, &x, None, config)?;
        test.push(metrics);
        probs_out.push((s.subject_id().to_string(), probs));
        if let (Some(passes), Some(mc)) = (config.mc_passes, test_mc.as_mut()) {
            let mc_seed = derive_seed(config.seed, TAG_MC, fi);
            let (metrics, _) = evaluate(&model, s, &x, Some((passes, mc_seed)), config)?;
            mc.push(metrics);
        }
    }
    Ok(FoldOutcome {
        fold: fold_index,
        history,
        test,
        test_mc,
        probs: probs_out,
    })
}

fn evaluate(
    model: &ReferenceModel,
    subject: &SubjectData,
    x: &Array2<f64>,
    mc: Option<(usize, u64)>,
    config: &ExperimentConfig,
) -> Result<(SubjectMetrics, Array2<f64>)> {
    let probs = match mc {
        None => model.predict_proba(x)?,
        Some((passes, seed)) => model.mc_dropout_predict(x, passes, seed)?,
    };
    let metrics = evaluate_subject(
        subject.subject_id(),
        &subject.consensus.hypnogram.class_indices(),
        &subject.consensus.soft.values,
        &probs,
        config.n_bins,
    )?;
    Ok((metrics, probs))
}

fn pooled(mut rows: Vec<SubjectMetrics>) -> Result<MetricsReport> {
    rows.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(aggregate(rows)?)
}

/// Runs `arm` at `alpha` on every fold, pooling per-subject test metrics.
/// Failed folds are logged and skipped; the run fails only if all folds fail.
pub fn run_arm(dataset: &Dataset, arm: Arm, alpha: f64, plan: &FoldPlan, config: &ExperimentConfig) -> Result<ArmRun> {
    arm.check_alpha(alpha)?;
    plan.check(&dataset.subject_ids())?;
    let job = |(i, fold): (usize, &Fold)| (i, run_fold(dataset, arm, alpha, i, fold, config));
    let results: Vec<(usize, Result<FoldOutcome>)> = if config.parallel {
        plan.folds.par_iter().enumerate().map(job).collect()
    } else {
        plan.folds.iter().enumerate().map(job).collect()
    };
    let mut folds = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results {
        match r {
            Ok(outcome) => folds.push(outcome),
            Err(e) => {
                log::warn!("{} alpha={alpha} fold {i} failed: {e}", arm.token());
                failures.push((i, e.to_string()));
            }
        }
    }
    if folds.is_empty() {
        let reasons = failures
            .iter()
            .map(|(i, e)| format!("fold {i}: {e}"))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(HarnessError::AllFoldsFailed {
            arm: arm.label().to_string(),
            reasons,
        });
    }
    let report = pooled(folds.iter().flat_map(|f| f.test.iter().cloned()).collect())?;
    let mc_report = match config.mc_passes {
        Some(_) => Some(pooled(
            folds.iter().flat_map(|f| f.test_mc.iter().flatten().cloned()).collect(),
        )?),
        None => None,
    };
    Ok(ArmRun {
        arm,
        alpha,
        folds,
        failures,
        report,
        mc_report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub arm: Arm,
    pub best_alpha: f64,
    /// One run per α, in grid order.
    pub runs: Vec<ArmRun>,
}

impl GridSearch {
    pub fn best(&self) -> &ArmRun {
        self.runs
            .iter()
            .find(|r| r.alpha == self.best_alpha)
            .expect("best alpha is on the grid")
    }
}

/// Runs every α in `grid` and picks the one with the highest mean validation
/// macro-F1 (the smallest such α on ties).
pub fn grid_search_alpha(
    dataset: &Dataset,
    arm: Arm,
    grid: &[f64],
    plan: &FoldPlan,
    config: &ExperimentConfig,
) -> Result<GridSearch> {
    if arm == Arm::Base {
        return Err(HarnessError::Config("grid search needs a smoothing arm".into()));
    }
    if grid.is_empty() {
        return Err(HarnessError::Config("empty alpha grid".into()));
    }
    let runs: Vec<ArmRun> = if config.parallel {
        grid.par_iter()
            .map(|&a| run_arm(dataset, arm, a, plan, config))
            .collect::<Result<_>>()?
    } else {
        grid.iter()
            .map(|&a| run_arm(dataset, arm, a, plan, config))
            .collect::<Result<_>>()?
    };
    let mut best = &runs[0];
    for r in &runs[1..] {
        if r.val_macro_f1() > best.val_macro_f1() {
            best = r;
        }
    }
    Ok(GridSearch {
        arm,
        best_alpha: best.alpha,
        runs,
    })
}

/// Two-sided signed-rank p-value on per-subject ACS, paired by subject id.
pub fn paired_acs_pvalue(a: &MetricsReport, b: &MetricsReport) -> Result<f64> {
    let b_by_id: HashMap<&str, f64> = b.per_subject.iter().map(|s| (s.subject_id.as_str(), s.acs)).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for s in &a.per_subject {
        if let Some(&v) = b_by_id.get(s.subject_id.as_str()) {
            xs.push(s.acs);
            ys.push(v);
        }
    }
    Ok(paired_test(&xs, &ys)?)
}

// ---------------------------------------------------------------------------
// Reports

/// One aggregate report line.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub alpha: Option<f64>,
    pub report: MetricsReport,
}

impl ReportRow {
    pub fn from_run(run: &ArmRun) -> Vec<ReportRow> {
        let alpha = (run.arm != Arm::Base).then_some(run.alpha);
        let mut rows = vec![ReportRow {
            label: run.arm.label().to_string(),
            alpha,
            report: run.report.clone(),
        }];
        if let Some(mc) = &run.mc_report {
            rows.push(ReportRow {
                label: format!("{} w/ MC", run.arm.label()),
                alpha,
                report: mc.clone(),
            });
        }
        rows
    }
}

pub const REPORT_HEADER: &str = "arm,alpha,acc,mf1,kappa,f1,f1_w,f1_n1,f1_n2,f1_n3,f1_r,ece,conf,acs_mean,acs_std";

/// Aggregate table: one line per row with means across subjects plus the ACS std.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{REPORT_HEADER}");
    for row in rows {
        let alpha = row.alpha.map_or("-".to_string(), fmt_f64);
        let _ = write!(out, "{},{alpha}", row.label);
        for v in row.report.mean {
            let _ = write!(out, ",{}", fmt_f64(v));
        }
        let _ = writeln!(out, ",{}", fmt_f64(row.report.acs_std()));
    }
    out
}

/// Per-subject table for every row.
pub fn format_subject_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "arm,alpha,subject,acc,mf1,kappa,f1,f1_w,f1_n1,f1_n2,f1_n3,f1_r,ece,conf,acs"
    );
    for row in rows {
        let alpha = row.alpha.map_or("-".to_string(), fmt_f64);
        for s in &row.report.per_subject {
            let _ = write!(out, "{},{alpha},{}", row.label, s.subject_id);
            for v in s.values() {
                let _ = write!(out, ",{}", fmt_f64(v));
            }
            let _ = writeln!(out);
        }
    }
    out
}

/// Validation and test summary of every α of a grid search.
pub fn format_grid(search: &GridSearch) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "arm,alpha,val_mf1,test_mf1,test_ece,test_acs_mean,selected");
    for run in &search.runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            run.arm.label(),
            fmt_f64(run.alpha),
            fmt_f64(run.val_macro_f1()),
            fmt_f64(run.report.macro_f1_mean()),
            fmt_f64(run.report.ece_mean()),
            fmt_f64(run.report.acs_mean()),
            u8::from(run.alpha == search.best_alpha)
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    write_atomic(path, contents.as_bytes()).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `report.csv` and `subjects.csv` into `dir`.
pub fn emit_report(rows: &[ReportRow], dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no report rows".into()));
    }
    write_file(&dir.join("report.csv"), &format_report(rows))?;
    write_file(&dir.join("subjects.csv"), &format_subject_table(rows))
}

// ---------------------------------------------------------------------------
// Manifest

/// Ordered `key=value` record of a run's effective parameters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    pub entries: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn extend<I: IntoIterator<Item = (String, String)>>(&mut self, items: I) {
        self.entries.extend(items);
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key=value", n + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{diagonal_confusion, generate, GeneratorSpec};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i:03}")).collect()
    }

    #[test]
    fn alpha_grids() {
        assert_eq!(Arm::LsUniform.alpha_grid(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(
            Arm::LsSoftConsensus.alpha_grid(),
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
        );
        assert!(Arm::Base.alpha_grid().is_empty());
        assert!(Arm::LsUniform.check_alpha(0.6).is_err());
        assert!(Arm::LsSoftConsensus.check_alpha(0.0).is_err());
        assert!(Arm::LsSoftConsensus.check_alpha(1.0).is_ok());
        assert_eq!("ls_sc".parse::<Arm>().unwrap(), Arm::LsSoftConsensus);
    }

    #[test]
    fn folds_seventy_subjects() {
        let subjects = ids(70);
        let plan = make_folds(&subjects, 10, 13, 7, 3).unwrap();
        assert_eq!(plan.folds.len(), 10);
        for f in &plan.folds {
            assert_eq!((f.train.len(), f.val.len(), f.test.len()), (50, 13, 7));
        }
        plan.check(&subjects).unwrap();
        assert_eq!(plan, make_folds(&subjects, 10, 13, 7, 3).unwrap());
        assert_ne!(plan, make_folds(&subjects, 10, 13, 7, 4).unwrap());
    }

    #[test]
    fn folds_leave_one_out_and_single_split() {
        let subjects = ids(25);
        let plan = make_folds(&subjects, 25, 6, 1, 0).unwrap();
        assert!(plan
            .folds
            .iter()
            .all(|f| f.test.len() == 1 && f.val.len() == 6 && f.train.len() == 18));
        let single = make_folds(&subjects, 1, 5, 5, 0).unwrap();
        assert_eq!(single.folds.len(), 1);
        assert_eq!(single.folds[0].train.len(), 15);
    }

    #[test]
    fn folds_distribute_remainder_and_reject_infeasible() {
        let subjects = ids(23);
        let plan = make_folds(&subjects, 5, 3, 4, 1).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 4]);
        assert!(make_folds(&subjects, 5, 3, 5, 1).is_err());
        assert!(make_folds(&subjects, 2, 11, 11, 1).is_err());
        assert!(make_folds(&subjects, 0, 1, 1, 1).is_err());
    }

    #[test]
    fn targets_per_arm() {
        let sc = [0.6, 0.2, 0.2, 0.0, 0.0];
        assert_eq!(
            arm_target(Arm::Base, 0.7, 0, &sc).unwrap().values,
            [1.0, 0.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(arm_target(Arm::LsSoftConsensus, 1.0, 0, &sc).unwrap().values, sc);
        let u = arm_target(Arm::LsUniform, 0.1, 0, &sc).unwrap().values;
        assert!((u[0] - 0.92).abs() < 1e-15 && (u[1] - 0.02).abs() < 1e-15);
    }

    fn tiny_dataset(diag: f64) -> Dataset {
        let spec = GeneratorSpec {
            subjects: 8,
            epochs: 120,
            ..GeneratorSpec::default()
        }
        .with_shared_confusion(diagonal_confusion(diag));
        let cohort = generate(&spec).unwrap();
        Dataset::new(
            cohort.iter().map(|s| s.record.clone()).collect(),
            cohort.iter().map(|s| s.features.clone()).collect(),
        )
        .unwrap()
    }

    fn quick_config() -> ExperimentConfig {
        ExperimentConfig {
            folds: 2,
            val_count: 2,
            test_count: 4,
            train: TrainConfig {
                max_iterations: 8,
                batch_size: 64,
                ..TrainConfig::default()
            },
            parallel: false,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn run_arm_pools_every_test_subject() {
        let data = tiny_dataset(0.8);
        let cfg = ExperimentConfig {
            mc_passes: Some(3),
            ..quick_config()
        };
        let plan = make_folds(&data.subject_ids(), 2, 2, 4, 0).unwrap();
        let run = run_arm(&data, Arm::Base, 0.0, &plan, &cfg).unwrap();
        assert_eq!(run.report.per_subject.len(), 8);
        assert_eq!(run.mc_report.as_ref().unwrap().per_subject.len(), 8);
        assert!(run.failures.is_empty());
        let rows = ReportRow::from_run(&run);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].label, "base w/ MC");
        assert_eq!(format_report(&rows).lines().count(), 3);
    }

    #[test]
    fn unanimous_scorers_make_ls_sc_equal_base() {
        let data = tiny_dataset(1.0);
        let cfg = quick_config();
        let plan = make_folds(&data.subject_ids(), 2, 2, 4, 0).unwrap();
        let base = run_arm(&data, Arm::Base, 0.0, &plan, &cfg).unwrap();
        for alpha in [0.3, 1.0] {
            for s in &data.subjects {
                assert_eq!(
                    subject_targets(s, Arm::Base, 0.0).unwrap(),
                    subject_targets(s, Arm::LsSoftConsensus, alpha).unwrap()
                );
            }
            let sc = run_arm(&data, Arm::LsSoftConsensus, alpha, &plan, &cfg).unwrap();
            assert_eq!(sc.report, base.report);
        }
    }

    #[test]
    fn grid_of_one_returns_it() {
        let data = tiny_dataset(0.7);
        let cfg = quick_config();
        let plan = make_folds(&data.subject_ids(), 2, 2, 4, 0).unwrap();
        let g = grid_search_alpha(&data, Arm::LsUniform, &[0.3], &plan, &cfg).unwrap();
        assert_eq!(g.best_alpha, 0.3);
        assert_eq!(g.runs.len(), 1);
        assert!(grid_search_alpha(&data, Arm::Base, &[0.3], &plan, &cfg).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = RunManifest::default();
        m.set("seed", 7);
        m.set("arms", "base,ls_sc");
        m.extend(ExperimentConfig::default().entries());
        let back = RunManifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(RunManifest::parse("novalue\n").is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, TAG_INIT, 0);
        assert_ne!(a, derive_seed(1, TAG_INIT, 1));
        assert_ne!(a, derive_seed(1, TAG_TRAIN, 0));
        assert_ne!(a, derive_seed(2, TAG_INIT, 0));
    }
}
