//! Synthetic multi-scorer cohorts with controllable inter-rater agreement.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), seeded with the cohort seed.
//! Each subject and purpose (latent sequence, scorer labels, features) reads
//! its own ChaCha stream, so subjects can be generated in any order or in
//! parallel with identical output.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::consensus::{soft_agreement, ConsensusError};
use crate::records::{FeatureMatrix, Hypnogram, MultiScoredRecord, RecordsError, SleepStage, NUM_CLASSES};

pub type StochasticMatrix = [[f64; NUM_CLASSES]; NUM_CLASSES];

const MATRIX_TOL: f64 = 1e-12;
const PILOT_SUBJECTS: usize = 10;
const CALIBRATION_TOL: f64 = 0.02;
const CALIBRATION_AIM: f64 = 0.004;
const CALIBRATION_STEPS: usize = 40;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator settings: {0}")]
    Spec(String),
    #[error("target Soft-Agreement {target} unreachable: achievable range [{low}, {high}]")]
    Calibration { target: f64, low: f64, high: f64 },
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub subjects: usize,
    pub epochs: usize,
    pub scorers: usize,
    /// Latent stage transition matrix.
    pub transition: StochasticMatrix,
    /// One confusion matrix per scorer; rows are the latent stage.
    pub confusion: Vec<StochasticMatrix>,
    pub feature_dim: usize,
    /// `NUM_CLASSES × feature_dim` class-conditional means.
    pub class_means: Array2<f64>,
    pub noise_scale: f64,
    pub seed: u64,
}

/// Sticky transitions with a night-like stage mix.
pub const DEFAULT_TRANSITION: StochasticMatrix = [
    [0.90, 0.06, 0.02, 0.00, 0.02],
    [0.05, 0.70, 0.22, 0.00, 0.03],
    [0.02, 0.03, 0.88, 0.05, 0.02],
    [0.01, 0.00, 0.07, 0.92, 0.00],
    [0.02, 0.03, 0.02, 0.00, 0.93],
];

pub const DEFAULT_SEPARATION: f64 = 2.0;

/// Confusion matrix with `diagonal` on the diagonal and the rest spread evenly.
pub fn diagonal_confusion(diagonal: f64) -> StochasticMatrix {
    let off = (1.0 - diagonal) / (NUM_CLASSES - 1) as f64;
    let mut m = [[off; NUM_CLASSES]; NUM_CLASSES];
    for (k, row) in m.iter_mut().enumerate() {
        row[k] = diagonal;
    }
    m
}

/// Stage `k` has mean `separation` on feature `k mod dim` and zero elsewhere.
pub fn axis_class_means(dim: usize, separation: f64) -> Array2<f64> {
    let mut means = Array2::zeros((NUM_CLASSES, dim));
    if dim > 0 {
        for k in 0..NUM_CLASSES {
            means[[k, k % dim]] = separation;
        }
    }
    means
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            subjects: 40,
            epochs: 960,
            scorers: 5,
            transition: DEFAULT_TRANSITION,
            confusion: vec![diagonal_confusion(0.8); 5],
            feature_dim: 8,
            class_means: axis_class_means(8, DEFAULT_SEPARATION),
            noise_scale: 1.0,
            seed: 0,
        }
    }
}

fn check_stochastic(name: &str, m: &StochasticMatrix) -> Result<()> {
    for (k, row) in m.iter().enumerate() {
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.iter().sum::<f64>() - 1.0).abs() > MATRIX_TOL {
            return Err(SynthError::Spec(format!(
                "{name} row {k} is not a probability vector: {row:?}"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Purpose {
    Latent = 0,
    Labels = 1,
    Features = 2,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.epochs == 0 {
            return Err(SynthError::Spec("need at least one subject and one epoch".into()));
        }
        if self.scorers < 2 {
            return Err(SynthError::Spec("need at least two scorers".into()));
        }
        if self.confusion.len() != self.scorers {
            return Err(SynthError::Spec(format!(
                "{} confusion matrices for {} scorers",
                self.confusion.len(),
                self.scorers
            )));
        }
        check_stochastic("transition", &self.transition)?;
        for (j, c) in self.confusion.iter().enumerate() {
            check_stochastic(&format!("confusion[{j}]"), c)?;
        }
        if self.feature_dim == 0 || self.class_means.dim() != (NUM_CLASSES, self.feature_dim) {
            return Err(SynthError::Spec(format!(
                "class means {:?} do not match feature dimension {}",
                self.class_means.dim(),
                self.feature_dim
            )));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(SynthError::Spec(format!(
                "noise scale {} must be positive",
                self.noise_scale
            )));
        }
        Ok(())
    }

    /// Same confusion matrix for every scorer.
    pub fn with_shared_confusion(mut self, confusion: StochasticMatrix) -> Self {
        self.confusion = vec![confusion; self.scorers];
        self
    }

    fn rng(&self, subject: usize, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(subject as u64 * 4 + purpose as u64);
        rng
    }
}

pub fn subject_id(subject: usize) -> String {
    format!("S{:03}", subject + 1)
}

pub fn scorer_id(scorer: usize) -> String {
    format!("scorer_{}", scorer + 1)
}

/// Draws from `row`, visiting `first` before the remaining classes in order.
fn draw(row: &[f64; NUM_CLASSES], first: usize, u: f64) -> usize {
    let mut acc = row[first];
    if u < acc {
        return first;
    }
    let mut last = first;
    for k in (0..NUM_CLASSES).filter(|&k| k != first) {
        if row[k] > 0.0 {
            last = k;
        }
        acc += row[k];
        if u < acc {
            return k;
        }
    }
    last
}

/// First-order Markov stage sequence starting in W.
pub fn gen_latent_hypnogram(spec: &GeneratorSpec, subject: usize) -> Hypnogram {
    let mut rng = spec.rng(subject, Purpose::Latent);
    let mut stages = Vec::with_capacity(spec.epochs);
    let mut current = SleepStage::W.class_index().expect("scored stage");
    for t in 0..spec.epochs {
        if t > 0 {
            current = draw(&spec.transition[current], current, rng.random());
        }
        stages.push(SleepStage::CLASSES[current]);
    }
    Hypnogram::new(subject_id(subject), "latent", stages)
}

/// Each scorer labels each epoch independently from its confusion row.
pub fn gen_scorer_labels(latent: &Hypnogram, spec: &GeneratorSpec, subject: usize) -> Result<MultiScoredRecord> {
    let mut rng = spec.rng(subject, Purpose::Labels);
    let mut grid = vec![Vec::with_capacity(latent.len()); spec.scorers];
    for stage in &latent.stages {
        let truth = stage
            .class_index()
            .ok_or_else(|| SynthError::Spec("latent sequence contains NC".into()))?;
        for (j, labels) in grid.iter_mut().enumerate() {
            let k = draw(&spec.confusion[j][truth], truth, rng.random());
            labels.push(SleepStage::CLASSES[k]);
        }
    }
    let ids = (0..spec.scorers).map(scorer_id).collect();
    Ok(MultiScoredRecord::from_grid(latent.subject_id.clone(), ids, grid)?)
}

/// Class mean of the latent stage plus isotropic Gaussian noise.
pub fn gen_features(latent: &Hypnogram, spec: &GeneratorSpec, subject: usize) -> Result<FeatureMatrix> {
    let mut rng = spec.rng(subject, Purpose::Features);
    let mut values = Array2::zeros((latent.len(), spec.feature_dim));
    for (t, stage) in latent.stages.iter().enumerate() {
        let k = stage
            .class_index()
            .ok_or_else(|| SynthError::Spec("latent sequence contains NC".into()))?;
        for d in 0..spec.feature_dim {
            let noise: f64 = rng.sample(StandardNormal);
            values[[t, d]] = spec.class_means[[k, d]] + spec.noise_scale * noise;
        }
    }
    Ok(FeatureMatrix::new(latent.subject_id.clone(), values)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject {
    pub latent: Hypnogram,
    pub record: MultiScoredRecord,
    pub features: FeatureMatrix,
}

pub fn gen_subject(spec: &GeneratorSpec, subject: usize) -> Result<SyntheticSubject> {
    let latent = gen_latent_hypnogram(spec, subject);
    let record = gen_scorer_labels(&latent, spec, subject)?;
    let features = gen_features(&latent, spec, subject)?;
    Ok(SyntheticSubject {
        latent,
        record,
        features,
    })
}

/// The whole cohort, generated in parallel.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<SyntheticSubject>> {
    spec.validate()?;
    (0..spec.subjects)
        .into_par_iter()
        .map(|s| gen_subject(spec, s))
        .collect()
}

/// Mean Soft-Agreement over every scorer of every given record.
pub fn mean_soft_agreement(records: &[MultiScoredRecord]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in records {
        for j in 0..r.num_scorers() {
            sum += soft_agreement(r, j)?;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean Soft-Agreement of the first pilot subjects of `spec`.
pub fn pilot_soft_agreement(spec: &GeneratorSpec) -> Result<f64> {
    let records = (0..PILOT_SUBJECTS)
        .into_par_iter()
        .map(|s| gen_scorer_labels(&gen_latent_hypnogram(spec, s), spec, s))
        .collect::<Result<Vec<_>>>()?;
    mean_soft_agreement(&records)
}

/// Sets every scorer's confusion diagonal so the pilot mean Soft-Agreement
/// lands within 0.02 of `target`, by bisection on the diagonal mass.
pub fn calibrate_agreement(target: f64, template: &GeneratorSpec) -> Result<GeneratorSpec> {
    if !(target > 0.3 && target <= 1.0) {
        return Err(SynthError::Spec(format!(
            "target Soft-Agreement {target} outside (0.3, 1]"
        )));
    }
    template.validate()?;
    let at = |d: f64| -> Result<(GeneratorSpec, f64)> {
        let spec = template.clone().with_shared_confusion(diagonal_confusion(d));
        let sa = pilot_soft_agreement(&spec)?;
        Ok((spec, sa))
    };
    let (best_spec, high) = at(1.0)?;
    if target == 1.0 {
        return Ok(best_spec);
    }
    let (mut lo, mut hi) = (1.0 / NUM_CLASSES as f64, 1.0);
    let (_, low) = at(lo)?;
    if target < low - CALIBRATION_TOL || target > high + CALIBRATION_TOL {
        return Err(SynthError::Calibration { target, low, high });
    }
    let mut best: Option<(GeneratorSpec, f64)> = None;
    for _ in 0..CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        let (spec, sa) = at(mid)?;
        let gap = (sa - target).abs();
        if best.as_ref().is_none_or(|(_, b)| gap < (b - target).abs()) {
            best = Some((spec, sa));
        }
        if gap <= CALIBRATION_AIM {
            break;
        }
        if sa < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    match best {
        Some((spec, sa)) if (sa - target).abs() <= CALIBRATION_TOL => {
            log::info!(
                "calibrated diagonal {:.4}: pilot SA {sa:.4} for target {target}",
                spec.confusion[0][0][0]
            );
            Ok(spec)
        }
        _ => Err(SynthError::Calibration { target, low, high }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::rank_scorers;

    fn small(subjects: usize, epochs: usize) -> GeneratorSpec {
        GeneratorSpec {
            subjects,
            epochs,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn default_spec_is_valid() {
        let spec = GeneratorSpec::default();
        spec.validate().unwrap();
        assert_eq!(
            (spec.subjects, spec.epochs, spec.scorers, spec.feature_dim),
            (40, 960, 5, 8)
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = GeneratorSpec::default();
        s.transition[0][0] = 0.5;
        assert!(s.validate().is_err());
        let s = GeneratorSpec {
            noise_scale: 0.0,
            ..GeneratorSpec::default()
        };
        assert!(s.validate().is_err());
        let mut s = GeneratorSpec::default();
        s.confusion.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn draw_puts_first_class_at_the_bottom() {
        let row = [0.1, 0.2, 0.4, 0.2, 0.1];
        assert_eq!(draw(&row, 2, 0.0), 2);
        assert_eq!(draw(&row, 2, 0.39), 2);
        assert_eq!(draw(&row, 2, 0.41), 0);
        assert_eq!(draw(&row, 2, 0.55), 1);
        assert_eq!(draw(&row, 2, 0.999_999), 4);
    }

    #[test]
    fn identity_transitions_give_constant_sequence() {
        let mut spec = small(1, 500);
        spec.transition = diagonal_confusion(1.0);
        let h = gen_latent_hypnogram(&spec, 0);
        assert!(h.stages.iter().all(|&s| s == SleepStage::W));
    }

    #[test]
    fn uniform_transitions_give_uniform_frequencies() {
        let mut spec = small(1, 50_000);
        spec.transition = [[0.2; NUM_CLASSES]; NUM_CLASSES];
        let h = gen_latent_hypnogram(&spec, 0);
        for stage in SleepStage::CLASSES {
            let f = h.stages.iter().filter(|&&s| s == stage).count() as f64 / 50_000.0;
            assert!((f - 0.2).abs() < 0.01, "{stage}: {f}");
        }
    }

    #[test]
    fn generation_is_deterministic_and_order_free() {
        let spec = small(6, 200);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let lone = gen_subject(&spec, 4).unwrap();
        assert_eq!(lone, a[4]);
        let other = generate(&GeneratorSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a[0].latent, other[0].latent);
    }

    #[test]
    fn identity_confusion_gives_perfect_agreement() {
        let spec = small(2, 300).with_shared_confusion(diagonal_confusion(1.0));
        for s in generate(&spec).unwrap() {
            for j in 0..spec.scorers {
                assert_eq!(s.record.scorer_labels(j), &s.latent.stages[..]);
                assert_eq!(soft_agreement(&s.record, j).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn pairwise_agreement_matches_analytic_value() {
        let spec = GeneratorSpec {
            scorers: 2,
            ..small(1, 10_000)
        }
        .with_shared_confusion(diagonal_confusion(0.7));
        let s = gen_subject(&spec, 0).unwrap();
        let agree = (0..spec.epochs)
            .filter(|&t| s.record.label(0, t) == s.record.label(1, t))
            .count() as f64
            / spec.epochs as f64;
        let analytic: f64 = 0.7 * 0.7 + 4.0 * 0.075 * 0.075;
        assert!((analytic - 0.5125).abs() < 1e-12);
        assert!((agree - analytic).abs() < 0.03, "{agree}");
    }

    #[test]
    fn adversarial_scorer_ranks_last() {
        let mut spec = small(3, 960).with_shared_confusion(diagonal_confusion(0.85));
        spec.confusion[2] = diagonal_confusion(0.02);
        for s in generate(&spec).unwrap() {
            let ranking = rank_scorers(&s.record).unwrap();
            assert_eq!(ranking.entries.last().unwrap().index, 2);
        }
    }

    #[test]
    fn zero_noise_limit_recovers_means() {
        let mut spec = small(1, 100);
        spec.noise_scale = 1e-300;
        let s = gen_subject(&spec, 0).unwrap();
        for (t, stage) in s.latent.stages.iter().enumerate() {
            let k = stage.class_index().unwrap();
            for d in 0..spec.feature_dim {
                assert!((s.features.values[[t, d]] - spec.class_means[[k, d]]).abs() < 1e-250);
            }
        }
    }

    #[test]
    fn agreement_increases_with_diagonal() {
        let base = small(PILOT_SUBJECTS, 400);
        let mut prev = -1.0;
        for d in [0.3, 0.45, 0.6, 0.75, 0.9, 1.0] {
            let sa = pilot_soft_agreement(&base.clone().with_shared_confusion(diagonal_confusion(d))).unwrap();
            assert!(sa > prev, "d={d}: {sa} <= {prev}");
            prev = sa;
        }
    }

    #[test]
    fn calibration_hits_targets() {
        let template = GeneratorSpec::default();
        let exact = calibrate_agreement(1.0, &template).unwrap();
        assert!(exact.confusion.iter().all(|c| *c == diagonal_confusion(1.0)));
        for target in [0.69, 0.89] {
            let spec = calibrate_agreement(target, &template).unwrap();
            let sa = pilot_soft_agreement(&spec).unwrap();
            assert!((sa - target).abs() <= 0.02, "target {target}: {sa}");
        }
        assert!(calibrate_agreement(0.2, &template).is_err());
    }
}
