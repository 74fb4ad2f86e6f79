//! Scorer reliability (Soft-Agreement), majority-vote consensus and the
//! soft-consensus distribution.
//!
//! All functions operate on the retained epochs of a record only. Every
//! per-epoch output carries the original epoch indices so results can be
//! written back against the source label table.

use std::io::Write;

use ndarray::Array2;
use thiserror::Error;

use crate::records::{MultiScoredRecord, SleepStage, NUM_CLASSES};
use crate::table;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("subject {subject}: need at least 2 scorers, found {found}")]
    TooFewScorers { subject: String, found: usize },
    #[error("subject {subject}: scorer index {index} out of range")]
    ScorerIndex { subject: String, index: usize },
    #[error("subject {subject}: scorer {scorer} has no comparable epochs, Soft-Agreement undefined")]
    UndefinedAgreement { subject: String, scorer: String },
    #[error("subject {subject}: retained epoch {epoch} has no scored annotation")]
    EmptyEpoch { subject: String, epoch: usize },
    #[error("subject {subject}: ranking does not cover the record's scorers")]
    RankingMismatch { subject: String },
    #[error("subject {subject}: tie at epoch {epoch} not resolvable from the ranking")]
    TieBreakExhausted { subject: String, epoch: usize },
}

pub type Result<T> = std::result::Result<T, ConsensusError>;

/// Leave-one-out probabilistic consensus for one scorer: per retained epoch,
/// the vote counts of the other scorers divided by their maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOutConsensus {
    pub scorer_id: String,
    pub scorer_index: usize,
    pub epochs: Vec<usize>,
    pub z: Array2<f64>,
    /// Set where every other scorer gave `NC`; the row is all zeros there.
    pub no_observation: Vec<bool>,
}

fn require_scorers(record: &MultiScoredRecord) -> Result<()> {
    if record.num_scorers() < 2 {
        return Err(ConsensusError::TooFewScorers {
            subject: record.subject_id().to_string(),
            found: record.num_scorers(),
        });
    }
    Ok(())
}

pub fn leave_one_out_consensus(record: &MultiScoredRecord, j: usize) -> Result<LeaveOneOutConsensus> {
    require_scorers(record)?;
    if j >= record.num_scorers() {
        return Err(ConsensusError::ScorerIndex {
            subject: record.subject_id().to_string(),
            index: j,
        });
    }
    let epochs = record.retained_epochs();
    let mut z = Array2::zeros((epochs.len(), NUM_CLASSES));
    let mut no_observation = vec![false; epochs.len()];
    for (row, &t) in epochs.iter().enumerate() {
        let mut counts = [0usize; NUM_CLASSES];
        for (i, stage) in record.epoch_votes(t).enumerate() {
            if i == j {
                continue;
            }
            if let Some(k) = stage.class_index() {
                counts[k] += 1;
            }
        }
        let max = counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            no_observation[row] = true;
            continue;
        }
        for k in 0..NUM_CLASSES {
            z[[row, k]] = counts[k] as f64 / max as f64;
        }
    }
    Ok(LeaveOneOutConsensus {
        scorer_id: record.scorer_ids()[j].clone(),
        scorer_index: j,
        epochs,
        z,
        no_observation,
    })
}

/// Mean of the leave-one-out consensus at scorer `j`'s chosen stage.
///
/// Epochs where scorer `j` gave `NC`, or where no other scorer gave a stage,
/// are left out of the mean.
pub fn soft_agreement(record: &MultiScoredRecord, j: usize) -> Result<f64> {
    let loo = leave_one_out_consensus(record, j)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (row, &t) in loo.epochs.iter().enumerate() {
        if loo.no_observation[row] {
            continue;
        }
        if let Some(k) = record.label(j, t).class_index() {
            sum += loo.z[[row, k]];
            n += 1;
        }
    }
    if n == 0 {
        return Err(ConsensusError::UndefinedAgreement {
            subject: record.subject_id().to_string(),
            scorer: record.scorer_ids()[j].clone(),
        });
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedScorer {
    pub index: usize,
    pub scorer_id: String,
    pub soft_agreement: f64,
}

/// Scorers of one subject, most reliable first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerRanking {
    pub subject_id: String,
    pub entries: Vec<RankedScorer>,
}

impl ScorerRanking {
    pub fn top(&self) -> &RankedScorer {
        &self.entries[0]
    }

    pub fn order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    /// Soft-Agreement indexed by scorer position in the record.
    pub fn by_scorer(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.entries.len()];
        for e in &self.entries {
            out[e.index] = e.soft_agreement;
        }
        out
    }
}

/// Sorts scorers by Soft-Agreement, descending; equal values keep index order.
pub fn rank_scorers(record: &MultiScoredRecord) -> Result<ScorerRanking> {
    require_scorers(record)?;
    let mut entries = (0..record.num_scorers())
        .map(|j| {
            Ok(RankedScorer {
                index: j,
                scorer_id: record.scorer_ids()[j].clone(),
                soft_agreement: soft_agreement(record, j)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // stable sort keeps ascending index among ties
    entries.sort_by(|a, b| b.soft_agreement.total_cmp(&a.soft_agreement));
    Ok(ScorerRanking {
        subject_id: record.subject_id().to_string(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusHypnogram {
    pub subject_id: String,
    pub epochs: Vec<usize>,
    pub stages: Vec<SleepStage>,
    pub tiebreak_flags: Vec<bool>,
}

impl ConsensusHypnogram {
    pub fn class_indices(&self) -> Vec<usize> {
        self.stages
            .iter()
            .map(|s| s.class_index().expect("consensus never holds NC"))
            .collect()
    }

    pub fn write_table<W: Write>(&self, out: &mut W, with_header: bool) -> std::io::Result<()> {
        if with_header {
            writeln!(out, "subject,epoch,stage,tiebreak")?;
        }
        for ((t, stage), flag) in self.epochs.iter().zip(&self.stages).zip(&self.tiebreak_flags) {
            writeln!(out, "{},{t},{stage},{}", self.subject_id, u8::from(*flag))?;
        }
        Ok(())
    }
}

/// Most-voted stage per retained epoch; ties go to the highest-ranked
/// scorer whose label is among the tied stages.
pub fn majority_vote(record: &MultiScoredRecord, ranking: &ScorerRanking) -> Result<ConsensusHypnogram> {
    let mut seen = vec![false; record.num_scorers()];
    let covers = ranking.entries.len() == record.num_scorers()
        && ranking
            .entries
            .iter()
            .all(|e| e.index < seen.len() && !std::mem::replace(&mut seen[e.index], true));
    if !covers {
        return Err(ConsensusError::RankingMismatch {
            subject: record.subject_id().to_string(),
        });
    }
    let epochs = record.retained_epochs();
    let mut stages = Vec::with_capacity(epochs.len());
    let mut flags = Vec::with_capacity(epochs.len());
    for &t in &epochs {
        let counts = record.vote_counts(t);
        let max = counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return Err(ConsensusError::EmptyEpoch {
                subject: record.subject_id().to_string(),
                epoch: t,
            });
        }
        let tied: Vec<usize> = (0..NUM_CLASSES).filter(|&k| counts[k] == max).collect();
        if tied.len() == 1 {
            stages.push(SleepStage::CLASSES[tied[0]]);
            flags.push(false);
            continue;
        }
        let pick = ranking
            .entries
            .iter()
            .filter_map(|e| record.label(e.index, t).class_index())
            .find(|k| tied.contains(k))
            .ok_or_else(|| ConsensusError::TieBreakExhausted {
                subject: record.subject_id().to_string(),
                epoch: t,
            })?;
        stages.push(SleepStage::CLASSES[pick]);
        flags.push(true);
    }
    Ok(ConsensusHypnogram {
        subject_id: record.subject_id().to_string(),
        epochs,
        stages,
        tiebreak_flags: flags,
    })
}

/// Per-epoch empirical distribution of the scorers' votes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftConsensusMatrix {
    pub subject_id: String,
    pub epochs: Vec<usize>,
    pub values: Array2<f64>,
    /// Number of non-NC annotations per epoch.
    pub observations: Vec<usize>,
}

impl SoftConsensusMatrix {
    pub fn write_table<W: Write>(&self, out: &mut W, with_header: bool) -> std::io::Result<()> {
        table::write_distribution(out, &self.subject_id, &self.epochs, &self.values, with_header)
    }
}

pub fn soft_consensus(record: &MultiScoredRecord) -> Result<SoftConsensusMatrix> {
    let epochs = record.retained_epochs();
    let mut values = Array2::zeros((epochs.len(), NUM_CLASSES));
    let mut observations = Vec::with_capacity(epochs.len());
    for (row, &t) in epochs.iter().enumerate() {
        let counts = record.vote_counts(t);
        let m: usize = counts.iter().sum();
        if m == 0 {
            return Err(ConsensusError::EmptyEpoch {
                subject: record.subject_id().to_string(),
                epoch: t,
            });
        }
        for k in 0..NUM_CLASSES {
            values[[row, k]] = counts[k] as f64 / m as f64;
        }
        observations.push(m);
    }
    Ok(SoftConsensusMatrix {
        subject_id: record.subject_id().to_string(),
        epochs,
        values,
        observations,
    })
}

/// Ranking, majority-vote hypnogram and soft-consensus for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectConsensus {
    pub ranking: ScorerRanking,
    pub hypnogram: ConsensusHypnogram,
    pub soft: SoftConsensusMatrix,
}

pub fn analyze(record: &MultiScoredRecord) -> Result<SubjectConsensus> {
    let ranking = rank_scorers(record)?;
    let hypnogram = majority_vote(record, &ranking)?;
    let soft = soft_consensus(record)?;
    Ok(SubjectConsensus {
        ranking,
        hypnogram,
        soft,
    })
}
