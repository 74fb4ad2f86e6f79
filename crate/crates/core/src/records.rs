//! Multi-scored epoch annotations and per-epoch feature vectors.
//!
//! Label tables are plain comma-separated text with a header
//! `subject,epoch,<scorer_1>,...,<scorer_J>` and one row per 30-second epoch.
//! Stage tokens are the uppercase set `W N1 N2 N3 R NC`; a missing annotation
//! is written as `NC`. Feature tables use the header `subject,epoch,f_1,...,f_D`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::Array2;
use thiserror::Error;

use crate::table;

/// Number of scorable sleep stages (W, N1, N2, N3, R).
pub const NUM_CLASSES: usize = 5;

/// Fixed AASM epoch length.
pub const EPOCH_SECONDS: f64 = 30.0;

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown stage token {token:?}")]
    UnknownStage { line: usize, token: String },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("invalid record: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RecordsError>;

/// A sleep stage annotation. `NC` marks an epoch the scorer did not classify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SleepStage {
    W,
    N1,
    N2,
    N3,
    R,
    NC,
}

impl SleepStage {
    /// The five scorable classes in class-index order.
    pub const CLASSES: [SleepStage; NUM_CLASSES] = [
        SleepStage::W,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::R,
    ];

    pub fn class_index(self) -> Option<usize> {
        match self {
            SleepStage::W => Some(0),
            SleepStage::N1 => Some(1),
            SleepStage::N2 => Some(2),
            SleepStage::N3 => Some(3),
            SleepStage::R => Some(4),
            SleepStage::NC => None,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Self> {
        Self::CLASSES.get(index).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            SleepStage::W => "W",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::R => "R",
            SleepStage::NC => "NC",
        }
    }

    pub fn is_scored(self) -> bool {
        self != SleepStage::NC
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownStage(pub String);

impl fmt::Display for UnknownStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown stage token {:?}", self.0)
    }
}

impl std::error::Error for UnknownStage {}

impl FromStr for SleepStage {
    type Err = UnknownStage;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "W" => Ok(SleepStage::W),
            "N1" => Ok(SleepStage::N1),
            "N2" => Ok(SleepStage::N2),
            "N3" => Ok(SleepStage::N3),
            "R" => Ok(SleepStage::R),
            "NC" => Ok(SleepStage::NC),
            other => Err(UnknownStage(other.to_string())),
        }
    }
}

/// One scorer's stage sequence for one night.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypnogram {
    pub subject_id: String,
    pub scorer_id: String,
    pub stages: Vec<SleepStage>,
}

impl Hypnogram {
    pub fn new(subject_id: impl Into<String>, scorer_id: impl Into<String>, stages: Vec<SleepStage>) -> Self {
        Self {
            subject_id: subject_id.into(),
            scorer_id: scorer_id.into(),
            stages,
        }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Duration of the night in minutes.
    pub fn duration_minutes(&self) -> f64 {
        self.stages.len() as f64 * EPOCH_SECONDS / 60.0
    }
}

/// Which epochs [`MultiScoredRecord::drop_unclassified`] masks out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NcPolicy {
    /// Drop only epochs every scorer marked `NC`; partially annotated epochs stay.
    #[default]
    DropUnanimous,
    /// Drop every epoch with at least one `NC`.
    DropAny,
}

/// One subject's J×T grid of scorer annotations plus the retained-epoch mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiScoredRecord {
    subject_id: String,
    scorer_ids: Vec<String>,
    annotations: Vec<Vec<SleepStage>>,
    epoch_mask: Vec<bool>,
}

impl MultiScoredRecord {
    /// Builds a record from per-scorer hypnograms of identical length.
    pub fn from_hypnograms(subject_id: impl Into<String>, hypnograms: Vec<Hypnogram>) -> Result<Self> {
        let subject_id = subject_id.into();
        let (scorer_ids, annotations) = hypnograms.into_iter().map(|h| (h.scorer_id, h.stages)).unzip();
        Self::from_grid(subject_id, scorer_ids, annotations)
    }

    /// Builds a record from a scorer-major grid (`annotations[j][t]`).
    pub fn from_grid(
        subject_id: impl Into<String>,
        scorer_ids: Vec<String>,
        annotations: Vec<Vec<SleepStage>>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if annotations.is_empty() {
            return Err(RecordsError::Validation(format!(
                "subject {subject_id}: record has no scorers"
            )));
        }
        if scorer_ids.len() != annotations.len() {
            return Err(RecordsError::Validation(format!(
                "subject {subject_id}: {} scorer ids for {} hypnograms",
                scorer_ids.len(),
                annotations.len()
            )));
        }
        let t = annotations[0].len();
        for (id, stages) in scorer_ids.iter().zip(&annotations) {
            if stages.len() != t {
                return Err(RecordsError::Alignment(format!(
                    "subject {subject_id}: scorer {} has {} epochs, scorer {} has {}",
                    scorer_ids[0],
                    t,
                    id,
                    stages.len()
                )));
            }
        }
        Ok(Self {
            subject_id,
            scorer_ids,
            annotations,
            epoch_mask: vec![true; t],
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn scorer_ids(&self) -> &[String] {
        &self.scorer_ids
    }

    /// Total epoch count T, including masked epochs.
    pub fn num_epochs(&self) -> usize {
        self.epoch_mask.len()
    }

    pub fn num_scorers(&self) -> usize {
        self.annotations.len()
    }

    pub fn epoch_mask(&self) -> &[bool] {
        &self.epoch_mask
    }

    pub fn label(&self, scorer: usize, epoch: usize) -> SleepStage {
        self.annotations[scorer][epoch]
    }

    pub fn scorer_labels(&self, scorer: usize) -> &[SleepStage] {
        &self.annotations[scorer]
    }

    pub fn hypnogram(&self, scorer: usize) -> Hypnogram {
        Hypnogram::new(
            self.subject_id.clone(),
            self.scorer_ids[scorer].clone(),
            self.annotations[scorer].clone(),
        )
    }

    /// All scorers' annotations at one epoch.
    pub fn epoch_votes(&self, epoch: usize) -> impl Iterator<Item = SleepStage> + '_ {
        self.annotations.iter().map(move |row| row[epoch])
    }

    /// Original indices of the retained epochs, in order.
    pub fn retained_epochs(&self) -> Vec<usize> {
        self.epoch_mask
            .iter()
            .enumerate()
            .filter_map(|(t, &keep)| keep.then_some(t))
            .collect()
    }

    pub fn retained_count(&self) -> usize {
        self.epoch_mask.iter().filter(|&&keep| keep).count()
    }

    /// Per-class vote counts at one epoch, `NC` excluded.
    pub fn vote_counts(&self, epoch: usize) -> [usize; NUM_CLASSES] {
        let mut counts = [0usize; NUM_CLASSES];
        for stage in self.epoch_votes(epoch) {
            if let Some(k) = stage.class_index() {
                counts[k] += 1;
            }
        }
        counts
    }

    /// Masks out unclassified epochs according to `policy`. Already-masked
    /// epochs stay masked, so the operation is idempotent.
    pub fn drop_unclassified(&self, policy: NcPolicy) -> Self {
        let mut out = self.clone();
        for t in 0..out.num_epochs() {
            let scored = self.epoch_votes(t).filter(|s| s.is_scored()).count();
            let drop = match policy {
                NcPolicy::DropUnanimous => scored == 0,
                NcPolicy::DropAny => scored < self.num_scorers(),
            };
            if drop {
                out.epoch_mask[t] = false;
            }
        }
        out
    }
}

/// Per-epoch feature vectors for one subject, rows aligned with the
/// retained epochs of the paired record.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub subject_id: String,
    pub values: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(subject_id: impl Into<String>, values: Array2<f64>) -> Result<Self> {
        let subject_id = subject_id.into();
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(RecordsError::Validation(format!(
                "subject {subject_id}: non-finite feature value {bad}"
            )));
        }
        Ok(Self { subject_id, values })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn check_alignment(&self, record: &MultiScoredRecord) -> Result<()> {
        if self.subject_id != record.subject_id() {
            return Err(RecordsError::Alignment(format!(
                "feature subject {} paired with record {}",
                self.subject_id,
                record.subject_id()
            )));
        }
        if self.rows() != record.retained_count() {
            return Err(RecordsError::Alignment(format!(
                "subject {}: {} feature rows for {} retained epochs",
                self.subject_id,
                self.rows(),
                record.retained_count()
            )));
        }
        Ok(())
    }
}

struct Header {
    columns: Vec<String>,
}

fn read_header(lines: &mut impl Iterator<Item = (usize, std::io::Result<String>)>, tail: &str) -> Result<Header> {
    for (idx, line) in lines.by_ref() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let columns: Vec<String> = line.split(',').map(str::to_string).collect();
        if columns.len() < 3 || columns[0] != "subject" || columns[1] != "epoch" {
            return Err(RecordsError::Parse {
                line: idx + 1,
                message: format!("expected header `subject,epoch,{tail}`"),
            });
        }
        return Ok(Header { columns });
    }
    Err(RecordsError::Parse {
        line: 0,
        message: "empty input, missing header".into(),
    })
}

fn parse_epoch(cell: &str, line: usize) -> Result<usize> {
    cell.parse::<usize>().map_err(|_| RecordsError::Parse {
        line,
        message: format!("epoch index {cell:?} is not a non-negative integer"),
    })
}

/// Groups rows by subject, requiring contiguous blocks and consecutive epochs.
struct SubjectBlocks<T> {
    blocks: Vec<(String, Vec<T>)>,
}

impl<T> SubjectBlocks<T> {
    fn new() -> Self {
        Self { blocks: Vec::new() }
    }

    fn push(&mut self, subject: &str, epoch: usize, row: T, line: usize) -> Result<()> {
        let start_new = match self.blocks.last() {
            Some((last, _)) => last != subject,
            None => true,
        };
        if start_new {
            if self.blocks.iter().any(|(s, _)| s == subject) {
                return Err(RecordsError::Parse {
                    line,
                    message: format!("rows for subject {subject:?} are not contiguous"),
                });
            }
            self.blocks.push((subject.to_string(), Vec::new()));
        }
        let rows = &mut self.blocks.last_mut().expect("block pushed above").1;
        if epoch != rows.len() {
            return Err(RecordsError::Parse {
                line,
                message: format!("subject {subject:?}: expected epoch {}, found {epoch}", rows.len()),
            });
        }
        rows.push(row);
        Ok(())
    }
}

/// Parses a multi-scorer label table into one record per subject.
pub fn parse_labels<R: BufRead>(source: R) -> Result<Vec<MultiScoredRecord>> {
    let mut lines = source.lines().enumerate();
    let header = read_header(&mut lines, "scorer_1,...,scorer_J")?;
    let scorer_ids: Vec<String> = header.columns[2..].to_vec();
    let n_scorers = scorer_ids.len();

    let mut blocks: SubjectBlocks<Vec<Option<SleepStage>>> = SubjectBlocks::new();
    for (idx, line) in lines {
        let line = line?;
        let line = line.trim_end_matches('\r');
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() > n_scorers + 2 || cells.len() < 2 {
            return Err(RecordsError::Parse {
                line: lineno,
                message: format!("expected {} columns, found {}", n_scorers + 2, cells.len()),
            });
        }
        let epoch = parse_epoch(cells[1], lineno)?;
        let mut row = Vec::with_capacity(n_scorers);
        for j in 0..n_scorers {
            let cell = cells.get(j + 2).copied().unwrap_or("");
            if cell.is_empty() {
                row.push(None);
            } else {
                let stage = cell.parse::<SleepStage>().map_err(|e| RecordsError::UnknownStage {
                    line: lineno,
                    token: e.0,
                })?;
                row.push(Some(stage));
            }
        }
        blocks.push(cells[0], epoch, row, lineno)?;
    }

    blocks
        .blocks
        .into_iter()
        .map(|(subject, rows)| {
            let mut grid: Vec<Vec<SleepStage>> = vec![Vec::with_capacity(rows.len()); n_scorers];
            for (t, row) in rows.iter().enumerate() {
                for (j, cell) in row.iter().enumerate() {
                    if let Some(stage) = cell {
                        if grid[j].len() != t {
                            return Err(RecordsError::Alignment(format!(
                                "subject {subject}: scorer {} has a gap before epoch {t}",
                                scorer_ids[j]
                            )));
                        }
                        grid[j].push(*stage);
                    }
                }
            }
            MultiScoredRecord::from_grid(subject, scorer_ids.clone(), grid)
        })
        .collect()
}

/// Writes records as a label table. All records must share the same scorer ids.
pub fn write_labels<W: Write>(records: &[MultiScoredRecord], mut out: W) -> Result<()> {
    let Some(first) = records.first() else {
        return Err(RecordsError::Validation("no records to write".into()));
    };
    let ids = first.scorer_ids();
    if let Some(bad) = records.iter().find(|r| r.scorer_ids() != ids) {
        return Err(RecordsError::Validation(format!(
            "subject {} has scorer ids {:?}, expected {:?}",
            bad.subject_id(),
            bad.scorer_ids(),
            ids
        )));
    }
    writeln!(out, "subject,epoch,{}", ids.join(","))?;
    for record in records {
        for t in 0..record.num_epochs() {
            write!(out, "{},{}", record.subject_id(), t)?;
            for stage in record.epoch_votes(t) {
                write!(out, ",{stage}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Parses a feature table into one matrix per subject.
pub fn parse_features<R: BufRead>(source: R) -> Result<Vec<FeatureMatrix>> {
    let mut lines = source.lines().enumerate();
    let header = read_header(&mut lines, "f_1,...,f_D")?;
    let dim = header.columns.len() - 2;

    let mut blocks: SubjectBlocks<Vec<f64>> = SubjectBlocks::new();
    for (idx, line) in lines {
        let line = line?;
        let line = line.trim_end_matches('\r');
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 2 {
            return Err(RecordsError::Parse {
                line: lineno,
                message: format!("expected {} columns, found {}", dim + 2, cells.len()),
            });
        }
        let epoch = parse_epoch(cells[1], lineno)?;
        let mut row = Vec::with_capacity(dim);
        for cell in &cells[2..] {
            let v: f64 = cell.trim().parse().map_err(|_| RecordsError::Parse {
                line: lineno,
                message: format!("non-numeric feature value {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(RecordsError::Validation(format!(
                    "line {lineno}: non-finite feature value {cell:?}"
                )));
            }
            row.push(v);
        }
        blocks.push(cells[0], epoch, row, lineno)?;
    }

    blocks
        .blocks
        .into_iter()
        .map(|(subject, rows)| {
            let n = rows.len();
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let values = Array2::from_shape_vec((n, dim), flat).map_err(|e| RecordsError::Validation(e.to_string()))?;
            FeatureMatrix::new(subject, values)
        })
        .collect()
}

pub fn write_features<W: Write>(features: &[FeatureMatrix], mut out: W) -> Result<()> {
    let Some(first) = features.first() else {
        return Err(RecordsError::Validation("no feature matrices to write".into()));
    };
    let dim = first.dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
        return Err(RecordsError::Validation(format!(
            "subject {} has {} features, expected {dim}",
            bad.subject_id,
            bad.dim()
        )));
    }
    let names: Vec<String> = (1..=dim).map(|d| format!("f_{d}")).collect();
    writeln!(out, "subject,epoch,{}", names.join(","))?;
    for fm in features {
        for (t, row) in fm.values.rows().into_iter().enumerate() {
            write!(out, "{},{}", fm.subject_id, t)?;
            for v in row {
                write!(out, ",{}", table::fmt_f64(*v))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use SleepStage::*;

    fn parse(text: &str) -> Result<Vec<MultiScoredRecord>> {
        parse_labels(text.as_bytes())
    }

    #[test]
    fn class_indices_cover_five_stages() {
        for (k, stage) in SleepStage::CLASSES.iter().enumerate() {
            assert_eq!(stage.class_index(), Some(k));
            assert_eq!(SleepStage::from_class_index(k), Some(*stage));
        }
        assert_eq!(NC.class_index(), None);
        assert_eq!(SleepStage::from_class_index(5), None);
    }

    #[test]
    fn parses_two_scorer_three_epoch_file() {
        let recs = parse("subject,epoch,A,B\ns1,0,W,W\ns1,1,W,N1\ns1,2,N1,N1\n").unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.num_epochs(), 3);
        assert_eq!(r.num_scorers(), 2);
        assert_eq!(r.scorer_labels(0), &[W, W, N1]);
        assert_eq!(r.scorer_labels(1), &[W, N1, N1]);
    }

    #[test]
    fn rejects_unknown_token() {
        let err = parse("subject,epoch,A\ns1,0,W\ns1,1,N4\n").unwrap_err();
        match err {
            RecordsError::UnknownStage { line, token } => {
                assert_eq!(line, 3);
                assert_eq!(token, "N4");
            }
            other => panic!("unexpected {other:?}"),
        }
        // lowercase is not accepted either
        assert!(parse("subject,epoch,A\ns1,0,w\n").is_err());
    }

    #[test]
    fn unequal_scorer_lengths_is_alignment_error() {
        let err = parse("subject,epoch,A,B\ns1,0,W,W\ns1,1,W,W\ns1,2,W,W\ns1,3,,W\n").unwrap_err();
        assert!(matches!(err, RecordsError::Alignment(_)), "{err:?}");
        let err = parse("subject,epoch,A,B\ns1,0,W,W\ns1,1,W\n").unwrap_err();
        assert!(matches!(err, RecordsError::Alignment(_)), "{err:?}");
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = parse("subject,epoch,A\ns1,0,W,W\n").unwrap_err();
        assert!(matches!(err, RecordsError::Parse { line: 2, .. }), "{err:?}");
        let err = parse("subject,epoch,A\ns1,x,W\n").unwrap_err();
        assert!(matches!(err, RecordsError::Parse { line: 2, .. }), "{err:?}");
        let err = parse("subject,epoch,A\ns1,0,W\ns1,2,W\n").unwrap_err();
        assert!(matches!(err, RecordsError::Parse { line: 3, .. }), "{err:?}");
        let err = parse("subject,epoch,A\ns1,0,W\ns2,0,W\ns1,1,W\n").unwrap_err();
        assert!(matches!(err, RecordsError::Parse { line: 4, .. }), "{err:?}");
        assert!(parse("subj,ep,A\n").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn multiple_subjects_in_one_file() {
        let recs = parse("subject,epoch,A\ns1,0,W\ns1,1,R\ns2,0,N3\n").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].subject_id(), "s2");
        assert_eq!(recs[1].num_epochs(), 1);
    }

    #[test]
    fn drop_unclassified_masks_only_all_nc_epochs() {
        let rec = MultiScoredRecord::from_grid(
            "s",
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![NC, W, N2], vec![NC, NC, N2], vec![NC, W, NC]],
        )
        .unwrap();
        let kept = rec.drop_unclassified(NcPolicy::DropUnanimous);
        assert_eq!(kept.epoch_mask(), &[false, true, true]);
        assert_eq!(kept.retained_epochs(), vec![1, 2]);
        // [W,NC,W] keeps its two observations
        assert_eq!(kept.vote_counts(1), [2, 0, 0, 0, 0]);
        assert_eq!(kept.drop_unclassified(NcPolicy::DropUnanimous), kept);

        let strict = rec.drop_unclassified(NcPolicy::DropAny);
        assert_eq!(strict.retained_count(), 0);
    }

    #[test]
    fn drop_unclassified_identity_without_nc() {
        let rec = parse("subject,epoch,A,B\ns1,0,W,N1\ns1,1,R,R\n").unwrap().remove(0);
        assert_eq!(rec.drop_unclassified(NcPolicy::DropUnanimous), rec);
    }

    #[test]
    fn parses_feature_table() {
        let fm = parse_features("subject,epoch,f_1,f_2\ns1,0,1,2\ns1,1,3.5,-4\ns1,2,0,1e-3\n".as_bytes())
            .unwrap()
            .remove(0);
        assert_eq!(fm.rows(), 3);
        assert_eq!(fm.dim(), 2);
        assert_eq!(fm.values[[1, 0]], 3.5);
    }

    #[test]
    fn feature_errors() {
        let err = parse_features("subject,epoch,f_1\ns1,0,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, RecordsError::Parse { line: 2, .. }));
        let err = parse_features("subject,epoch,f_1\ns1,0,NaN\n".as_bytes()).unwrap_err();
        assert!(matches!(err, RecordsError::Validation(_)));
        let err = parse_features("subject,epoch,f_1\ns1,0,inf\n".as_bytes()).unwrap_err();
        assert!(matches!(err, RecordsError::Validation(_)));

        let fm = parse_features("subject,epoch,f_1\ns1,0,1\ns1,1,1\ns1,2,1\ns1,3,1\n".as_bytes())
            .unwrap()
            .remove(0);
        let rec = parse("subject,epoch,A\ns1,0,W\ns1,1,W\ns1,2,W\n").unwrap().remove(0);
        assert!(matches!(fm.check_alignment(&rec), Err(RecordsError::Alignment(_))));
    }

    #[test]
    fn feature_round_trip_is_bitwise() {
        let values = Array2::from_shape_vec((2, 2), vec![0.1, 1.0 / 3.0, -2.5e-17, 12345.678]).unwrap();
        let fm = FeatureMatrix::new("s", values).unwrap();
        let mut buf = Vec::new();
        write_features(std::slice::from_ref(&fm), &mut buf).unwrap();
        let back = parse_features(buf.as_slice()).unwrap().remove(0);
        assert_eq!(back, fm);
    }
}
