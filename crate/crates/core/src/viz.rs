//! SVG hypnograms and stacked hypnodensity graphs, plus the companion data
//! table for each hypnodensity graph.

use std::fmt::{self, Write as _};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::metrics::{acs, MetricsError};
use crate::records::{Hypnogram, SleepStage, EPOCH_SECONDS, NUM_CLASSES};
use crate::table::{write_atomic, write_distribution};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("invalid plot input: {0}")]
    Validation(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, VizError>;

/// Stage colours, listed in stacking order from the top band down.
pub const STAGE_STYLE: [(SleepStage, &str); NUM_CLASSES] = [
    (SleepStage::W, "#f2c14e"),
    (SleepStage::R, "#e4572e"),
    (SleepStage::N1, "#76b7b2"),
    (SleepStage::N2, "#4e79a7"),
    (SleepStage::N3, "#2b2d6e"),
];

/// Hypnogram levels from the bottom of the axis up.
pub const HYPNOGRAM_LEVELS: [SleepStage; NUM_CLASSES] = [
    SleepStage::N3,
    SleepStage::N2,
    SleepStage::N1,
    SleepStage::R,
    SleepStage::W,
];

const WIDTH: f64 = 960.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 110.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 45.0;
const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesSource {
    SoftConsensus,
    ModelProbs,
}

impl fmt::Display for SeriesSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeriesSource::SoftConsensus => "soft_consensus",
            SeriesSource::ModelProbs => "model_probs",
        })
    }
}

/// A T×K per-epoch stage distribution for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct HypnodensitySeries {
    pub subject_id: String,
    pub source: SeriesSource,
    pub epochs: Vec<usize>,
    pub values: Array2<f64>,
}

impl HypnodensitySeries {
    pub fn new(
        subject_id: impl Into<String>,
        source: SeriesSource,
        epochs: Vec<usize>,
        values: Array2<f64>,
    ) -> Result<Self> {
        if values.ncols() != NUM_CLASSES || values.nrows() != epochs.len() || values.nrows() == 0 {
            return Err(VizError::Validation(format!(
                "distribution of shape {:?} with {} epoch indices",
                values.dim(),
                epochs.len()
            )));
        }
        for (t, row) in values.rows().into_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.sum() - 1.0).abs() > STOCHASTIC_TOL {
                return Err(VizError::Validation(format!("row {t} is not a probability vector")));
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            source,
            epochs,
            values,
        })
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn save(path: &Path, contents: &str) -> Result<()> {
    write_atomic(path, contents.as_bytes()).map_err(|source| VizError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Maps minutes and a unit-interval height onto the plot area.
struct Frame {
    minutes: f64,
    height: f64,
}

impl Frame {
    fn new(epochs: usize, height: f64) -> Self {
        Self {
            minutes: (epochs as f64 * EPOCH_SECONDS / 60.0).max(f64::MIN_POSITIVE),
            height,
        }
    }

    fn plot_width(&self) -> f64 {
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    }

    fn plot_height(&self) -> f64 {
        self.height - MARGIN_TOP - MARGIN_BOTTOM
    }

    fn x(&self, minute: f64) -> f64 {
        MARGIN_LEFT + minute / self.minutes * self.plot_width()
    }

    /// `frac` = 0 at the bottom of the plot, 1 at the top.
    fn y(&self, frac: f64) -> f64 {
        MARGIN_TOP + (1.0 - frac) * self.plot_height()
    }

    fn open(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{}" viewBox="0 0 {WIDTH} {}">"#,
            self.height, self.height
        );
        let _ = writeln!(
            s,
            r#"<rect x="0" y="0" width="{WIDTH}" height="{}" fill="white"/>"#,
            self.height
        );
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN_LEFT}" y="22" font-family="sans-serif" font-size="15">{}</text>"#,
            escape(title)
        );
        s
    }

    /// Frame rectangle plus hourly ticks on the time axis.
    fn time_axis(&self, s: &mut String) {
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            self.plot_width(),
            self.plot_height()
        );
        let bottom = self.y(0.0);
        let step = if self.minutes > 180.0 {
            60.0
        } else if self.minutes > 30.0 {
            10.0
        } else {
            1.0
        };
        let mut m = 0.0;
        while m <= self.minutes + 1e-9 {
            let x = self.x(m);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{bottom:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                bottom + 5.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{m}</text>"#,
                bottom + 18.0
            );
            m += step;
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">time (min)</text>"#,
            MARGIN_LEFT + self.plot_width() / 2.0,
            bottom + 36.0
        );
    }
}

/// Constant-stage runs as `(start minute, end minute, stage)`.
pub fn hypnogram_steps(stages: &[SleepStage]) -> Vec<(f64, f64, SleepStage)> {
    let epoch_min = EPOCH_SECONDS / 60.0;
    let mut steps: Vec<(f64, f64, SleepStage)> = Vec::new();
    for (t, &stage) in stages.iter().enumerate() {
        let (start, end) = (t as f64 * epoch_min, (t + 1) as f64 * epoch_min);
        match steps.last_mut() {
            Some(last) if last.2 == stage => last.1 = end,
            _ => steps.push((start, end, stage)),
        }
    }
    steps
}

fn level(stage: SleepStage) -> usize {
    HYPNOGRAM_LEVELS.iter().position(|&s| s == stage).expect("scored stage")
}

/// Step-plot SVG of a hypnogram.
pub fn render_hypnogram(hypnogram: &Hypnogram) -> Result<String> {
    if hypnogram.is_empty() {
        return Err(VizError::Validation("empty hypnogram".into()));
    }
    if let Some(t) = hypnogram.stages.iter().position(|s| !s.is_scored()) {
        return Err(VizError::Validation(format!("epoch {t} is NC")));
    }
    let frame = Frame::new(hypnogram.len(), 260.0);
    let level_y = |stage: SleepStage| frame.y((level(stage) as f64 + 0.5) / NUM_CLASSES as f64);
    let mut s = frame.open(&format!("Hypnogram {} ({})", hypnogram.subject_id, hypnogram.scorer_id));
    frame.time_axis(&mut s);
    for stage in HYPNOGRAM_LEVELS {
        let y = level_y(stage);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}" font-family="sans-serif" font-size="12" text-anchor="end" dominant-baseline="middle">{stage}</text>"#,
            MARGIN_LEFT - 8.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            MARGIN_LEFT + frame.plot_width()
        );
    }
    let steps = hypnogram_steps(&hypnogram.stages);
    let mut d = format!("M {:.3} {:.3}", frame.x(steps[0].0), level_y(steps[0].2));
    for (i, &(_, end, stage)) in steps.iter().enumerate() {
        if i > 0 {
            let _ = write!(d, " V {:.3}", level_y(stage));
        }
        let _ = write!(d, " H {:.3}", frame.x(end));
    }
    let _ = writeln!(
        s,
        r#"<path id="hypnogram" d="{d}" fill="none" stroke="black" stroke-width="1.5"/>"#
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_hypnogram(hypnogram: &Hypnogram, destination: &Path) -> Result<()> {
    save(destination, &render_hypnogram(hypnogram)?)
}

/// Lower and upper edge of every stage band at one epoch, in
/// [`STAGE_STYLE`] order, stacking from the bottom band up.
pub fn band_bounds(row: &[f64]) -> [(f64, f64); NUM_CLASSES] {
    let mut bounds = [(0.0, 0.0); NUM_CLASSES];
    let mut base = 0.0;
    for i in (0..NUM_CLASSES).rev() {
        let k = STAGE_STYLE[i].0.class_index().expect("scored stage");
        bounds[i] = (base, base + row[k]);
        base += row[k];
    }
    bounds
}

/// Stacked-area SVG of a hypnodensity series, annotated with `acs` if given.
pub fn render_hypnodensity(series: &HypnodensitySeries, acs_value: Option<f64>) -> String {
    let frame = Frame::new(series.epochs.len(), 300.0);
    let epoch_min = EPOCH_SECONDS / 60.0;
    let mut s = frame.open(&format!("Hypnodensity {} ({})", series.subject_id, series.source));
    let bounds: Vec<_> = series
        .values
        .rows()
        .into_iter()
        .map(|r| band_bounds(r.as_slice().expect("standard layout")))
        .collect();
    for (i, (stage, color)) in STAGE_STYLE.iter().enumerate() {
        let mut upper = Vec::with_capacity(2 * bounds.len());
        let mut lower = Vec::with_capacity(2 * bounds.len());
        for (t, b) in bounds.iter().enumerate() {
            let (x0, x1) = (frame.x(t as f64 * epoch_min), frame.x((t + 1) as f64 * epoch_min));
            upper.push(format!("{x0:.3},{:.4}", frame.y(b[i].1)));
            upper.push(format!("{x1:.3},{:.4}", frame.y(b[i].1)));
            lower.push(format!("{x0:.3},{:.4}", frame.y(b[i].0)));
            lower.push(format!("{x1:.3},{:.4}", frame.y(b[i].0)));
        }
        lower.reverse();
        upper.extend(lower);
        let _ = writeln!(
            s,
            r#"<polygon id="band-{stage}" points="{}" fill="{color}" stroke="none"/>"#,
            upper.join(" ")
        );
    }
    frame.time_axis(&mut s);
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end" dominant-baseline="middle">{tick}</text>"#,
            MARGIN_LEFT - 6.0,
            frame.y(tick)
        );
    }
    let legend_x = MARGIN_LEFT + frame.plot_width() + 15.0;
    for (i, (stage, color)) in STAGE_STYLE.iter().enumerate() {
        let y = MARGIN_TOP + 20.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{legend_x:.2}" y="{y:.2}" width="14" height="14" fill="{color}"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{stage}</text>"#,
            legend_x + 20.0,
            y + 11.0
        );
    }
    if let Some(v) = acs_value {
        let _ = writeln!(
            s,
            r#"<text id="acs" x="{:.2}" y="22" font-family="sans-serif" font-size="13" text-anchor="end">ACS = {v:.3}</text>"#,
            MARGIN_LEFT + frame.plot_width()
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the stacked-area SVG and the raw T×K table. With a paired
/// soft-consensus series the ACS between the two is computed, drawn on the
/// chart and returned.
pub fn emit_hypnodensity(
    series: &HypnodensitySeries,
    paired_soft_consensus: Option<&HypnodensitySeries>,
    svg_path: &Path,
    table_path: &Path,
) -> Result<Option<f64>> {
    let acs_value = match paired_soft_consensus {
        Some(sc) => {
            if sc.epochs != series.epochs {
                return Err(VizError::Validation("paired series cover different epochs".into()));
            }
            Some(acs(&sc.values, &series.values)?)
        }
        None => None,
    };
    let mut table = Vec::new();
    write_distribution(&mut table, &series.subject_id, &series.epochs, &series.values, true)
        .expect("writing to memory");
    save(table_path, std::str::from_utf8(&table).expect("ascii table"))?;
    save(svg_path, &render_hypnodensity(series, acs_value))?;
    Ok(acs_value)
}
