//! Frame-level evaluation and result tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{prediction_pairs, Sequence};
use crate::error::{Error, Result};
use crate::factorized::Kind;
use crate::model::GruModel;
use crate::train::loss::frame_nll;
use crate::NOTES;

/// Anything that maps an input piano roll to next-step note probabilities.
pub trait SequenceModel {
    fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

impl SequenceModel for GruModel {
    fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.predict_sequence(inputs)
    }
}

/// Predicts the same probability for every note at every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel(pub f64);

impl SequenceModel for ConstantModel {
    fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![self.0; NOTES]; inputs.len()])
    }
}

/// True positives, false positives and false negatives over many frames.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl FrameCounts {
    /// Counts one frame; a note is predicted active iff `p > threshold`.
    pub fn add_frame(&mut self, p: &[f64], y: &[f64], threshold: f64) {
        for (&p, &y) in p.iter().zip(y) {
            match (p > threshold, y > 0.5) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
        }
    }

    /// `TP / (TP + FP + FN)`, or 1 when there is nothing to count.
    pub fn accuracy(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }
}

/// Frame accuracy over the valid timesteps (`mask[t] > 0`).
///
/// ```
/// use tensor_rnn::metrics::accuracy;
/// let mut p = vec![0.0; 88];
/// let mut y = vec![0.0; 88];
/// for j in 0..3 { p[j] = 0.9; y[j] = 1.0; }   // 3 true positives
/// p[10] = 0.9;                                // 1 false positive
/// y[20] = 1.0; y[21] = 1.0;                   // 2 false negatives
/// assert_eq!(accuracy(&[p], &[y], &[1.0], 0.5).unwrap(), 0.5);
/// ```
pub fn accuracy(predictions: &[Vec<f64>], targets: &[Vec<f64>], mask: &[f64], threshold: f64) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.len() != mask.len() {
        return Err(Error::shape(format!(
            "{} prediction frames, {} target frames and {} mask entries",
            predictions.len(),
            targets.len(),
            mask.len()
        )));
    }
    let mut counts = FrameCounts::default();
    for ((p, y), &m) in predictions.iter().zip(targets).zip(mask) {
        if p.len() != y.len() {
            return Err(Error::shape(format!("frames of length {} and {}", p.len(), y.len())));
        }
        if m > 0.0 {
            counts.add_frame(p, y, threshold);
        }
    }
    Ok(counts.accuracy())
}

/// Split-level scores. Both are micro-averaged over every predicted timestep
/// of every sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub nll: f64,
    pub acc: f64,
    pub timesteps: usize,
    pub counts: FrameCounts,
}

/// Next-step NLL and frame accuracy (threshold 0.5) of `model` on `split`.
pub fn evaluate(model: &impl SequenceModel, split: &[Sequence]) -> Result<Evaluation> {
    let mut total = 0.0;
    let mut timesteps = 0usize;
    let mut counts = FrameCounts::default();
    for seq in split {
        let (x, y) = prediction_pairs(seq);
        if x.is_empty() {
            continue;
        }
        let p = model.predict(&x)?;
        if p.len() != y.len() {
            return Err(Error::shape(format!(
                "model returned {} frames for {} inputs",
                p.len(),
                y.len()
            )));
        }
        for (p, y) in p.iter().zip(&y) {
            total += frame_nll(p, y);
            counts.add_frame(p, y, 0.5);
        }
        timesteps += y.len();
    }
    if timesteps == 0 {
        return Err(Error::config(
            "cannot evaluate on a split without any sequence of length ≥ 2",
        ));
    }
    Ok(Evaluation {
        nll: total / timesteps as f64,
        acc: counts.accuracy(),
        timesteps,
        counts,
    })
}

/// One line of a search report or result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_kind: Kind,
    pub rank_config: String,
    pub param_count: usize,
    pub lr: f64,
    pub dropout: f64,
    pub train_nll: Option<f64>,
    pub valid_nll: Option<f64>,
    pub test_nll: Option<f64>,
    pub test_acc: Option<f64>,
    pub epochs: usize,
    pub wall_time_s: Option<f64>,
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "model_kind",
    "rank_config",
    "param_count",
    "lr",
    "dropout",
    "train_nll",
    "valid_nll",
    "test_nll",
    "test_acc",
    "epochs",
    "wall_time_s",
];

fn kind_order(k: Kind) -> usize {
    Kind::ALL.iter().position(|&x| x == k).unwrap_or(usize::MAX)
}

/// Rows grouped by model kind and sorted by ascending `param_count` within
/// each kind. The sort is stable.
pub fn sort_table(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut out = rows.to_vec();
    out.sort_by_key(|r| (kind_order(r.model_kind), r.param_count));
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `rows` as CSV with the [`REPORT_COLUMNS`] header. Missing values are empty fields.
pub fn write_csv(rows: &[ReportRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.model_kind.to_string(),
            r.rank_config.clone(),
            r.param_count.to_string(),
            r.lr.to_string(),
            r.dropout.to_string(),
            opt(r.train_nll),
            opt(r.valid_nll),
            opt(r.test_nll),
            opt(r.test_acc),
            r.epochs.to_string(),
            opt(r.wall_time_s),
        ])?;
    }
    w.flush().map_err(|e| Error::Serde(e.to_string()))?;
    Ok(())
}

/// Result table: sorted rows as `(csv, json)` text.
pub fn emit_table(rows: &[ReportRow]) -> Result<(String, String)> {
    let sorted = sort_table(rows);
    let mut csv_buf = Vec::new();
    write_csv(&sorted, &mut csv_buf)?;
    let csv_text = String::from_utf8(csv_buf).map_err(|e| Error::Serde(e.to_string()))?;
    let json = serde_json::to_string_pretty(&sorted)?;
    Ok((csv_text, json))
}

/// A point of an NLL-versus-parameters curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub model_kind: Kind,
    pub param_count: usize,
    pub test_nll: Option<f64>,
}

/// One point per row, sorted by ascending `param_count` (ties keep input order),
/// as CSV text with header `model_kind,param_count,test_nll`.
pub fn plot_csv(rows: &[ReportRow]) -> Result<String> {
    let mut points: Vec<PlotPoint> = rows
        .iter()
        .map(|r| PlotPoint {
            model_kind: r.model_kind,
            param_count: r.param_count,
            test_nll: r.test_nll,
        })
        .collect();
    points.sort_by_key(|p| p.param_count);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_kind", "param_count", "test_nll"])?;
    for p in &points {
        w.write_record([p.model_kind.to_string(), p.param_count.to_string(), opt(p.test_nll)])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}
