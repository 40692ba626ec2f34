use serde::{Deserialize, Serialize};

use super::fit::{fit, TrainConfig};
use crate::data::PianoRollDataset;
use crate::error::{Error, Result};
use crate::factorized::Kind;
use crate::metrics::{evaluate, write_csv, ReportRow};
use crate::model::{GruModel, ModelSpec};

/// What a trainer hands back for one `(lr, dropout)` cell.
#[derive(Debug, Clone)]
pub struct TrainedCell<M> {
    pub model: M,
    pub train_nll: f64,
    pub valid_nll: f64,
    pub epochs: usize,
    pub wall_time_s: f64,
}

/// Trains a model for one grid cell. An [`Error::Numerical`] marks the cell
/// as diverged; any other error aborts the search.
pub trait CellTrainer {
    type Model;

    fn train_cell(&mut self, lr: f64, dropout: f64) -> Result<TrainedCell<Self::Model>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok {
        train_nll: f64,
        valid_nll: f64,
        epochs: usize,
        wall_time_s: f64,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub lr: f64,
    pub dropout: f64,
    pub status: CellStatus,
}

#[derive(Debug, Clone)]
pub struct GridOutcome<M> {
    /// Every cell in grid order: learning rates outer, dropouts inner.
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the minimum validation NLL (first on ties).
    pub best: usize,
    pub model: M,
}

/// Trains one model per `(lr, dropout)` pair and keeps the one with the
/// lowest validation NLL. Fails only if every cell diverges.
pub fn grid_search<T: CellTrainer>(cfg: &TrainConfig, trainer: &mut T) -> Result<GridOutcome<T::Model>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    let mut best: Option<(usize, f64, T::Model)> = None;
    for &lr in &cfg.learning_rates {
        for &dropout in &cfg.dropouts {
            let status = match trainer.train_cell(lr, dropout) {
                Ok(t) => {
                    if best.as_ref().is_none_or(|(_, v, _)| t.valid_nll < *v) {
                        best = Some((cells.len(), t.valid_nll, t.model));
                    }
                    CellStatus::Ok {
                        train_nll: t.train_nll,
                        valid_nll: t.valid_nll,
                        epochs: t.epochs,
                        wall_time_s: t.wall_time_s,
                    }
                }
                Err(Error::Numerical(reason)) => {
                    log::warn!("grid cell lr={lr} dropout={dropout} diverged: {reason}");
                    CellStatus::Failed { reason }
                }
                Err(e) => return Err(e),
            };
            cells.push(GridCell { lr, dropout, status });
        }
    }
    match best {
        Some((best, _, model)) => Ok(GridOutcome { cells, best, model }),
        None => Err(Error::Numerical("every grid cell diverged".into())),
    }
}

/// [`CellTrainer`] that runs [`fit`] on a dataset.
pub struct DatasetTrainer<'a> {
    pub spec: &'a ModelSpec,
    pub data: &'a PianoRollDataset,
    pub cfg: &'a TrainConfig,
}

impl CellTrainer for DatasetTrainer<'_> {
    type Model = GruModel;

    fn train_cell(&mut self, lr: f64, dropout: f64) -> Result<TrainedCell<GruModel>> {
        let out = fit(self.spec, &self.data.train, &self.data.valid, self.cfg, lr, dropout)?;
        Ok(TrainedCell {
            model: out.model,
            train_nll: out.train_nll,
            valid_nll: out.valid_nll,
            epochs: out.history.len(),
            wall_time_s: out.wall_time_s,
        })
    }
}

/// Result of a search for one model configuration. The selected cell's row
/// carries the test-set scores; other rows leave them empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub dataset: String,
    pub model_kind: Kind,
    pub rank_config: String,
    pub param_count: usize,
    pub selected: usize,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<Option<String>>,
}

impl SearchReport {
    /// The selected row.
    pub fn winner(&self) -> &ReportRow {
        &self.rows[self.selected]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_csv(&self.rows, &mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Compact label for a rank specification: `full` for dense models, otherwise
/// the values joined by `-`.
pub fn rank_label(spec: &ModelSpec) -> String {
    if spec.kind == Kind::Dense || spec.ranks.is_empty() {
        "full".to_string()
    } else {
        spec.ranks.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
    }
}

/// Full protocol for one configuration: grid search on train/valid, then the
/// selected model is scored on the test split.
pub fn search(spec: &ModelSpec, data: &PianoRollDataset, cfg: &TrainConfig) -> Result<(GruModel, SearchReport)> {
    let mut trainer = DatasetTrainer { spec, data, cfg };
    let outcome = grid_search(cfg, &mut trainer)?;
    let test = evaluate(&outcome.model, &data.test)?;
    let param_count = outcome.model.audit().cell_total;
    let rank_config = rank_label(spec);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, cell) in outcome.cells.iter().enumerate() {
        let selected = i == outcome.best;
        let mut row = ReportRow {
            model_kind: spec.kind,
            rank_config: rank_config.clone(),
            param_count,
            lr: cell.lr,
            dropout: cell.dropout,
            train_nll: None,
            valid_nll: None,
            test_nll: selected.then_some(test.nll),
            test_acc: selected.then_some(test.acc),
            epochs: 0,
            wall_time_s: None,
        };
        match &cell.status {
            CellStatus::Ok {
                train_nll,
                valid_nll,
                epochs,
                wall_time_s,
            } => {
                row.train_nll = Some(*train_nll);
                row.valid_nll = Some(*valid_nll);
                row.epochs = *epochs;
                row.wall_time_s = cfg.record_timing.then_some(*wall_time_s);
                failures.push(None);
            }
            CellStatus::Failed { reason } => failures.push(Some(reason.clone())),
        }
        rows.push(row);
    }
    let report = SearchReport {
        dataset: data.name.clone(),
        model_kind: spec.kind,
        rank_config,
        param_count,
        selected: outcome.best,
        rows,
        failures,
    };
    Ok((outcome.model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fake {
        losses: Vec<Option<f64>>,
        calls: usize,
    }

    impl CellTrainer for Fake {
        type Model = usize;

        fn train_cell(&mut self, _lr: f64, _dropout: f64) -> Result<TrainedCell<usize>> {
            let i = self.calls;
            self.calls += 1;
            match self.losses[i] {
                Some(v) => Ok(TrainedCell {
                    model: i,
                    train_nll: v,
                    valid_nll: v,
                    epochs: 1,
                    wall_time_s: 0.0,
                }),
                None => Err(Error::Numerical("nan".into())),
            }
        }
    }

    fn cfg(lrs: usize, drops: usize) -> TrainConfig {
        TrainConfig {
            learning_rates: (0..lrs).map(|i| 1e-3 * (i + 1) as f64).collect(),
            dropouts: (0..drops).map(|i| 0.1 * i as f64).collect(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn picks_argmin_and_records_failures() {
        let mut f = Fake {
            losses: vec![Some(9.0), None, Some(7.5), Some(8.0), None, Some(7.5)],
            calls: 0,
        };
        let out = grid_search(&cfg(2, 3), &mut f).unwrap();
        assert_eq!(out.best, 2);
        assert_eq!(out.model, 2);
        assert_eq!(out.cells.len(), 6);
        assert!(matches!(out.cells[1].status, CellStatus::Failed { .. }));
        assert_eq!((out.cells[3].lr, out.cells[3].dropout), (2e-3, 0.0));
    }

    #[test]
    fn all_failed_is_numerical_error() {
        let mut f = Fake {
            losses: vec![None, None],
            calls: 0,
        };
        assert!(matches!(grid_search(&cfg(1, 2), &mut f), Err(Error::Numerical(_))));
    }

    #[test]
    fn other_errors_abort() {
        struct Broken;
        impl CellTrainer for Broken {
            type Model = ();
            fn train_cell(&mut self, _: f64, _: f64) -> Result<TrainedCell<()>> {
                Err(Error::config("bad"))
            }
        }
        assert!(matches!(grid_search(&cfg(1, 1), &mut Broken), Err(Error::Config(_))));
    }
}
