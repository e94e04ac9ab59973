//! Prediction tables: compute from an artifact, CSV read/write, evaluation.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::RunSeries;
use crate::error::{Error, Result};
use crate::math::Vector;
use crate::metrics::{evaluate, EvalResult};
use crate::store::ModelArtifact;

pub const HEADER: &str = "index,time_s,predicted_microstrain";
pub const TARGET_COLUMN: &str = "target_microstrain";

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    /// Series index of the predicted sample.
    pub index: usize,
    pub time_s: f64,
    pub predicted: f64,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub rows: Vec<PredictionRow>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_target(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.target.is_some())
    }

    pub fn predicted(&self) -> Vector {
        self.rows.iter().map(|r| r.predicted).collect()
    }

    pub fn targets(&self) -> Result<Vector> {
        self.rows
            .iter()
            .map(|r| {
                r.target.ok_or_else(|| {
                    Error::Data(format!("predictions have no {TARGET_COLUMN} column"))
                })
            })
            .collect()
    }

    pub fn evaluate(&self) -> Result<EvalResult> {
        if self.is_empty() {
            return Err(Error::Data("no predictions to evaluate".into()));
        }
        evaluate(&self.predicted(), &self.targets()?)
    }

    pub fn to_csv_string(&self) -> String {
        let with_target = self.has_target();
        let mut out = String::from(HEADER);
        if with_target {
            out.push(',');
            out.push_str(TARGET_COLUMN);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", r.index, r.time_s, r.predicted);
            if let (true, Some(t)) = (with_target, r.target) {
                let _ = write!(out, ",{t}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv_string().as_bytes())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (_, header) = lines.next().ok_or_else(|| Error::CsvLine {
            line: 1,
            message: "empty predictions file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let with_target = match cols.as_slice() {
            ["index", "time_s", "predicted_microstrain"] => false,
            ["index", "time_s", "predicted_microstrain", "target_microstrain"] => true,
            _ => {
                return Err(Error::CsvLine {
                    line: 1,
                    message: format!("unexpected predictions header '{header}'"),
                })
            }
        };
        let mut rows = Vec::new();
        for (row, (idx, line)) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != cols.len() {
                return Err(Error::CsvLine {
                    line: idx + 1,
                    message: format!("expected {} cells, found {}", cols.len(), cells.len()),
                });
            }
            let num = |col: usize| -> Result<f64> {
                cells[col]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::CsvCell {
                        line: idx + 1,
                        row: row + 1,
                        col: col + 1,
                        message: format!("'{}' is not a finite number", cells[col]),
                    })
            };
            let index = cells[0].parse::<usize>().map_err(|_| Error::CsvCell {
                line: idx + 1,
                row: row + 1,
                col: 1,
                message: format!("'{}' is not an index", cells[0]),
            })?;
            rows.push(PredictionRow {
                index,
                time_s: num(1)?,
                predicted: num(2)?,
                target: if with_target { Some(num(3)?) } else { None },
            });
        }
        Ok(PredictionSet { rows })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}

/// Predicts every window of the run's source channel; includes the target
/// channel when the run has it.
pub fn predict_run(artifact: &ModelArtifact, run: &RunSeries) -> Result<PredictionSet> {
    let source = run.channel(&artifact.source_label)?;
    let t = artifact.network.window_size;
    if t > run.len() {
        return Err(Error::Data(format!(
            "model window {t} is longer than the series ({} samples)",
            run.len()
        )));
    }
    let predicted = artifact.predict_series(source)?;
    let target = run.channel(&artifact.target_label).ok();
    let rows = predicted
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let index = k + t - 1;
            PredictionRow {
                index,
                time_s: run.time_at(index),
                predicted: p,
                target: target.map(|v| v[index]),
            }
        })
        .collect();
    Ok(PredictionSet { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(with_target: bool) -> PredictionSet {
        PredictionSet {
            rows: (0..4)
                .map(|k| PredictionRow {
                    index: k + 9,
                    time_s: (k + 9) as f64 * 0.025,
                    predicted: k as f64 * 1.5 - 0.1,
                    target: with_target.then_some(k as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn csv_round_trip() {
        for t in [false, true] {
            let s = set(t);
            let text = s.to_csv_string();
            assert_eq!(text.lines().count(), 5);
            assert_eq!(PredictionSet::parse_csv(&text).unwrap(), s);
        }
    }

    #[test]
    fn evaluate_needs_target() {
        assert!(set(false).evaluate().is_err());
        assert!(PredictionSet::default().evaluate().is_err());
        let mut perfect = set(true);
        perfect.rows.iter_mut().for_each(|r| r.predicted = r.target.unwrap() + 1.0);
        let r = perfect.evaluate().unwrap();
        assert!((r.rmse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_header_and_cells() {
        assert!(PredictionSet::parse_csv("a,b,c\n1,2,3\n").is_err());
        let err = PredictionSet::parse_csv(&format!("{HEADER}\n1,0.1,x\n")).unwrap_err();
        assert!(matches!(err, Error::CsvCell { row: 1, col: 3, .. }), "{err}");
    }
}
