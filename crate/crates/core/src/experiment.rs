//! Run → normalized windows → trained artifact → evaluated predictions.

use serde::{Deserialize, Serialize};

use crate::dataset::{fit_normalizer, split_point, window_run, RunSeries};
use crate::error::{Error, Result};
use crate::lstm::NetworkConfig;
use crate::math::Vector;
use crate::metrics::{evaluate, EvalResult};
use crate::store::{ModelArtifact, FORMAT_VERSION};
use crate::training::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
pub enum Protocol {
    /// Train on every window of the run and evaluate on the same windows.
    InRun,
    /// Chronological split; normalization is fitted on the training prefix only.
    Holdout { train_fraction: f64 },
}

impl Protocol {
    pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub source: String,
    pub target: String,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub protocol: Protocol,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub artifact: ModelArtifact,
    pub report: TrainReport,
    /// Microstrain metrics on the evaluation windows.
    pub eval: EvalResult,
}

fn rescale(run: &RunSeries, stats: &crate::dataset::NormStats) -> Result<RunSeries> {
    let channels = run
        .channels()
        .iter()
        .filter(|(label, _)| stats.channels.contains_key(label))
        .map(|(label, values)| Ok((label.clone(), stats.normalize(label, values)?)))
        .collect::<Result<Vec<_>>>()?;
    RunSeries::new(run.dt(), channels, run.meta.clone())
}

pub fn run_experiment(
    run: &RunSeries,
    exp: &Experiment,
    created_unix: Option<i64>,
) -> Result<ExperimentOutcome> {
    exp.network.validate()?;
    if exp.network.input_size != 1 {
        return Err(Error::InvalidArgument(
            "single-channel input expects input_size = 1".into(),
        ));
    }
    let source = run.channel(&exp.source)?;
    let target = run.channel(&exp.target)?;
    let t = exp.network.window_size;
    let n = run.len();
    if t > n {
        return Err(Error::Data(format!(
            "window size {t} exceeds the run length {n}"
        )));
    }
    let n_windows = n - t + 1;
    let channels = [exp.source.as_str(), exp.target.as_str()];

    let (stats, n_train) = match exp.protocol {
        Protocol::InRun => (fit_normalizer(run, &channels, None)?, n_windows),
        Protocol::Holdout { train_fraction } => {
            let n_train = split_point(n_windows, train_fraction)?;
            (fit_normalizer(run, &channels, Some(n_train + t - 1))?, n_train)
        }
    };
    let scaled = rescale(run, &stats)?;
    let all = window_run(&scaled, &exp.source, &exp.target, t)?;
    let (train_set, val_set) = match exp.protocol {
        Protocol::InRun => (all.clone(), all),
        Protocol::Holdout { .. } => {
            let mut train_set = all.clone();
            let val_samples = train_set.samples.split_off(n_train);
            let val_set = crate::dataset::WindowedDataset {
                samples: val_samples,
                ..all
            };
            (train_set, val_set)
        }
    };

    let (params, mut report) = train(&exp.network, &exp.training, &train_set, &val_set)?;
    let artifact = ModelArtifact {
        format_version: FORMAT_VERSION,
        network: exp.network.clone(),
        training: exp.training.clone(),
        normalization: stats,
        source_label: exp.source.clone(),
        target_label: exp.target.clone(),
        seed: exp.training.seed,
        created_unix,
        params,
    };

    let predicted = artifact.predict_series(source)?;
    let eval_from = match exp.protocol {
        Protocol::InRun => 0,
        Protocol::Holdout { .. } => n_train,
    };
    let pred: Vector = predicted.as_slice()[eval_from..].into();
    let truth: Vector = target.as_slice()[t - 1 + eval_from..].into();
    let eval = evaluate(&pred, &truth)?;
    report.final_eval = Some(eval);
    Ok(ExperimentOutcome {
        artifact,
        report,
        eval,
    })
}
