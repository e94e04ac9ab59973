//! Named prediction cases. Every case predicts a member's strain from `loc1`.

use serde::Serialize;

use crate::dataset::TrainKind;
use crate::lstm::NetworkConfig;

/// RMSE (microstrain) and accuracy reported for the original field-measured
/// records. Those records are not available, so these are reference numbers
/// only and are not expected from synthetic runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldReference {
    pub rmse: f64,
    pub accuracy_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub source: &'static str,
    pub target: &'static str,
    pub speed_kmph: f64,
    pub train: TrainKind,
    pub network: NetworkConfig,
    pub field_reference: FieldReference,
}

pub const SOURCE_CHANNEL: &str = "loc1";

// Dense width for the stacked cases, which name no dense layer of their own.
const STACKED_DENSE: usize = 30;

pub fn all_presets() -> Vec<ExperimentPreset> {
    let make = |name, description, target, speed_kmph, train, network, rmse, accuracy_percent| {
        ExperimentPreset {
            name,
            description,
            source: SOURCE_CHANNEL,
            target,
            speed_kmph,
            train,
            network,
            field_reference: FieldReference {
                rmse,
                accuracy_percent,
            },
        }
    };
    vec![
        make(
            "case1",
            "loc1 -> loc3, test train at 50 km/h; 20 LSTM units, dense 30, window 50",
            "loc3",
            50.0,
            TrainKind::Test,
            NetworkConfig::new(vec![20], 30, 50),
            8.929,
            95.19,
        ),
        make(
            "case2",
            "loc1 -> loc3, test train at 5 km/h; 10 LSTM units, dense 30, window 50",
            "loc3",
            5.0,
            TrainKind::Test,
            NetworkConfig::new(vec![10], 30, 50),
            9.361,
            94.66,
        ),
        make(
            "case3a",
            "loc1 -> loc4, test train at 50 km/h; 20 LSTM units, dense 50, window 50",
            "loc4",
            50.0,
            TrainKind::Test,
            NetworkConfig::new(vec![20], 50, 50),
            7.326,
            88.71,
        ),
        make(
            "case3b",
            "loc1 -> loc5, test train at 5 km/h; stacked LSTM 80 -> 60, window 50",
            "loc5",
            5.0,
            TrainKind::Test,
            NetworkConfig::new(vec![80, 60], STACKED_DENSE, 50),
            7.027,
            84.66,
        ),
        make(
            "case4",
            "loc1 -> loc4, passenger train at 5 km/h; stacked LSTM 80 -> 60, window 60",
            "loc4",
            5.0,
            TrainKind::Passenger,
            NetworkConfig::new(vec![80, 60], STACKED_DENSE, 60),
            4.451,
            86.96,
        ),
    ]
}

pub fn preset(name: &str) -> Option<ExperimentPreset> {
    all_presets().into_iter().find(|p| p.name == name)
}

pub fn preset_names() -> Vec<&'static str> {
    all_presets().iter().map(|p| p.name).collect()
}
