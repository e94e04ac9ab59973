//! JSON persistence of trained models.
//!
//! Field order is fixed by the struct definitions and channel statistics are
//! kept in a sorted map, so serializing the same artifact always yields the
//! same bytes. Floats are written with the shortest representation that
//! parses back to the identical `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::lstm::{forward_window, NetworkConfig, NetworkParams};
use crate::math::Vector;
use crate::training::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub normalization: NormStats,
    pub source_label: String,
    pub target_label: String,
    pub seed: u64,
    /// Unix seconds; `null` unless the caller supplies one, so reruns stay byte-identical.
    pub created_unix: Option<i64>,
    pub params: NetworkParams,
}

impl ModelArtifact {
    /// Predicts one target value (microstrain) from a raw source window (microstrain).
    pub fn predict_window(&self, raw_window: &[f64]) -> Result<f64> {
        let src = self.normalization.get(&self.source_label)?;
        let tgt = self.normalization.get(&self.target_label)?;
        let input: Vector = raw_window.iter().map(|&x| src.normalize(x)).collect();
        let (z, _) = forward_window(&self.params, &input, &self.network)?;
        Ok(tgt.denormalize(z))
    }

    /// Predictions for every stride-1 window of `source`; element `k` targets index `k + T - 1`.
    pub fn predict_series(&self, source: &Vector) -> Result<Vector> {
        let t = self.network.window_size;
        if source.len() < t {
            return Err(Error::Data(format!(
                "series of {} samples is shorter than the model window {t}",
                source.len()
            )));
        }
        source
            .as_slice()
            .windows(t)
            .map(|w| self.predict_window(w))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                supported: FORMAT_VERSION,
            });
        }
        self.network.validate().map_err(|e| Error::Artifact {
            field: "network".into(),
            message: e.to_string(),
        })?;
        self.params.validate(&self.network).map_err(|e| match e {
            Error::Shape {
                context,
                expected,
                found,
            } => Error::Artifact {
                field: format!("params.{context}"),
                message: format!("expected {expected}, found {found}"),
            },
            Error::NonFinite(what) => Error::Artifact {
                field: format!("params.{what}"),
                message: "non-finite value".into(),
            },
            other => other,
        })?;
        for label in [&self.source_label, &self.target_label] {
            let s = self.normalization.get(label).map_err(|_| Error::Artifact {
                field: "normalization".into(),
                message: format!("missing statistics for channel '{label}'"),
            })?;
            if !(s.std > 0.0 && s.std.is_finite() && s.mean.is_finite()) {
                return Err(Error::Artifact {
                    field: format!("normalization.{label}"),
                    message: format!("invalid statistics {s:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: "<memory>".into(),
            source: e,
        })?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        // Check the version before the full schema so old files get a clear error.
        #[derive(Deserialize)]
        struct Probe {
            format_version: u32,
        }
        let probe: Probe = serde_json::from_str(text).map_err(|e| Error::Json {
            path: origin.to_path_buf(),
            source: e,
        })?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: probe.format_version,
                supported: FORMAT_VERSION,
            });
        }
        let artifact: ModelArtifact = serde_json::from_str(text).map_err(|e| Error::Json {
            path: origin.to_path_buf(),
            source: e,
        })?;
        artifact.validate()?;
        Ok(artifact)
    }
}

pub fn save(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, artifact.to_json()?.as_bytes())
}

pub fn load(path: &Path) -> Result<ModelArtifact> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelArtifact::from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ChannelStats;
    use crate::lstm::init_network;
    use crate::math::Prng;

    fn artifact() -> ModelArtifact {
        let network = NetworkConfig::new(vec![3], 2, 4);
        let params = init_network(&network, &mut Prng::new(1)).unwrap();
        let mut normalization = NormStats::default();
        normalization
            .channels
            .insert("loc1".into(), ChannelStats { mean: 10.0, std: 3.0 });
        normalization
            .channels
            .insert("loc3".into(), ChannelStats { mean: -2.0, std: 0.1 });
        ModelArtifact {
            format_version: FORMAT_VERSION,
            network,
            training: TrainConfig::default(),
            normalization,
            source_label: "loc1".into(),
            target_label: "loc3".into(),
            seed: 0,
            created_unix: None,
            params,
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let a = artifact();
        let json = a.to_json().unwrap();
        assert!(json.contains("\"format_version\": 1"));
        assert!(json.contains("\"W_xi\""));
        let b = ModelArtifact::from_json(&json, Path::new("mem")).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_json().unwrap(), json);
        let w = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            a.predict_window(&w).unwrap().to_bits(),
            b.predict_window(&w).unwrap().to_bits()
        );
    }

    #[test]
    fn truncated_json_is_parse_error() {
        let json = artifact().to_json().unwrap();
        let err = ModelArtifact::from_json(&json[..json.len() / 2], Path::new("m.json")).unwrap_err();
        assert!(matches!(err, Error::Json { .. }), "{err}");
    }

    #[test]
    fn version_checked() {
        let json = artifact().to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 7");
        let err = ModelArtifact::from_json(&json, Path::new("m.json")).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 7, .. }));
    }

    #[test]
    fn shape_error_names_field() {
        let mut a = artifact();
        a.params.layers[0].w_xi = crate::math::Matrix::zeros(3, 2);
        let json = a.to_json().unwrap();
        let err = ModelArtifact::from_json(&json, Path::new("m.json")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("W_xi"), "{msg}");
    }

    #[test]
    fn missing_normalization_rejected() {
        let mut a = artifact();
        a.normalization.channels.remove("loc3");
        assert!(a.validate().is_err());
    }

    #[test]
    fn predict_series_windows() {
        let a = artifact();
        let src: Vector = (0..10).map(f64::from).collect();
        let p = a.predict_series(&src).unwrap();
        assert_eq!(p.len(), 7);
        assert_eq!(p[2], a.predict_window(&[2.0, 3.0, 4.0, 5.0]).unwrap());
        assert!(a.predict_series(&Vector::zeros(3)).is_err());
    }
}
