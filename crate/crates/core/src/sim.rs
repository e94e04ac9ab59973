//! Synthetic strain records for a train crossing a simply supported truss span.
//!
//! Each member responds through a piecewise-linear influence line; a
//! channel is the static superposition of every axle's load times the
//! member's ordinate at that axle's position, plus seeded Gaussian noise.
//! All magnitudes here are synthetic.

use serde::{Deserialize, Serialize};

use crate::dataset::{RunMeta, RunSeries, TrainKind};
use crate::error::{Error, Result};
use crate::math::{Prng, Vector};

pub const DEFAULT_SPAN_M: f64 = 45.72;
pub const DEFAULT_DT_S: f64 = 0.025;
pub const DEFAULT_NOISE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axle {
    /// Distance behind the leading axle.
    pub offset_m: f64,
    pub load_kn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub name: String,
    pub kind: TrainKind,
    pub axles: Vec<Axle>,
}

impl TrainSpec {
    pub fn new(name: impl Into<String>, kind: TrainKind, axles: Vec<Axle>) -> Result<Self> {
        let spec = TrainSpec {
            name: name.into(),
            kind,
            axles,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .axles
            .first()
            .ok_or_else(|| Error::InvalidArgument("a train needs at least one axle".into()))?;
        if first.offset_m != 0.0 {
            return Err(Error::InvalidArgument("first axle offset must be 0".into()));
        }
        if self.axles.windows(2).any(|w| !(w[1].offset_m > w[0].offset_m)) {
            return Err(Error::InvalidArgument(
                "axle offsets must be strictly increasing".into(),
            ));
        }
        if self.axles.iter().any(|a| !(a.load_kn > 0.0 && a.load_kn.is_finite())) {
            return Err(Error::InvalidArgument("axle loads must be > 0".into()));
        }
        Ok(())
    }

    /// Leading to trailing axle distance.
    pub fn length_m(&self) -> f64 {
        self.axles.last().map_or(0.0, |a| a.offset_m)
    }

    pub fn loads(&self) -> impl Iterator<Item = f64> + '_ {
        self.axles.iter().map(|a| a.load_kn)
    }
}

// Six-axle locomotive: two three-axle bogies. Offsets from the leading axle.
const LOCO_AXLES_M: [f64; 6] = [0.0, 2.0, 4.0, 13.0, 15.0, 17.0];
const LOCO_AXLE_KN: f64 = 200.0;
// First vehicle coupling point behind the leading locomotive axle.
const LOCO_TAIL_M: f64 = 19.5;

const WAGON_LENGTH_M: f64 = 10.7;
const WAGON_AXLES_M: [f64; 4] = [1.5, 3.5, 7.2, 9.2];
const WAGON_AXLE_KN: f64 = 225.0;
const TEST_WAGONS: usize = 6;

const COACH_LENGTH_M: f64 = 22.3;
const COACH_AXLES_M: [f64; 4] = [2.5, 5.0, 17.3, 19.8];
const COACH_AXLE_KN: f64 = 100.0;
const PASSENGER_COACHES: usize = 6;

fn consist(vehicle_axles: &[f64], vehicle_len: f64, count: usize, load: f64) -> Vec<Axle> {
    let mut axles: Vec<Axle> = LOCO_AXLES_M
        .iter()
        .map(|&o| Axle {
            offset_m: o,
            load_kn: LOCO_AXLE_KN,
        })
        .collect();
    for v in 0..count {
        let start = LOCO_TAIL_M + v as f64 * vehicle_len;
        axles.extend(vehicle_axles.iter().map(|&o| Axle {
            offset_m: start + o,
            load_kn: load,
        }));
    }
    axles
}

/// `Test`: locomotive plus loaded wagons with near-uniform axle loads.
/// `Passenger`: locomotive axles at twice the coach axle load.
pub fn preset_train(kind: TrainKind) -> TrainSpec {
    let (name, axles) = match kind {
        TrainKind::Test | TrainKind::Synthetic => (
            "test train: 6-axle locomotive + 6 loaded wagons",
            consist(&WAGON_AXLES_M, WAGON_LENGTH_M, TEST_WAGONS, WAGON_AXLE_KN),
        ),
        TrainKind::Passenger => (
            "passenger train: 6-axle locomotive + 6 coaches",
            consist(&COACH_AXLES_M, COACH_LENGTH_M, PASSENGER_COACHES, COACH_AXLE_KN),
        ),
    };
    TrainSpec {
        name: name.to_string(),
        kind,
        axles,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InfluenceShape {
    /// Single triangle with unit ordinate at `apex` (fraction of span).
    ChordTriangular { apex: f64 },
    /// `+1` at `positive_peak`, `-negative_ratio` at `negative_peak` (fractions of span, `positive_peak < negative_peak`).
    DiagonalBilinear {
        positive_peak: f64,
        negative_peak: f64,
        negative_ratio: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberModel {
    pub label: String,
    pub shape: InfluenceShape,
    /// Microstrain per kN at unit ordinate.
    pub scale: f64,
}

impl MemberModel {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        let ok = match self.shape {
            InfluenceShape::ChordTriangular { apex } => in_unit(apex),
            InfluenceShape::DiagonalBilinear {
                positive_peak,
                negative_peak,
                negative_ratio,
            } => {
                in_unit(positive_peak)
                    && in_unit(negative_peak)
                    && positive_peak < negative_peak
                    && negative_ratio.is_finite()
            }
        };
        if !ok || !self.scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid member model {}: {:?}",
                self.label, self.shape
            )));
        }
        Ok(())
    }
}

/// Members at five gauge locations: `loc1`–`loc3` on chords (single-signed
/// triangles), `loc4` and `loc5` on diagonals (sign-reversing lines).
pub fn default_members() -> Vec<MemberModel> {
    use InfluenceShape::*;
    let m = |label: &str, shape, scale| MemberModel {
        label: label.to_string(),
        shape,
        scale,
    };
    vec![
        m("loc1", ChordTriangular { apex: 0.35 }, 0.12),
        m("loc2", ChordTriangular { apex: 0.65 }, -0.09),
        m("loc3", ChordTriangular { apex: 0.42 }, 0.10),
        m(
            "loc4",
            DiagonalBilinear {
                positive_peak: 0.3,
                negative_peak: 0.45,
                negative_ratio: 0.6,
            },
            0.15,
        ),
        m(
            "loc5",
            DiagonalBilinear {
                positive_peak: 0.55,
                negative_peak: 0.7,
                negative_ratio: 1.2,
            },
            0.12,
        ),
    ]
}

/// Piecewise-linear interpolation through `(x_k, y_k)` knots sorted by `x`.
fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    knots.last().map_or(0.0, |k| k.1)
}

/// Member influence ordinate for a unit load `x` metres from the left support.
pub fn influence_ordinate(member: &MemberModel, x: f64, span: f64) -> f64 {
    if !(x > 0.0 && x < span) {
        return 0.0;
    }
    match member.shape {
        InfluenceShape::ChordTriangular { apex } => {
            interpolate(&[(0.0, 0.0), (apex * span, 1.0), (span, 0.0)], x)
        }
        InfluenceShape::DiagonalBilinear {
            positive_peak,
            negative_peak,
            negative_ratio,
        } => interpolate(
            &[
                (0.0, 0.0),
                (positive_peak * span, 1.0),
                (negative_peak * span, -negative_ratio),
                (span, 0.0),
            ],
            x,
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Noise {
    /// σ as a fraction of each channel's clean peak |strain|.
    RelativeToPeak(f64),
    /// σ in microstrain.
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub span_m: f64,
    pub dt_s: f64,
    pub speed_kmph: f64,
    pub noise: Noise,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(speed_kmph: f64, seed: u64) -> Self {
        SimConfig {
            span_m: DEFAULT_SPAN_M,
            dt_s: DEFAULT_DT_S,
            speed_kmph,
            noise: Noise::RelativeToPeak(DEFAULT_NOISE_FRACTION),
            seed,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise = Noise::Absolute(0.0);
        self
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_kmph * 1000.0 / 3600.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("span", self.span_m),
            ("dt", self.dt_s),
            ("speed", self.speed_kmph),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        let sigma = match self.noise {
            Noise::RelativeToPeak(s) | Noise::Absolute(s) => s,
        };
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {sigma}")));
        }
        Ok(())
    }

    /// `⌊(span + train length) / (v·dt)⌋ + 1`: first axle entering to last axle leaving.
    pub fn sample_count(&self, train: &TrainSpec) -> usize {
        let travel = self.span_m + train.length_m();
        (travel / (self.speed_mps() * self.dt_s)).floor() as usize + 1
    }
}

/// Noise-free member responses, one channel per member in order.
pub fn simulate_clean(
    train: &TrainSpec,
    members: &[MemberModel],
    cfg: &SimConfig,
) -> Result<Vec<(String, Vector)>> {
    cfg.validate()?;
    train.validate()?;
    if members.is_empty() {
        return Err(Error::InvalidArgument("at least one member is required".into()));
    }
    for m in members {
        m.validate()?;
    }
    let n = cfg.sample_count(train);
    let v = cfg.speed_mps();
    Ok(members
        .iter()
        .map(|m| {
            let values: Vector = (0..n)
                .map(|k| {
                    let front = v * (k as f64 * cfg.dt_s);
                    train
                        .axles
                        .iter()
                        .map(|a| {
                            a.load_kn * m.scale * influence_ordinate(m, front - a.offset_m, cfg.span_m)
                        })
                        .sum()
                })
                .collect();
            (m.label.clone(), values)
        })
        .collect())
}

/// Clean responses plus independent Gaussian noise per channel, drawn
/// channel by channel from `Prng::new(cfg.seed)`.
pub fn simulate_run(train: &TrainSpec, members: &[MemberModel], cfg: &SimConfig) -> Result<RunSeries> {
    let mut channels = simulate_clean(train, members, cfg)?;
    let mut rng = Prng::new(cfg.seed);
    for (_, values) in &mut channels {
        let peak = values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let sigma = match cfg.noise {
            Noise::RelativeToPeak(frac) => frac * peak,
            Noise::Absolute(s) => s,
        };
        if sigma > 0.0 {
            for x in values.as_mut_slice() {
                *x += sigma * rng.standard_normal();
            }
        }
    }
    let noise = match cfg.noise {
        Noise::RelativeToPeak(f) => format!("noise {}% of peak", f * 100.0),
        Noise::Absolute(s) => format!("noise sigma {s} microstrain"),
    };
    let meta = RunMeta {
        train: Some(train.kind),
        speed_kmph: Some(cfg.speed_kmph),
        source: Some(format!(
            "synthetic influence-line simulation; {}; span {} m; {noise}; seed {}",
            train.name, cfg.span_m, cfg.seed
        )),
    };
    RunSeries::new(cfg.dt_s, channels, meta)
}
