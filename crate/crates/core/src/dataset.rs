//! Strain run ingestion, per-channel z-scoring and sliding-window samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainKind {
    Test,
    Passenger,
    Synthetic,
}

impl TrainKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainKind::Test => "test",
            TrainKind::Passenger => "passenger",
            TrainKind::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for TrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "test" => Ok(TrainKind::Test),
            "passenger" => Ok(TrainKind::Passenger),
            "synthetic" => Ok(TrainKind::Synthetic),
            other => Err(Error::InvalidArgument(format!(
                "unknown train kind '{other}' (expected test, passenger or synthetic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMeta {
    pub train: Option<TrainKind>,
    pub speed_kmph: Option<f64>,
    pub source: Option<String>,
}

/// One crossing: equal-length strain channels (microstrain) sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries {
    dt: f64,
    channels: Vec<(String, Vector)>,
    pub meta: RunMeta,
}

impl RunSeries {
    pub fn new(dt: f64, channels: Vec<(String, Vector)>, meta: RunMeta) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Data(format!("sampling period must be > 0, got {dt}")));
        }
        if channels.is_empty() {
            return Err(Error::Data("a run needs at least one channel".into()));
        }
        let n = channels[0].1.len();
        if n < 2 {
            return Err(Error::Data(format!("channels need >= 2 samples, got {n}")));
        }
        for (k, (label, values)) in channels.iter().enumerate() {
            if values.len() != n {
                return Err(Error::Data(format!(
                    "channel '{label}' has {} samples, expected {n}",
                    values.len()
                )));
            }
            if channels[..k].iter().any(|(l, _)| l == label) {
                return Err(Error::Data(format!("duplicate channel label '{label}'")));
            }
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("channel '{label}' sample {pos}")));
            }
        }
        Ok(RunSeries { dt, channels, meta })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.channels[0].1.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(l, _)| l.as_str())
    }

    pub fn channels(&self) -> &[(String, Vector)] {
        &self.channels
    }

    pub fn channel(&self, label: &str) -> Result<&Vector> {
        self.channels
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::MissingChannel {
                label: label.to_string(),
                available: self.labels().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn has_channel(&self, label: &str) -> bool {
        self.channels.iter().any(|(l, _)| l == label)
    }

    pub fn time_at(&self, index: usize) -> f64 {
        index as f64 * self.dt
    }

    /// CSV text: metadata comments, a `time_s` column, then one column per channel.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# dt={}", self.dt);
        if let Some(train) = self.meta.train {
            let _ = writeln!(out, "# train={}", train.as_str());
        }
        if let Some(speed) = self.meta.speed_kmph {
            let _ = writeln!(out, "# speed_kmph={speed}");
        }
        if let Some(source) = &self.meta.source {
            let _ = writeln!(out, "# source={}", source.replace('\n', " "));
        }
        out.push_str("time_s");
        for (label, _) in &self.channels {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{}", self.time_at(i));
            for (_, values) in &self.channels {
                let _ = write!(out, ",{}", values[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv_string().as_bytes())
    }
}

const TIME_COLUMNS: [&str; 4] = ["time", "time_s", "t", "t_s"];

/// Parses the CSV layout written by [`RunSeries::save_csv`]. A leading
/// time column (`time`, `time_s`, `t`, `t_s`) is dropped; `dt` comes
/// from a `# dt=` comment unless `dt_override` is given.
pub fn parse_csv(text: &str, dt_override: Option<f64>) -> Result<RunSeries> {
    let mut dt: Option<f64> = None;
    let mut meta = RunMeta::default();
    let mut header: Option<Vec<String>> = None;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut row = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                let value = value.trim();
                let bad = |what: &str| Error::CsvLine {
                    line: line_no,
                    message: format!("invalid {what} '{value}'"),
                };
                match key.trim() {
                    "dt" => dt = Some(value.parse().map_err(|_| bad("dt"))?),
                    "train" => meta.train = Some(value.parse().map_err(|_| bad("train kind"))?),
                    "speed_kmph" => {
                        meta.speed_kmph = Some(value.parse().map_err(|_| bad("speed"))?)
                    }
                    "source" => meta.source = Some(value.to_string()),
                    _ => {}
                }
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match &header {
            None => {
                let labels: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
                for (k, label) in labels.iter().enumerate() {
                    if label.is_empty() {
                        return Err(Error::CsvLine {
                            line: line_no,
                            message: format!("empty header label in column {}", k + 1),
                        });
                    }
                    if labels[..k].contains(label) {
                        return Err(Error::CsvLine {
                            line: line_no,
                            message: format!("duplicate channel label '{label}'"),
                        });
                    }
                }
                columns = vec![Vec::new(); labels.len()];
                header = Some(labels);
            }
            Some(labels) => {
                row += 1;
                if cells.len() != labels.len() {
                    return Err(Error::CsvLine {
                        line: line_no,
                        message: format!(
                            "row {row} has {} cells, header has {}",
                            cells.len(),
                            labels.len()
                        ),
                    });
                }
                for (col, cell) in cells.iter().enumerate() {
                    let value: f64 = cell.parse().map_err(|_| Error::CsvCell {
                        line: line_no,
                        row,
                        col: col + 1,
                        message: format!("'{cell}' is not a number"),
                    })?;
                    if !value.is_finite() {
                        return Err(Error::CsvCell {
                            line: line_no,
                            row,
                            col: col + 1,
                            message: format!("'{cell}' is not finite"),
                        });
                    }
                    columns[col].push(value);
                }
            }
        }
    }

    let labels = header.ok_or_else(|| Error::CsvLine {
        line: 1,
        message: "missing header row".into(),
    })?;
    let dt = dt_override
        .or(dt)
        .ok_or_else(|| Error::Data("missing sampling period: add '# dt=<seconds>' or pass --dt".into()))?;

    let mut channels: Vec<(String, Vector)> =
        labels.into_iter().zip(columns.into_iter().map(Vector::from)).collect();
    if TIME_COLUMNS.contains(&channels[0].0.to_ascii_lowercase().as_str()) {
        channels.remove(0);
    }
    RunSeries::new(dt, channels, meta)
}

pub fn load_csv(path: &Path, dt_override: Option<f64>) -> Result<RunSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, dt_override).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    /// Population statistics (divide by N).
    pub fn fit(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(ChannelStats {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-channel z-score statistics, keyed by label.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormStats {
    pub channels: BTreeMap<String, ChannelStats>,
}

impl NormStats {
    pub fn get(&self, label: &str) -> Result<ChannelStats> {
        self.channels
            .get(label)
            .copied()
            .ok_or_else(|| Error::MissingChannel {
                label: label.to_string(),
                available: self.channels.keys().cloned().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn normalize(&self, label: &str, values: &Vector) -> Result<Vector> {
        let s = self.get(label)?;
        Ok(values.map(|x| s.normalize(x)))
    }

    pub fn denormalize(&self, label: &str, values: &Vector) -> Result<Vector> {
        let s = self.get(label)?;
        Ok(values.map(|z| s.denormalize(z)))
    }
}

/// Fits mean/std for `channels` over the first `prefix` samples (whole run when `None`).
pub fn fit_normalizer(run: &RunSeries, channels: &[&str], prefix: Option<usize>) -> Result<NormStats> {
    let end = prefix.unwrap_or(run.len()).min(run.len());
    let mut stats = NormStats::default();
    for &label in channels {
        let values = &run.channel(label)?.as_slice()[..end];
        let s = ChannelStats::fit(values)
            .ok_or_else(|| Error::Data(format!("no samples to normalize channel '{label}'")))?;
        if !(s.std > 0.0) {
            return Err(Error::Data(format!(
                "channel '{label}' is constant over the fitting range; cannot normalize"
            )));
        }
        stats.channels.insert(label.to_string(), s);
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vector,
    pub target: f64,
    /// Series index of the target, i.e. the window's last index.
    pub end_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub window: usize,
    pub samples: Vec<Sample>,
    pub source_label: String,
    pub target_label: String,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Vec<Vector> {
        self.samples.iter().map(|s| s.input.clone()).collect()
    }

    pub fn targets(&self) -> Vector {
        self.samples.iter().map(|s| s.target).collect()
    }
}

/// Stride-1 windows: sample `i` is `(source[i..i+T], target[i+T-1])`.
pub fn make_windows(source: &Vector, target: &Vector, window: usize) -> Result<Vec<Sample>> {
    let n = source.len();
    if target.len() != n {
        return Err(Error::shape("make_windows target", n, target.len()));
    }
    if window == 0 || window > n {
        return Err(Error::InvalidArgument(format!(
            "window size {window} must be in 1..={n} (series length)"
        )));
    }
    Ok(source
        .as_slice()
        .windows(window)
        .enumerate()
        .map(|(i, w)| Sample {
            input: Vector::from(w),
            target: target[i + window - 1],
            end_index: i + window - 1,
        })
        .collect())
}

/// Windows one run's `source`/`target` channels.
pub fn window_run(run: &RunSeries, source: &str, target: &str, window: usize) -> Result<WindowedDataset> {
    let samples = make_windows(run.channel(source)?, run.channel(target)?, window)?;
    Ok(WindowedDataset {
        window,
        samples,
        source_label: source.to_string(),
        target_label: target.to_string(),
    })
}

/// Windows several runs and concatenates their samples; no window spans two
/// runs. Runs shorter than the window are skipped with a warning.
pub fn window_runs(runs: &[RunSeries], source: &str, target: &str, window: usize) -> Result<WindowedDataset> {
    let mut samples = Vec::new();
    for (k, run) in runs.iter().enumerate() {
        if run.len() < window {
            log::warn!(
                "skipping run {k}: {} samples is shorter than window {window}",
                run.len()
            );
            continue;
        }
        samples.extend(window_run(run, source, target, window)?.samples);
    }
    Ok(WindowedDataset {
        window,
        samples,
        source_label: source.to_string(),
        target_label: target.to_string(),
    })
}

/// Number of training samples for a chronological split: `⌈ratio·n⌉`.
pub fn split_point(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let n_train = (ratio * n as f64).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "split ratio {ratio} on {n} samples leaves an empty side ({n_train}/{})",
            n.saturating_sub(n_train)
        )));
    }
    Ok(n_train)
}

/// First `⌈ratio·n⌉` samples train, the rest validate; order is kept.
pub fn split_chronological(ds: &WindowedDataset, ratio: f64) -> Result<(WindowedDataset, WindowedDataset)> {
    let cut = split_point(ds.len(), ratio)?;
    let part = |samples: &[Sample]| WindowedDataset {
        window: ds.window,
        samples: samples.to_vec(),
        source_label: ds.source_label.clone(),
        target_label: ds.target_label.clone(),
    };
    Ok((part(&ds.samples[..cut]), part(&ds.samples[cut..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_small_file() {
        let text = "# dt=0.025\n# train=test\nloc1,loc3\n1.0,2.0\n3.5,-1e-2\n4,5\n";
        let run = parse_csv(text, None).unwrap();
        assert_eq!(run.len(), 3);
        assert_eq!(run.channels().len(), 2);
        assert_eq!(run.channel("loc3").unwrap().as_slice(), &[2.0, -0.01, 5.0]);
        assert_eq!(run.dt(), 0.025);
        assert_eq!(run.meta.train, Some(TrainKind::Test));
    }

    #[test]
    fn time_column_dropped() {
        let text = "# dt=0.5\ntime_s,a,b\n0,1,2\n0.5,3,4\n";
        let run = parse_csv(text, None).unwrap();
        assert_eq!(run.labels().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn bad_cell_names_coordinates() {
        let mut text = String::from("# dt=0.025\na,b\n");
        for r in 1..=6 {
            text.push_str(&format!("{r},{r}\n"));
        }
        text.push_str("7,oops\n");
        let err = parse_csv(&text, None).unwrap_err();
        match err {
            Error::CsvCell { row, col, .. } => assert_eq!((row, col), (7, 2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn structural_errors() {
        let ragged = parse_csv("# dt=1\na,b\n1,2\n3\n", None).unwrap_err();
        assert!(matches!(ragged, Error::CsvLine { line: 4, .. }), "{ragged}");
        let dup = parse_csv("# dt=1\na,a\n1,2\n3,4\n", None).unwrap_err();
        assert!(dup.to_string().contains("duplicate"));
        let no_dt = parse_csv("a,b\n1,2\n3,4\n", None).unwrap_err();
        assert!(no_dt.to_string().contains("dt"));
        assert_eq!(parse_csv("a,b\n1,2\n3,4\n", Some(0.1)).unwrap().dt(), 0.1);
        assert!(parse_csv("# dt=1\na\n1\n", None).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let run = RunSeries::new(
            0.025,
            vec![
                ("loc1".into(), Vector::from(vec![0.1, 1.0 / 3.0, -2.5e-7])),
                ("loc4".into(), Vector::from(vec![12.0, -0.0, 1e300])),
            ],
            RunMeta {
                train: Some(TrainKind::Passenger),
                speed_kmph: Some(5.0),
                source: Some("synthetic".into()),
            },
        )
        .unwrap();
        let back = parse_csv(&run.to_csv_string(), None).unwrap();
        assert_eq!(back, run);
    }

    #[test]
    fn missing_channel_lists_available() {
        let run = parse_csv("# dt=1\na,b\n1,2\n3,4\n", None).unwrap();
        let err = run.channel("loc9").unwrap_err();
        assert_eq!(
            err.to_string(),
            "channel 'loc9' not found; available channels: a, b"
        );
    }

    #[test]
    fn normalizer_examples() {
        let run = parse_csv("# dt=1\na,b\n1,5\n2,5\n3,5\n", None).unwrap();
        let s = fit_normalizer(&run, &["a"], None).unwrap().get("a").unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(fit_normalizer(&run, &["b"], None).is_err());

        let z = Vector::from(vec![-1.0, 1.0, -1.0, 1.0]);
        let s = ChannelStats::fit(z.as_slice()).unwrap();
        assert!(s.mean.abs() < 1e-15 && (s.std - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalizer_prefix_mode() {
        let run = parse_csv("# dt=1\na\n1\n3\n100\n", None).unwrap();
        let s = fit_normalizer(&run, &["a"], Some(2)).unwrap().get("a").unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
    }

    #[test]
    fn windows_examples() {
        let src = Vector::from(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let tgt = Vector::from(vec![10.0, 20.0, 30.0, 40.0, 50.0]);
        let s = make_windows(&src, &tgt, 3).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].input.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(s[0].target, 30.0);
        assert_eq!(s[2].end_index, 4);
        assert_eq!(make_windows(&src, &tgt, 5).unwrap().len(), 1);
        assert!(make_windows(&src, &tgt, 6).is_err());
        assert!(make_windows(&src, &tgt, 0).is_err());
    }

    #[test]
    fn windows_match_enumerator_n10_t4() {
        let src: Vector = (0..10).map(|i| i as f64 * 1.5).collect();
        let tgt: Vector = (0..10).map(|i| -(i as f64)).collect();
        let samples = make_windows(&src, &tgt, 4).unwrap();
        let mut expected = Vec::new();
        for i in 0..=(10 - 4) {
            let mut w = Vec::new();
            for j in 0..4 {
                w.push(src[i + j]);
            }
            expected.push((w, tgt[i + 3]));
        }
        assert_eq!(samples.len(), expected.len());
        for (s, (w, t)) in samples.iter().zip(expected) {
            assert_eq!(s.input.as_slice(), w.as_slice());
            assert_eq!(s.target, t);
        }
    }

    #[test]
    fn multi_run_windows_do_not_span_runs() {
        let run = |offset: f64, n: usize| {
            let v: Vector = (0..n).map(|i| offset + i as f64).collect();
            RunSeries::new(1.0, vec![("s".into(), v.clone()), ("t".into(), v)], RunMeta::default())
                .unwrap()
        };
        let runs = vec![run(0.0, 6), run(100.0, 2), run(200.0, 5)];
        let ds = window_runs(&runs, "s", "t", 3).unwrap();
        // (6-3+1) + skipped + (5-3+1)
        assert_eq!(ds.len(), 7);
        for s in &ds.samples {
            let first = s.input[0];
            let last = s.input[2];
            assert_eq!(last - first, 2.0, "window crosses a run boundary: {:?}", s.input);
        }
    }

    #[test]
    fn split_examples() {
        let src: Vector = (0..13).map(f64::from).collect();
        let ds = window_run(
            &RunSeries::new(1.0, vec![("a".into(), src.clone()), ("b".into(), src)], RunMeta::default())
                .unwrap(),
            "a",
            "b",
            4,
        )
        .unwrap();
        assert_eq!(ds.len(), 10);
        let (tr, va) = split_chronological(&ds, 0.8).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let rejoined: Vec<Sample> = tr.samples.iter().chain(&va.samples).cloned().collect();
        assert_eq!(rejoined, ds.samples);
        assert!(split_chronological(&ds, 0.99).is_err());
        assert!(split_chronological(&ds, 0.0).is_err());
        assert!(split_chronological(&ds, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(values in prop::collection::vec(-500.0f64..500.0, 2..50)) {
            let s = ChannelStats::fit(&values).unwrap();
            prop_assume!(s.std > 1e-6);
            for &x in &values {
                prop_assert!((s.denormalize(s.normalize(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
