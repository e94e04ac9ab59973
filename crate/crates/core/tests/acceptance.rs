//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.
//! Tests hold a shared lock so timings are not distorted by each other.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use straincast::dataset::{make_windows, ChannelStats, NormStats, TrainKind};
use straincast::experiment::{run_experiment, Experiment, Protocol};
use straincast::lstm::{
    cell_step, forward_window, init_network, CellState, LstmLayerParams, NetworkConfig,
    NetworkParams, OutputGateCell, Peephole, PeepholeMode,
};
use straincast::math::{finite_diff_gradient, prng_vector, Matrix, Prng, Vector};
use straincast::metrics::{accuracy_percent, rmse};
use straincast::presets::preset;
use straincast::sim::{default_members, preset_train, simulate_clean, simulate_run, SimConfig};
use straincast::store::{self, ModelArtifact, FORMAT_VERSION};
use straincast::training::{bptt_gradients, TrainConfig};

static SERIAL: Mutex<()> = Mutex::new(());

// Tolerances and budgets.
const GRAD_REL_TOL: f64 = 1e-6;
const GRAD_ABS_FLOOR: f64 = 1e-10;
const GRAD_FD_STEP: f64 = 1e-5;
const GRAD_MIN_CONFIGS: usize = 100;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const CELL_TOL: f64 = 1e-12;
const WINDOW_MAX_N: usize = 200;
const METRIC_TOL: f64 = 1e-12;
const METRIC_PAIRS: usize = 1000;
const CASE1_MIN_ACCURACY: f64 = 90.0;
const CASE3B_MIN_ACCURACY: f64 = 80.0;
const END_TO_END_BUDGET: Duration = Duration::from_secs(300);
const CASE4_MIN_ACCURACY: f64 = 80.0;
const PERSIST_WINDOWS: usize = 100;
const PEEPHOLE_SEQ_LEN: usize = 50;

// Simulated runs used by the end-to-end criteria.
const TEST_RUN_SPEED_KMPH: f64 = 50.0;
const TEST_RUN_SEED: u64 = 11;
const PASSENGER_RUN_SPEED_KMPH: f64 = 50.0;
const PASSENGER_RUN_SEED: u64 = 12;
const TRAIN_SEED: u64 = 7;

fn verdict(n: u32, title: &str, pass: bool, detail: &str, elapsed: Duration) {
    println!(
        "criterion {n:>2} [{}] {title}: {detail} ({:.2} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(pass, "criterion {n} failed: {detail}");
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn criterion_01_field_reference_values_recorded() {
    let _g = lock();
    let start = Instant::now();
    let expected = [
        ("case1", 8.929, 95.19),
        ("case2", 9.361, 94.66),
        ("case3a", 7.326, 88.71),
        ("case3b", 7.027, 84.66),
        ("case4", 4.451, 86.96),
    ];
    let mut mismatches = Vec::new();
    for (name, rmse_ref, acc_ref) in expected {
        let p = preset(name).expect("preset exists");
        if p.field_reference.rmse != rmse_ref || p.field_reference.accuracy_percent != acc_ref {
            mismatches.push(name);
        }
    }
    verdict(
        1,
        "field reference values recorded (documentation only, not reproducible)",
        mismatches.is_empty(),
        &format!("{} presets checked, mismatches: {mismatches:?}", expected.len()),
        start.elapsed(),
    );
}

#[derive(Debug)]
struct GradCase {
    hidden: Vec<usize>,
    dense: usize,
    window: usize,
    peephole: PeepholeMode,
    gate: OutputGateCell,
    seed: u64,
}

fn grad_cases() -> Vec<GradCase> {
    let mut rng = Prng::new(2024);
    let mut cases = Vec::new();
    for rep in 0..3 {
        for peephole in [PeepholeMode::FullMatrix, PeepholeMode::Diagonal, PeepholeMode::None] {
            for gate in [OutputGateCell::Previous, OutputGateCell::Current] {
                for layers in [1usize, 2] {
                    for window in [1usize, 2, 5] {
                        let pick = |rng: &mut Prng| 1 + (rng.uniform() * 3.0) as usize;
                        let hidden = (0..layers).map(|_| pick(&mut rng)).collect();
                        cases.push(GradCase {
                            hidden,
                            dense: pick(&mut rng),
                            window,
                            peephole,
                            gate,
                            seed: 1000 * rep + cases.len() as u64,
                        });
                    }
                }
            }
        }
    }
    cases
}

/// Random non-zero biases and peepholes so every parameter is exercised.
fn randomized_net(cfg: &NetworkConfig, rng: &mut Prng) -> NetworkParams {
    let mut net = init_network(cfg, rng).unwrap();
    let flat: Vec<f64> = (0..net.num_params()).map(|_| rng.uniform_in(-0.8, 0.8)).collect();
    net.set_from_flat(&flat).unwrap();
    net
}

#[test]
fn criterion_02_gradient_oracle() {
    let _g = lock();
    let start = Instant::now();
    let cases = grad_cases();
    let mut worst_rel: f64 = 0.0;
    let mut failures = Vec::new();
    let mut checked = 0usize;
    for case in &cases {
        let cfg = NetworkConfig::new(case.hidden.clone(), case.dense, case.window)
            .with_peephole(case.peephole)
            .with_output_gate_cell(case.gate);
        let mut rng = Prng::new(case.seed);
        let net = randomized_net(&cfg, &mut rng);
        let batch: Vec<_> = (0..2)
            .map(|k| straincast::dataset::Sample {
                input: prng_vector(&mut rng, case.window, -1.5, 1.5).unwrap(),
                target: rng.uniform_in(-1.0, 1.0),
                end_index: k,
            })
            .collect();
        let (_, grads) = bptt_gradients(&net, &batch, &cfg).unwrap();
        let mut probe = net.clone();
        let numeric = finite_diff_gradient(
            |flat| {
                probe.set_from_flat(flat.as_slice()).unwrap();
                bptt_gradients(&probe, &batch, &cfg).unwrap().0
            },
            &net.to_flat(),
            GRAD_FD_STEP,
        )
        .unwrap();
        for (k, (a, n)) in grads.to_flat().iter().zip(numeric.iter()).enumerate() {
            checked += 1;
            let diff = (a - n).abs();
            let scale = a.abs().max(n.abs());
            if scale > 1e-6 {
                worst_rel = worst_rel.max(diff / scale);
            }
            if !(diff <= GRAD_REL_TOL * scale || diff <= GRAD_ABS_FLOOR) {
                failures.push(format!("{case:?} param {k}: analytic {a} numeric {n}"));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = cases.len() >= GRAD_MIN_CONFIGS && failures.is_empty() && elapsed < GRAD_BUDGET;
    verdict(
        2,
        "BPTT gradients match central differences",
        pass,
        &format!(
            "{} configs, {checked} gradient entries, worst relative error {worst_rel:.2e} (entries above 1e-6), {} failures{}",
            cases.len(),
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
        elapsed,
    );
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn criterion_03_cell_step_oracle() {
    let _g = lock();
    let start = Instant::now();
    let mut errs: Vec<(String, f64)> = Vec::new();

    // all-zero weights, zero state
    let zero = LstmLayerParams::zeros(1, 3, PeepholeMode::FullMatrix);
    let (s, tr) = cell_step(&zero, &Vector::from(vec![0.7]), &CellState::zeros(3), OutputGateCell::Previous)
        .unwrap();
    let gate_err = tr
        .i
        .iter()
        .chain(tr.f.iter())
        .chain(tr.o.iter())
        .map(|v| (v - 0.5).abs())
        .fold(0.0, f64::max);
    errs.push(("zero state gates".into(), gate_err));
    errs.push(("zero state c,h".into(), s.c.iter().chain(s.h.iter()).map(|v| v.abs()).fold(0.0, f64::max)));

    // all-zero weights, hidden 1, c_prev = 1
    let zero1 = LstmLayerParams::zeros(1, 1, PeepholeMode::FullMatrix);
    let prev = CellState {
        h: Vector::zeros(1),
        c: Vector::from(vec![1.0]),
    };
    let (s, _) = cell_step(&zero1, &Vector::from(vec![-2.0]), &prev, OutputGateCell::Previous).unwrap();
    errs.push(("c_prev=1: c".into(), (s.c[0] - 0.5).abs()));
    errs.push(("c_prev=1: h".into(), (s.h[0] - 0.231_058_578_630_004_9).abs()));

    // hand-worked scalar cell with every weight set, both output-gate modes
    let mut p = LstmLayerParams::zeros(1, 1, PeepholeMode::FullMatrix);
    let one = |v: f64| Matrix::from_vec(1, 1, vec![v]).unwrap();
    p.w_xi = one(0.5);
    p.w_xf = one(-0.3);
    p.w_xc = one(0.8);
    p.w_xo = one(0.2);
    p.w_hi = one(0.1);
    p.w_hf = one(0.4);
    p.w_hc = one(-0.6);
    p.w_ho = one(0.7);
    p.w_ci = Peephole::Full(one(0.25));
    p.w_cf = Peephole::Full(one(-0.15));
    p.w_co = Peephole::Full(one(0.35));
    p.b_i = Vector::from(vec![0.05]);
    p.b_f = Vector::from(vec![1.0]);
    p.b_c = Vector::from(vec![-0.1]);
    p.b_o = Vector::from(vec![0.2]);
    let (x, h0, c0) = (0.9, -0.4, 0.6);
    let i = sigmoid(0.5 * x + 0.1 * h0 + 0.25 * c0 + 0.05);
    let f = sigmoid(-0.3 * x + 0.4 * h0 - 0.15 * c0 + 1.0);
    let g = (0.8 * x - 0.6 * h0 - 0.1).tanh();
    let c = f * c0 + i * g;
    for (gate, c_star) in [(OutputGateCell::Previous, c0), (OutputGateCell::Current, c)] {
        let o = sigmoid(0.2 * x + 0.7 * h0 + 0.35 * c_star + 0.2);
        let h = o * c.tanh();
        let prev = CellState {
            h: Vector::from(vec![h0]),
            c: Vector::from(vec![c0]),
        };
        let (s, tr) = cell_step(&p, &Vector::from(vec![x]), &prev, gate).unwrap();
        let e = [tr.i[0] - i, tr.f[0] - f, tr.g[0] - g, tr.o[0] - o, s.c[0] - c, s.h[0] - h]
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        errs.push((format!("hand-worked {gate:?}"), e));
    }

    let worst = errs.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let bad: Vec<&String> = errs.iter().filter(|(_, e)| *e > CELL_TOL).map(|(n, _)| n).collect();
    verdict(
        3,
        "cell_step matches hand-computed values",
        bad.is_empty(),
        &format!("{} checks, max abs error {worst:.1e}, over tolerance: {bad:?}", errs.len()),
        start.elapsed(),
    );
}

#[test]
fn criterion_04_windowing_law() {
    let _g = lock();
    let start = Instant::now();
    let mut pairs = 0usize;
    let mut bad = Vec::new();
    for n in 1..=WINDOW_MAX_N {
        let source: Vector = (0..n).map(|k| k as f64 + 0.5).collect();
        let target: Vector = (0..n).map(|k| -(k as f64) * 2.0).collect();
        for t in 1..=n {
            pairs += 1;
            let samples = make_windows(&source, &target, t).unwrap();
            // brute-force enumeration of every start index
            let mut expected = Vec::new();
            let mut s = 0;
            while s + t <= n {
                let input: Vec<f64> = (s..s + t).map(|j| source[j]).collect();
                expected.push((input, target[s + t - 1], s + t - 1));
                s += 1;
            }
            let ok = samples.len() == n - t + 1
                && samples.len() == expected.len()
                && samples.iter().zip(&expected).all(|(a, (inp, tg, end))| {
                    a.input.as_slice() == inp.as_slice() && a.target == *tg && a.end_index == *end
                });
            if !ok {
                bad.push((n, t));
            }
        }
    }
    verdict(
        4,
        "windowing count and contents",
        bad.is_empty(),
        &format!("{pairs} (N, T) pairs, mismatches: {:?}", &bad[..bad.len().min(5)]),
        start.elapsed(),
    );
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= METRIC_TOL * b.abs().max(1.0)
}

#[test]
fn criterion_05_metric_oracle() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = Prng::new(99);
    let mut bad = 0usize;
    let mut scale_bad = 0usize;
    for _ in 0..METRIC_PAIRS {
        let n = 1 + (rng.uniform() * 64.0) as usize;
        let t: Vec<f64> = (0..n).map(|_| rng.uniform_in(-200.0, 200.0)).collect();
        let p: Vec<f64> = t.iter().map(|v| v + rng.uniform_in(-30.0, 30.0)).collect();
        let mut sq = 0.0;
        let mut tn = 0.0;
        for k in 0..n {
            sq += (t[k] - p[k]).powi(2);
            tn += t[k].powi(2);
        }
        let rmse_ref = (sq / n as f64).sqrt();
        let acc_ref = 100.0 * (1.0 - sq.sqrt() / tn.sqrt());
        let (pv, tv) = (Vector::from(p.clone()), Vector::from(t.clone()));
        if !close(rmse(&pv, &tv).unwrap(), rmse_ref) || !close(accuracy_percent(&pv, &tv).unwrap(), acc_ref)
        {
            bad += 1;
        }
        let k = rng.uniform_in(0.01, 100.0);
        let scaled = accuracy_percent(&pv.map(|v| v * k), &tv.map(|v| v * k)).unwrap();
        if !close(scaled, acc_ref) {
            scale_bad += 1;
        }
    }
    verdict(
        5,
        "rmse and accuracy match brute force; accuracy is scale invariant",
        bad == 0 && scale_bad == 0,
        &format!("{METRIC_PAIRS} pairs, {bad} metric mismatches, {scale_bad} scaling mismatches"),
        start.elapsed(),
    );
}

fn end_to_end(preset_name: &str, run: &straincast::dataset::RunSeries) -> (f64, f64) {
    let p = preset(preset_name).unwrap();
    let exp = Experiment {
        source: p.source.to_string(),
        target: p.target.to_string(),
        network: p.network,
        training: TrainConfig::default().with_seed(TRAIN_SEED),
        protocol: Protocol::InRun,
    };
    let out = run_experiment(run, &exp, None).unwrap();
    (out.eval.accuracy_percent, out.eval.rmse)
}

#[test]
fn criterion_06_end_to_end_test_train() {
    let _g = lock();
    let start = Instant::now();
    let run = simulate_run(
        &preset_train(TrainKind::Test),
        &default_members(),
        &SimConfig::new(TEST_RUN_SPEED_KMPH, TEST_RUN_SEED),
    )
    .unwrap();
    let (acc1, rmse1) = end_to_end("case1", &run);
    let t1 = start.elapsed();
    let (acc3b, rmse3b) = end_to_end("case3b", &run);
    let elapsed = start.elapsed();
    let pass = acc1 >= CASE1_MIN_ACCURACY
        && acc3b >= CASE3B_MIN_ACCURACY
        && acc1 > acc3b
        && elapsed < END_TO_END_BUDGET;
    verdict(
        6,
        "in-run accuracy on a simulated 50 km/h test-train run",
        pass,
        &format!(
            "{} samples; case1 loc1->loc3 {acc1:.2}% (RMSE {rmse1:.3}, {:.0} s), case3b loc1->loc5 {acc3b:.2}% (RMSE {rmse3b:.3}, {:.0} s); need >= {CASE1_MIN_ACCURACY} and >= {CASE3B_MIN_ACCURACY} within {} s",
            run.len(),
            t1.as_secs_f64(),
            (elapsed - t1).as_secs_f64(),
            END_TO_END_BUDGET.as_secs()
        ),
        elapsed,
    );
}

#[test]
fn criterion_07_passenger_train() {
    let _g = lock();
    let start = Instant::now();
    let train = preset_train(TrainKind::Passenger);
    let cfg = SimConfig::new(PASSENGER_RUN_SPEED_KMPH, PASSENGER_RUN_SEED);

    // "initial higher values": the locomotive's pass dominates the clean target
    let target = preset("case4").unwrap().target;
    let clean = simulate_clean(&train, &default_members(), &cfg).unwrap();
    let signal = &clean.iter().find(|(l, _)| l == target).unwrap().1;
    let third = signal.len() / 3;
    let early_peak = signal.as_slice()[..third].iter().map(|v| v.abs()).fold(0.0, f64::max);
    let late = &signal.as_slice()[third..];
    let late_mean = late.iter().map(|v| v.abs()).sum::<f64>() / late.len() as f64;
    let late_peak = late.iter().map(|v| v.abs()).fold(0.0, f64::max);

    let run = simulate_run(&train, &default_members(), &cfg).unwrap();
    let (acc, rmse4) = end_to_end("case4", &run);
    let pass = acc >= CASE4_MIN_ACCURACY && early_peak > late_mean;
    verdict(
        7,
        "passenger-train case and early-crossing peak",
        pass,
        &format!(
            "{} samples; case4 loc1->loc4 {acc:.2}% (RMSE {rmse4:.3}), need >= {CASE4_MIN_ACCURACY}; clean {target} |peak| first third {early_peak:.2} vs later mean |value| {late_mean:.2} (later peak {late_peak:.2})",
            run.len()
        ),
        start.elapsed(),
    );
}

#[test]
fn criterion_08_determinism() {
    let _g = lock();
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_straincast");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let names = [
        "run.csv",
        "model.json",
        "predictions.csv",
        "plot.svg",
        "plot.csv",
    ];
    for dir in &dirs {
        let d = dir.path();
        let path = |n: &str| d.join(n).to_str().unwrap().to_string();
        let steps: [Vec<String>; 4] = [
            vec!["simulate".into(), "--train".into(), "test".into(), "--speed".into(), "50".into(), "--seed".into(), "5".into(), "--out".into(), path("run.csv")],
            vec!["train".into(), "--preset".into(), "case1".into(), "--data".into(), path("run.csv"), "--epochs".into(), "3".into(), "--seed".into(), "5".into(), "--out".into(), path("model.json")],
            vec!["predict".into(), "--model".into(), path("model.json"), "--data".into(), path("run.csv"), "--out".into(), path("predictions.csv")],
            vec!["report".into(), "--predictions".into(), path("predictions.csv"), "--svg".into(), path("plot.svg"), "--csv".into(), path("plot.csv")],
        ];
        for args in &steps {
            let out = std::process::Command::new(bin)
                .args(args)
                .env_remove("SOURCE_DATE_EPOCH")
                .env_remove("STRAINCAST_SEED")
                .output()
                .unwrap();
            assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        }
    }
    let differing: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| {
            std::fs::read(dirs[0].path().join(n)).unwrap() != std::fs::read(dirs[1].path().join(n)).unwrap()
        })
        .collect();
    verdict(
        8,
        "pipeline reruns are byte-identical",
        differing.is_empty(),
        &format!("compared {names:?}; differing: {differing:?}"),
        start.elapsed(),
    );
}

#[test]
fn criterion_09_persistence_round_trip() {
    let _g = lock();
    let start = Instant::now();
    let cfg = NetworkConfig::new(vec![6, 4], 5, 12).with_peephole(PeepholeMode::FullMatrix);
    let mut rng = Prng::new(77);
    let mut norm = NormStats::default();
    norm.channels.insert("loc1".into(), ChannelStats { mean: 41.3, std: 17.9 });
    norm.channels.insert("loc5".into(), ChannelStats { mean: -3.2, std: 26.4 });
    let artifact = ModelArtifact {
        format_version: FORMAT_VERSION,
        network: cfg.clone(),
        training: TrainConfig::default(),
        normalization: norm,
        source_label: "loc1".into(),
        target_label: "loc5".into(),
        seed: 77,
        created_unix: None,
        params: randomized_net(&cfg, &mut rng),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    store::save(&artifact, &path).unwrap();
    let loaded = store::load(&path).unwrap();
    let mut max_ulps = 0u64;
    for _ in 0..PERSIST_WINDOWS {
        let w: Vec<f64> = (0..12).map(|_| rng.uniform_in(-50.0, 250.0)).collect();
        let a = artifact.predict_window(&w).unwrap();
        let b = loaded.predict_window(&w).unwrap();
        max_ulps = max_ulps.max((a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs());
    }
    verdict(
        9,
        "save/load/predict is bit-exact",
        max_ulps == 0 && loaded == artifact,
        &format!("{PERSIST_WINDOWS} windows, max difference {max_ulps} ulp"),
        start.elapsed(),
    );
}

fn strip_peepholes(net: &NetworkParams) -> NetworkParams {
    let mut out = net.clone();
    for layer in &mut out.layers {
        layer.w_ci = Peephole::None;
        layer.w_cf = Peephole::None;
        layer.w_co = Peephole::None;
    }
    out
}

#[test]
fn criterion_10_peephole_reduction() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = Prng::new(31);
    let mut compared = 0usize;
    let mut mismatches = 0usize;
    for hidden in [vec![4], vec![5, 3]] {
        for gate in [OutputGateCell::Previous, OutputGateCell::Current] {
            let full_cfg = NetworkConfig::new(hidden.clone(), 4, PEEPHOLE_SEQ_LEN)
                .with_peephole(PeepholeMode::FullMatrix)
                .with_output_gate_cell(gate);
            let none_cfg = full_cfg.clone().with_peephole(PeepholeMode::None);
            let mut full = randomized_net(&full_cfg, &mut rng);
            for layer in &mut full.layers {
                for p in [&mut layer.w_ci, &mut layer.w_cf, &mut layer.w_co] {
                    p.values_mut().fill(0.0);
                }
            }
            let none = strip_peepholes(&full);
            none.validate(&none_cfg).unwrap();
            for _ in 0..10 {
                let seq = prng_vector(&mut rng, PEEPHOLE_SEQ_LEN, -2.0, 2.0).unwrap();
                let (a, ta) = forward_window(&full, &seq, &full_cfg).unwrap();
                let (b, tb) = forward_window(&none, &seq, &none_cfg).unwrap();
                compared += 1;
                let same_states = ta.layers.iter().zip(&tb.layers).all(|(la, lb)| {
                    la.iter().zip(lb).all(|(sa, sb)| sa.h == sb.h && sa.c == sb.c)
                });
                if a.to_bits() != b.to_bits() || !same_states {
                    mismatches += 1;
                }
            }
        }
    }
    verdict(
        10,
        "zeroed full-matrix peepholes equal the no-peephole cell",
        mismatches == 0,
        &format!("{compared} sequences of length {PEEPHOLE_SEQ_LEN}, {mismatches} mismatches"),
        start.elapsed(),
    );
}
