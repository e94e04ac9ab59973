//! Minibatch forward and backward passes. Every timestep handles the whole
//! batch at once, with activations stored as `(units × batch)` row-major blocks.

use crate::lstm::{LstmLayerParams, NetworkConfig, NetworkParams, OutputGateCell, Peephole};
use crate::math::sigmoid_scalar;

/// `C (m×n) += op(A) · op(B)`; all operands are row-major, `op` transposes when the flag is set.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // elements of slices whose lengths were checked.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn broadcast(bias: &[f64], batch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(bias.len() * batch);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, batch));
    }
    out
}

fn row_sums_acc(m: &[f64], batch: usize, out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(batch)) {
        *o += row.iter().sum::<f64>();
    }
}

/// `z += P · c`
fn peep_apply(p: &Peephole, hsz: usize, batch: usize, c: &[f64], z: &mut [f64]) {
    match p {
        Peephole::Full(m) => gemm(hsz, hsz, batch, m.as_slice(), false, c, false, z),
        Peephole::Diagonal(d) => {
            for (u, &w) in d.iter().enumerate() {
                let r = u * batch..(u + 1) * batch;
                for (zv, &cv) in z[r.clone()].iter_mut().zip(&c[r]) {
                    *zv += w * cv;
                }
            }
        }
        Peephole::None => {}
    }
}

/// `out += Pᵀ · dz`
fn peep_backprop(p: &Peephole, hsz: usize, batch: usize, dz: &[f64], out: &mut [f64]) {
    match p {
        Peephole::Full(m) => gemm(hsz, hsz, batch, m.as_slice(), true, dz, false, out),
        Peephole::Diagonal(_) => peep_apply(p, hsz, batch, dz, out),
        Peephole::None => {}
    }
}

/// Gradient accumulator: `G += dz · cᵀ` (diagonal only in diagonal mode).
fn peep_grad(g: &mut Peephole, hsz: usize, batch: usize, dz: &[f64], c: &[f64]) {
    match g {
        Peephole::Full(m) => gemm(hsz, batch, hsz, dz, false, c, true, m.as_mut_slice()),
        Peephole::Diagonal(d) => {
            for (u, gv) in d.as_mut_slice().iter_mut().enumerate() {
                let r = u * batch..(u + 1) * batch;
                *gv += dz[r.clone()].iter().zip(&c[r]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Peephole::None => {}
    }
}

struct Step {
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

pub(crate) struct BatchTrace {
    batch: usize,
    /// Layer-0 inputs per timestep, `(input_size × batch)`.
    inputs: Vec<Vec<f64>>,
    layers: Vec<Vec<Step>>,
    dense_act: Vec<f64>,
    pub(crate) pred: Vec<f64>,
}

fn layer_forward(
    p: &LstmLayerParams,
    xs: &[&[f64]],
    batch: usize,
    gate_cell: OutputGateCell,
) -> Vec<Step> {
    let hsz = p.hidden_size();
    let isz = p.input_size();
    let zeros = vec![0.0; hsz * batch];
    let mut steps: Vec<Step> = Vec::with_capacity(xs.len());
    for (t, x) in xs.iter().enumerate() {
        let (h_prev, c_prev) = match steps.last() {
            Some(s) => (s.h.as_slice(), s.c.as_slice()),
            None => (zeros.as_slice(), zeros.as_slice()),
        };
        let pre = |bias: &[f64], wx: &[f64], wh: &[f64]| {
            let mut z = broadcast(bias, batch);
            gemm(hsz, isz, batch, wx, false, x, false, &mut z);
            if t > 0 {
                gemm(hsz, hsz, batch, wh, false, h_prev, false, &mut z);
            }
            z
        };
        let mut zi = pre(p.b_i.as_slice(), p.w_xi.as_slice(), p.w_hi.as_slice());
        peep_apply(&p.w_ci, hsz, batch, c_prev, &mut zi);
        let mut zf = pre(p.b_f.as_slice(), p.w_xf.as_slice(), p.w_hf.as_slice());
        peep_apply(&p.w_cf, hsz, batch, c_prev, &mut zf);
        let zg = pre(p.b_c.as_slice(), p.w_xc.as_slice(), p.w_hc.as_slice());
        let mut zo = pre(p.b_o.as_slice(), p.w_xo.as_slice(), p.w_ho.as_slice());

        let i: Vec<f64> = zi.into_iter().map(sigmoid_scalar).collect();
        let f: Vec<f64> = zf.into_iter().map(sigmoid_scalar).collect();
        let g: Vec<f64> = zg.into_iter().map(f64::tanh).collect();
        let c: Vec<f64> = (0..hsz * batch)
            .map(|k| f[k] * c_prev[k] + i[k] * g[k])
            .collect();
        match gate_cell {
            OutputGateCell::Previous => peep_apply(&p.w_co, hsz, batch, c_prev, &mut zo),
            OutputGateCell::Current => peep_apply(&p.w_co, hsz, batch, &c, &mut zo),
        }
        let o: Vec<f64> = zo.into_iter().map(sigmoid_scalar).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
        steps.push(Step {
            i,
            f,
            g,
            o,
            c,
            tanh_c,
            h,
        });
    }
    steps
}

/// Windows must already match `cfg` (length `window_size × input_size`).
pub(crate) fn forward(net: &NetworkParams, cfg: &NetworkConfig, windows: &[&[f64]]) -> BatchTrace {
    let batch = windows.len();
    let isz = cfg.input_size;
    let inputs: Vec<Vec<f64>> = (0..cfg.window_size)
        .map(|t| {
            let mut x = vec![0.0; isz * batch];
            for (b, w) in windows.iter().enumerate() {
                for u in 0..isz {
                    x[u * batch + b] = w[t * isz + u];
                }
            }
            x
        })
        .collect();

    let mut layers: Vec<Vec<Step>> = Vec::with_capacity(net.layers.len());
    for p in &net.layers {
        let steps = {
            let xs: Vec<&[f64]> = match layers.last() {
                None => inputs.iter().map(Vec::as_slice).collect(),
                Some(below) => below.iter().map(|s| s.h.as_slice()).collect(),
            };
            layer_forward(p, &xs, batch, cfg.output_gate_cell)
        };
        layers.push(steps);
    }

    let d = &net.dense;
    let h_top = &layers.last().and_then(|s| s.last()).expect("non-empty network").h;
    let dsz = d.b1.len();
    let mut pre = broadcast(d.b1.as_slice(), batch);
    gemm(dsz, h_top.len() / batch, batch, d.w1.as_slice(), false, h_top, false, &mut pre);
    let dense_act: Vec<f64> = pre.into_iter().map(f64::tanh).collect();
    let mut pred = vec![d.b2[0]; batch];
    gemm(1, dsz, batch, d.w2.as_slice(), false, &dense_act, false, &mut pred);

    BatchTrace {
        batch,
        inputs,
        layers,
        dense_act,
        pred,
    }
}

/// Walks one layer backwards. `dh_ext[t]` is the loss gradient w.r.t. that
/// step's `h` from outside the recurrence; returns the gradient w.r.t. each
/// step's input when `want_dx`.
#[allow(clippy::too_many_arguments)]
fn layer_backward(
    p: &LstmLayerParams,
    g: &mut LstmLayerParams,
    steps: &[Step],
    xs: &[&[f64]],
    dh_ext: &[Vec<f64>],
    batch: usize,
    gate_cell: OutputGateCell,
    want_dx: bool,
) -> Vec<Vec<f64>> {
    let hsz = p.hidden_size();
    let isz = p.input_size();
    let n = hsz * batch;
    let zeros = vec![0.0; n];
    let mut dh_next = vec![0.0; n];
    let mut dc_next = vec![0.0; n];
    let mut dx_all = vec![Vec::new(); if want_dx { steps.len() } else { 0 }];
    let mut dz = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut dc = vec![0.0; n];

    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let (h_prev, c_prev) = if t > 0 {
            (steps[t - 1].h.as_slice(), steps[t - 1].c.as_slice())
        } else {
            (zeros.as_slice(), zeros.as_slice())
        };
        let [dzi, dzf, dzg, dzo] = &mut dz;
        for k in 0..n {
            let dh = dh_ext[t][k] + dh_next[k];
            let o = s.o[k];
            let tc = s.tanh_c[k];
            dzo[k] = dh * tc * o * (1.0 - o);
            dc[k] = dc_next[k] + dh * o * (1.0 - tc * tc);
        }
        let o_cell = match gate_cell {
            OutputGateCell::Previous => c_prev,
            OutputGateCell::Current => {
                peep_backprop(&p.w_co, hsz, batch, dzo, &mut dc);
                s.c.as_slice()
            }
        };
        for k in 0..n {
            let (i, f, gv) = (s.i[k], s.f[k], s.g[k]);
            dzi[k] = dc[k] * gv * i * (1.0 - i);
            dzf[k] = dc[k] * c_prev[k] * f * (1.0 - f);
            dzg[k] = dc[k] * i * (1.0 - gv * gv);
        }

        for k in 0..n {
            dc_next[k] = dc[k] * s.f[k];
        }
        peep_backprop(&p.w_ci, hsz, batch, dzi, &mut dc_next);
        peep_backprop(&p.w_cf, hsz, batch, dzf, &mut dc_next);
        if gate_cell == OutputGateCell::Previous {
            peep_backprop(&p.w_co, hsz, batch, dzo, &mut dc_next);
        }

        let whs = [&p.w_hi, &p.w_hf, &p.w_hc, &p.w_ho];
        let wxs = [&p.w_xi, &p.w_xf, &p.w_xc, &p.w_xo];
        dh_next.fill(0.0);
        if t > 0 {
            for (w, d) in whs.iter().zip(dz.iter()) {
                gemm(hsz, hsz, batch, w.as_slice(), true, d, false, &mut dh_next);
            }
        }
        if want_dx {
            let mut dx = vec![0.0; isz * batch];
            for (w, d) in wxs.iter().zip(dz.iter()) {
                gemm(isz, hsz, batch, w.as_slice(), true, d, false, &mut dx);
            }
            dx_all[t] = dx;
        }

        let x = xs[t];
        let gwx = [&mut g.w_xi, &mut g.w_xf, &mut g.w_xc, &mut g.w_xo];
        for (gw, d) in gwx.into_iter().zip(dz.iter()) {
            gemm(hsz, batch, isz, d, false, x, true, gw.as_mut_slice());
        }
        if t > 0 {
            let gwh = [&mut g.w_hi, &mut g.w_hf, &mut g.w_hc, &mut g.w_ho];
            for (gw, d) in gwh.into_iter().zip(dz.iter()) {
                gemm(hsz, batch, hsz, d, false, h_prev, true, gw.as_mut_slice());
            }
        }
        let [dzi, dzf, dzg, dzo] = &dz;
        peep_grad(&mut g.w_ci, hsz, batch, dzi, c_prev);
        peep_grad(&mut g.w_cf, hsz, batch, dzf, c_prev);
        peep_grad(&mut g.w_co, hsz, batch, dzo, o_cell);
        row_sums_acc(dzi, batch, g.b_i.as_mut_slice());
        row_sums_acc(dzf, batch, g.b_f.as_mut_slice());
        row_sums_acc(dzg, batch, g.b_c.as_mut_slice());
        row_sums_acc(dzo, batch, g.b_o.as_mut_slice());
    }
    dx_all
}

/// Adds `Σ_b dpred[b] · ∂pred[b]/∂θ` into `grads`.
pub(crate) fn backward(
    net: &NetworkParams,
    cfg: &NetworkConfig,
    trace: &BatchTrace,
    dpred: &[f64],
    grads: &mut NetworkParams,
) {
    let batch = trace.batch;
    let d = &net.dense;
    let gd = &mut grads.dense;
    let dsz = d.b1.len();
    let top = trace.layers.len() - 1;
    let t_len = cfg.window_size;
    let h_top = &trace.layers[top][t_len - 1].h;
    let top_h = h_top.len() / batch;

    gd.b2[0] += dpred.iter().sum::<f64>();
    gemm(1, batch, dsz, dpred, false, &trace.dense_act, true, gd.w2.as_mut_slice());
    let mut da = vec![0.0; dsz * batch];
    for u in 0..dsz {
        let w = d.w2.get(0, u);
        for b in 0..batch {
            let a = trace.dense_act[u * batch + b];
            da[u * batch + b] = dpred[b] * w * (1.0 - a * a);
        }
    }
    gemm(dsz, batch, top_h, &da, false, h_top, true, gd.w1.as_mut_slice());
    row_sums_acc(&da, batch, gd.b1.as_mut_slice());

    let mut dh_ext = vec![vec![0.0; top_h * batch]; t_len];
    gemm(top_h, dsz, batch, d.w1.as_slice(), true, &da, false, &mut dh_ext[t_len - 1]);

    for k in (0..=top).rev() {
        let xs: Vec<&[f64]> = if k == 0 {
            trace.inputs.iter().map(Vec::as_slice).collect()
        } else {
            trace.layers[k - 1].iter().map(|s| s.h.as_slice()).collect()
        };
        dh_ext = layer_backward(
            &net.layers[k],
            &mut grads.layers[k],
            &trace.layers[k],
            &xs,
            &dh_ext,
            batch,
            cfg.output_gate_cell,
            k > 0,
        );
    }
}

const PREDICT_CHUNK: usize = 64;

/// Predictions for already-validated windows, computed in chunks.
pub(crate) fn predict(net: &NetworkParams, cfg: &NetworkConfig, windows: &[&[f64]]) -> Vec<f64> {
    windows
        .chunks(PREDICT_CHUNK)
        .flat_map(|chunk| forward(net, cfg, chunk).pred)
        .collect()
}
