//! Peephole LSTM layers and the dense regression head.
//!
//! One cell step computes
//!
//! ```text
//! i_t = σ(W_xi x_t + W_hi h_{t-1} + W_ci c_{t-1} + b_i)
//! f_t = σ(W_xf x_t + W_hf h_{t-1} + W_cf c_{t-1} + b_f)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ tanh(W_xc x_t + W_hc h_{t-1} + b_c)
//! o_t = σ(W_xo x_t + W_ho h_{t-1} + W_co c_* + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! where `c_*` is `c_{t-1}` or `c_t` depending on [`OutputGateCell`]. The
//! peephole terms `W_c· c` are full matrices, per-unit diagonals, or absent
//! ([`PeepholeMode`]).
//!
//! A window of `T` inputs is run through every layer from a zero state; the
//! top layer's final hidden state feeds `W2 · tanh(W1 · h_T + b1) + b2`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::math::{prng_matrix, prng_vector, sigmoid_scalar, Matrix, Prng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeepholeMode {
    FullMatrix,
    Diagonal,
    None,
}

/// Which cell state the output gate's peephole reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputGateCell {
    /// `c_{t-1}`, the default.
    Previous,
    /// `c_t`, the usual peephole formulation.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenseActivation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_size: usize,
    /// One entry per recurrent layer, bottom first.
    pub lstm_hidden_sizes: Vec<usize>,
    pub dense_hidden: usize,
    pub window_size: usize,
    pub peephole_mode: PeepholeMode,
    pub output_gate_cell: OutputGateCell,
    pub dense_activation: DenseActivation,
}

impl NetworkConfig {
    /// Scalar input, full-matrix peepholes, output gate on `c_{t-1}`.
    pub fn new(lstm_hidden_sizes: Vec<usize>, dense_hidden: usize, window_size: usize) -> Self {
        NetworkConfig {
            input_size: 1,
            lstm_hidden_sizes,
            dense_hidden,
            window_size,
            peephole_mode: PeepholeMode::FullMatrix,
            output_gate_cell: OutputGateCell::Previous,
            dense_activation: DenseActivation::Tanh,
        }
    }

    pub fn with_peephole(mut self, mode: PeepholeMode) -> Self {
        self.peephole_mode = mode;
        self
    }

    pub fn with_output_gate_cell(mut self, cell: OutputGateCell) -> Self {
        self.output_gate_cell = cell;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lstm_hidden_sizes.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one LSTM layer is required".into(),
            ));
        }
        let sizes = [self.input_size, self.dense_hidden, self.window_size];
        if sizes.contains(&0) || self.lstm_hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all network sizes must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// Input width of recurrent layer `k`.
    pub fn layer_input_size(&self, k: usize) -> usize {
        if k == 0 {
            self.input_size
        } else {
            self.lstm_hidden_sizes[k - 1]
        }
    }

    pub fn top_hidden(&self) -> usize {
        *self.lstm_hidden_sizes.last().expect("validated config")
    }
}

/// Peephole weights `W_c·` for one gate.
#[derive(Debug, Clone, PartialEq)]
pub enum Peephole {
    Full(Matrix),
    Diagonal(Vector),
    None,
}

impl Peephole {
    fn zeros(mode: PeepholeMode, hidden: usize) -> Self {
        match mode {
            PeepholeMode::FullMatrix => Peephole::Full(Matrix::zeros(hidden, hidden)),
            PeepholeMode::Diagonal => Peephole::Diagonal(Vector::zeros(hidden)),
            PeepholeMode::None => Peephole::None,
        }
    }

    pub fn mode(&self) -> PeepholeMode {
        match self {
            Peephole::Full(_) => PeepholeMode::FullMatrix,
            Peephole::Diagonal(_) => PeepholeMode::Diagonal,
            Peephole::None => PeepholeMode::None,
        }
    }

    /// `out += W_c · c`
    pub(crate) fn apply_acc(&self, c: &[f64], out: &mut [f64]) {
        match self {
            Peephole::Full(m) => m.mul_acc(c, out),
            Peephole::Diagonal(d) => {
                for ((o, &w), &ci) in out.iter_mut().zip(d.as_slice()).zip(c) {
                    *o += w * ci;
                }
            }
            Peephole::None => {}
        }
    }

    #[cfg(test)]
    /// `out += W_cᵀ · dz`
    pub(crate) fn backprop_acc(&self, dz: &[f64], out: &mut [f64]) {
        match self {
            Peephole::Full(m) => m.tmul_acc(dz, out),
            // a diagonal is its own transpose
            Peephole::Diagonal(_) => self.apply_acc(dz, out),
            Peephole::None => {}
        }
    }

    #[cfg(test)]
    /// Treating `self` as a gradient accumulator: `self += dz ⊗ c` (restricted to the diagonal in diagonal mode).
    pub(crate) fn grad_acc(&mut self, dz: &[f64], c: &[f64]) {
        match self {
            Peephole::Full(m) => m.outer_acc(dz, c),
            Peephole::Diagonal(d) => {
                for ((g, &z), &ci) in d.as_mut_slice().iter_mut().zip(dz).zip(c) {
                    *g += z * ci;
                }
            }
            Peephole::None => {}
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Peephole::Full(m) => m.as_slice(),
            Peephole::Diagonal(d) => d.as_slice(),
            Peephole::None => &[],
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Peephole::Full(m) => m.as_mut_slice(),
            Peephole::Diagonal(d) => d.as_mut_slice(),
            Peephole::None => &mut [],
        }
    }

    fn shape_string(&self) -> String {
        match self {
            Peephole::Full(m) => format!("{}x{} matrix", m.rows(), m.cols()),
            Peephole::Diagonal(d) => format!("diagonal of length {}", d.len()),
            Peephole::None => "none".to_string(),
        }
    }
}

// Full → nested array, Diagonal → flat array, None → null.
impl Serialize for Peephole {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Peephole::Full(m) => m.serialize(serializer),
            Peephole::Diagonal(d) => d.serialize(serializer),
            Peephole::None => serializer.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Peephole {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Diagonal(Vector),
            Full(Matrix),
        }
        Ok(match Option::<Repr>::deserialize(deserializer)? {
            Some(Repr::Full(m)) => Peephole::Full(m),
            Some(Repr::Diagonal(d)) => Peephole::Diagonal(d),
            None => Peephole::None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    #[serde(rename = "W_xi")]
    pub w_xi: Matrix,
    #[serde(rename = "W_xf")]
    pub w_xf: Matrix,
    #[serde(rename = "W_xc")]
    pub w_xc: Matrix,
    #[serde(rename = "W_xo")]
    pub w_xo: Matrix,
    #[serde(rename = "W_hi")]
    pub w_hi: Matrix,
    #[serde(rename = "W_hf")]
    pub w_hf: Matrix,
    #[serde(rename = "W_hc")]
    pub w_hc: Matrix,
    #[serde(rename = "W_ho")]
    pub w_ho: Matrix,
    #[serde(rename = "W_ci")]
    pub w_ci: Peephole,
    #[serde(rename = "W_cf")]
    pub w_cf: Peephole,
    #[serde(rename = "W_co")]
    pub w_co: Peephole,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
}

pub(crate) const LAYER_TENSOR_NAMES: [&str; 15] = [
    "W_xi", "W_xf", "W_xc", "W_xo", "W_hi", "W_hf", "W_hc", "W_ho", "W_ci", "W_cf", "W_co", "b_i",
    "b_f", "b_c", "b_o",
];

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize, mode: PeepholeMode) -> Self {
        let wx = || Matrix::zeros(hidden, input);
        let wh = || Matrix::zeros(hidden, hidden);
        LstmLayerParams {
            w_xi: wx(),
            w_xf: wx(),
            w_xc: wx(),
            w_xo: wx(),
            w_hi: wh(),
            w_hf: wh(),
            w_hc: wh(),
            w_ho: wh(),
            w_ci: Peephole::zeros(mode, hidden),
            w_cf: Peephole::zeros(mode, hidden),
            w_co: Peephole::zeros(mode, hidden),
            b_i: Vector::zeros(hidden),
            b_f: Vector::zeros(hidden),
            b_c: Vector::zeros(hidden),
            b_o: Vector::zeros(hidden),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b_i.len()
    }

    pub fn input_size(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn peephole_mode(&self) -> PeepholeMode {
        self.w_ci.mode()
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 15] {
        [
            self.w_xi.as_slice(),
            self.w_xf.as_slice(),
            self.w_xc.as_slice(),
            self.w_xo.as_slice(),
            self.w_hi.as_slice(),
            self.w_hf.as_slice(),
            self.w_hc.as_slice(),
            self.w_ho.as_slice(),
            self.w_ci.values(),
            self.w_cf.values(),
            self.w_co.values(),
            self.b_i.as_slice(),
            self.b_f.as_slice(),
            self.b_c.as_slice(),
            self.b_o.as_slice(),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 15] {
        [
            self.w_xi.as_mut_slice(),
            self.w_xf.as_mut_slice(),
            self.w_xc.as_mut_slice(),
            self.w_xo.as_mut_slice(),
            self.w_hi.as_mut_slice(),
            self.w_hf.as_mut_slice(),
            self.w_hc.as_mut_slice(),
            self.w_ho.as_mut_slice(),
            self.w_ci.values_mut(),
            self.w_cf.values_mut(),
            self.w_co.values_mut(),
            self.b_i.as_mut_slice(),
            self.b_f.as_mut_slice(),
            self.b_c.as_mut_slice(),
            self.b_o.as_mut_slice(),
        ]
    }

    fn validate(&self, prefix: &str, input: usize, hidden: usize, mode: PeepholeMode) -> Result<()> {
        let mats = [
            ("W_xi", &self.w_xi, input),
            ("W_xf", &self.w_xf, input),
            ("W_xc", &self.w_xc, input),
            ("W_xo", &self.w_xo, input),
            ("W_hi", &self.w_hi, hidden),
            ("W_hf", &self.w_hf, hidden),
            ("W_hc", &self.w_hc, hidden),
            ("W_ho", &self.w_ho, hidden),
        ];
        for (name, m, cols) in mats {
            if m.shape() != (hidden, cols) {
                return Err(Error::shape(
                    format!("{prefix}.{name}"),
                    format!("{hidden}x{cols}"),
                    format!("{}x{}", m.rows(), m.cols()),
                ));
            }
        }
        for (name, p) in [("W_ci", &self.w_ci), ("W_cf", &self.w_cf), ("W_co", &self.w_co)] {
            let ok = match (p, mode) {
                (Peephole::Full(m), PeepholeMode::FullMatrix) => m.shape() == (hidden, hidden),
                (Peephole::Diagonal(d), PeepholeMode::Diagonal) => d.len() == hidden,
                (Peephole::None, PeepholeMode::None) => true,
                _ => false,
            };
            if !ok {
                let expected = match mode {
                    PeepholeMode::FullMatrix => format!("{hidden}x{hidden} matrix"),
                    PeepholeMode::Diagonal => format!("diagonal of length {hidden}"),
                    PeepholeMode::None => "none".to_string(),
                };
                return Err(Error::shape(
                    format!("{prefix}.{name}"),
                    expected,
                    p.shape_string(),
                ));
            }
        }
        for (name, b) in [
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
        ] {
            if b.len() != hidden {
                return Err(Error::shape(
                    format!("{prefix}.{name}"),
                    format!("length {hidden}"),
                    format!("length {}", b.len()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    #[serde(rename = "W1")]
    pub w1: Matrix,
    pub b1: Vector,
    #[serde(rename = "W2")]
    pub w2: Matrix,
    pub b2: Vector,
}

pub(crate) const DENSE_TENSOR_NAMES: [&str; 4] = ["W1", "b1", "W2", "b2"];

impl DenseParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        DenseParams {
            w1: Matrix::zeros(hidden, input),
            b1: Vector::zeros(hidden),
            w2: Matrix::zeros(1, hidden),
            b2: Vector::zeros(1),
        }
    }

    fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }
}

/// All trainable parameters. Also used, zero-initialized, as a gradient accumulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<LstmLayerParams>,
    pub dense: DenseParams,
}

impl NetworkParams {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let layers = cfg
            .lstm_hidden_sizes
            .iter()
            .enumerate()
            .map(|(k, &h)| LstmLayerParams::zeros(cfg.layer_input_size(k), h, cfg.peephole_mode))
            .collect();
        NetworkParams {
            layers,
            dense: DenseParams::zeros(cfg.top_hidden(), cfg.dense_hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every tensor in a fixed order: layers bottom-up, then the dense head.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(self.layers.len() * 15 + 4);
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.extend(self.dense.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(self.layers.len() * 15 + 4);
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend(self.dense.tensors_mut());
        out
    }

    /// Names matching [`NetworkParams::tensors`], e.g. `layers[1].W_hc`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in 0..self.layers.len() {
            out.extend(LAYER_TENSOR_NAMES.iter().map(|n| format!("layers[{k}].{n}")));
        }
        out.extend(DENSE_TENSOR_NAMES.iter().map(|n| format!("dense.{n}")));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vector {
        self.tensors().into_iter().flatten().copied().collect()
    }

    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "NetworkParams::set_from_flat",
                self.num_params(),
                flat.len(),
            ));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    /// Shapes against `cfg` and finiteness of every entry. Errors name the offending tensor.
    pub fn validate(&self, cfg: &NetworkConfig) -> Result<()> {
        cfg.validate()?;
        if self.layers.len() != cfg.lstm_hidden_sizes.len() {
            return Err(Error::shape(
                "layers",
                format!("{} layers", cfg.lstm_hidden_sizes.len()),
                format!("{} layers", self.layers.len()),
            ));
        }
        for (k, (layer, &h)) in self.layers.iter().zip(&cfg.lstm_hidden_sizes).enumerate() {
            layer.validate(
                &format!("layers[{k}]"),
                cfg.layer_input_size(k),
                h,
                cfg.peephole_mode,
            )?;
        }
        let d = &self.dense;
        let top = cfg.top_hidden();
        let dh = cfg.dense_hidden;
        let checks = [
            ("dense.W1", d.w1.shape(), (dh, top)),
            ("dense.b1", (d.b1.len(), 1), (dh, 1)),
            ("dense.W2", d.w2.shape(), (1, dh)),
            ("dense.b2", (d.b2.len(), 1), (1, 1)),
        ];
        for (name, found, expected) in checks {
            if found != expected {
                return Err(Error::shape(
                    name,
                    format!("{}x{}", expected.0, expected.1),
                    format!("{}x{}", found.0, found.1),
                ));
            }
        }
        for (name, t) in self.tensor_names().iter().zip(self.tensors()) {
            if let Some(pos) = t.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{name}[{pos}]")));
            }
        }
        Ok(())
    }
}

/// Uniform `[-1/√H, 1/√H)` weights with `H` the receiving layer's width; zero
/// biases except the forget gate's, which start at 1.
pub fn init_network(cfg: &NetworkConfig, rng: &mut Prng) -> Result<NetworkParams> {
    cfg.validate()?;
    let mut layers = Vec::with_capacity(cfg.lstm_hidden_sizes.len());
    for (k, &h) in cfg.lstm_hidden_sizes.iter().enumerate() {
        let input = cfg.layer_input_size(k);
        let bound = 1.0 / (h as f64).sqrt();
        let mut mat = |cols: usize| prng_matrix(rng, h, cols, -bound, bound);
        let (w_xi, w_xf, w_xc, w_xo) = (mat(input)?, mat(input)?, mat(input)?, mat(input)?);
        let (w_hi, w_hf, w_hc, w_ho) = (mat(h)?, mat(h)?, mat(h)?, mat(h)?);
        let mut peep = || -> Result<Peephole> {
            Ok(match cfg.peephole_mode {
                PeepholeMode::FullMatrix => Peephole::Full(prng_matrix(rng, h, h, -bound, bound)?),
                PeepholeMode::Diagonal => Peephole::Diagonal(prng_vector(rng, h, -bound, bound)?),
                PeepholeMode::None => Peephole::None,
            })
        };
        let (w_ci, w_cf, w_co) = (peep()?, peep()?, peep()?);
        layers.push(LstmLayerParams {
            w_xi,
            w_xf,
            w_xc,
            w_xo,
            w_hi,
            w_hf,
            w_hc,
            w_ho,
            w_ci,
            w_cf,
            w_co,
            b_i: Vector::zeros(h),
            b_f: Vector::filled(h, 1.0),
            b_c: Vector::zeros(h),
            b_o: Vector::zeros(h),
        });
    }
    let dh = cfg.dense_hidden;
    let b1 = 1.0 / (dh as f64).sqrt();
    let w1 = prng_matrix(rng, dh, cfg.top_hidden(), -b1, b1)?;
    let w2 = prng_matrix(rng, 1, dh, -1.0, 1.0)?;
    Ok(NetworkParams {
        layers,
        dense: DenseParams {
            w1,
            b1: Vector::zeros(dh),
            w2,
            b2: Vector::zeros(1),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Vector,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            h: Vector::zeros(hidden),
            c: Vector::zeros(hidden),
        }
    }
}

/// Everything one cell step computed; the backward pass reads it back.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    pub i: Vector,
    pub f: Vector,
    /// Candidate `tanh(W_xc x + W_hc h + b_c)`.
    pub g: Vector,
    pub o: Vector,
    pub c: Vector,
    pub tanh_c: Vector,
    pub h: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `layers[k][t]`
    pub layers: Vec<Vec<StepTrace>>,
    /// Dense pre-activation `W1 h_T + b1`.
    pub dense_pre: Vector,
    /// `tanh(dense_pre)`
    pub dense_act: Vector,
    pub prediction: f64,
}

impl ForwardTrace {
    /// Number of timesteps.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One step of the cell, with shape checks.
pub fn cell_step(
    p: &LstmLayerParams,
    x: &Vector,
    prev: &CellState,
    gate_cell: OutputGateCell,
) -> Result<(CellState, StepTrace)> {
    let h = p.hidden_size();
    if x.len() != p.input_size() {
        return Err(Error::shape("cell_step input", p.input_size(), x.len()));
    }
    if prev.h.len() != h || prev.c.len() != h {
        return Err(Error::shape(
            "cell_step previous state",
            format!("h and c of length {h}"),
            format!("h {} / c {}", prev.h.len(), prev.c.len()),
        ));
    }
    let trace = step(p, x.as_slice(), prev.h.as_slice(), prev.c.as_slice(), gate_cell);
    let state = CellState {
        h: trace.h.clone(),
        c: trace.c.clone(),
    };
    Ok((state, trace))
}

fn gate_pre(
    bias: &Vector,
    wx: &Matrix,
    x: &[f64],
    wh: &Matrix,
    h: &[f64],
) -> Vec<f64> {
    let mut z = bias.as_slice().to_vec();
    wx.mul_acc(x, &mut z);
    wh.mul_acc(h, &mut z);
    z
}

pub(crate) fn step(
    p: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    gate_cell: OutputGateCell,
) -> StepTrace {
    let mut zi = gate_pre(&p.b_i, &p.w_xi, x, &p.w_hi, h_prev);
    p.w_ci.apply_acc(c_prev, &mut zi);
    let mut zf = gate_pre(&p.b_f, &p.w_xf, x, &p.w_hf, h_prev);
    p.w_cf.apply_acc(c_prev, &mut zf);
    let zg = gate_pre(&p.b_c, &p.w_xc, x, &p.w_hc, h_prev);

    let i: Vector = zi.into_iter().map(sigmoid_scalar).collect();
    let f: Vector = zf.into_iter().map(sigmoid_scalar).collect();
    let g: Vector = zg.into_iter().map(f64::tanh).collect();
    let c: Vector = (0..c_prev.len())
        .map(|k| f[k] * c_prev[k] + i[k] * g[k])
        .collect();

    let mut zo = gate_pre(&p.b_o, &p.w_xo, x, &p.w_ho, h_prev);
    match gate_cell {
        OutputGateCell::Previous => p.w_co.apply_acc(c_prev, &mut zo),
        OutputGateCell::Current => p.w_co.apply_acc(c.as_slice(), &mut zo),
    }
    let o: Vector = zo.into_iter().map(sigmoid_scalar).collect();
    let tanh_c = c.map(f64::tanh);
    let h: Vector = o.iter().zip(tanh_c.iter()).map(|(a, b)| a * b).collect();

    StepTrace {
        x: Vector::from(x),
        h_prev: Vector::from(h_prev),
        c_prev: Vector::from(c_prev),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h,
    }
}

/// Dense head on the top layer's last hidden state: returns (pre-activation, activation, prediction).
pub(crate) fn dense_forward(d: &DenseParams, h_top: &[f64]) -> (Vector, Vector, f64) {
    let mut pre = d.b1.as_slice().to_vec();
    d.w1.mul_acc(h_top, &mut pre);
    let pre = Vector::from(pre);
    let act = pre.map(f64::tanh);
    let pred = d.b2[0] + crate::math::dot(d.w2.row(0), act.as_slice());
    (pre, act, pred)
}

/// Runs a window through the stack from a zero state and applies the dense head.
///
/// `window` holds `window_size × input_size` values, timestep-major.
pub fn forward_window(
    net: &NetworkParams,
    window: &Vector,
    cfg: &NetworkConfig,
) -> Result<(f64, ForwardTrace)> {
    let t_len = cfg.window_size;
    let input = cfg.input_size;
    if window.len() != t_len * input {
        return Err(Error::shape(
            "forward_window window",
            format!("length {}", t_len * input),
            format!("length {}", window.len()),
        ));
    }
    if net.layers.len() != cfg.lstm_hidden_sizes.len() {
        return Err(Error::shape(
            "forward_window layers",
            cfg.lstm_hidden_sizes.len(),
            net.layers.len(),
        ));
    }

    let mut traces: Vec<Vec<StepTrace>> = Vec::with_capacity(net.layers.len());
    for (k, layer) in net.layers.iter().enumerate() {
        let hsz = layer.hidden_size();
        let mut h = vec![0.0; hsz];
        let mut c = vec![0.0; hsz];
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let st = {
                let x: &[f64] = if k == 0 {
                    &window.as_slice()[t * input..(t + 1) * input]
                } else {
                    traces[k - 1][t].h.as_slice()
                };
                step(layer, x, &h, &c, cfg.output_gate_cell)
            };
            h.copy_from_slice(st.h.as_slice());
            c.copy_from_slice(st.c.as_slice());
            steps.push(st);
        }
        traces.push(steps);
    }

    let h_top = traces
        .last()
        .and_then(|s| s.last())
        .map(|s| s.h.as_slice())
        .expect("at least one layer and one timestep");
    let (dense_pre, dense_act, prediction) = dense_forward(&net.dense, h_top);
    Ok((
        prediction,
        ForwardTrace {
            layers: traces,
            dense_pre,
            dense_act,
            prediction,
        },
    ))
}

/// Order-preserving map of [`forward_window`], errors tagged with the window index.
pub fn forward_batch(
    net: &NetworkParams,
    windows: &[Vector],
    cfg: &NetworkConfig,
) -> Result<Vector> {
    windows
        .iter()
        .enumerate()
        .map(|(k, w)| {
            forward_window(net, w, cfg)
                .map(|(p, _)| p)
                .map_err(|e| match e {
                    Error::Shape {
                        context,
                        expected,
                        found,
                    } => Error::Shape {
                        context: format!("window {k}: {context}"),
                        expected,
                        found,
                    },
                    other => other,
                })
        })
        .collect()
}
