//! Dense f64 kernels with hand-written value-and-gradient pairs.
//!
//! Everything the model needs is small and fixed: matrix-vector products,
//! the logistic and hyperbolic-tangent squashers, softmax, and one LSTM
//! cell. Each forward kernel that participates in training has a matching
//! backward routine, and [`grad_check`] compares any scalar function's
//! analytic gradient against central finite differences.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                context: "tensor data",
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows, treating a vector as a column.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of columns; 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

/// Gradients keyed by parameter name, shaped like the parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Gradients {
    tensors: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        self.add_scaled(other, 1.0)
    }

    /// `self += scale * other`, name by name.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        for (name, g) in &other.tensors {
            let mine = self.get_mut(name)?;
            if mine.len() != g.len() {
                return Err(Error::Shape {
                    context: "gradient accumulation",
                    expected: mine.len(),
                    actual: g.len(),
                });
            }
            for (a, b) in mine.data.iter_mut().zip(&g.data) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn zero(&mut self) {
        for t in self.tensors.values_mut() {
            t.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// All entries concatenated in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }
}

/// Named learnable tensors plus an accumulated gradient for each.
/// Only the tensors are serialized; gradients come back zeroed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, Tensor>", into = "BTreeMap<String, Tensor>")]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    grads: Gradients,
}

impl From<BTreeMap<String, Tensor>> for ParamStore {
    fn from(params: BTreeMap<String, Tensor>) -> Self {
        let mut store = Self::new();
        for (name, t) in params {
            store.insert(name, t);
        }
        store
    }
}

impl From<ParamStore> for BTreeMap<String, Tensor> {
    fn from(store: ParamStore) -> Self {
        store.params
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        self.grads
            .tensors
            .insert(name.clone(), Tensor::zeros(value.shape()));
        self.params.insert(name, value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// A zeroed gradient buffer with one tensor per parameter.
    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            tensors: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn grads(&self) -> &Gradients {
        &self.grads
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.grads.get(name)
    }

    pub fn accumulate(&mut self, g: &Gradients) -> Result<()> {
        self.grads.add_assign(g)
    }

    pub fn zero_grad(&mut self) {
        self.grads.zero();
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`, stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}

pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("log_softmax input"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("log_softmax input".into()));
    }
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(v.iter().map(|x| x - lse).collect())
}

/// Backward pass of softmax: given `p = softmax(z)` and `dL/dp`, returns `dL/dz`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - inner)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W x` for a row-major `rows x cols` matrix.
pub fn matvec(w: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(Error::Shape {
            context: "matvec",
            expected: w.cols(),
            actual: x.len(),
        });
    }
    Ok((0..w.rows()).map(|r| dot(w.row(r), x)).collect())
}

/// `W^T y`.
pub fn matvec_t(w: &Tensor, y: &[f64]) -> Result<Vec<f64>> {
    if w.rows() != y.len() {
        return Err(Error::Shape {
            context: "transposed matvec",
            expected: w.rows(),
            actual: y.len(),
        });
    }
    let mut out = vec![0.0; w.cols()];
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(w.row(r)) {
            *o += yr * wv;
        }
    }
    Ok(out)
}

/// `G += a b^T`.
pub fn add_outer(g: &mut Tensor, a: &[f64], b: &[f64]) {
    debug_assert_eq!(g.rows(), a.len());
    debug_assert_eq!(g.cols(), b.len());
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        for (gv, bv) in g.row_mut(r).iter_mut().zip(b) {
            *gv += ar * bv;
        }
    }
}

pub fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Xavier/Glorot uniform matrix: U(-a, a) with `a = sqrt(6 / (rows + cols))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor {
        shape: vec![rows, cols],
        data,
    }
}

/// Inverted-dropout multipliers: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Borrowed view of one LSTM cell's weights.
///
/// `w` is `4H x (I + H)` acting on `[x ‖ h_prev]`; `b` has length `4H`. Gate
/// rows are laid out as input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w: &'a Tensor,
    pub b: &'a Tensor,
}

impl<'a> LstmWeights<'a> {
    pub fn new(w: &'a Tensor, b: &'a Tensor) -> Result<Self> {
        if !b.len().is_multiple_of(4) || w.rows() != b.len() {
            return Err(Error::Shape {
                context: "lstm bias",
                expected: w.rows(),
                actual: b.len(),
            });
        }
        let hidden = b.len() / 4;
        if w.cols() < hidden {
            return Err(Error::Shape {
                context: "lstm weight columns",
                expected: hidden,
                actual: w.cols(),
            });
        }
        Ok(Self { w, b })
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input(&self) -> usize {
        self.w.cols() - self.hidden()
    }
}

/// Initial LSTM tensors: Xavier weights, zero biases except forget gate = 1.
pub fn init_lstm<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> (Tensor, Tensor) {
    let w = xavier_uniform(4 * hidden, input + hidden, rng);
    let mut b = Tensor::zeros(&[4 * hidden]);
    b.data_mut()[hidden..2 * hidden].fill(1.0);
    (w, b)
}

/// Everything one LSTM step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep {
    /// `[x ‖ h_prev]`
    pub xh: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn lstm_step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: LstmWeights<'_>) -> Result<LstmStep> {
    let hd = p.hidden();
    if x.len() != p.input() {
        return Err(Error::Shape {
            context: "lstm input",
            expected: p.input(),
            actual: x.len(),
        });
    }
    if h_prev.len() != hd || c_prev.len() != hd {
        return Err(Error::Shape {
            context: "lstm state",
            expected: hd,
            actual: h_prev.len().max(c_prev.len()),
        });
    }
    let mut xh = Vec::with_capacity(x.len() + hd);
    xh.extend_from_slice(x);
    xh.extend_from_slice(h_prev);
    let mut z = matvec(p.w, &xh)?;
    add_into(&mut z, p.b.data());
    let i: Vec<f64> = z[..hd].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[2 * hd..3 * hd].iter().map(|&v| v.tanh()).collect();
    let o: Vec<f64> = z[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
    let c: Vec<f64> = (0..hd).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
    Ok(LstmStep {
        xh,
        i,
        f,
        g,
        o,
        c_prev: c_prev.to_vec(),
        c,
        tanh_c,
        h,
    })
}

/// One forward step of the LSTM cell, returning `(h, c)`.
pub fn lstm_cell(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: LstmWeights<'_>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = lstm_step(x, h_prev, c_prev, p)?;
    Ok((s.h, s.c))
}

/// Gradients flowing out of one LSTM step.
#[derive(Debug, Clone)]
pub struct LstmStepGrad {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

/// Backpropagates `dh`, `dc` through one step, accumulating into `gw`, `gb`.
pub fn lstm_step_backward(
    step: &LstmStep,
    dh: &[f64],
    dc: &[f64],
    w: &Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
) -> LstmStepGrad {
    let hd = step.h.len();
    let mut dz = vec![0.0; 4 * hd];
    let mut dc_prev = vec![0.0; hd];
    for k in 0..hd {
        let do_ = dh[k] * step.tanh_c[k];
        let dct = dc[k] + dh[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
        let di = dct * step.g[k];
        let dg = dct * step.i[k];
        let df = dct * step.c_prev[k];
        dc_prev[k] = dct * step.f[k];
        dz[k] = di * step.i[k] * (1.0 - step.i[k]);
        dz[hd + k] = df * step.f[k] * (1.0 - step.f[k]);
        dz[2 * hd + k] = dg * (1.0 - step.g[k] * step.g[k]);
        dz[3 * hd + k] = do_ * step.o[k] * (1.0 - step.o[k]);
    }
    add_outer(gw, &dz, &step.xh);
    add_into(gb.data_mut(), &dz);
    let dxh = matvec_t(w, &dz).expect("lstm weight shape checked in forward");
    let input = dxh.len() - hd;
    LstmStepGrad {
        dx: dxh[..input].to_vec(),
        dh_prev: dxh[input..].to_vec(),
        dc_prev,
    }
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over scalars of `|analytic - numeric| / max(1, |numeric|)`
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the analytic gradient returned by `f` with central differences
/// of its value, perturbing every scalar of every parameter by `±eps`.
pub fn grad_check<F>(store: &ParamStore, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (value, analytic) = f(store)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let n = store.get(&name)?.len();
        for idx in 0..n {
            let orig = store.get(&name)?.data()[idx];
            work.get_mut(&name)?.data_mut()[idx] = orig + eps;
            let (plus, _) = f(&work)?;
            work.get_mut(&name)?.data_mut()[idx] = orig - eps;
            let (minus, _) = f(&work)?;
            work.get_mut(&name)?.data_mut()[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("grad_check objective at {name}[{idx}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(&name)?.data()[idx];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}
