//! Layers with an eager path (plain tensors, used for inference) and a
//! taped path (used for training). Both read weights from a [`ParamStore`].

use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{lstm_forward_rows, Tape, Var};
use crate::tensor::Tensor;

/// Uniform `[-bound, bound]` initialisation.
pub fn uniform<S: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::c(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches length")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn eager<S: Real>(self, t: Tensor<S>) -> Tensor<S> {
        match self {
            Activation::Tanh => t.map(|v| v.tanh()),
            Activation::Sigmoid => t.map(crate::tensor::sigmoid),
            Activation::Identity => t,
        }
    }

    fn taped<S: Real>(self, tape: &mut Tape<S>, v: Var) -> Result<Var> {
        match self {
            Activation::Tanh => tape.tanh(v),
            Activation::Sigmoid => tape.sigmoid(v),
            Activation::Identity => Ok(v),
        }
    }
}

/// Dense affine map `x @ W + b`, `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Fan-in scaled uniform weights, zero bias. `gain` scales the bound.
    pub fn init<S: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
    ) -> Self {
        let bound = gain / (in_dim as f64).sqrt();
        let w = ps.add(format!("{name}/w"), uniform(rng, &[in_dim, out_dim], bound));
        let b = ps.add(format!("{name}/b"), Tensor::zeros(&[1, out_dim]));
        Linear {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Real>(&self, ps: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out = x.matmul(ps.get(self.w))?.add_row(ps.get(self.b))?;
        out.check_finite("linear")?;
        Ok(out)
    }

    pub fn forward_tape<S: Real>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// Recurrent carry of an LSTM, one row per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<S> {
    pub hidden: Tensor<S>,
    pub cell: Tensor<S>,
}

impl<S: Real> LstmState<S> {
    pub fn zeros(rows: usize, hidden: usize) -> Self {
        LstmState {
            hidden: Tensor::zeros(&[rows, hidden]),
            cell: Tensor::zeros(&[rows, hidden]),
        }
    }
}

/// Standard LSTM cell. `W: [in + hidden, 4 * hidden]` stacks the input and
/// recurrent maps; gate order is input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

/// An [`LstmCell`] whose weights have been placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapedLstm {
    pub w_in: Var,
    pub w_rec: Var,
    pub b: Var,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Uniform `1/sqrt(hidden)` weights, zero biases except forget gate = 1.
    pub fn init<S: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = ps.add(
            format!("{name}/w"),
            uniform(rng, &[in_dim + hidden, 4 * hidden], bound),
        );
        let mut bias = Tensor::zeros(&[1, 4 * hidden]);
        for v in &mut bias.data_mut()[hidden..2 * hidden] {
            *v = S::one();
        }
        let b = ps.add(format!("{name}/b"), bias);
        LstmCell {
            w,
            b,
            in_dim,
            hidden,
        }
    }

    /// `x @ W[offset .. offset + x.cols()]`: the gate contribution of a
    /// slice of the input vector.
    pub fn partial_input_gates<S: Real>(
        &self,
        ps: &ParamStore<S>,
        x: &Tensor<S>,
        offset: usize,
    ) -> Result<Tensor<S>> {
        if offset + x.cols() > self.in_dim {
            return shape_err(
                "lstm_step",
                format!("input block {}..{} exceeds {}", offset, offset + x.cols(), self.in_dim),
            );
        }
        x.matmul_rows_of(ps.get(self.w), offset)
    }

    /// Completes a step from precomputed input gates (bias not included).
    pub fn step_from_input_gates<S: Real>(
        &self,
        ps: &ParamStore<S>,
        state: &LstmState<S>,
        input_gates: &Tensor<S>,
    ) -> Result<LstmState<S>> {
        let rows = input_gates.rows();
        if state.hidden.rows() != rows || state.hidden.cols() != self.hidden {
            return shape_err(
                "lstm_step",
                format!("state {:?} for {} rows", state.hidden.shape(), rows),
            );
        }
        let rec = state.hidden.matmul_rows_of(ps.get(self.w), self.in_dim)?;
        let gates = input_gates.add_row(ps.get(self.b))?.add(&rec)?;
        let hd = self.hidden;
        let mut acts = vec![S::zero(); rows * 5 * hd];
        let mut out = vec![S::zero(); rows * 2 * hd];
        lstm_forward_rows(gates.data(), state.cell.data(), rows, hd, &mut acts, &mut out);
        let both = Tensor::from_vec(&[rows, 2 * hd], out)?;
        both.check_finite("lstm_step")?;
        Ok(LstmState {
            hidden: both.slice_cols(0, hd)?,
            cell: both.slice_cols(hd, hd)?,
        })
    }

    pub fn step<S: Real>(
        &self,
        ps: &ParamStore<S>,
        state: &LstmState<S>,
        x: &Tensor<S>,
    ) -> Result<LstmState<S>> {
        if x.cols() != self.in_dim {
            return shape_err(
                "lstm_step",
                format!("input width {} expected {}", x.cols(), self.in_dim),
            );
        }
        let ig = self.partial_input_gates(ps, x, 0)?;
        self.step_from_input_gates(ps, state, &ig)
    }

    pub fn bind<S: Real>(&self, tape: &mut Tape<S>) -> Result<TapedLstm> {
        let w = tape.param(self.w);
        let w_in = tape.slice_rows(w, 0, self.in_dim)?;
        let w_rec = tape.slice_rows(w, self.in_dim, self.hidden)?;
        let b = tape.param(self.b);
        Ok(TapedLstm {
            w_in,
            w_rec,
            b,
            in_dim: self.in_dim,
            hidden: self.hidden,
        })
    }
}

impl TapedLstm {
    pub fn step_from_input_gates<S: Real>(
        &self,
        tape: &mut Tape<S>,
        h: Var,
        c: Var,
        input_gates: Var,
    ) -> Result<(Var, Var)> {
        let with_bias = tape.add_row(input_gates, self.b)?;
        let rec = tape.matmul(h, self.w_rec)?;
        let gates = tape.add(with_bias, rec)?;
        tape.lstm_cell(gates, c)
    }

    pub fn step<S: Real>(&self, tape: &mut Tape<S>, h: Var, c: Var, x: Var) -> Result<(Var, Var)> {
        let ig = tape.matmul(x, self.w_in)?;
        self.step_from_input_gates(tape, h, c, ig)
    }

    pub fn zero_state<S: Real>(&self, tape: &mut Tape<S>, rows: usize) -> (Var, Var) {
        let h = tape.constant(Tensor::zeros(&[rows, self.hidden]));
        let c = tape.constant(Tensor::zeros(&[rows, self.hidden]));
        (h, c)
    }
}

/// Bi-directional LSTM summariser: `[h_fwd_last ; h_bwd_last]`.
#[derive(Debug, Clone, Copy)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn init<S: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        BiLstm {
            fwd: LstmCell::init(ps, rng, &format!("{name}/fwd"), in_dim, hidden),
            bwd: LstmCell::init(ps, rng, &format!("{name}/bwd"), in_dim, hidden),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    pub fn encode<S: Real>(&self, ps: &ParamStore<S>, seq: &[Tensor<S>]) -> Result<Tensor<S>> {
        let first = seq.first().ok_or(NnError::EmptySequence("bilstm_encode"))?;
        let rows = first.rows();
        let mut f = LstmState::zeros(rows, self.fwd.hidden);
        for x in seq {
            f = self.fwd.step(ps, &f, x)?;
        }
        let mut b = LstmState::zeros(rows, self.bwd.hidden);
        for x in seq.iter().rev() {
            b = self.bwd.step(ps, &b, x)?;
        }
        Tensor::concat_cols(&[&f.hidden, &b.hidden])
    }

    pub fn encode_tape<S: Real>(&self, tape: &mut Tape<S>, seq: &[Var]) -> Result<Var> {
        let first = *seq.first().ok_or(NnError::EmptySequence("bilstm_encode"))?;
        let rows = tape.value(first).rows();
        let fwd = self.fwd.bind(tape)?;
        let bwd = self.bwd.bind(tape)?;
        let (mut fh, mut fc) = fwd.zero_state(tape, rows);
        for &x in seq {
            (fh, fc) = fwd.step(tape, fh, fc, x)?;
        }
        let (mut bh, mut bc) = bwd.zero_state(tape, rows);
        for &x in seq.iter().rev() {
            (bh, bc) = bwd.step(tape, bh, bc, x)?;
        }
        tape.concat_cols(&[fh, bh])
    }
}

/// Multilayer perceptron; `activation` is applied after every layer but the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn init<S: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        dims: &[usize],
        activation: Activation,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::init(ps, rng, &format!("{name}/l{i}"), d[0], d[1], 1.0))
            .collect();
        Mlp { layers, activation }
    }

    pub fn forward<S: Real>(&self, ps: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(ps, &h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.eager(h);
            }
        }
        Ok(h)
    }

    pub fn forward_tape<S: Real>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward_tape(tape, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.taped(tape, h)?;
            }
        }
        Ok(h)
    }
}

pub fn mlp<S: Real>(ps: &ParamStore<S>, net: &Mlp, x: &Tensor<S>) -> Result<Tensor<S>> {
    net.forward(ps, x)
}

pub fn softmax<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    x.softmax_rows()
}

/// Additive attention `s = v^T tanh(W1 key + W2 query)`.
#[derive(Debug, Clone, Copy)]
pub struct AdditiveAttention {
    pub w_key: ParamId,
    pub w_query: ParamId,
    pub v: ParamId,
    pub key_dim: usize,
    pub query_dim: usize,
    pub hidden: usize,
}

impl AdditiveAttention {
    pub fn init<S: Real, R: Rng + ?Sized>(
        ps: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        key_dim: usize,
        query_dim: usize,
        hidden: usize,
        v_scale: f64,
    ) -> Self {
        let w_key = ps.add(
            format!("{name}/w_key"),
            uniform(rng, &[key_dim, hidden], 1.0 / (key_dim as f64).sqrt()),
        );
        let w_query = ps.add(
            format!("{name}/w_query"),
            uniform(rng, &[query_dim, hidden], 1.0 / (query_dim as f64).sqrt()),
        );
        let v = ps.add(format!("{name}/v"), uniform(rng, &[hidden, 1], v_scale));
        AdditiveAttention {
            w_key,
            w_query,
            v,
            key_dim,
            query_dim,
            hidden,
        }
    }

    pub fn score<S: Real>(
        &self,
        ps: &ParamStore<S>,
        query: &Tensor<S>,
        key: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        attention_score(query, key, ps.get(self.v), ps.get(self.w_key), ps.get(self.w_query))
    }

    /// Softmax over `keys` scored against `query`; returns the weighted sum
    /// of keys and the `[rows, K]` weights.
    pub fn combine<S: Real>(
        &self,
        ps: &ParamStore<S>,
        query: &Tensor<S>,
        keys: &[Tensor<S>],
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        if keys.is_empty() {
            return shape_err("attention", "no keys");
        }
        let scores: Vec<Tensor<S>> = keys
            .iter()
            .map(|k| self.score(ps, query, k))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<S>> = scores.iter().collect();
        let weights = Tensor::concat_cols(&refs)?.softmax_rows();
        let mut out = Tensor::zeros(&[query.rows(), keys[0].cols()]);
        for (k, key) in keys.iter().enumerate() {
            out = out.add(&key.mul_col(&weights.slice_cols(k, 1)?)?)?;
        }
        Ok((out, weights))
    }

    pub fn combine_tape<S: Real>(
        &self,
        tape: &mut Tape<S>,
        query: Var,
        keys: &[Var],
    ) -> Result<(Var, Var)> {
        if keys.is_empty() {
            return shape_err("attention", "no keys");
        }
        let w_key = tape.param(self.w_key);
        let w_query = tape.param(self.w_query);
        let v = tape.param(self.v);
        let q = tape.matmul(query, w_query)?;
        let mut scores = Vec::with_capacity(keys.len());
        for &k in keys {
            let kk = tape.matmul(k, w_key)?;
            let pre = tape.add(kk, q)?;
            let act = tape.tanh(pre)?;
            scores.push(tape.matmul(act, v)?);
        }
        let cat = tape.concat_cols(&scores)?;
        let weights = tape.softmax(cat)?;
        let mut out: Option<Var> = None;
        for (k, &key) in keys.iter().enumerate() {
            let wk = tape.slice_cols(weights, k, 1)?;
            let term = tape.mul_col(key, wk)?;
            out = Some(match out {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok((out.expect("nonempty keys"), weights))
    }
}

/// `v^T tanh(W1 key + W2 query)` per row, returned as `[rows, 1]`.
pub fn attention_score<S: Real>(
    query: &Tensor<S>,
    key: &Tensor<S>,
    v: &Tensor<S>,
    w1: &Tensor<S>,
    w2: &Tensor<S>,
) -> Result<Tensor<S>> {
    let pre = key.matmul(w1)?.add(&query.matmul(w2)?)?;
    let out = pre.map(|x| x.tanh()).matmul(v)?;
    out.check_finite("attention_score")?;
    Ok(out)
}
