//! Reverse-mode automatic differentiation over rank-2 tensors.
//!
//! A [`Tape`] records one forward pass. Parameters are borrowed from a
//! [`ParamStore`] rather than copied, so building a tape is cheap even for
//! the 128-wide decoder. Nodes are appended in evaluation order, which is a
//! topological order; [`Tape::backward`] walks them once in reverse.

use crate::error::{shape_err, Result};
use crate::gmm::{self, GMM_PARAMS_PER_COMPONENT};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{sigmoid, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    ConcatCols(Vec<Var>),
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    RepeatRows { src: Var, times: usize },
    Reshape(Var),
    SumCols(Var),
    SumAll(Var),
    LogSoftmax(Var),
    Softmax(Var),
    LstmCell { gates: Var, c_prev: Var, acts: Tensor<S> },
    GmmLogProb { raw: Var, target: Tensor<S>, n_comp: usize },
}

struct Node<S> {
    value: Option<Tensor<S>>,
    op: Op<S>,
}

/// One recorded forward pass.
pub struct Tape<'p, S: Real> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<S> {
    per_node: Vec<Option<Tensor<S>>>,
    param_nodes: Vec<Option<Var>>,
}

impl<S: Real> Grads<S> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.per_node[v.0].as_ref()
    }

    /// Gradient for every parameter of the store, zero for unused ones.
    pub fn param_grads(&self, params: &ParamStore<S>) -> Vec<Tensor<S>> {
        (0..params.len())
            .map(|i| {
                self.param_nodes
                    .get(i)
                    .copied()
                    .flatten()
                    .and_then(|v| self.per_node[v.0].clone())
                    .unwrap_or_else(|| Tensor::zeros(params.get(ParamId(i)).shape()))
            })
            .collect()
    }
}

fn accumulate<S: Real>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<'p, S: Real> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        match &self.nodes[v.0] {
            Node {
                op: Op::Param(i), ..
            } => self.params.get(ParamId(*i)),
            Node { value: Some(t), .. } => t,
            Node { value: None, .. } => unreachable!("non-param node without value"),
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id.0),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `a + bias` with `bias` of shape `[1, cols]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = self.value(a).add_row(self.value(bias))?;
        self.push(out, Op::AddRow(a, bias), "add_row")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Row-wise scaling by a `[rows, 1]` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let out = self.value(a).mul_col(self.value(col))?;
        self.push(out, Op::MulCol(a, col), "mul_col")
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var> {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.tanh());
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.exp());
        self.push(out, Op::Exp(a), "exp")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&tensors)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(src).slice_cols(start, len)?;
        self.push(out, Op::SliceCols { src, start }, "slice_cols")
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(src).slice_rows(start, len)?;
        self.push(out, Op::SliceRows { src, start }, "slice_rows")
    }

    pub fn repeat_rows(&mut self, src: Var, times: usize) -> Result<Var> {
        let out = self.value(src).repeat_rows(times);
        self.push(out, Op::RepeatRows { src, times }, "repeat_rows")
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(src).reshape(shape)?;
        self.push(out, Op::Reshape(src), "reshape")
    }

    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_cols();
        self.push(out, Op::SumCols(a), "sum_cols")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), "sum_all")
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum_all(a)?;
        self.scale(s, S::one() / S::c(n as f64))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).log_softmax_rows();
        self.push(out, Op::LogSoftmax(a), "log_softmax")
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).softmax_rows();
        self.push(out, Op::Softmax(a), "softmax")
    }

    /// Fused LSTM cell. `gates` holds pre-activations `[rows, 4H]` in
    /// input/forget/candidate/output order. Returns `(h, c)`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<(Var, Var)> {
        let g = self.value(gates);
        let cp = self.value(c_prev);
        let (m, h4) = (g.rows(), g.cols());
        if h4 % 4 != 0 || cp.rows() != m || cp.cols() * 4 != h4 {
            return shape_err(
                "lstm_cell",
                format!("gates {:?}, cell {:?}", g.shape(), cp.shape()),
            );
        }
        let hd = h4 / 4;
        let mut acts = Tensor::zeros(&[m, 5 * hd]);
        let mut out = Tensor::zeros(&[m, 2 * hd]);
        lstm_forward_rows(g.data(), cp.data(), m, hd, acts.data_mut(), out.data_mut());
        out.check_finite("lstm_cell")?;
        self.nodes.push(Node {
            value: Some(out),
            op: Op::LstmCell {
                gates,
                c_prev,
                acts,
            },
        });
        let both = Var(self.nodes.len() - 1);
        let h = self.slice_cols(both, 0, hd)?;
        let c = self.slice_cols(both, hd, hd)?;
        Ok((h, c))
    }

    /// Per-row log-density of `target` (`[rows, 2]`, constant) under the
    /// mixture whose unconstrained parameters are `raw` (`[rows, 6 * n_comp]`).
    pub fn gmm_log_prob(&mut self, raw: Var, target: Tensor<S>, n_comp: usize) -> Result<Var> {
        let r = self.value(raw);
        if r.cols() != GMM_PARAMS_PER_COMPONENT * n_comp || target.cols() != 2 || target.rows() != r.rows() {
            return shape_err(
                "gmm_log_prob",
                format!("raw {:?}, target {:?}, {} components", r.shape(), target.shape(), n_comp),
            );
        }
        let mut out = Tensor::zeros(&[r.rows(), 1]);
        for row in 0..r.rows() {
            let t = target.row_slice(row);
            out.data_mut()[row] =
                gmm::raw_log_prob_and_grad(r.row_slice(row), n_comp, [t[0], t[1]], None);
        }
        self.push(out, Op::GmmLogProb { raw, target, n_comp }, "gmm_log_prob")
    }

    /// Backpropagates from a scalar `[1, 1]` node.
    pub fn backward(&self, loss: Var) -> Result<Grads<S>> {
        if self.value(loss).len() != 1 {
            return shape_err("backward", "loss must be a scalar");
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), S::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            g.check_finite("backward")?;
        }
        Ok(Grads {
            per_node: grads,
            param_nodes: self.param_vars.clone(),
        })
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<()> {
        let out = self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                // dA = dC B^T
                let mut da = Tensor::zeros(&[m, k]);
                S::gemm(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize), S::zero(), da.data_mut());
                // dB = A^T dC
                let mut db = Tensor::zeros(&[k, n]);
                S::gemm(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1), S::zero(), db.data_mut());
                accumulate(&mut grads[a.0], da);
                accumulate(&mut grads[b.0], db);
            }
            Op::AddRow(a, b) => {
                let n = g.cols();
                let mut db = vec![S::zero(); n];
                for row in g.data().chunks(n) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                let bshape = self.value(*b).shape().to_vec();
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], Tensor::from_vec(&bshape, db)?);
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], g.clone());
                accumulate(&mut grads[b.0], g.scale(-S::one()));
            }
            Op::Mul(a, b) => {
                let ga = g.mul(self.value(*b))?;
                let gb = g.mul(self.value(*a))?;
                accumulate(&mut grads[a.0], ga);
                accumulate(&mut grads[b.0], gb);
            }
            Op::MulCol(a, c) => {
                let av = self.value(*a);
                let cv = self.value(*c);
                let ga = g.mul_col(cv)?;
                let gc = g.mul(av)?.sum_cols().reshape(cv.shape())?;
                accumulate(&mut grads[a.0], ga);
                accumulate(&mut grads[c.0], gc);
            }
            Op::Scale(a, s) => accumulate(&mut grads[a.0], g.scale(*s)),
            Op::Sigmoid(a) => {
                let d = g.mul(&out.map(|y| y * (S::one() - y)))?;
                accumulate(&mut grads[a.0], d);
            }
            Op::Tanh(a) => {
                let d = g.mul(&out.map(|y| S::one() - y * y))?;
                accumulate(&mut grads[a.0], d);
            }
            Op::Exp(a) => accumulate(&mut grads[a.0], g.mul(out)?),
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    let gp = g.slice_cols(start, w)?.reshape(self.value(*p).shape())?;
                    accumulate(&mut grads[p.0], gp);
                    start += w;
                }
            }
            Op::SliceCols { src, start } => {
                let sv = self.value(*src);
                let (m, n, w) = (sv.rows(), sv.cols(), g.cols());
                let mut d = Tensor::zeros(sv.shape());
                for r in 0..m {
                    d.data_mut()[r * n + start..r * n + start + w].copy_from_slice(g.row_slice(r));
                }
                accumulate(&mut grads[src.0], d);
            }
            Op::SliceRows { src, start } => {
                let sv = self.value(*src);
                let n = sv.cols();
                let mut d = Tensor::zeros(sv.shape());
                d.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                accumulate(&mut grads[src.0], d);
            }
            Op::RepeatRows { src, times } => {
                let sv = self.value(*src);
                let n = sv.cols();
                let mut d = Tensor::zeros(sv.shape());
                for r in 0..sv.rows() {
                    for t in 0..*times {
                        let gr = g.row_slice(r * times + t);
                        for (acc, &v) in d.data_mut()[r * n..(r + 1) * n].iter_mut().zip(gr) {
                            *acc = *acc + v;
                        }
                    }
                }
                accumulate(&mut grads[src.0], d);
            }
            Op::Reshape(src) => {
                let d = g.reshape(self.value(*src).shape())?;
                accumulate(&mut grads[src.0], d);
            }
            Op::SumCols(a) => {
                let av = self.value(*a);
                let n = av.cols();
                let mut d = Tensor::zeros(av.shape());
                for (r, row) in d.data_mut().chunks_mut(n).enumerate() {
                    row.fill(g.data()[r]);
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::SumAll(a) => {
                let d = Tensor::full(self.value(*a).shape(), g.data()[0]);
                accumulate(&mut grads[a.0], d);
            }
            Op::LogSoftmax(a) => {
                // dx = g - softmax * sum(g)
                let n = out.cols();
                let mut d = g.clone();
                for r in 0..out.rows() {
                    let gs: S = g.row_slice(r).iter().copied().sum();
                    for c in 0..n {
                        let p = out.get(r, c).exp();
                        d.data_mut()[r * n + c] = g.get(r, c) - p * gs;
                    }
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::Softmax(a) => {
                // dx = y * (g - <g, y>)
                let n = out.cols();
                let mut d = g.clone();
                for r in 0..out.rows() {
                    let dot: S = g
                        .row_slice(r)
                        .iter()
                        .zip(out.row_slice(r))
                        .map(|(&x, &y)| x * y)
                        .sum();
                    for c in 0..n {
                        d.data_mut()[r * n + c] = out.get(r, c) * (g.get(r, c) - dot);
                    }
                }
                accumulate(&mut grads[a.0], d);
            }
            Op::LstmCell {
                gates,
                c_prev,
                acts,
            } => {
                let cp = self.value(*c_prev);
                let m = cp.rows();
                let hd = cp.cols();
                let mut dg = Tensor::zeros(&[m, 4 * hd]);
                let mut dcp = Tensor::zeros(&[m, hd]);
                lstm_backward_rows(
                    g.data(),
                    acts.data(),
                    cp.data(),
                    m,
                    hd,
                    dg.data_mut(),
                    dcp.data_mut(),
                );
                accumulate(&mut grads[gates.0], dg);
                accumulate(&mut grads[c_prev.0], dcp);
            }
            Op::GmmLogProb { raw, target, n_comp } => {
                let rv = self.value(*raw);
                let w = rv.cols();
                let mut d = Tensor::zeros(rv.shape());
                let mut row_grad = vec![S::zero(); w];
                for r in 0..rv.rows() {
                    let t = target.row_slice(r);
                    gmm::raw_log_prob_and_grad(
                        rv.row_slice(r),
                        *n_comp,
                        [t[0], t[1]],
                        Some(&mut row_grad),
                    );
                    let gr = g.data()[r];
                    for (dst, &v) in d.data_mut()[r * w..(r + 1) * w].iter_mut().zip(&row_grad) {
                        *dst = gr * v;
                    }
                }
                accumulate(&mut grads[raw.0], d);
            }
        }
        Ok(())
    }
}

/// Shared LSTM cell kernel: `gates` `[m, 4H]` pre-activations, writes the
/// activations `[m, 5H]` (i, f, g, o, tanh c) and `[h | c]` `[m, 2H]`.
pub(crate) fn lstm_forward_rows<S: Real>(
    gates: &[S],
    c_prev: &[S],
    m: usize,
    hd: usize,
    acts: &mut [S],
    out: &mut [S],
) {
    for r in 0..m {
        let gr = &gates[r * 4 * hd..(r + 1) * 4 * hd];
        let a = &mut acts[r * 5 * hd..(r + 1) * 5 * hd];
        let o = &mut out[r * 2 * hd..(r + 1) * 2 * hd];
        for j in 0..hd {
            let i = sigmoid(gr[j]);
            let f = sigmoid(gr[hd + j]);
            let g = gr[2 * hd + j].tanh();
            let og = sigmoid(gr[3 * hd + j]);
            let c = f * c_prev[r * hd + j] + i * g;
            let tc = c.tanh();
            a[j] = i;
            a[hd + j] = f;
            a[2 * hd + j] = g;
            a[3 * hd + j] = og;
            a[4 * hd + j] = tc;
            o[j] = og * tc;
            o[hd + j] = c;
        }
    }
}

fn lstm_backward_rows<S: Real>(
    g_out: &[S],
    acts: &[S],
    c_prev: &[S],
    m: usize,
    hd: usize,
    d_gates: &mut [S],
    d_c_prev: &mut [S],
) {
    let one = S::one();
    for r in 0..m {
        let a = &acts[r * 5 * hd..(r + 1) * 5 * hd];
        let go = &g_out[r * 2 * hd..(r + 1) * 2 * hd];
        let dg = &mut d_gates[r * 4 * hd..(r + 1) * 4 * hd];
        for j in 0..hd {
            let (i, f, g, o, tc) = (a[j], a[hd + j], a[2 * hd + j], a[3 * hd + j], a[4 * hd + j]);
            let dh = go[j];
            let dc = go[hd + j] + dh * o * (one - tc * tc);
            let d_o = dh * tc;
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * c_prev[r * hd + j];
            dg[j] = d_i * i * (one - i);
            dg[hd + j] = d_f * f * (one - f);
            dg[2 * hd + j] = d_g * (one - g * g);
            dg[3 * hd + j] = d_o * o * (one - o);
            d_c_prev[r * hd + j] = dc * f;
        }
    }
}
