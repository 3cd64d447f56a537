//! Optimization of the β-weighted ELBO with exact enumeration over the
//! discrete latent.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajectron_nn::tensor::log_sum_exp;
use trajectron_nn::{NnError, Real, Tape, Tensor, Var};

use crate::dataio::{SceneTimeline, Standardizer};
use crate::error::{CoreError, Result};
use crate::model::{extract_samples, teacher_forced_log_lik, AgentSample, Model, ModelConfig, SampleBatch, TapedEncoding};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSchedule {
    Constant(f64),
    /// Linear ramp from `start` to `end` over `steps`, then `end`.
    Warmup { start: f64, end: f64, steps: usize },
}

impl BetaSchedule {
    pub fn at(&self, step: usize) -> f64 {
        match *self {
            BetaSchedule::Constant(b) => b,
            BetaSchedule::Warmup { start, end, steps } => {
                if steps == 0 || step >= steps {
                    end
                } else {
                    start + (end - start) * step as f64 / steps as f64
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BetaSchedule::Constant(b) => b >= 0.0,
            BetaSchedule::Warmup { start, end, .. } => start >= 0.0 && end >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::config("beta must be nonnegative"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Agents per step, drawn uniformly with replacement.
    pub batch_size: usize,
    pub beta: BetaSchedule,
    pub lr: f64,
    /// Per-step multiplicative learning-rate decay; 1 keeps it constant.
    pub lr_decay: f64,
    /// Floor of the decayed learning rate.
    pub min_lr: f64,
    pub clip: f64,
    pub seed: u64,
    /// Write `checkpoint_step{k}.trjw` every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Evaluate the validation loss every this many steps; 0 disables.
    pub validate_every: usize,
    /// Every `validation_stride`-th sample is held out for validation; 0 disables.
    pub validation_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 16,
            beta: BetaSchedule::Constant(1.0),
            lr: 1e-3,
            lr_decay: 1.0,
            min_lr: 0.0,
            clip: 1.0,
            seed: 0,
            checkpoint_every: 500,
            validate_every: 100,
            validation_stride: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(CoreError::config("steps and batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.clip > 0.0) {
            return Err(CoreError::config("lr and clip must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || !(self.min_lr >= 0.0) {
            return Err(CoreError::config("lr_decay must be in (0, 1] and min_lr nonnegative"));
        }
        self.beta.validate()
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        (self.lr * self.lr_decay.powi(step as i32)).max(self.min_lr.min(self.lr))
    }
}

/// Batch-mean loss terms, each normalized by the horizon length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// `-(recon - beta * kl)`.
    pub total: f64,
    /// Expected log-likelihood under the recognition distribution.
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
    pub lr: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,total,recon,kl,beta,lr";

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.step, r.total, r.recon, r.kl, r.beta, r.lr).expect("string write");
    }
    out
}

/// `sum_z q(z) (log q(z) - log p(z))` from logits, by exact summation.
pub fn kl_discrete(q_logits: &[f64], p_logits: &[f64]) -> Result<f64> {
    if q_logits.len() != p_logits.len() || q_logits.is_empty() {
        return Err(CoreError::Contract(format!(
            "latent cardinalities differ: {} vs {}",
            q_logits.len(),
            p_logits.len()
        )));
    }
    let lq = log_sum_exp(q_logits);
    let lp = log_sum_exp(p_logits);
    let kl = q_logits
        .iter()
        .zip(p_logits)
        .map(|(&q, &p)| {
            let log_q = q - lq;
            log_q.exp() * (log_q - (p - lp))
        })
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// Differentiable ELBO loss over `samples` (any mix of node types).
/// Returns the scalar loss variable and its report.
pub fn elbo_loss<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<S>,
    samples: &[&AgentSample],
    beta: f64,
) -> Result<(Var, LossReport)> {
    let horizon = model.config.horizon;
    let usable: Vec<&AgentSample> = samples
        .iter()
        .copied()
        .filter(|s| {
            let ok = s.future_velocity.len() == horizon;
            if !ok {
                log::warn!("agent {} at t={} lacks a full future; excluded", s.agent, s.t_obs);
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(CoreError::Contract("no sample with a complete future".into()));
    }
    let norm = 1.0 / (usable.len() * horizon) as f64;
    let mut total: Option<Var> = None;
    let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
    for batch in SampleBatch::<S>::group(&usable)? {
        let node = model.node(&batch.node_type)?;
        let enc = TapedEncoding::encode(model, tape, &batch)?;
        let future: Vec<Var> = batch.future.iter().map(|f| tape.constant(f.clone())).collect();
        let h_future = node.future.encode_tape(tape, &future)?;
        let prior = node.prior.forward_tape(tape, enc.h_enc)?;
        let post_in = tape.concat_cols(&[enc.h_enc, h_future])?;
        let post = node.posterior.forward_tape(tape, post_in)?;
        let log_p = tape.log_softmax(prior)?;
        let log_q = tape.log_softmax(post)?;
        let q = tape.exp(log_q)?;
        let ll = teacher_forced_log_lik(model, tape, &batch, enc.h_enc)?;
        let weighted_ll = tape.mul(q, ll)?;
        let recon = tape.sum_cols(weighted_ll)?;
        let log_ratio = tape.sub(log_q, log_p)?;
        let weighted_ratio = tape.mul(q, log_ratio)?;
        let kl = tape.sum_cols(weighted_ratio)?;
        recon_sum += tape.value(recon).sum().f64();
        kl_sum += tape.value(kl).sum().f64();
        let scaled_kl = tape.scale(kl, S::c(beta))?;
        let per_row = tape.sub(scaled_kl, recon)?;
        let part = tape.sum_all(per_row)?;
        total = Some(match total {
            None => part,
            Some(acc) => tape.add(acc, part)?,
        });
    }
    let loss = tape.scale(total.expect("at least one batch"), S::c(norm))?;
    let recon = recon_sum * norm;
    let kl = kl_sum * norm;
    Ok((
        loss,
        LossReport {
            total: -(recon - beta * kl),
            recon,
            kl,
        },
    ))
}

/// Loss without gradients, evaluated in chunks.
pub fn evaluate_loss<S: Real>(model: &Model<S>, samples: &[AgentSample], beta: f64, chunk: usize) -> Result<LossReport> {
    let mut acc = LossReport {
        total: 0.0,
        recon: 0.0,
        kl: 0.0,
    };
    let n = samples.len() as f64;
    for part in samples.chunks(chunk.max(1)) {
        let refs: Vec<&AgentSample> = part.iter().collect();
        let mut tape = Tape::new(&model.params);
        let (_, r) = elbo_loss(model, &mut tape, &refs, beta)?;
        let w = part.len() as f64 / n;
        acc.total += w * r.total;
        acc.recon += w * r.recon;
        acc.kl += w * r.kl;
    }
    Ok(acc)
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<S: Real>(grads: &mut [Tensor<S>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = S::c(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

/// First-order optimizer with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    t: i32,
}

impl<S: Real> Adam<S> {
    pub fn new(lr: f64, shapes: impl Iterator<Item = Vec<usize>>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = shapes.map(|s| (Tensor::zeros(&s), Tensor::zeros(&s))).unzip();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (b1s, b2s) = (S::c(b1), S::c(b2));
        let (one_b1, one_b2) = (S::c(1.0 - b1), S::c(1.0 - b2));
        let step = S::c(self.lr * c2.sqrt() / c1);
        let eps = S::c(self.eps * c2.sqrt());
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1s * *mi + one_b1 * gi;
                *vi = b2s * *vi + one_b2 * gi * gi;
                *pi = *pi - step * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Real> {
    pub model: Model<S>,
    pub history: Vec<LossRow>,
    /// `(step, validation loss)` of every validation pass.
    pub validation: Vec<(usize, f64)>,
    pub best_step: Option<usize>,
    pub best: Option<Model<S>>,
}

/// Splits samples into train and validation by position.
pub fn split_validation(samples: Vec<AgentSample>, stride: usize) -> (Vec<AgentSample>, Vec<AgentSample>) {
    if stride == 0 {
        return (samples, Vec::new());
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (k, s) in samples.into_iter().enumerate() {
        if k % stride == stride - 1 {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    if train.is_empty() {
        return (val, Vec::new());
    }
    (train, val)
}

/// Fits the standardizer on `scenes`, initializes a model from `tc.seed`
/// and trains it. Checkpoints go to `out` when given.
pub fn train<S: Real>(
    scenes: &[SceneTimeline],
    config: &ModelConfig,
    tc: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome<S>> {
    tc.validate()?;
    let standardizer = Standardizer::fit(scenes);
    let model = Model::<S>::initialize(config, standardizer, tc.seed)?;
    let samples = extract_samples(scenes, config, &model.standardizer)?;
    if samples.is_empty() {
        return Err(CoreError::data(format!(
            "no agent has {} observed steps followed by {} future steps",
            config.min_history, config.horizon
        )));
    }
    let (train_set, val_set) = split_validation(samples, tc.validation_stride);
    log::info!("training on {} samples, validating on {}", train_set.len(), val_set.len());
    train_model(model, &train_set, &val_set, tc, out)
}

fn checkpoint_path(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

/// The optimization loop proper. On a non-finite loss or gradient the
/// parameters from before the failing step are written to
/// `last_good.trjw` and training aborts.
pub fn train_model<S: Real>(
    mut model: Model<S>,
    train_set: &[AgentSample],
    val_set: &[AgentSample],
    tc: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome<S>> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::data("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut adam = Adam::new(tc.lr, model.params.tensors().iter().map(|t| t.shape().to_vec()));
    let mut history = Vec::with_capacity(tc.steps);
    let mut validation = Vec::new();
    let mut best: Option<(usize, f64, Model<S>)> = None;
    for step in 0..tc.steps {
        let beta = tc.beta.at(step);
        let lr = tc.lr_at(step);
        let batch: Vec<&AgentSample> = (0..tc.batch_size)
            .map(|_| &train_set[rng.random_range(0..train_set.len())])
            .collect();
        let outcome = {
            let mut tape = Tape::new(&model.params);
            elbo_loss(&model, &mut tape, &batch, beta).and_then(|(loss, report)| {
                let value = tape.value(loss).data()[0].f64();
                if !value.is_finite() {
                    return Err(CoreError::Nn(NnError::NonFinite { op: "elbo_loss" }));
                }
                let grads = tape.backward(loss)?;
                Ok((report, grads.param_grads(&model.params)))
            })
        };
        let (report, mut grads) = match outcome {
            Ok(v) => v,
            Err(CoreError::Nn(e)) => return Err(abort(&model, out, step, e)),
            Err(e) => return Err(e),
        };
        if grads.iter().any(|g| g.check_finite("gradient").is_err()) {
            return Err(abort(&model, out, step, NnError::NonFinite { op: "gradient" }));
        }
        clip_global_norm(&mut grads, tc.clip);
        adam.lr = lr;
        adam.step(model.params.tensors_mut(), &grads);
        history.push(LossRow {
            step,
            total: report.total,
            recon: report.recon,
            kl: report.kl,
            beta,
            lr,
        });
        let done = step + 1;
        if let Some(dir) = out {
            if tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0 {
                model.save(checkpoint_path(dir, &format!("checkpoint_step{done}.trjw")))?;
            }
        }
        let validate_now = tc.validate_every > 0 && (done % tc.validate_every == 0 || done == tc.steps);
        if !val_set.is_empty() && validate_now {
            let v = evaluate_loss(&model, val_set, beta, 64)?.total;
            log::info!("step {done}: train {:.4}, validation {v:.4}", report.total);
            validation.push((done, v));
            if v.is_finite() && best.as_ref().is_none_or(|b| v < b.1) {
                best = Some((done, v, model.clone()));
            }
        }
    }
    if let Some(dir) = out {
        model.save(checkpoint_path(dir, "final.trjw"))?;
        if let Some((_, _, m)) = &best {
            m.save(checkpoint_path(dir, "best.trjw"))?;
        }
    }
    let (best_step, best) = match best {
        Some((s, _, m)) => (Some(s), Some(m)),
        None => (None, None),
    };
    Ok(TrainOutcome {
        model,
        history,
        validation,
        best_step,
        best,
    })
}

fn abort<S: Real>(model: &Model<S>, out: Option<&Path>, step: usize, source: NnError) -> CoreError {
    if let Some(dir) = out {
        if let Err(e) = model.save(checkpoint_path(dir, "last_good.trjw")) {
            log::error!("could not write last good checkpoint: {e}");
        }
    }
    CoreError::Diverged { step, source }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_identical_is_zero() {
        assert_eq!(kl_discrete(&[0.3, -1.0, 2.0], &[0.3, -1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn kl_half_half_against_quarter() {
        let q = [0.5f64.ln(), 0.5f64.ln()];
        let p = [0.25f64.ln(), 0.75f64.ln()];
        let oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let kl = kl_discrete(&q, &p).unwrap();
        assert!((kl - oracle).abs() < 1e-15);
        assert!((kl - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn kl_cardinality_mismatch() {
        assert!(kl_discrete(&[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn kl_is_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let k = rng.random_range(1..12);
            let q: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert!(kl_discrete(&q, &p).unwrap() >= 0.0);
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mut g: Vec<Tensor<f64>> = (0..3)
                .map(|_| Tensor::from_vec(&[2, 3], (0..6).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap())
                .collect();
            let max = rng.random_range(0.1..5.0);
            clip_global_norm(&mut g, max);
            let n = g.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= max + 1e-9);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f64>::row(&[1.0, -1.0])];
        let g = vec![Tensor::row(&[0.5, -2.0])];
        let mut adam = Adam::new(0.1, p.iter().map(|t| t.shape().to_vec()));
        adam.step(&mut p, &g);
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn warmup_schedule() {
        let b = BetaSchedule::Warmup {
            start: 0.0,
            end: 1.0,
            steps: 10,
        };
        assert_eq!(b.at(0), 0.0);
        assert_eq!(b.at(5), 0.5);
        assert_eq!(b.at(10), 1.0);
        assert_eq!(b.at(100), 1.0);
    }

    #[test]
    fn csv_layout() {
        let rows = [LossRow {
            step: 0,
            total: 1.5,
            recon: -1.0,
            kl: 0.5,
            beta: 1.0,
            lr: 0.001,
        }];
        assert_eq!(loss_csv(&rows), "step,total,recon,kl,beta,lr\n0,1.5,-1,0.5,1,0.001\n");
    }
}
