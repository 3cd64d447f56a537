use rand::Rng;
use trajectron_nn::{GmmParams, LstmState, Real, Tape, Tensor, Var};

use crate::error::{CoreError, Result};

use super::sample::SampleBatch;
use super::{Model, NodeModules, VELOCITY_DIM};

/// `[rows, Z]` one-hot rows for the given categories.
pub(crate) fn one_hot<S: Real>(z: &[usize], cardinality: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(&[z.len(), cardinality]);
    for (r, &k) in z.iter().enumerate() {
        t.data_mut()[r * cardinality + k] = S::one();
    }
    t
}

/// Decoder input gates that stay fixed over the horizon: the latent and the
/// frozen encoding. Rows pair one encoding with one latent value.
#[derive(Debug, Clone)]
pub struct DecoderContext<S> {
    gates: Tensor<S>,
    init: LstmState<S>,
}

impl<S: Real> DecoderContext<S> {
    /// `h_enc` is `[rows, h_enc_dim]`; `z[r]` is the latent of row `r`.
    pub fn new(model: &Model<S>, node: &NodeModules, h_enc: &Tensor<S>, z: &[usize]) -> Result<Self> {
        let card = model.config.latent_cardinality;
        if h_enc.rows() != z.len() || z.iter().any(|&k| k >= card) {
            return Err(CoreError::Contract(format!(
                "{} latent values for {} encodings, cardinality {card}",
                z.len(),
                h_enc.rows()
            )));
        }
        let ps = &model.params;
        let dec = &node.decoder;
        let from_h = dec.partial_input_gates(ps, h_enc, VELOCITY_DIM + card)?;
        let onehot = one_hot(z, card);
        let from_z = dec.partial_input_gates(ps, &onehot, VELOCITY_DIM)?;
        let init = node.decoder_init.forward(ps, &Tensor::concat_cols(&[&onehot, h_enc])?)?;
        let hd = dec.hidden;
        Ok(DecoderContext {
            gates: from_h.add(&from_z)?,
            init: LstmState {
                hidden: init.slice_cols(0, hd)?.map(|v| v.tanh()),
                cell: init.slice_cols(hd, hd)?,
            },
        })
    }

    pub fn rows(&self) -> usize {
        self.gates.rows()
    }

    /// Sampled rollout: the previous-output input starts at `y_prev` and then
    /// takes each sampled velocity. Draws are made step by step, row by row.
    /// Returns per-row velocities and, if `keep_gmm`, per-row mixtures.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        model: &Model<S>,
        node: &NodeModules,
        y_prev: &Tensor<S>,
        horizon: usize,
        keep_gmm: bool,
        rng: &mut R,
    ) -> Result<(Vec<Vec<[f64; 2]>>, Vec<Vec<GmmParams>>)> {
        let ps = &model.params;
        let rows = self.rows();
        let m = model.config.n_gmm_components;
        let mut state = self.init.clone();
        let mut prev = y_prev.clone();
        let mut velocities = vec![Vec::with_capacity(horizon); rows];
        let mut mixtures = vec![Vec::with_capacity(if keep_gmm { horizon } else { 0 }); rows];
        for _ in 0..horizon {
            let ig = node.decoder.partial_input_gates(ps, &prev, 0)?.add(&self.gates)?;
            state = node.decoder.step_from_input_gates(ps, &state, &ig)?;
            let raw = node.gmm.forward(ps, &state.hidden)?;
            let mut next = Vec::with_capacity(rows * VELOCITY_DIM);
            for r in 0..rows {
                let gmm = GmmParams::from_raw(raw.row_slice(r), m)?;
                let y = gmm.sample(rng);
                next.extend([S::c(y[0]), S::c(y[1])]);
                velocities[r].push(y);
                if keep_gmm {
                    mixtures[r].push(gmm);
                }
            }
            prev = Tensor::from_vec(&[rows, VELOCITY_DIM], next)?;
        }
        Ok((velocities, mixtures))
    }
}

/// Teacher-forced log-likelihood of each batch row's future under every
/// latent value, summed over the horizon: `[rows, Z]`.
pub fn teacher_forced_log_lik<S: Real>(
    model: &Model<S>,
    tape: &mut Tape<S>,
    batch: &SampleBatch<S>,
    h_enc: Var,
) -> Result<Var> {
    let node = model.node(&batch.node_type)?;
    let card = model.config.latent_cardinality;
    let rows = batch.len();
    let dec = node.decoder.bind(tape)?;
    let w_y = tape.slice_rows(dec.w_in, 0, VELOCITY_DIM)?;
    let w_z = tape.slice_rows(dec.w_in, VELOCITY_DIM, card)?;
    let w_h = tape.slice_rows(dec.w_in, VELOCITY_DIM + card, model.config.h_enc_dim())?;
    // Row b * Z + z pairs sample b with latent z.
    let from_h = tape.matmul(h_enc, w_h)?;
    let from_h = tape.repeat_rows(from_h, card)?;
    let z: Vec<usize> = (0..rows).flat_map(|_| 0..card).collect();
    let onehot = tape.constant(one_hot(&z, card));
    let from_z = tape.matmul(onehot, w_z)?;
    let context = tape.add(from_h, from_z)?;
    let w_init = tape.param(node.decoder_init.w);
    let b_init = tape.param(node.decoder_init.b);
    let wi_z = tape.slice_rows(w_init, 0, card)?;
    let wi_h = tape.slice_rows(w_init, card, model.config.h_enc_dim())?;
    let init_h = tape.matmul(h_enc, wi_h)?;
    let init_h = tape.repeat_rows(init_h, card)?;
    let init_z = tape.matmul(onehot, wi_z)?;
    let init = tape.add(init_h, init_z)?;
    let init = tape.add_row(init, b_init)?;
    let hd = node.decoder.hidden;
    let h0 = tape.slice_cols(init, 0, hd)?;
    let mut h = tape.tanh(h0)?;
    let mut c = tape.slice_cols(init, hd, hd)?;
    let mut total: Option<Var> = None;
    for t in 0..batch.future.len() {
        let prev = if t == 0 { &batch.y_prev } else { &batch.future[t - 1] };
        let prev = tape.constant(prev.repeat_rows(card));
        let from_y = tape.matmul(prev, w_y)?;
        let ig = tape.add(from_y, context)?;
        (h, c) = dec.step_from_input_gates(tape, h, c, ig)?;
        let raw = node.gmm.forward_tape(tape, h)?;
        let lp = tape.gmm_log_prob(raw, batch.future[t].repeat_rows(card), model.config.n_gmm_components)?;
        total = Some(match total {
            None => lp,
            Some(acc) => tape.add(acc, lp)?,
        });
    }
    let total = total.ok_or_else(|| CoreError::Contract("empty horizon".into()))?;
    Ok(tape.reshape(total, &[rows, card])?)
}

/// Positions after each step of single-integrator motion from `start`.
pub fn integrate_velocities(start: [f64; 2], velocities: &[[f64; 2]], dt: f64) -> Vec<[f64; 2]> {
    let mut p = start;
    velocities
        .iter()
        .map(|v| {
            p = [p[0] + v[0] * dt, p[1] + v[1] * dt];
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_motion() {
        let p = integrate_velocities([0.0, 0.0], &[[1.0, 0.0]; 3], 0.4);
        assert_eq!(p, vec![[0.4, 0.0], [0.8, 0.0], [0.4 + 0.4 + 0.4, 0.0]]);
    }

    #[test]
    fn zero_velocity_freezes() {
        let p = integrate_velocities([2.0, -1.0], &[[0.0, 0.0]; 4], 0.4);
        assert!(p.iter().all(|q| *q == [2.0, -1.0]));
    }

    #[test]
    fn one_hot_rows() {
        let t = one_hot::<f64>(&[2, 0], 3);
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }
}
