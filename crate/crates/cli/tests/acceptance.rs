//! Acceptance suite. Prints one line per criterion and exits nonzero when a
//! gated criterion fails. Numeric arguments select criteria by id.
//!
//! Criterion 8 needs the ETH/UCY files under `TRAJECTRON_ETH_UCY_DIR` (with a
//! `manifest.txt` naming an `eth` split); it is reported, never gated.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use trajectron_cli::config::{Overrides, RunConfig};
use trajectron_core::dataio::{
    make_constant_velocity, make_synthetic_fork, SceneTimeline, Standardizer, AgentId, DEFAULT_NODE_TYPE,
    FORK_AGENT,
};
use trajectron_core::eval::bench::{crowd_scene, encode_speed};
use trajectron_core::eval::protocol::MODEL_METHOD;
use trajectron_core::eval::{ade, best_of_n, evaluate_fold, fde, kde_nll};
use trajectron_core::graph::{
    compute_modulation_tensor, online_modulation_slice, EdgeMask, FilterPair, ModulationCounters,
};
use trajectron_core::model::{
    encode_scene, extract_samples, predict, AgentSample, Model, ModelConfig, Observation, OnlinePredictor,
    PredictOptions, SampleMode,
};
use trajectron_core::train::{elbo_loss, train, BetaSchedule, TrainConfig};
use trajectron_nn::gradcheck::{central_difference, max_relative_error};
use trajectron_nn::layers::uniform;
use trajectron_nn::{
    Activation, AdditiveAttention, BiLstm, GmmParams, LstmCell, Mlp, ParamStore, Tape, Tensor, Var,
};

enum Verdict {
    Pass(String),
    Fail(String),
    /// Measured and printed but not gated.
    Report(String),
    Skip(String),
}

type Check = fn() -> Verdict;

fn within(limit: Duration, start: Instant, detail: String) -> Verdict {
    let took = start.elapsed();
    if took > limit {
        Verdict::Fail(format!("{detail}; took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs()))
    } else {
        Verdict::Pass(detail)
    }
}

// ---------------------------------------------------------------- 1 gradients

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn weighted_sum(tape: &mut Tape<f64>, out: Var, probe: &Tensor<f64>) -> Var {
    let p = tape.constant(probe.clone());
    let prod = tape.mul(out, p).unwrap();
    tape.sum_all(prod).unwrap()
}

/// Largest relative error between tape and finite-difference gradients.
fn grad_error(ps: &ParamStore<f64>, forward: impl Fn(&mut Tape<f64>) -> Var) -> f64 {
    let analytic: Vec<f64> = {
        let mut tape = Tape::new(ps);
        let loss = forward(&mut tape);
        let grads = tape.backward(loss).unwrap();
        grads.param_grads(ps).iter().flat_map(|t| t.data().to_vec()).collect()
    };
    let numeric = central_difference(
        |x| {
            let mut probe = ps.clone();
            probe.unflatten(x);
            let mut tape = Tape::new(&probe);
            let loss = forward(&mut tape);
            tape.value(loss).data()[0]
        },
        &ps.flatten(),
        EPS,
    );
    max_relative_error(&analytic, &numeric, FLOOR).0
}

fn layer_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut ps = ParamStore::new();
    let cell = LstmCell::init(&mut ps, &mut rng, "cell", 3, 4);
    let x = ps.add("x", uniform(&mut rng, &[2, 3], 1.0));
    let h0 = ps.add("h0", uniform(&mut rng, &[2, 4], 0.5));
    let c0 = ps.add("c0", uniform(&mut rng, &[2, 4], 0.5));
    let (ph, pc) = (uniform(&mut rng, &[2, 4], 1.0), uniform(&mut rng, &[2, 4], 1.0));
    out.push((
        "lstm",
        grad_error(&ps, |t| {
            let l = cell.bind(t).unwrap();
            let (xv, hv, cv) = (t.param(x), t.param(h0), t.param(c0));
            let (h1, c1) = l.step(t, hv, cv, xv).unwrap();
            let (h2, c2) = l.step(t, h1, c1, xv).unwrap();
            let a = weighted_sum(t, h2, &ph);
            let b = weighted_sum(t, c2, &pc);
            t.add(a, b).unwrap()
        }),
    ));

    let mut ps = ParamStore::new();
    let enc = BiLstm::init(&mut ps, &mut rng, "bi", 3, 3);
    let xs: Vec<_> = (0..4).map(|i| ps.add(format!("x{i}"), uniform(&mut rng, &[2, 3], 1.0))).collect();
    let p = uniform(&mut rng, &[2, 6], 1.0);
    out.push((
        "bilstm",
        grad_error(&ps, |t| {
            let seq: Vec<Var> = xs.iter().map(|&id| t.param(id)).collect();
            let o = enc.encode_tape(t, &seq).unwrap();
            weighted_sum(t, o, &p)
        }),
    ));

    for (name, act) in [("mlp_tanh", Activation::Tanh), ("mlp_sigmoid", Activation::Sigmoid)] {
        let mut ps = ParamStore::new();
        let net = Mlp::init(&mut ps, &mut rng, "mlp", &[4, 5, 3], act);
        let x = ps.add("x", uniform(&mut rng, &[3, 4], 1.0));
        let p = uniform(&mut rng, &[3, 3], 1.0);
        out.push((
            name,
            grad_error(&ps, |t| {
                let xv = t.param(x);
                let o = net.forward_tape(t, xv).unwrap();
                weighted_sum(t, o, &p)
            }),
        ));
    }

    let mut ps = ParamStore::new();
    let att = AdditiveAttention::init(&mut ps, &mut rng, "att", 4, 3, 3, 1.0);
    let q = ps.add("q", uniform(&mut rng, &[2, 3], 1.0));
    let keys: Vec<_> = (0..3).map(|i| ps.add(format!("k{i}"), uniform(&mut rng, &[2, 4], 1.0))).collect();
    let (po, pw) = (uniform(&mut rng, &[2, 4], 1.0), uniform(&mut rng, &[2, 3], 1.0));
    out.push((
        "attention",
        grad_error(&ps, |t| {
            let qv = t.param(q);
            let kv: Vec<Var> = keys.iter().map(|&id| t.param(id)).collect();
            let (o, w) = att.combine_tape(t, qv, &kv).unwrap();
            let a = weighted_sum(t, o, &po);
            let b = weighted_sum(t, w, &pw);
            t.add(a, b).unwrap()
        }),
    ));

    let mut ps = ParamStore::new();
    let raw = ps.add("raw", uniform(&mut rng, &[3, 6 * 3], 1.5));
    let target = uniform(&mut rng, &[3, 2], 2.0);
    let p = uniform(&mut rng, &[3, 1], 1.0);
    out.push((
        "gmm",
        grad_error(&ps, |t| {
            let r = t.param(raw);
            let lp = t.gmm_log_prob(r, target.clone(), 3).unwrap();
            weighted_sum(t, lp, &p)
        }),
    ));
    out
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        nhe_hidden: 4,
        nfe_hidden: 3,
        ee_hidden: 3,
        attention_hidden: 3,
        decoder_hidden: 5,
        latent_mlp_hidden: 4,
        n_gmm_components: 2,
        latent_cardinality: 3,
        horizon: 3,
        history_len: 3,
        min_history: 2,
        radius: 2.0,
        ..ModelConfig::default()
    }
}

/// Two agents walking side by side with wobble.
fn toy_scene() -> SceneTimeline {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let tracks: Vec<(AgentId, Vec<Option<[f64; 2]>>)> = (0..2)
        .map(|a| {
            let mut p = [0.0, a as f64];
            let track = (0..8)
                .map(|_| {
                    p = [p[0] + 0.4 + rng.random_range(-0.1..0.1), p[1] + rng.random_range(-0.1..0.1)];
                    Some(p)
                })
                .collect();
            (a as AgentId, track)
        })
        .collect();
    SceneTimeline::from_positions("toy", 0.4, DEFAULT_NODE_TYPE, &tracks).unwrap()
}

fn elbo_error() -> f64 {
    let config = tiny_config();
    let scenes = vec![toy_scene()];
    let mut model = Model::<f64>::initialize(&config, Standardizer::fit(&scenes), 5).unwrap();
    let samples = extract_samples(&scenes, &config, &model.standardizer).unwrap();
    let picked: Vec<&AgentSample> = samples.iter().filter(|s| s.t_obs == 1 || s.t_obs == 3).collect();
    let beta = 0.7;
    let analytic: Vec<f64> = {
        let mut tape = Tape::new(&model.params);
        let (loss, _) = elbo_loss(&model, &mut tape, &picked, beta).unwrap();
        let g = tape.backward(loss).unwrap();
        g.param_grads(&model.params).iter().flat_map(|t| t.data().to_vec()).collect()
    };
    let x0 = model.params.flatten();
    let numeric = central_difference(
        |x| {
            model.params.unflatten(x);
            let mut tape = Tape::new(&model.params);
            let (loss, _) = elbo_loss(&model, &mut tape, &picked, beta).unwrap();
            tape.value(loss).data()[0]
        },
        &x0,
        EPS,
    );
    max_relative_error(&analytic, &numeric, FLOOR).0
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut errors: Vec<(&str, f64)> = Vec::new();
    for seed in 0..3 {
        for (name, err) in layer_errors(seed) {
            match errors.iter_mut().find(|(n, _)| *n == name) {
                Some(e) => e.1 = e.1.max(err),
                None => errors.push((name, err)),
            }
        }
    }
    errors.push(("elbo", elbo_error()));
    let worst = errors.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let detail = format!("max relative error {:.2e} ({})", worst.1, worst.0);
    if worst.1 >= TOL {
        return Verdict::Fail(detail);
    }
    within(Duration::from_secs(120), start, detail)
}

// ---------------------------------------------------------------- 2 modulation

/// Factor of one pair at `t` by direct look-back over its connection history.
fn oracle(series: &[bool], f: &FilterPair, t: usize) -> f64 {
    let a = |k: usize| f.add().get(k).copied().unwrap_or(1.0);
    if series[t] {
        let start = (0..=t).rev().take_while(|&k| series[k]).last().unwrap();
        let prev = if start == 0 { 0.0 } else { oracle(series, f, start - 1) };
        let entry = (0..f.add().len()).find(|&k| a(k) >= prev).unwrap_or(f.add().len());
        a(entry + t - start).clamp(0.0, 1.0)
    } else {
        match (0..t).rev().find(|&k| series[k]) {
            None => 0.0,
            Some(last_on) => {
                let elapsed = t - last_on - 1;
                let level = oracle(series, f, last_on);
                f.remove().get(elapsed).map_or(0.0, |r| (level * r).clamp(0.0, 1.0))
            }
        }
    }
}

fn random_filters(rng: &mut ChaCha8Rng) -> FilterPair {
    let mut add: Vec<f64> = (0..rng.random_range(0..7)).map(|_| rng.random_range(0.0..=1.0)).collect();
    let mut remove: Vec<f64> = (0..rng.random_range(0..4)).map(|_| rng.random_range(0.0..=1.0)).collect();
    add.sort_by(f64::total_cmp);
    remove.sort_by(|a, b| b.total_cmp(a));
    FilterPair::new(add, remove).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng) -> EdgeMask {
    let n = rng.random_range(2..=6);
    let steps = rng.random_range(1..=30);
    let density: f64 = rng.random_range(0.1..0.9);
    let mut mask = EdgeMask::new((0..n as AgentId).collect(), steps);
    for t in 0..steps {
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(density) {
                    mask.set(i, j, t, true);
                }
            }
        }
    }
    mask
}

fn modulation() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut entries = 0usize;
    for case in 0..1000 {
        let mask = random_mask(&mut rng);
        let f = random_filters(&mut rng);
        let m = compute_modulation_tensor(&mask, &f);
        let n = mask.n_agents();
        let mut counters = ModulationCounters::new(f.clone());
        for t in 0..mask.n_steps() {
            if online_modulation_slice(&mut counters, &mask.adjacency(t), n) != m.slice(t) {
                return Verdict::Fail(format!("case {case}: online slice differs at step {t}"));
            }
            for i in 0..n {
                for j in 0..n {
                    let v = m.get(t, i, j);
                    let want = if i == j {
                        0.0
                    } else {
                        let series: Vec<bool> = (0..mask.n_steps()).map(|s| mask.get(i, j, s)).collect();
                        oracle(&series, &f, t)
                    };
                    if v.to_bits() != want.to_bits() {
                        return Verdict::Fail(format!("case {case}: ({t},{i},{j}) = {v}, expected {want}"));
                    }
                    entries += 1;
                }
            }
        }
    }
    within(Duration::from_secs(30), start, format!("1000 masks, {entries} entries bit-exact"))
}

// ---------------------------------------------------------------- 3 online encoding

fn random_scene(seed: u64) -> SceneTimeline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_agents = rng.random_range(2..=6);
    let n_steps = rng.random_range(3..=12);
    let tracks: Vec<(AgentId, Vec<Option<[f64; 2]>>)> = (0..n_agents)
        .map(|a| {
            let start = rng.random_range(0..n_steps - 1);
            let end = rng.random_range(start + 2..=n_steps);
            let mut p = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
            let track = (0..n_steps)
                .map(|t| {
                    p = [p[0] + rng.random_range(-0.4..0.4), p[1] + rng.random_range(-0.4..0.4)];
                    (start..end).contains(&t).then_some(p)
                })
                .collect();
            (a as AgentId * 7 % 11, track)
        })
        .collect();
    SceneTimeline::from_positions("s", 0.4, DEFAULT_NODE_TYPE, &tracks).unwrap()
}

fn observations(s: &SceneTimeline, t: usize) -> Vec<Observation> {
    // reversed so the online path cannot lean on input order
    let mut obs: Vec<Observation> = s
        .present_at(t)
        .map(|(id, tr, st)| Observation {
            agent: id,
            node_type: tr.node_type.clone(),
            state: *st,
        })
        .collect();
    obs.reverse();
    obs
}

fn bits(t: &Tensor<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn online_encoding() -> Verdict {
    let config = ModelConfig {
        decoder_hidden: 32,
        n_gmm_components: 4,
        latent_cardinality: 4,
        horizon: 6,
        history_len: 4,
        min_history: 4,
        radius: 1.5,
        ..ModelConfig::default()
    };
    let mut compared = 0usize;
    for seed in 0..100u64 {
        let m = Model::<f64>::initialize(&config, Standardizer::identity(), seed % 5).unwrap();
        let s = random_scene(seed);
        let batch = encode_scene(&m, &s).unwrap();
        let mut online = OnlinePredictor::new(&m);
        for (t, expected) in batch.iter().enumerate() {
            online.step(&observations(&s, t)).unwrap();
            for (id, h) in expected {
                match online.h_enc(*id) {
                    Some(live) if bits(live) == bits(h) => compared += 1,
                    _ => return Verdict::Fail(format!("scene {seed}: agent {id} differs at step {t}")),
                }
            }
        }
    }
    let model = Model::<f32>::initialize(&ModelConfig::default(), Standardizer::identity(), 0).unwrap();
    let crowd = crowd_scene(20, 9, 4).unwrap();
    let speed = encode_speed(&model, &crowd, 15).unwrap();
    let detail = format!("{compared} encodings bit-exact; incremental {:.1}x faster", speed.ratio());
    if speed.ratio() >= 5.0 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- 4 mixture validity

fn gmm_validity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let n = rng.random_range(1..=16);
        let scale = [1.0, 10.0, 100.0, 1e4][case % 4];
        let raw: Vec<f64> = (0..6 * n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * scale
            })
            .collect();
        let p = match GmmParams::from_raw(&raw, n) {
            Ok(p) => p,
            Err(e) => return Verdict::Fail(format!("case {case}: {e}")),
        };
        if let Err(e) = p.validate() {
            return Verdict::Fail(format!("case {case}: {e}"));
        }
    }
    // midpoint rule on [-10, 10]^2; scales stay above 0.36 so the grid resolves them
    let cells = 500;
    let h = 20.0 / cells as f64;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(1..=5);
        let mut raw = Vec::with_capacity(6 * n);
        raw.extend((0..n).map(|_| rng.random_range(-2.0..2.0)));
        raw.extend((0..2 * n).map(|_| rng.random_range(-1.5..1.5)));
        raw.extend((0..2 * n).map(|_| rng.random_range(-1.0..0.2)));
        raw.extend((0..n).map(|_| rng.random_range(-1.5..1.5)));
        let p = GmmParams::from_raw(&raw, n).unwrap();
        let mut total = 0.0;
        for i in 0..cells {
            for j in 0..cells {
                let x = -10.0 + (i as f64 + 0.5) * h;
                let y = -10.0 + (j as f64 + 0.5) * h;
                total += p.log_prob([x, y]).exp();
            }
        }
        worst = worst.max((total * h * h - 1.0).abs());
    }
    let detail = format!("1000 raw vectors valid; max |mass - 1| = {worst:.2e}");
    if worst <= 1e-2 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- 5 overfitting

fn overfit() -> Verdict {
    let start = Instant::now();
    let scenes = make_constant_velocity(1, 1, 24, 0.0, 7).unwrap();
    let tc = TrainConfig {
        steps: 500,
        lr: 3e-3,
        lr_decay: 0.995,
        min_lr: 1e-4,
        validate_every: 0,
        validation_stride: 0,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let config = ModelConfig::default();
    let model = train::<f32>(&scenes, &config, &tc, None).unwrap().model;
    let mut total = 0.0;
    let mut count = 0;
    for t_obs in [7usize, 9, 11] {
        let batch = predict(
            &model,
            &scenes[0],
            t_obs,
            &PredictOptions::new(50, SampleMode::Full),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        for a in &batch.agents {
            let track = &scenes[0].agents[&a.agent];
            let truth: Vec<[f64; 2]> =
                (t_obs + 1..=t_obs + config.horizon).map(|k| track.state_at(k).unwrap().position).collect();
            for s in &a.samples {
                total += ade(&s.positions, &truth).unwrap();
                count += 1;
            }
        }
    }
    let bo1 = total / count as f64;
    let detail = format!("best-of-1 ADE {bo1:.4} m over {count} samples");
    if bo1 >= 0.05 {
        return Verdict::Fail(detail);
    }
    within(Duration::from_secs(300), start, detail)
}

// ---------------------------------------------------------------- 6 fork

fn fork() -> Verdict {
    let start = Instant::now();
    let scenes = make_synthetic_fork(100, 0.0, 1).unwrap();
    let config = ModelConfig {
        latent_cardinality: 4,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        steps: 2000,
        lr: 1e-3,
        lr_decay: 0.999,
        min_lr: 1e-4,
        beta: BetaSchedule::Constant(0.01),
        validate_every: 0,
        validation_stride: 0,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let model = train::<f32>(&scenes, &config, &tc, None).unwrap().model;
    let test = make_synthetic_fork(5, 0.0, 99).unwrap();
    let left_count = |mode: SampleMode| {
        let batch = predict(
            &model,
            &test[0],
            7,
            &PredictOptions::new(200, mode),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let a = batch.get(FORK_AGENT).unwrap();
        a.samples.iter().filter(|s| s.positions.last().unwrap()[1] > 0.0).count()
    };
    let full = left_count(SampleMode::Full);
    let best = left_count(SampleMode::ZBest);
    let detail = format!("full {full}/200 left, z_best {best}/200 left");
    let balanced = full.min(200 - full) >= 40;
    let committed = best.max(200 - best) >= 160;
    if !(balanced && committed) {
        return Verdict::Fail(detail);
    }
    within(Duration::from_secs(900), start, detail)
}

// ---------------------------------------------------------------- 7 KDE

fn kde() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cloud: Vec<[f64; 2]> = (0..2000)
        .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
        .collect();
    let nll = kde_nll(&[cloud], &[[0.0, 0.0]]).unwrap();
    let want = (2.0 * std::f64::consts::PI).ln();
    let detail = format!("NLL at origin {nll:.4}, standard normal {want:.4}");
    if (nll - want).abs() < 0.1 {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- 8 ETH

fn eth() -> Verdict {
    let Ok(dir) = std::env::var("TRAJECTRON_ETH_UCY_DIR") else {
        return Verdict::Skip("TRAJECTRON_ETH_UCY_DIR not set".into());
    };
    let text = "data = manifest.txt\nfold = eth\nsteps = 2000\neval.n_samples = 100\neval.bon_n = 100\n";
    let cfg = match RunConfig::from_text(text, Path::new(&dir), &Overrides::default()) {
        Ok(c) => c,
        Err(e) => return Verdict::Report(format!("cannot use {dir}: {e}")),
    };
    let run = || -> trajectron_core::Result<(f64, f64)> {
        let (train_scenes, test) = cfg.load_split()?;
        let model = train::<f32>(&train_scenes, &cfg.model, &cfg.train, None)?.model;
        let table = evaluate_fold(Some(&model), &test, "eth", &cfg.eval)?;
        let full = SampleMode::Full.to_string();
        let get = |m: &str| table.get(MODEL_METHOD, &full, m).map_or(f64::NAN, |r| r.value);
        Ok((get("bon_ade"), get("bon_fde")))
    };
    match run() {
        Ok((a, f)) => Verdict::Report(format!(
            "best-of-100 ADE {a:.3} FDE {f:.3}; targets 0.8 and 1.5 {}",
            if a <= 0.8 && f <= 1.5 { "met" } else { "not met" }
        )),
        Err(e) => Verdict::Report(format!("run failed: {e}")),
    }
}

// ---------------------------------------------------------------- 9 metrics

fn metrics() -> Verdict {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let origin = vec![[0.0, 0.0]; 2];
    let mut failures = Vec::new();
    if !close(ade(&[[3.0, 4.0], [0.0, 0.0]], &origin).unwrap(), 2.5) {
        failures.push("ade of (3,4),(0,0)");
    }
    let line: Vec<[f64; 2]> = (0..5).map(|k| [k as f64, 0.0]).collect();
    let shifted: Vec<[f64; 2]> = line.iter().map(|p| [p[0], p[1] + 1.0]).collect();
    if !close(ade(&shifted, &line).unwrap(), 1.0) {
        failures.push("ade of unit offset");
    }
    if !close(fde(&[[5.0, 5.0], [0.0, 2.0]], &origin).unwrap(), 2.0) {
        failures.push("fde of (0,2)");
    }
    if best_of_n(&[shifted.clone()], &line, 1).unwrap() != (1.0, 1.0) {
        failures.push("best of one");
    }
    if best_of_n(&[shifted.clone(), line.clone(), shifted], &line, 3).unwrap() != (0.0, 0.0) {
        failures.push("one perfect sample");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let truth: Vec<[f64; 2]> = (0..6).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let pool: Vec<Vec<[f64; 2]>> = (0..10)
            .map(|_| (0..6).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect())
            .collect();
        let curve: Vec<(f64, f64)> = (1..=10).map(|n| best_of_n(&pool, &truth, n).unwrap()).collect();
        if curve.windows(2).any(|w| w[1].0 > w[0].0 || w[1].1 > w[0].1) {
            failures.push("best-of-N grows with N");
            break;
        }
    }
    if failures.is_empty() {
        Verdict::Pass("tabulated values and 1000 monotone best-of-N pools".into())
    } else {
        Verdict::Fail(failures.join("; "))
    }
}

// ---------------------------------------------------------------- 10 determinism

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_trajectron"))
        .args(args)
        .env_remove("TRAJECTRON_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Verdict {
    let run = || -> Result<Vec<&'static str>, String> {
        let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
        let root = dir.path();
        let cfg = root.join("run.txt");
        std::fs::write(
            &cfg,
            "data = synthetic:constant_velocity\nsynthetic.scenes = 2\nsynthetic.test_scenes = 1\n\
             nhe_hidden = 8\nnfe_hidden = 8\nee_hidden = 4\nattention_hidden = 4\ndecoder_hidden = 16\n\
             latent_mlp_hidden = 8\nn_gmm_components = 3\nlatent_cardinality = 4\nsteps = 60\nbatch_size = 4\n\
             seed = 7\n",
        )
        .map_err(|e| e.to_string())?;
        let mut scene = String::new();
        for k in 0..12 {
            for id in 0..3 {
                scene.push_str(&format!("{} {id} {} {}\n", k * 10, 0.5 * k as f64, id as f64));
            }
        }
        let scene_path = root.join("scene.txt");
        std::fs::write(&scene_path, scene).map_err(|e| e.to_string())?;
        let s = |p: &Path| p.to_str().unwrap().to_string();
        let mut files: Vec<Vec<u8>> = Vec::new();
        for run in ["a", "b"] {
            let out = root.join(run);
            cli(&["train", "--config", &s(&cfg), "--out", &s(&out)])?;
            let ckpt = out.join("final.trjw");
            let pred = out.join("pred");
            cli(&["predict", "--checkpoint", &s(&ckpt), "--scene", &s(&scene_path), "--out", &s(&pred)])?;
            for f in [out.join("loss.csv"), ckpt, pred.join("samples.jsonl")] {
                files.push(std::fs::read(&f).map_err(|e| format!("{}: {e}", f.display()))?);
            }
        }
        let names = ["loss.csv", "final.trjw", "samples.jsonl"];
        Ok(names.iter().enumerate().filter(|(i, _)| files[*i] != files[i + 3]).map(|(_, n)| *n).collect())
    };
    match run() {
        Ok(diff) if diff.is_empty() => Verdict::Pass("train and predict outputs byte-identical across runs".into()),
        Ok(diff) => Verdict::Fail(format!("differs between runs: {}", diff.join(", "))),
        Err(e) => Verdict::Fail(e),
    }
}

fn main() {
    let checks: [(u32, &str, Check); 10] = [
        (1, "gradients", gradients),
        (2, "modulation", modulation),
        (3, "online-encoding", online_encoding),
        (4, "gmm-validity", gmm_validity),
        (5, "overfit", overfit),
        (6, "fork", fork),
        (7, "kde", kde),
        (8, "eth", eth),
        (9, "metrics", metrics),
        (10, "determinism", determinism),
    ];
    let selected: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in checks {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Verdict::Fail(format!("panicked: {msg}"))
            });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Report(d) => ("REPORT", d),
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {id} {name} [{secs:.1}s]: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
