use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajectron_nn::Real;

use crate::dataio::{AgentId, SceneTimeline, DEFAULT_NODE_TYPE};
use crate::error::{CoreError, Result};
use crate::graph::build_graph_history;
use crate::model::{predict, scene_frames, EncoderStepper, Model, Observation, OnlinePredictor, PredictOptions, SampleMode};

use super::metrics::mean;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub n_samples: usize,
    /// Timed repetitions, after one discarded warm-up run.
    pub repetitions: usize,
    /// Prediction steps timed per dataset.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            n_samples: 200,
            repetitions: 5,
            max_points: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub dataset: String,
    pub mode: SampleMode,
    /// Seconds per prediction step, all agents of the step together.
    pub mean_s: f64,
    pub std_s: f64,
    pub repetitions: usize,
    pub points: usize,
}

pub const BENCH_CSV_HEADER: &str = "dataset,mode,n_samples,mean_s,std_s,repetitions,points";

pub fn bench_csv(rows: &[BenchRow], n_samples: usize) -> String {
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.dataset, r.mode, n_samples, r.mean_s, r.std_s, r.repetitions, r.points
        ));
    }
    s
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

/// Prediction steps with at least one agent observed for `min_history` steps.
fn prediction_points<S: Real>(model: &Model<S>, scenes: &[SceneTimeline], max: usize) -> Vec<(usize, usize)> {
    let mut points = Vec::new();
    'outer: for (i, s) in scenes.iter().enumerate() {
        for t in model.config.min_history.saturating_sub(1)..s.n_steps {
            let ready = s.present_at(t).any(|(_, tr, _)| {
                tr.segment_at(t)
                    .is_some_and(|seg| t + 1 - seg.start >= model.config.min_history)
            });
            if ready {
                points.push((i, t));
                if points.len() == max {
                    break 'outer;
                }
            }
        }
    }
    points
}

/// Wall-clock time to sample `n_samples` futures for every ready agent of a
/// prediction step, averaged over up to `max_points` steps per dataset. The
/// two modes alternate within each repetition.
pub fn runtime_benchmark<S: Real>(
    model: &Model<S>,
    datasets: &[(String, Vec<SceneTimeline>)],
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    if opts.repetitions == 0 || opts.n_samples == 0 || opts.max_points == 0 {
        return Err(CoreError::config("benchmark needs positive repetitions, samples and points"));
    }
    let modes = [SampleMode::Full, SampleMode::ZBest];
    let mut rows = Vec::new();
    for (name, scenes) in datasets {
        let points = prediction_points(model, scenes, opts.max_points);
        if points.is_empty() {
            return Err(CoreError::data(format!("dataset {name} has no agent with enough history")));
        }
        let mut timings = vec![Vec::with_capacity(opts.repetitions); modes.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for rep in 0..=opts.repetitions {
            for (k, &mode) in modes.iter().enumerate() {
                let popts = PredictOptions::new(opts.n_samples, mode);
                let start = Instant::now();
                for &(i, t) in &points {
                    predict(model, &scenes[i], t, &popts, &mut rng)?;
                }
                let per_point = start.elapsed().as_secs_f64() / points.len() as f64;
                if rep > 0 {
                    timings[k].push(per_point);
                }
            }
        }
        for (k, &mode) in modes.iter().enumerate() {
            let (mean_s, std_s) = mean_std(&timings[k]);
            rows.push(BenchRow {
                dataset: name.clone(),
                mode,
                mean_s,
                std_s,
                repetitions: opts.repetitions,
                points: points.len(),
            });
        }
    }
    Ok(rows)
}

/// A crowd of `n_agents` walking roughly +x on a grid 1.5 m apart, so most
/// pairs are within the default interaction radius.
pub fn crowd_scene(n_agents: usize, n_steps: usize, seed: u64) -> Result<SceneTimeline> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = (n_agents as f64).sqrt().ceil().max(1.0) as usize;
    let tracks: Vec<(AgentId, Vec<Option<[f64; 2]>>)> = (0..n_agents)
        .map(|a| {
            let origin = [1.5 * (a % cols) as f64, 1.5 * (a / cols) as f64];
            let v = [1.2 + rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
            let track = (0..n_steps)
                .map(|k| Some([origin[0] + v[0] * 0.4 * k as f64, origin[1] + v[1] * 0.4 * k as f64]))
                .collect();
            (a as AgentId, track)
        })
        .collect();
    SceneTimeline::from_positions("crowd", 0.4, DEFAULT_NODE_TYPE, &tracks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeSpeed {
    /// Median seconds for one stateful step with a new observation.
    pub incremental_s: f64,
    /// Median seconds to rebuild the graph and re-encode the whole window.
    pub full_s: f64,
}

impl EncodeSpeed {
    pub fn ratio(&self) -> f64 {
        self.full_s / self.incremental_s
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn observations(scene: &SceneTimeline, t: usize) -> Vec<Observation> {
    scene
        .present_at(t)
        .map(|(id, tr, s)| Observation {
            agent: id,
            node_type: tr.node_type.clone(),
            state: *s,
        })
        .collect()
}

/// Compares advancing a warmed-up online predictor by the scene's last step
/// against re-encoding the scene from scratch, which is what a stateless
/// predictor does at every new step. The first repetition is discarded.
pub fn encode_speed<S: Real>(model: &Model<S>, scene: &SceneTimeline, repetitions: usize) -> Result<EncodeSpeed> {
    if scene.n_steps < 2 || repetitions == 0 {
        return Err(CoreError::config("encode benchmark needs 2+ steps and 1+ repetitions"));
    }
    let last = scene.n_steps - 1;
    let history: Vec<Vec<Observation>> = (0..last).map(|t| observations(scene, t)).collect();
    let newest = observations(scene, last);
    let warm = OnlinePredictor::warm_up(model, &history)?;

    let mut incremental = Vec::with_capacity(repetitions);
    let mut full = Vec::with_capacity(repetitions);
    for rep in 0..=repetitions {
        let mut p = warm.clone();
        let start = Instant::now();
        p.step(&newest)?;
        let inc = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let graph = build_graph_history(scene, model.config.radius)?;
        let frames = scene_frames(scene, &graph, &model.config, &model.standardizer, 0..scene.n_steps)?;
        let mut stepper = EncoderStepper::new();
        for f in &frames {
            stepper.step(model, f)?;
        }
        let fl = start.elapsed().as_secs_f64();
        if rep > 0 {
            incremental.push(inc);
            full.push(fl);
        }
        std::hint::black_box((&p, &stepper));
    }
    Ok(EncodeSpeed {
        incremental_s: median(incremental),
        full_s: median(full),
    })
}
