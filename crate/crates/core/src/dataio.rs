//! Trajectory ingestion, state derivation, standardization, synthetic scenes
//! and dataset splits.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_1_SQRT_2;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};
use crate::kv::KvFile;

pub type AgentId = i64;

/// Speed bound applied to derived velocities, m/s.
pub const MAX_SPEED: f64 = 12.42;
pub const STATE_DIM: usize = 6;
pub const DEFAULT_NODE_TYPE: &str = "PEDESTRIAN";
pub const DEFAULT_DT: f64 = 0.4;
/// Standard deviations below this are replaced by it.
pub const STD_FLOOR: f64 = 1e-6;

/// Annotated positions of one agent, sorted by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub agent_id: AgentId,
    pub frames: Vec<(i64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
}

impl AgentState {
    pub fn features(&self) -> [f64; STATE_DIM] {
        let [px, py] = self.position;
        let [vx, vy] = self.velocity;
        let [ax, ay] = self.acceleration;
        [px, py, vx, vy, ax, ay]
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// A contiguous presence interval: states for timesteps `start..start + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub states: Vec<AgentState>,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.states.len()
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end()
    }

    pub fn get(&self, t: usize) -> Option<&AgentState> {
        t.checked_sub(self.start).and_then(|i| self.states.get(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub node_type: String,
    /// Disjoint, sorted by start, each at least two steps long.
    pub segments: Vec<Segment>,
}

impl AgentTrack {
    pub fn segment_at(&self, t: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.range().contains(&t))
    }

    pub fn state_at(&self, t: usize) -> Option<&AgentState> {
        self.segment_at(t).and_then(|s| s.get(t))
    }

    pub fn presence(&self) -> Vec<Range<usize>> {
        self.segments.iter().map(Segment::range).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTimeline {
    pub name: String,
    pub dt: f64,
    pub n_steps: usize,
    pub agents: BTreeMap<AgentId, AgentTrack>,
}

impl SceneTimeline {
    pub fn empty(name: impl Into<String>, dt: f64) -> Self {
        SceneTimeline {
            name: name.into(),
            dt,
            n_steps: 0,
            agents: BTreeMap::new(),
        }
    }

    /// Agents present at `t`, in ascending id order.
    pub fn present_at(&self, t: usize) -> impl Iterator<Item = (AgentId, &AgentTrack, &AgentState)> {
        self.agents
            .iter()
            .filter_map(move |(&id, tr)| tr.state_at(t).map(|s| (id, tr, s)))
    }

    pub fn node_types(&self) -> BTreeSet<&str> {
        self.agents.values().map(|a| a.node_type.as_str()).collect()
    }

    /// Builds a scene from position sequences that all start at timestep 0
    /// (`None` marks absence).
    pub fn from_positions(
        name: impl Into<String>,
        dt: f64,
        node_type: &str,
        tracks: &[(AgentId, Vec<Option<[f64; 2]>>)],
    ) -> Result<Self> {
        let mut scene = SceneTimeline::empty(name, dt);
        for (id, positions) in tracks {
            scene.n_steps = scene.n_steps.max(positions.len());
            let mut runs: Vec<(usize, Vec<[f64; 2]>)> = Vec::new();
            for (t, p) in positions.iter().enumerate() {
                match (p, runs.last_mut()) {
                    (Some(p), Some((start, run))) if *start + run.len() == t => run.push(*p),
                    (Some(p), _) => runs.push((t, vec![*p])),
                    (None, _) => {}
                }
            }
            let track = track_from_runs(*id, node_type, runs, dt)?;
            if let Some(track) = track {
                scene.agents.insert(*id, track);
            }
        }
        Ok(scene)
    }
}

fn track_from_runs(
    id: AgentId,
    node_type: &str,
    runs: Vec<(usize, Vec<[f64; 2]>)>,
    dt: f64,
) -> Result<Option<AgentTrack>> {
    let mut segments = Vec::new();
    for (start, positions) in runs {
        if positions.len() < 2 {
            log::warn!("agent {id}: dropping single-frame presence at timestep {start}");
            continue;
        }
        segments.push(Segment {
            start,
            states: differentiate_states(&positions, dt)?,
        });
    }
    Ok((!segments.is_empty()).then(|| AgentTrack {
        node_type: node_type.to_string(),
        segments,
    }))
}

fn parse_integral(field: &str, what: &str, line: usize) -> Result<i64> {
    let v: f64 = field.parse().map_err(|_| CoreError::Parse {
        line,
        msg: format!("{what} {field:?} is not numeric"),
    })?;
    if !v.is_finite() || v.fract() != 0.0 {
        return Err(CoreError::Parse {
            line,
            msg: format!("{what} {field:?} is not an integer"),
        });
    }
    Ok(v as i64)
}

/// Parses `frame agent_id x y` lines into per-agent tracks sorted by id.
pub fn parse_tracks(text: &str) -> Result<Vec<RawTrack>> {
    let mut by_agent: BTreeMap<AgentId, Vec<(i64, f64, f64)>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(CoreError::Parse {
                line,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let frame = parse_integral(fields[0], "frame", line)?;
        let agent = parse_integral(fields[1], "agent id", line)?;
        let mut xy = [0.0; 2];
        for (k, f) in fields[2..].iter().enumerate() {
            xy[k] = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CoreError::Parse {
                    line,
                    msg: format!("coordinate {f:?} is not a finite number"),
                })?;
        }
        by_agent.entry(agent).or_default().push((frame, xy[0], xy[1]));
    }
    by_agent
        .into_iter()
        .map(|(agent_id, mut frames)| {
            frames.sort_by_key(|f| f.0);
            if let Some(w) = frames.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(CoreError::data(format!(
                    "agent {agent_id}: frames not strictly increasing (frame {} repeated)",
                    w[0].0
                )));
            }
            Ok(RawTrack { agent_id, frames })
        })
        .collect()
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Frame stride as the gcd of all per-agent frame gaps; 1 when undetermined.
pub fn infer_stride(tracks: &[RawTrack]) -> i64 {
    let g = tracks
        .iter()
        .flat_map(|t| t.frames.windows(2).map(|w| w[1].0 - w[0].0))
        .fold(0, gcd);
    g.max(1)
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub name: String,
    pub dt: f64,
    /// Inferred from the data when `None`.
    pub stride: Option<i64>,
    pub node_type: String,
}

impl IngestOptions {
    pub fn new(dt: f64) -> Self {
        IngestOptions {
            name: "scene".into(),
            dt,
            stride: None,
            node_type: DEFAULT_NODE_TYPE.into(),
        }
    }
}

/// Ingests an annotation stream with an inferred stride.
pub fn ingest_dataset(text: &str, dt: f64) -> Result<SceneTimeline> {
    ingest_with(text, &IngestOptions::new(dt))
}

pub fn ingest_with(text: &str, opts: &IngestOptions) -> Result<SceneTimeline> {
    if !(opts.dt > 0.0) {
        return Err(CoreError::config(format!("dt must be positive, got {}", opts.dt)));
    }
    let tracks = parse_tracks(text)?;
    scene_from_tracks(&tracks, opts)
}

pub fn scene_from_tracks(tracks: &[RawTrack], opts: &IngestOptions) -> Result<SceneTimeline> {
    let stride = match opts.stride {
        Some(s) if s <= 0 => return Err(CoreError::config(format!("stride must be positive, got {s}"))),
        Some(s) => s,
        None => infer_stride(tracks),
    };
    let mut scene = SceneTimeline::empty(opts.name.clone(), opts.dt);
    let Some(first) = tracks.iter().filter_map(|t| t.frames.first()).map(|f| f.0).min() else {
        return Ok(scene);
    };
    for track in tracks {
        let mut runs: Vec<(usize, Vec<[f64; 2]>)> = Vec::new();
        for &(frame, x, y) in &track.frames {
            let offset = frame - first;
            if offset % stride != 0 {
                return Err(CoreError::data(format!(
                    "agent {}: frame {frame} is off the stride-{stride} grid",
                    track.agent_id
                )));
            }
            let t = (offset / stride) as usize;
            scene.n_steps = scene.n_steps.max(t + 1);
            match runs.last_mut() {
                Some((start, run)) if *start + run.len() == t => run.push([x, y]),
                _ => runs.push((t, vec![[x, y]])),
            }
        }
        if let Some(t) = track_from_runs(track.agent_id, &opts.node_type, runs, opts.dt)? {
            scene.agents.insert(track.agent_id, t);
        }
    }
    Ok(scene)
}

/// Scales `v` down to [`MAX_SPEED`] if faster, keeping its heading.
pub fn clamp_speed(v: [f64; 2]) -> [f64; 2] {
    let speed = v[0].hypot(v[1]);
    // The slack keeps clamping idempotent under rounding.
    if speed > MAX_SPEED * (1.0 + 1e-12) {
        let k = MAX_SPEED / speed;
        [v[0] * k, v[1] * k]
    } else {
        v
    }
}

fn backward_differences(values: &[[f64; 2]], dt: f64) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = values
        .windows(2)
        .map(|w| [(w[1][0] - w[0][0]) / dt, (w[1][1] - w[0][1]) / dt])
        .collect();
    let head = out[0];
    out.insert(0, head);
    out
}

/// Backward finite differences with the first entry copying the second;
/// velocity is speed-clamped before acceleration is derived from it.
pub fn differentiate_states(positions: &[[f64; 2]], dt: f64) -> Result<Vec<AgentState>> {
    if positions.len() < 2 {
        return Err(CoreError::data("a single-point track has no derivative"));
    }
    if !(dt > 0.0) {
        return Err(CoreError::config(format!("dt must be positive, got {dt}")));
    }
    let velocity: Vec<[f64; 2]> = backward_differences(positions, dt)
        .into_iter()
        .map(clamp_speed)
        .collect();
    let acceleration = backward_differences(&velocity, dt);
    Ok(positions
        .iter()
        .zip(velocity)
        .zip(acceleration)
        .map(|((&position, velocity), acceleration)| AgentState {
            position,
            velocity,
            acceleration,
        })
        .collect())
}

/// Per-channel affine normalization of the six state features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: [f64; STATE_DIM],
    pub std: [f64; STATE_DIM],
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer {
            mean: [0.0; STATE_DIM],
            std: [1.0; STATE_DIM],
        }
    }

    /// Fits on the training split; test data never passes through here.
    pub fn fit(train: &[SceneTimeline]) -> Self {
        Self::fit_states(
            train
                .iter()
                .flat_map(|s| s.agents.values())
                .flat_map(|a| a.segments.iter())
                .flat_map(|s| s.states.iter()),
        )
    }

    pub fn fit_states<'a>(states: impl Iterator<Item = &'a AgentState>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; STATE_DIM];
        let mut sq = [0.0; STATE_DIM];
        for s in states {
            n += 1;
            for (k, v) in s.features().into_iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
        }
        if n == 0 {
            log::warn!("standardizer fit on no states; using identity");
            return Self::identity();
        }
        let mut out = Self::identity();
        for k in 0..STATE_DIM {
            let mean = sum[k] / n as f64;
            out.mean[k] = mean;
            out.std[k] = (sq[k] / n as f64 - mean * mean).max(0.0).sqrt();
        }
        out.floor_std();
        out
    }

    pub fn from_stats(mean: [f64; STATE_DIM], std: [f64; STATE_DIM]) -> Self {
        let mut out = Standardizer { mean, std };
        out.floor_std();
        out
    }

    fn floor_std(&mut self) {
        for (k, s) in self.std.iter_mut().enumerate() {
            if !(*s >= STD_FLOOR) {
                log::warn!("state channel {k} has std {s}; flooring at {STD_FLOOR}");
                *s = STD_FLOOR;
            }
        }
    }

    pub fn transform(&self, f: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        std::array::from_fn(|k| (f[k] - self.mean[k]) / self.std[k])
    }

    pub fn inverse(&self, f: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        std::array::from_fn(|k| f[k] * self.std[k] + self.mean[k])
    }

    pub fn standardize(&self, s: &AgentState) -> [f64; STATE_DIM] {
        self.transform(&s.features())
    }
}

pub const FORK_HISTORY: usize = 8;
pub const FORK_FUTURE: usize = 12;

#[derive(Debug, Clone)]
pub struct ForkOptions {
    pub n_scenes: usize,
    pub noise_std: f64,
    pub speed: f64,
    pub dt: f64,
    /// Agents walking straight alongside the forking one.
    pub n_neighbors: usize,
    pub seed: u64,
}

impl Default for ForkOptions {
    fn default() -> Self {
        ForkOptions {
            n_scenes: 100,
            noise_std: 0.0,
            speed: 1.2,
            dt: DEFAULT_DT,
            n_neighbors: 0,
            seed: 0,
        }
    }
}

/// Agent 0 of every fork scene is the forking agent.
pub const FORK_AGENT: AgentId = 0;

/// Scenes where agent 0 walks +x for [`FORK_HISTORY`] steps, then turns 45°
/// left or right with equal probability for [`FORK_FUTURE`] steps.
pub fn make_synthetic_fork(n_scenes: usize, noise_std: f64, seed: u64) -> Result<Vec<SceneTimeline>> {
    make_synthetic_fork_with(&ForkOptions {
        n_scenes,
        noise_std,
        seed,
        ..ForkOptions::default()
    })
}

pub fn make_synthetic_fork_with(opts: &ForkOptions) -> Result<Vec<SceneTimeline>> {
    if !(opts.noise_std >= 0.0) {
        return Err(CoreError::config("noise_std must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.noise_std).expect("nonnegative std");
    let step = opts.speed * opts.dt;
    let n = FORK_HISTORY + FORK_FUTURE;
    (0..opts.n_scenes)
        .map(|s| {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut ego = Vec::with_capacity(n);
            let mut p = [0.0, 0.0];
            for k in 0..n {
                if k > 0 {
                    let dir = if k < FORK_HISTORY {
                        [1.0, 0.0]
                    } else {
                        [FRAC_1_SQRT_2, side * FRAC_1_SQRT_2]
                    };
                    p = [p[0] + step * dir[0], p[1] + step * dir[1]];
                }
                ego.push(p);
            }
            let mut tracks = vec![(FORK_AGENT, ego)];
            for j in 0..opts.n_neighbors {
                let lateral = 2.0 * (j / 2 + 1) as f64 * if j % 2 == 0 { 1.0 } else { -1.0 };
                let walk = (0..n).map(|k| [k as f64 * step, lateral]).collect();
                tracks.push((j as AgentId + 1, walk));
            }
            let tracks: Vec<(AgentId, Vec<Option<[f64; 2]>>)> = tracks
                .into_iter()
                .map(|(id, ps)| {
                    let noisy = ps
                        .into_iter()
                        .map(|[x, y]| Some([x + noise.sample(&mut rng), y + noise.sample(&mut rng)]))
                        .collect();
                    (id, noisy)
                })
                .collect();
            SceneTimeline::from_positions(format!("fork_{s}"), opts.dt, DEFAULT_NODE_TYPE, &tracks)
        })
        .collect()
}

/// Scenes of agents moving at constant velocity with random headings and
/// speeds in [0.5, 1.5) m/s, spaced 4 m apart laterally.
pub fn make_constant_velocity(
    n_scenes: usize,
    n_agents: usize,
    n_steps: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<SceneTimeline>> {
    if !(noise_std >= 0.0) {
        return Err(CoreError::config("noise_std must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).expect("nonnegative std");
    let dt = DEFAULT_DT;
    (0..n_scenes)
        .map(|s| {
            let tracks: Vec<(AgentId, Vec<Option<[f64; 2]>>)> = (0..n_agents)
                .map(|a| {
                    let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let speed: f64 = rng.random_range(0.5..1.5);
                    let v = [speed * heading.cos(), speed * heading.sin()];
                    let origin = [0.0, 4.0 * a as f64];
                    let ps = (0..n_steps)
                        .map(|k| {
                            let t = k as f64 * dt;
                            Some([
                                origin[0] + v[0] * t + noise.sample(&mut rng),
                                origin[1] + v[1] * t + noise.sample(&mut rng),
                            ])
                        })
                        .collect();
                    (a as AgentId, ps)
                })
                .collect();
            SceneTimeline::from_positions(format!("cv_{s}"), dt, DEFAULT_NODE_TYPE, &tracks)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NamedSet {
    pub name: String,
    pub scenes: Vec<SceneTimeline>,
}

#[derive(Debug, Clone)]
pub struct Fold {
    pub held_out: String,
    pub train: Vec<SceneTimeline>,
    pub test: Vec<SceneTimeline>,
}

/// One fold per set: train on the union of the others, test on it.
pub fn leave_one_out_splits(sets: &[NamedSet]) -> Result<Vec<Fold>> {
    if sets.len() < 2 {
        return Err(CoreError::config(format!(
            "leave-one-out needs at least 2 named sets, got {}",
            sets.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for s in sets {
        if !seen.insert(s.name.as_str()) {
            return Err(CoreError::config(format!("duplicate set name {:?}", s.name)));
        }
    }
    Ok(sets
        .iter()
        .enumerate()
        .map(|(i, held)| Fold {
            held_out: held.name.clone(),
            train: sets
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, s)| s.scenes.iter().cloned())
                .collect(),
            test: held.scenes.clone(),
        })
        .collect())
}

/// Dataset manifest: `dt`, optional `stride` and `node_type`, and one
/// `split.<name> = path[, path...]` entry per named set. Relative paths are
/// resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dt: f64,
    pub stride: Option<i64>,
    pub node_type: String,
    pub splits: Vec<(String, Vec<PathBuf>)>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        for k in kv.keys() {
            if !matches!(k, "dt" | "stride" | "node_type") && !k.starts_with("split.") {
                return Err(CoreError::config(format!("unknown manifest key {k:?}")));
            }
        }
        let dt = kv.parse_value::<f64>("dt")?.unwrap_or(DEFAULT_DT);
        if !(dt > 0.0) {
            return Err(CoreError::config(format!("manifest dt must be positive, got {dt}")));
        }
        let stride = kv.parse_value::<i64>("stride")?;
        let node_type = kv.get("node_type").unwrap_or(DEFAULT_NODE_TYPE).to_string();
        let splits = kv
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("split.").map(|name| (name, v)))
            .map(|(name, v)| {
                let paths = v
                    .split(',')
                    .map(|p| base.join(p.trim()))
                    .collect::<Vec<_>>();
                (name.to_string(), paths)
            })
            .collect::<Vec<_>>();
        if splits.is_empty() {
            return Err(CoreError::config("manifest declares no split.<name> entries"));
        }
        Ok(Manifest {
            dt,
            stride,
            node_type,
            splits,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::data(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Fails before reading anything if a referenced file is missing.
    pub fn check_paths(&self) -> Result<()> {
        for (name, paths) in &self.splits {
            for p in paths {
                if !p.is_file() {
                    return Err(CoreError::data(format!(
                        "split {name}: missing file {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_sets(&self) -> Result<Vec<NamedSet>> {
        self.check_paths()?;
        self.splits
            .iter()
            .map(|(name, paths)| {
                let scenes = paths
                    .iter()
                    .map(|p| {
                        let text = std::fs::read_to_string(p)?;
                        let opts = IngestOptions {
                            name: format!("{name}:{}", p.display()),
                            dt: self.dt,
                            stride: self.stride,
                            node_type: self.node_type.clone(),
                        };
                        ingest_with(&text, &opts).map_err(|e| match e {
                            CoreError::Parse { line, msg } => {
                                CoreError::data(format!("{}:{line}: {msg}", p.display()))
                            }
                            other => other,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(NamedSet {
                    name: name.clone(),
                    scenes,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn one_agent_three_frames() {
        let scene = ingest_dataset("0 1 0 0\n10 1 1 0\n20 1 2 0\n", 0.4).unwrap();
        assert_eq!(scene.agents.len(), 1);
        let a = &scene.agents[&1];
        assert_eq!(a.presence(), vec![0..3]);
        for s in &a.segments[0].states {
            assert!(s.velocity[0] > 0.0 && s.velocity[1] == 0.0);
        }
        assert_eq!(scene.n_steps, 3);
    }

    #[test]
    fn empty_input_has_no_agents() {
        let scene = ingest_dataset("", 0.4).unwrap();
        assert!(scene.agents.is_empty());
        assert_eq!(scene.n_steps, 0);
    }

    #[test]
    fn eth_style_float_ids_and_comments() {
        let text = "# frame id x y\n780.0 1.0 8.46 3.59\n790.0 1.0 9.57 3.79\n";
        let scene = ingest_dataset(text, 0.4).unwrap();
        assert!(scene.agents.contains_key(&1));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        match ingest_dataset("0 1 0 0\n10 1 x 0\n", 0.4) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match ingest_dataset("0 1 0\n", 0.4) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn repeated_frame_is_a_data_error() {
        assert!(matches!(
            ingest_dataset("0 1 0 0\n0 1 1 0\n", 0.4),
            Err(CoreError::Data(_))
        ));
    }

    #[test]
    fn gaps_split_presence_and_drop_single_frames() {
        let text = "0 1 0 0\n10 1 1 0\n30 1 3 0\n40 1 4 0\n50 1 5 0\n70 1 7 0\n";
        let scene = ingest_with(
            text,
            &IngestOptions {
                stride: Some(10),
                ..IngestOptions::new(0.4)
            },
        )
        .unwrap();
        assert_eq!(scene.agents[&1].presence(), vec![0..2, 3..6]);
        assert_eq!(scene.n_steps, 8);
    }

    #[test]
    fn off_grid_frame_is_rejected() {
        let opts = IngestOptions {
            stride: Some(10),
            ..IngestOptions::new(0.4)
        };
        assert!(ingest_with("0 1 0 0\n15 1 1 0\n", &opts).is_err());
    }

    #[test]
    fn stationary_agent_has_zero_derivatives() {
        let states = differentiate_states(&[[3.0, -1.0]; 5], 0.7).unwrap();
        for s in states {
            assert_eq!(s.velocity, [0.0, 0.0]);
            assert_eq!(s.acceleration, [0.0, 0.0]);
        }
    }

    #[test]
    fn uniform_motion() {
        let states = differentiate_states(&[[0.0, 0.0], [0.4, 0.0], [0.8, 0.0]], 0.4).unwrap();
        for s in states {
            assert!((s.velocity[0] - 1.0).abs() < 1e-12 && s.velocity[1] == 0.0);
            assert!(s.acceleration[0].abs() < 1e-12);
        }
    }

    #[test]
    fn fast_track_is_clamped_along_heading() {
        let ps: Vec<[f64; 2]> = (0..4).map(|k| [8.0 * k as f64, 0.0]).collect();
        for s in differentiate_states(&ps, 0.4).unwrap() {
            assert!((s.velocity[0] - MAX_SPEED).abs() < 1e-12);
            assert_eq!(s.velocity[1], 0.0);
        }
    }

    #[test]
    fn single_point_track_is_an_error() {
        assert!(differentiate_states(&[[0.0, 0.0]], 0.4).is_err());
    }

    #[test]
    fn standardizer_arithmetic() {
        let st = Standardizer::from_stats([2.0; 6], [4.0; 6]);
        assert_eq!(st.transform(&[10.0; 6])[0], 2.0);
        assert_eq!(st.transform(&st.mean), [0.0; 6]);
    }

    #[test]
    fn zero_variance_channel_is_floored() {
        let s = AgentState::default();
        let st = Standardizer::fit_states([s, s].iter());
        assert_eq!(st.std, [STD_FLOOR; 6]);
    }

    #[test]
    fn noiseless_forks_have_two_shapes_and_no_clamping() {
        let scenes = make_synthetic_fork(10, 0.0, 1).unwrap();
        let mut shapes = BTreeSet::new();
        for s in &scenes {
            let seg = &s.agents[&FORK_AGENT].segments[0];
            assert_eq!(seg.states.len(), FORK_HISTORY + FORK_FUTURE);
            let last = seg.states.last().unwrap().position;
            shapes.insert(((last[0] * 1e6).round() as i64, (last[1] * 1e6).round() as i64));
            assert!(seg.states.iter().all(|st| st.speed() < 2.0));
        }
        assert_eq!(shapes.len(), 2);
    }

    #[test]
    fn fork_branches_are_balanced() {
        let scenes = make_synthetic_fork(1000, 0.0, 42).unwrap();
        let left = scenes
            .iter()
            .filter(|s| s.agents[&FORK_AGENT].segments[0].states.last().unwrap().position[1] > 0.0)
            .count() as f64;
        // Binomial(1000, 0.5): sd = sqrt(250).
        assert!((left - 500.0).abs() <= 3.0 * 250f64.sqrt(), "{left}");
    }

    #[test]
    fn fork_neighbors_are_added() {
        let opts = ForkOptions {
            n_scenes: 2,
            n_neighbors: 2,
            ..ForkOptions::default()
        };
        let scenes = make_synthetic_fork_with(&opts).unwrap();
        assert_eq!(scenes[0].agents.len(), 3);
    }

    fn named(name: &str) -> NamedSet {
        NamedSet {
            name: name.into(),
            scenes: vec![SceneTimeline::empty(name, 0.4)],
        }
    }

    #[test]
    fn leave_one_out_folds() {
        let sets: Vec<_> = ["eth", "hotel", "univ", "zara1", "zara2"].map(named).into();
        let folds = leave_one_out_splits(&sets).unwrap();
        assert_eq!(folds.len(), 5);
        for f in &folds {
            assert_eq!(f.train.len(), 4);
            assert!(f.train.iter().all(|s| s.name != f.held_out));
            assert_eq!(f.test[0].name, f.held_out);
        }
        assert_eq!(leave_one_out_splits(&[named("a"), named("b")]).unwrap().len(), 2);
        assert!(leave_one_out_splits(&[named("a")]).is_err());
        assert!(leave_one_out_splits(&[named("a"), named("a")]).is_err());
    }

    #[test]
    fn manifest_parsing_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "0 1 0 0\n10 1 1 0\n").unwrap();
        let m = Manifest::parse("dt = 0.4\nstride = 10\nsplit.a = a.txt\nsplit.b = b.txt\n", dir.path()).unwrap();
        assert_eq!(m.stride, Some(10));
        assert!(matches!(m.load_sets(), Err(CoreError::Data(_))));
        assert!(Manifest::parse("bogus = 1\nsplit.a = a.txt", dir.path()).is_err());
        let ok = Manifest::parse("split.a = a.txt", dir.path()).unwrap();
        assert_eq!(ok.load_sets().unwrap()[0].scenes[0].agents.len(), 1);
    }

    fn arb_track() -> impl Strategy<Value = Vec<[f64; 2]>> {
        proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 2..30).prop_map(|steps| {
            let mut p = [0.0, 0.0];
            steps
                .into_iter()
                .map(|(dx, dy)| {
                    p = [p[0] + dx, p[1] + dy];
                    p
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn integration_recovers_positions(track in arb_track(), dt in 0.4..2.0f64) {
            let states = differentiate_states(&track, dt).unwrap();
            // Steps of at most 3*sqrt(2) m per 0.4 s stay under the speed bound.
            let mut p = track[0];
            for (k, s) in states.iter().enumerate().skip(1) {
                p = [p[0] + s.velocity[0] * dt, p[1] + s.velocity[1] * dt];
                prop_assert!((p[0] - track[k][0]).abs() < 1e-6 && (p[1] - track[k][1]).abs() < 1e-6);
            }
        }

        #[test]
        fn clamp_is_idempotent_and_keeps_heading(vx in -100.0..100.0f64, vy in -100.0..100.0f64) {
            let c = clamp_speed([vx, vy]);
            prop_assert_eq!(clamp_speed(c), c);
            prop_assert!(c[0].hypot(c[1]) <= MAX_SPEED + 1e-9);
            // Same direction: zero cross product, positive dot product.
            prop_assert!((c[0] * vy - c[1] * vx).abs() < 1e-9 * (1.0 + vx.hypot(vy)));
            prop_assert!(c[0] * vx + c[1] * vy >= 0.0);
        }

        #[test]
        fn ingestion_ignores_line_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lines = Vec::new();
            for agent in 0..4 {
                let start = rng.random_range(0..5);
                for k in start..start + rng.random_range(2..8) {
                    lines.push(format!("{} {} {:.3} {:.3}", k * 10, agent, rng.random::<f64>(), rng.random::<f64>()));
                }
            }
            let a = ingest_dataset(&lines.join("\n"), 0.4).unwrap();
            for i in (1..lines.len()).rev() {
                lines.swap(i, rng.random_range(0..=i));
            }
            let b = ingest_dataset(&lines.join("\n"), 0.4).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn standardize_round_trip(vals in proptest::array::uniform6(-50.0..50.0f64), std in proptest::array::uniform6(0.01..10.0f64)) {
            let st = Standardizer::from_stats([1.5, -2.0, 0.3, 0.0, 4.0, -7.0], std);
            let back = st.inverse(&st.transform(&vals));
            for k in 0..6 {
                prop_assert!((back[k] - vals[k]).abs() <= 1e-9 * vals[k].abs().max(1.0));
            }
        }
    }
}
