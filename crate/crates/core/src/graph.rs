//! Proximity graph over time and smooth edge modulation.
//!
//! Each unordered agent pair carries a factor in `[0, 1]`. While connected,
//! the factor follows the addition filter `A` by edge age (1 past its end).
//! After disconnection it decays as `level * R(elapsed)` where `level` is
//! the factor at the last connected step (0 past the end of `R`). A pair
//! reconnected while fading resumes at the smallest age whose `A` value is
//! at least its current factor, so factors never jump upward.
//!
//! The batch tensor is computed run-by-run over each pair's on/off series;
//! the online slice advances per-pair counters one step at a time. The two
//! agree bit-exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dataio::{AgentId, SceneTimeline};
use crate::error::{CoreError, Result};

/// Unordered pair of node types, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeType(pub String, pub String);

impl EdgeType {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            EdgeType(a.to_string(), b.to_string())
        } else {
            EdgeType(b.to_string(), a.to_string())
        }
    }

    /// The endpoint type opposite `node_type`, if it is an endpoint.
    pub fn other(&self, node_type: &str) -> Option<&str> {
        if self.0 == node_type {
            Some(&self.1)
        } else if self.1 == node_type {
            Some(&self.0)
        } else {
            None
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// All unordered pairs over `node_types`, sorted.
pub fn edge_types_for(node_types: &[String]) -> Vec<EdgeType> {
    let mut out = BTreeSet::new();
    for a in node_types {
        for b in node_types {
            out.insert(EdgeType::new(a, b));
        }
    }
    out.into_iter().collect()
}

/// Addition and removal filters, indexed by steps since the event.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    add: Vec<f64>,
    remove: Vec<f64>,
}

impl Default for FilterPair {
    fn default() -> Self {
        FilterPair {
            add: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            remove: vec![1.0, 0.0],
        }
    }
}

impl FilterPair {
    /// `add` must be nondecreasing and `remove` nonincreasing, all values in
    /// `[0, 1]`. Either list may be empty (instant addition / removal).
    pub fn new(add: Vec<f64>, remove: Vec<f64>) -> Result<Self> {
        let in_range = |v: &f64| (0.0..=1.0).contains(v);
        if !add.iter().all(in_range) || !remove.iter().all(in_range) {
            return Err(CoreError::config("filter values must lie in [0, 1]"));
        }
        if add.windows(2).any(|w| w[1] < w[0]) {
            return Err(CoreError::config("addition filter must be nondecreasing"));
        }
        if remove.windows(2).any(|w| w[1] > w[0]) {
            return Err(CoreError::config("removal filter must be nonincreasing"));
        }
        Ok(FilterPair { add, remove })
    }

    pub fn add(&self) -> &[f64] {
        &self.add
    }

    pub fn remove(&self) -> &[f64] {
        &self.remove
    }

    pub fn add_factor(&self, age: usize) -> f64 {
        self.add.get(age).copied().unwrap_or(1.0)
    }

    /// `None` once the pair has fully faded.
    pub fn remove_factor(&self, level: f64, elapsed: usize) -> Option<f64> {
        self.remove.get(elapsed).map(|r| clip(level * r))
    }

    /// Smallest age whose addition factor reaches `prev`.
    pub fn reentry_age(&self, prev: f64) -> usize {
        self.add
            .iter()
            .position(|&a| a >= prev)
            .unwrap_or(self.add.len())
    }
}

fn clip(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Lifecycle of one agent pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairStatus {
    Inactive,
    Active { age: usize },
    Fading { elapsed: usize, level: f64 },
}

impl PairStatus {
    pub fn factor(&self, f: &FilterPair) -> f64 {
        match *self {
            PairStatus::Inactive => 0.0,
            PairStatus::Active { age } => clip(f.add_factor(age)),
            PairStatus::Fading { elapsed, level } => f.remove_factor(level, elapsed).unwrap_or(0.0),
        }
    }

    /// Connected pairs and pairs still fading belong to each other's
    /// neighborhoods.
    pub fn is_neighbor(&self) -> bool {
        !matches!(self, PairStatus::Inactive)
    }

    pub fn advance(self, connected: bool, f: &FilterPair) -> PairStatus {
        match (self, connected) {
            (PairStatus::Active { age }, true) => PairStatus::Active {
                // Ages past the end of A all map to 1.
                age: (age + 1).min(f.add.len()),
            },
            (status, true) => PairStatus::Active {
                age: f.reentry_age(status.factor(f)),
            },
            (PairStatus::Active { age }, false) => {
                let level = clip(f.add_factor(age));
                if f.remove.is_empty() {
                    PairStatus::Inactive
                } else {
                    PairStatus::Fading { elapsed: 0, level }
                }
            }
            (PairStatus::Fading { elapsed, level }, false) if elapsed + 1 < f.remove.len() => {
                PairStatus::Fading {
                    elapsed: elapsed + 1,
                    level,
                }
            }
            (_, false) => PairStatus::Inactive,
        }
    }
}

/// Binary adjacency over time, stored per pair `(i, j)` with `i < j` for
/// pairs connected at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    pub agents: Vec<AgentId>,
    n_steps: usize,
    pairs: BTreeMap<(usize, usize), Vec<bool>>,
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl EdgeMask {
    pub fn new(agents: Vec<AgentId>, n_steps: usize) -> Self {
        EdgeMask {
            agents,
            n_steps,
            pairs: BTreeMap::new(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Self-edges are ignored.
    pub fn set(&mut self, i: usize, j: usize, t: usize, on: bool) {
        assert!(i < self.agents.len() && j < self.agents.len() && t < self.n_steps);
        if i == j {
            return;
        }
        let n = self.n_steps;
        let series = self.pairs.entry(ordered(i, j)).or_insert_with(|| vec![false; n]);
        series[t] = on;
    }

    pub fn get(&self, i: usize, j: usize, t: usize) -> bool {
        i != j && self.pairs.get(&ordered(i, j)).is_some_and(|s| s[t])
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((usize, usize), &[bool])> {
        self.pairs.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    /// Connected pairs at `t`.
    pub fn adjacency(&self, t: usize) -> BTreeSet<(usize, usize)> {
        self.pairs
            .iter()
            .filter(|(_, s)| s[t])
            .map(|(&k, _)| k)
            .collect()
    }

    /// `dense[t][i][j]`; asymmetric input is symmetrized by `i < j` entries.
    pub fn from_dense(agents: Vec<AgentId>, dense: &[Vec<Vec<bool>>]) -> Self {
        let mut m = EdgeMask::new(agents, dense.len());
        for (t, adj) in dense.iter().enumerate() {
            for i in 0..m.agents.len() {
                for j in i + 1..m.agents.len() {
                    if adj[i][j] {
                        m.set(i, j, t, true);
                    }
                }
            }
        }
        m
    }
}

/// Modulation factor of one pair at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFactor {
    pub factor: f64,
    pub neighbor: bool,
}

const DETACHED: PairFactor = PairFactor {
    factor: 0.0,
    neighbor: false,
};

/// Modulation tensor `M[t, i, j]`, stored per pair like [`EdgeMask`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationTensor {
    n_agents: usize,
    n_steps: usize,
    pairs: BTreeMap<(usize, usize), Vec<PairFactor>>,
}

impl ModulationTensor {
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn pair(&self, i: usize, j: usize, t: usize) -> PairFactor {
        if i == j {
            return DETACHED;
        }
        self.pairs
            .get(&ordered(i, j))
            .map_or(DETACHED, |s| s[t])
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> f64 {
        self.pair(i, j, t).factor
    }

    pub fn slice(&self, t: usize) -> ModulationSlice {
        ModulationSlice {
            n_agents: self.n_agents,
            entries: self
                .pairs
                .iter()
                .filter(|(_, s)| s[t].neighbor)
                .map(|(&k, s)| (k, s[t]))
                .collect(),
        }
    }
}

/// One time slice of the modulation tensor, holding neighborhood pairs only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModulationSlice {
    pub n_agents: usize,
    pub entries: BTreeMap<(usize, usize), PairFactor>,
}

impl ModulationSlice {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(&ordered(i, j)).map_or(0.0, |p| p.factor)
    }

    /// Neighborhood of `i` (connected or fading) with factors, ascending `j`.
    pub fn neighbors_of(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .entries
            .iter()
            .filter_map(|(&(a, b), p)| {
                if a == i {
                    Some((b, p.factor))
                } else if b == i {
                    Some((a, p.factor))
                } else {
                    None
                }
            })
            .collect();
        out.sort_by_key(|e| e.0);
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n_agents]; self.n_agents];
        for (&(i, j), p) in &self.entries {
            m[i][j] = p.factor;
            m[j][i] = p.factor;
        }
        m
    }
}

/// Batch evaluation over each pair's full on/off series, run by run.
pub fn compute_modulation_tensor(mask: &EdgeMask, filters: &FilterPair) -> ModulationTensor {
    let pairs = mask
        .pairs()
        .map(|(key, series)| (key, pair_series_factors(series, filters)))
        .collect();
    ModulationTensor {
        n_agents: mask.n_agents(),
        n_steps: mask.n_steps(),
        pairs,
    }
}

fn pair_series_factors(series: &[bool], f: &FilterPair) -> Vec<PairFactor> {
    let mut out = Vec::with_capacity(series.len());
    let mut ever_on = false;
    let mut t = 0;
    while t < series.len() {
        let on = series[t];
        let end = series[t..]
            .iter()
            .position(|&s| s != on)
            .map_or(series.len(), |k| t + k);
        let prev = out.last().map_or(0.0, |p: &PairFactor| p.factor);
        if on {
            let start_age = f.reentry_age(prev);
            for k in 0..end - t {
                out.push(PairFactor {
                    factor: clip(f.add_factor(start_age + k)),
                    neighbor: true,
                });
            }
            ever_on = true;
        } else {
            for elapsed in 0..end - t {
                let fading = if ever_on { f.remove_factor(prev, elapsed) } else { None };
                out.push(fading.map_or(DETACHED, |factor| PairFactor {
                    factor,
                    neighbor: true,
                }));
            }
        }
        t = end;
    }
    out
}

/// Per-pair counters for computing one modulation slice per step.
#[derive(Debug, Clone)]
pub struct ModulationCounters {
    filters: FilterPair,
    status: BTreeMap<(usize, usize), PairStatus>,
    steps: usize,
}

impl ModulationCounters {
    pub fn new(filters: FilterPair) -> Self {
        ModulationCounters {
            filters,
            status: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn status(&self, i: usize, j: usize) -> PairStatus {
        self.status
            .get(&ordered(i, j))
            .copied()
            .unwrap_or(PairStatus::Inactive)
    }
}

/// Advances the counters by one step given the connected pairs (`i < j`)
/// and returns the new slice. Matches the batch tensor at the same step.
pub fn online_modulation_slice(
    counters: &mut ModulationCounters,
    connected: &BTreeSet<(usize, usize)>,
    n_agents: usize,
) -> ModulationSlice {
    let f = &counters.filters;
    let mut next = BTreeMap::new();
    let keys: BTreeSet<(usize, usize)> = counters
        .status
        .keys()
        .chain(connected.iter())
        .map(|&(i, j)| ordered(i, j))
        .filter(|(i, j)| i != j)
        .collect();
    let mut slice = ModulationSlice {
        n_agents,
        entries: BTreeMap::new(),
    };
    for key in keys {
        let prev = counters.status.get(&key).copied().unwrap_or(PairStatus::Inactive);
        let status = prev.advance(connected.contains(&key), f);
        if status.is_neighbor() {
            slice.entries.insert(
                key,
                PairFactor {
                    factor: status.factor(f),
                    neighbor: true,
                },
            );
            next.insert(key, status);
        }
    }
    counters.status = next;
    counters.steps += 1;
    slice
}

/// `min(sum of factors, 1)`.
pub fn aggregate_pair_factors(factors: impl IntoIterator<Item = f64>) -> f64 {
    factors.into_iter().sum::<f64>().clamp(0.0, 1.0)
}

/// Pairs of entries within `radius` of each other, as `(i, j)` with `i < j`
/// over the given indices.
pub fn proximity_pairs(positions: &[(usize, [f64; 2])], radius: f64) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (a, &(i, pi)) in positions.iter().enumerate() {
        for &(j, pj) in &positions[a + 1..] {
            if (pi[0] - pj[0]).hypot(pi[1] - pj[1]) <= radius {
                out.insert(ordered(i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub timestep: usize,
    pub nodes: Vec<(AgentId, String)>,
    /// Neighbors currently in proximity, by `(agent, edge type)`.
    pub typed_neighbors: BTreeMap<(AgentId, EdgeType), BTreeSet<AgentId>>,
}

#[derive(Debug, Clone)]
pub struct GraphHistory {
    /// Sorted ids; the index into this list is the mask's agent index.
    pub agents: Vec<AgentId>,
    pub node_types: Vec<String>,
    pub snapshots: Vec<GraphSnapshot>,
    pub mask: EdgeMask,
}

impl GraphHistory {
    pub fn index_of(&self, id: AgentId) -> Option<usize> {
        self.agents.binary_search(&id).ok()
    }
}

pub fn build_graph_history(scene: &SceneTimeline, radius: f64) -> Result<GraphHistory> {
    if !(radius > 0.0) {
        return Err(CoreError::config(format!("radius must be positive, got {radius}")));
    }
    let agents: Vec<AgentId> = scene.agents.keys().copied().collect();
    let node_types: Vec<String> = scene.agents.values().map(|a| a.node_type.clone()).collect();
    let mut mask = EdgeMask::new(agents.clone(), scene.n_steps);
    let mut snapshots = Vec::with_capacity(scene.n_steps);
    for t in 0..scene.n_steps {
        let present: Vec<(usize, [f64; 2])> = scene
            .agents
            .values()
            .enumerate()
            .filter_map(|(i, a)| a.state_at(t).map(|s| (i, s.position)))
            .collect();
        let mut typed_neighbors: BTreeMap<(AgentId, EdgeType), BTreeSet<AgentId>> = BTreeMap::new();
        for (i, j) in proximity_pairs(&present, radius) {
            mask.set(i, j, t, true);
            let et = EdgeType::new(&node_types[i], &node_types[j]);
            typed_neighbors
                .entry((agents[i], et.clone()))
                .or_default()
                .insert(agents[j]);
            typed_neighbors.entry((agents[j], et)).or_default().insert(agents[i]);
        }
        snapshots.push(GraphSnapshot {
            timestep: t,
            nodes: present
                .iter()
                .map(|&(i, _)| (agents[i], node_types[i].clone()))
                .collect(),
            typed_neighbors,
        });
    }
    Ok(GraphHistory {
        agents,
        node_types,
        snapshots,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::DEFAULT_NODE_TYPE;

    fn two_agent_scene(gap: f64, steps: usize) -> SceneTimeline {
        let a: Vec<_> = (0..steps).map(|k| Some([k as f64 * 0.4, 0.0])).collect();
        let b: Vec<_> = (0..steps).map(|k| Some([k as f64 * 0.4, gap])).collect();
        SceneTimeline::from_positions("s", 0.4, DEFAULT_NODE_TYPE, &[(1, a), (2, b)]).unwrap()
    }

    fn always_on(t: usize) -> EdgeMask {
        EdgeMask::from_dense(vec![0, 1], &vec![vec![vec![false, true], vec![true, false]]; t])
    }

    #[test]
    fn proximity_edges() {
        let g = build_graph_history(&two_agent_scene(1.0, 3), 3.0).unwrap();
        assert!(g.mask.get(0, 1, 0) && g.mask.get(1, 0, 2));
        let et = EdgeType::new(DEFAULT_NODE_TYPE, DEFAULT_NODE_TYPE);
        assert!(g.snapshots[1].typed_neighbors[&(1, et)].contains(&2));
        let far = build_graph_history(&two_agent_scene(5.0, 3), 3.0).unwrap();
        assert!(!far.mask.get(0, 1, 0));
        assert!(build_graph_history(&two_agent_scene(1.0, 3), 0.0).is_err());
    }

    #[test]
    fn departure_clears_edges() {
        let a: Vec<_> = (0..10).map(|_| Some([0.0, 0.0])).collect();
        let b: Vec<_> = (0..10).map(|t| (t < 5).then_some([1.0, 0.0])).collect();
        let scene = SceneTimeline::from_positions("s", 0.4, DEFAULT_NODE_TYPE, &[(1, a), (2, b)]).unwrap();
        let g = build_graph_history(&scene, 3.0).unwrap();
        assert!(g.mask.get(0, 1, 4));
        assert!((5..10).all(|t| !g.mask.get(0, 1, t)));
    }

    #[test]
    fn default_filters_ramp_up() {
        let m = compute_modulation_tensor(&always_on(8), &FilterPair::default());
        let got: Vec<f64> = (0..8).map(|t| m.get(t, 0, 1)).collect();
        assert_eq!(got, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn empty_addition_filter_is_instant() {
        let f = FilterPair::new(vec![], vec![1.0, 0.0]).unwrap();
        let m = compute_modulation_tensor(&always_on(5), &f);
        assert!((0..5).all(|t| m.get(t, 0, 1) == 1.0));
    }

    #[test]
    fn removal_after_mature_edge() {
        let dense: Vec<Vec<Vec<bool>>> = (0..14)
            .map(|t| {
                let on = t <= 9;
                vec![vec![false, on], vec![on, false]]
            })
            .collect();
        let m = compute_modulation_tensor(&EdgeMask::from_dense(vec![0, 1], &dense), &FilterPair::default());
        assert_eq!(m.get(10, 0, 1), 1.0);
        assert_eq!(m.get(11, 0, 1), 0.0);
        assert!(m.pair(0, 1, 11).neighbor);
        assert!(!m.pair(0, 1, 12).neighbor);
    }

    #[test]
    fn aggregation_caps_at_one() {
        assert_eq!(aggregate_pair_factors([1.0]), 1.0);
        assert!((aggregate_pair_factors([0.2, 0.2]) - 0.4).abs() < 1e-15);
        assert_eq!(aggregate_pair_factors([0.6, 0.6, 0.6]), 1.0);
        assert_eq!(aggregate_pair_factors([]), 0.0);
    }

    #[test]
    fn new_agent_with_one_edge() {
        for f in [FilterPair::default(), FilterPair::new(vec![0.5, 1.0], vec![1.0]).unwrap()] {
            let mut c = ModulationCounters::new(f.clone());
            online_modulation_slice(&mut c, &BTreeSet::new(), 2);
            let s = online_modulation_slice(&mut c, &BTreeSet::from([(0, 2)]), 3);
            assert_eq!(s.neighbors_of(2), vec![(0, f.add_factor(0))]);
            let nonzero = s.to_dense()[2].iter().filter(|v| **v != 0.0).count();
            assert_eq!(nonzero, usize::from(f.add_factor(0) > 0.0));
        }
    }

    #[test]
    fn steady_state_slice() {
        let mut c = ModulationCounters::new(FilterPair::default());
        let adj = BTreeSet::from([(0, 1), (1, 2)]);
        let mut s = ModulationSlice::default();
        for _ in 0..10 {
            s = online_modulation_slice(&mut c, &adj, 3);
        }
        let d = s.to_dense();
        assert_eq!(d[0][1], 1.0);
        assert_eq!(d[2][1], 1.0);
        assert_eq!(d[0][2], 0.0);
        assert_eq!(d[1][1], 0.0);
    }

    #[test]
    fn filter_validation() {
        assert!(FilterPair::new(vec![0.5, 0.2], vec![]).is_err());
        assert!(FilterPair::new(vec![], vec![0.2, 0.5]).is_err());
        assert!(FilterPair::new(vec![1.5], vec![]).is_err());
        assert!(FilterPair::new(vec![0.0, 1.0], vec![1.0, 0.5, 0.0]).is_ok());
    }

    #[test]
    fn reconnection_while_fading_is_continuous() {
        let f = FilterPair::new(vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0], vec![1.0, 0.7, 0.3]).unwrap();
        let on = [true, true, true, true, true, true, true, false, false, true, true];
        let mut m = EdgeMask::new(vec![0, 1], on.len());
        for (t, &o) in on.iter().enumerate() {
            m.set(0, 1, t, o);
        }
        let mt = compute_modulation_tensor(&m, &f);
        let got: Vec<f64> = (0..on.len()).map(|t| mt.get(t, 0, 1)).collect();
        // Fades to 0.7, re-enters at the first age with A >= 0.7.
        assert_eq!(&got[6..], &[1.0, 1.0, 0.7, 0.8, 1.0]);
    }
}
