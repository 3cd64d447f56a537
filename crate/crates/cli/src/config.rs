//! The merged run configuration read from a `key = value` file.
//!
//! Every key has a default, so an empty file is a valid config. The rendered
//! effective config lists every key and reloads to an identical `RunConfig`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use trajectron_core::dataio::{
    make_constant_velocity, make_synthetic_fork_with, ForkOptions, Manifest, NamedSet, SceneTimeline, DEFAULT_DT,
};
use trajectron_core::eval::{BenchOptions, EvalOptions};
use trajectron_core::graph::FilterPair;
use trajectron_core::kv::KvFile;
use trajectron_core::model::ModelConfig;
use trajectron_core::train::{BetaSchedule, TrainConfig};
use trajectron_core::{CoreError, Result};

pub const DEFAULT_OUT: &str = "trajectron_out";

const FORK_SOURCE: &str = "synthetic:fork";
const CV_SOURCE: &str = "synthetic:constant_velocity";

const KEYS: &[&str] = &[
    "seed",
    "precision",
    "out",
    "data",
    "fold",
    "synthetic.scenes",
    "synthetic.test_scenes",
    "synthetic.noise",
    "synthetic.agents",
    "synthetic.steps",
    "synthetic.neighbors",
    "synthetic.seed",
    "node_types",
    "nhe_hidden",
    "nfe_hidden",
    "ee_hidden",
    "attention_hidden",
    "decoder_hidden",
    "latent_mlp_hidden",
    "n_gmm_components",
    "latent_cardinality",
    "horizon",
    "history_len",
    "min_history",
    "dt",
    "radius",
    "filter_add",
    "filter_remove",
    "steps",
    "batch_size",
    "beta",
    "beta_start",
    "beta_warmup_steps",
    "lr",
    "lr_decay",
    "min_lr",
    "clip",
    "checkpoint_every",
    "validate_every",
    "validation_stride",
    "eval.n_samples",
    "eval.bon_n",
    "eval.obs_stride",
    "eval.confidence",
    "eval.resamples",
    "bench.n_samples",
    "bench.repetitions",
    "bench.max_points",
    "bench.crowd_agents",
    "bench.encode_repetitions",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "32",
            Precision::F64 => "64",
        })
    }
}

impl FromStr for Precision {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" => Ok(Precision::F32),
            "64" => Ok(Precision::F64),
            _ => Err(CoreError::config(format!("precision must be 32 or 64, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Fork,
    ConstantVelocity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    /// Training scenes; `test_scenes` more are generated after them.
    pub scenes: usize,
    pub test_scenes: usize,
    pub noise: f64,
    /// Agents per constant-velocity scene.
    pub agents: usize,
    /// Steps per constant-velocity scene.
    pub steps: usize,
    /// Straight-walking neighbors per fork scene.
    pub neighbors: usize,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        SyntheticOptions {
            scenes: 100,
            test_scenes: 20,
            noise: 0.0,
            agents: 3,
            steps: 24,
            neighbors: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Absolute path of a dataset manifest.
    Manifest(PathBuf),
    Synthetic(SyntheticKind),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Manifest(p) => write!(f, "{}", p.display()),
            DataSource::Synthetic(SyntheticKind::Fork) => f.write_str(FORK_SOURCE),
            DataSource::Synthetic(SyntheticKind::ConstantVelocity) => f.write_str(CV_SOURCE),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    /// Always absolute once loaded.
    pub out: PathBuf,
    pub data: DataSource,
    /// Held-out set of a manifest; `None` trains on every set.
    pub fold: Option<String>,
    pub synthetic: SyntheticOptions,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub bench: BenchOptions,
    pub crowd_agents: usize,
    pub encode_repetitions: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            out: PathBuf::from(DEFAULT_OUT),
            data: DataSource::Synthetic(SyntheticKind::Fork),
            fold: None,
            synthetic: SyntheticOptions::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            bench: BenchOptions::default(),
            crowd_agents: 20,
            encode_repetitions: 15,
        }
    }
}

/// Overrides given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub precision: Option<Precision>,
}

fn set<T: FromStr>(kv: &KvFile, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = kv.parse_value(key)? {
        *slot = v;
    }
    Ok(())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base, overrides)
    }

    pub fn from_text(text: &str, base: &Path, overrides: &Overrides) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        kv.reject_unknown(KEYS)?;
        let mut c = RunConfig::default();
        set(&kv, "seed", &mut c.seed)?;
        set(&kv, "precision", &mut c.precision)?;
        c.out = match kv.get("out") {
            Some(out) => std::path::absolute(resolve(base, out))?,
            None => std::path::absolute(DEFAULT_OUT)?,
        };
        if let Some(d) = kv.get("data") {
            c.data = match d {
                FORK_SOURCE => DataSource::Synthetic(SyntheticKind::Fork),
                CV_SOURCE => DataSource::Synthetic(SyntheticKind::ConstantVelocity),
                s if s.starts_with("synthetic:") => {
                    return Err(CoreError::config(format!(
                        "unknown synthetic source {s:?}; use {FORK_SOURCE} or {CV_SOURCE}"
                    )))
                }
                path => DataSource::Manifest(absolute(&resolve(base, path))?),
            };
        }
        c.fold = kv.get("fold").filter(|f| !f.is_empty()).map(str::to_string);

        let s = &mut c.synthetic;
        set(&kv, "synthetic.scenes", &mut s.scenes)?;
        set(&kv, "synthetic.test_scenes", &mut s.test_scenes)?;
        set(&kv, "synthetic.noise", &mut s.noise)?;
        set(&kv, "synthetic.agents", &mut s.agents)?;
        set(&kv, "synthetic.steps", &mut s.steps)?;
        set(&kv, "synthetic.neighbors", &mut s.neighbors)?;
        set(&kv, "synthetic.seed", &mut s.seed)?;

        let m = &mut c.model;
        if let Some(types) = kv.get("node_types") {
            m.node_types = types.split(',').map(|t| t.trim().to_string()).collect();
        }
        set(&kv, "nhe_hidden", &mut m.nhe_hidden)?;
        set(&kv, "nfe_hidden", &mut m.nfe_hidden)?;
        set(&kv, "ee_hidden", &mut m.ee_hidden)?;
        set(&kv, "attention_hidden", &mut m.attention_hidden)?;
        set(&kv, "decoder_hidden", &mut m.decoder_hidden)?;
        set(&kv, "latent_mlp_hidden", &mut m.latent_mlp_hidden)?;
        set(&kv, "n_gmm_components", &mut m.n_gmm_components)?;
        set(&kv, "latent_cardinality", &mut m.latent_cardinality)?;
        set(&kv, "horizon", &mut m.horizon)?;
        set(&kv, "history_len", &mut m.history_len)?;
        set(&kv, "min_history", &mut m.min_history)?;
        set(&kv, "radius", &mut m.radius)?;
        let add = kv.parse_list("filter_add")?;
        let remove = kv.parse_list("filter_remove")?;
        if add.is_some() || remove.is_some() {
            let d = FilterPair::default();
            m.filters = FilterPair::new(
                add.unwrap_or_else(|| d.add().to_vec()),
                remove.unwrap_or_else(|| d.remove().to_vec()),
            )?;
        }
        let explicit_dt = kv.parse_value::<f64>("dt")?;
        m.dt = explicit_dt.unwrap_or(DEFAULT_DT);

        let t = &mut c.train;
        set(&kv, "steps", &mut t.steps)?;
        set(&kv, "batch_size", &mut t.batch_size)?;
        set(&kv, "lr", &mut t.lr)?;
        set(&kv, "lr_decay", &mut t.lr_decay)?;
        set(&kv, "min_lr", &mut t.min_lr)?;
        set(&kv, "clip", &mut t.clip)?;
        set(&kv, "checkpoint_every", &mut t.checkpoint_every)?;
        set(&kv, "validate_every", &mut t.validate_every)?;
        set(&kv, "validation_stride", &mut t.validation_stride)?;
        let beta = kv.parse_value::<f64>("beta")?.unwrap_or(1.0);
        let warmup = kv.parse_value::<usize>("beta_warmup_steps")?.unwrap_or(0);
        let beta_start = kv.parse_value::<f64>("beta_start")?;
        t.beta = match (warmup, beta_start) {
            (0, None) => BetaSchedule::Constant(beta),
            (0, Some(_)) => return Err(CoreError::config("beta_start needs beta_warmup_steps > 0")),
            (steps, start) => BetaSchedule::Warmup {
                start: start.unwrap_or(0.0),
                end: beta,
                steps,
            },
        };

        let e = &mut c.eval;
        set(&kv, "eval.n_samples", &mut e.n_samples)?;
        if let Some(n) = kv.parse_value::<usize>("eval.bon_n")? {
            e.bon_n = (n > 0).then_some(n);
        }
        set(&kv, "eval.obs_stride", &mut e.obs_stride)?;
        set(&kv, "eval.confidence", &mut e.confidence)?;
        set(&kv, "eval.resamples", &mut e.resamples)?;

        let b = &mut c.bench;
        set(&kv, "bench.n_samples", &mut b.n_samples)?;
        set(&kv, "bench.repetitions", &mut b.repetitions)?;
        set(&kv, "bench.max_points", &mut b.max_points)?;
        set(&kv, "bench.crowd_agents", &mut c.crowd_agents)?;
        set(&kv, "bench.encode_repetitions", &mut c.encode_repetitions)?;

        if let Some(seed) = overrides.seed {
            c.seed = seed;
        }
        if let Some(out) = &overrides.out {
            c.out = std::path::absolute(out)?;
        }
        if let Some(p) = overrides.precision {
            c.precision = p;
        }
        c.sync_derived();
        c.check_data(explicit_dt)?;
        c.model.validate()?;
        c.train.validate()?;
        c.eval.validate()?;
        Ok(c)
    }

    /// Copies the seed and the model's window sizes into the sub-configs.
    fn sync_derived(&mut self) {
        self.train.seed = self.seed;
        self.eval.seed = self.seed;
        self.bench.seed = self.seed;
        self.eval.history_len = self.model.history_len;
        self.eval.min_history = self.model.min_history;
        self.eval.horizon = self.model.horizon;
    }

    /// Manifest files must exist and agree with the configured `dt`.
    fn check_data(&mut self, explicit_dt: Option<f64>) -> Result<()> {
        match &self.data {
            DataSource::Manifest(path) => {
                let manifest = Manifest::load(path)?;
                manifest.check_paths()?;
                if let Some(dt) = explicit_dt {
                    if dt != manifest.dt {
                        return Err(CoreError::config(format!(
                            "dt = {dt} disagrees with the manifest's dt = {}",
                            manifest.dt
                        )));
                    }
                }
                self.model.dt = manifest.dt;
                if let Some(fold) = &self.fold {
                    if !manifest.splits.iter().any(|(n, _)| n == fold) {
                        return Err(CoreError::config(format!("fold {fold:?} is not a split of the manifest")));
                    }
                }
            }
            DataSource::Synthetic(_) => {
                if explicit_dt.is_some_and(|dt| dt != DEFAULT_DT) {
                    return Err(CoreError::config(format!("synthetic data uses dt = {DEFAULT_DT}")));
                }
                if self.fold.is_some() {
                    return Err(CoreError::config("fold applies to manifest data only"));
                }
                if self.synthetic.scenes == 0 {
                    return Err(CoreError::config("synthetic.scenes must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Every key with its effective value.
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.insert("seed", self.seed);
        kv.insert("precision", self.precision);
        kv.insert("out", self.out.display());
        kv.insert("data", &self.data);
        kv.insert("fold", self.fold.as_deref().unwrap_or(""));
        let s = &self.synthetic;
        kv.insert("synthetic.scenes", s.scenes);
        kv.insert("synthetic.test_scenes", s.test_scenes);
        kv.insert("synthetic.noise", s.noise);
        kv.insert("synthetic.agents", s.agents);
        kv.insert("synthetic.steps", s.steps);
        kv.insert("synthetic.neighbors", s.neighbors);
        kv.insert("synthetic.seed", s.seed);
        let m = &self.model;
        kv.insert("node_types", m.node_types.join(", "));
        kv.insert("nhe_hidden", m.nhe_hidden);
        kv.insert("nfe_hidden", m.nfe_hidden);
        kv.insert("ee_hidden", m.ee_hidden);
        kv.insert("attention_hidden", m.attention_hidden);
        kv.insert("decoder_hidden", m.decoder_hidden);
        kv.insert("latent_mlp_hidden", m.latent_mlp_hidden);
        kv.insert("n_gmm_components", m.n_gmm_components);
        kv.insert("latent_cardinality", m.latent_cardinality);
        kv.insert("horizon", m.horizon);
        kv.insert("history_len", m.history_len);
        kv.insert("min_history", m.min_history);
        kv.insert("dt", m.dt);
        kv.insert("radius", m.radius);
        kv.insert("filter_add", join_floats(m.filters.add()));
        kv.insert("filter_remove", join_floats(m.filters.remove()));
        let t = &self.train;
        kv.insert("steps", t.steps);
        kv.insert("batch_size", t.batch_size);
        match t.beta {
            BetaSchedule::Constant(b) => {
                kv.insert("beta", b);
                kv.insert("beta_warmup_steps", 0);
            }
            BetaSchedule::Warmup { start, end, steps } => {
                kv.insert("beta", end);
                kv.insert("beta_start", start);
                kv.insert("beta_warmup_steps", steps);
            }
        }
        kv.insert("lr", t.lr);
        kv.insert("lr_decay", t.lr_decay);
        kv.insert("min_lr", t.min_lr);
        kv.insert("clip", t.clip);
        kv.insert("checkpoint_every", t.checkpoint_every);
        kv.insert("validate_every", t.validate_every);
        kv.insert("validation_stride", t.validation_stride);
        let e = &self.eval;
        kv.insert("eval.n_samples", e.n_samples);
        kv.insert("eval.bon_n", e.bon_n.unwrap_or(0));
        kv.insert("eval.obs_stride", e.obs_stride);
        kv.insert("eval.confidence", e.confidence);
        kv.insert("eval.resamples", e.resamples);
        let b = &self.bench;
        kv.insert("bench.n_samples", b.n_samples);
        kv.insert("bench.repetitions", b.repetitions);
        kv.insert("bench.max_points", b.max_points);
        kv.insert("bench.crowd_agents", self.crowd_agents);
        kv.insert("bench.encode_repetitions", self.encode_repetitions);
        kv
    }

    pub fn render(&self) -> String {
        self.to_kv().render()
    }

    /// Training and test scenes for the configured source and fold. Without a
    /// fold, every manifest set is used for training and none for testing.
    pub fn load_split(&self) -> Result<(Vec<SceneTimeline>, Vec<SceneTimeline>)> {
        match &self.data {
            DataSource::Manifest(path) => {
                let sets = Manifest::load(path)?.load_sets()?;
                Ok(split_sets(sets, self.fold.as_deref()))
            }
            DataSource::Synthetic(kind) => {
                let mut scenes = self.synthetic_scenes(*kind)?;
                let test = scenes.split_off(self.synthetic.scenes);
                Ok((scenes, test))
            }
        }
    }

    /// The fold name reported in evaluation tables.
    pub fn fold_name(&self) -> String {
        match (&self.data, &self.fold) {
            (_, Some(f)) => f.clone(),
            (DataSource::Manifest(_), None) => "all".into(),
            (DataSource::Synthetic(SyntheticKind::Fork), None) => "fork".into(),
            (DataSource::Synthetic(SyntheticKind::ConstantVelocity), None) => "constant_velocity".into(),
        }
    }

    /// Named datasets for the runtime benchmark: each manifest set, or the
    /// synthetic scenes as one set.
    pub fn bench_datasets(&self) -> Result<Vec<NamedSet>> {
        match &self.data {
            DataSource::Manifest(path) => Manifest::load(path)?.load_sets(),
            DataSource::Synthetic(kind) => Ok(vec![NamedSet {
                name: self.fold_name(),
                scenes: self.synthetic_scenes(*kind)?,
            }]),
        }
    }

    fn synthetic_scenes(&self, kind: SyntheticKind) -> Result<Vec<SceneTimeline>> {
        let s = &self.synthetic;
        let n = s.scenes + s.test_scenes;
        match kind {
            SyntheticKind::Fork => make_synthetic_fork_with(&ForkOptions {
                n_scenes: n,
                noise_std: s.noise,
                n_neighbors: s.neighbors,
                seed: s.seed,
                ..ForkOptions::default()
            }),
            SyntheticKind::ConstantVelocity => make_constant_velocity(n, s.agents, s.steps, s.noise, s.seed),
        }
    }
}

fn split_sets(sets: Vec<NamedSet>, fold: Option<&str>) -> (Vec<SceneTimeline>, Vec<SceneTimeline>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for set in sets {
        if Some(set.name.as_str()) == fold {
            test.extend(set.scenes);
        } else {
            train.extend(set.scenes);
        }
    }
    (train, test)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if !p.is_file() {
        return Err(CoreError::data(format!("data manifest {} does not exist", p.display())));
    }
    p.canonicalize()
        .map_err(|e| CoreError::data(format!("cannot resolve {}: {e}", p.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<RunConfig> {
        RunConfig::from_text(text, Path::new("."), &Overrides::default())
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c = load("").unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.eval.bon_n, Some(100));
        assert_eq!(c.data, DataSource::Synthetic(SyntheticKind::Fork));
    }

    #[test]
    fn effective_config_reloads_identically() {
        let c = load(
            "seed = 4\nprecision = 64\ndata = synthetic:constant_velocity\nlatent_cardinality = 4\n\
             beta = 0.5\nbeta_start = 0.1\nbeta_warmup_steps = 50\nfilter_add = 0, 1\neval.bon_n = 0\nlr = 3e-3\n",
        )
        .unwrap();
        assert_eq!(c.eval.bon_n, None);
        assert_eq!(c.train.seed, 4);
        let again = load(&c.render()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.render(), c.render());
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            seed: Some(9),
            out: Some(PathBuf::from("elsewhere")),
            precision: Some(Precision::F64),
        };
        let c = RunConfig::from_text("seed = 1\nprecision = 32\n", Path::new("."), &o).unwrap();
        assert_eq!((c.seed, c.eval.seed, c.precision), (9, 9, Precision::F64));
        assert!(c.out.is_absolute() && c.out.ends_with("elsewhere"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(load("stepz = 3\n"), Err(CoreError::Config(_))));
        assert!(load("precision = 16\n").is_err());
        assert!(load("data = synthetic:spiral\n").is_err());
        assert!(matches!(load("data = /nonexistent/manifest.txt\n"), Err(CoreError::Data(_))));
        assert!(load("fold = eth\n").is_err());
        assert!(load("min_history = 9\n").is_err());
        assert!(load("beta_start = 0.2\n").is_err());
    }

    #[test]
    fn synthetic_split_sizes() {
        let c = load("data = synthetic:fork\nsynthetic.scenes = 5\nsynthetic.test_scenes = 2\n").unwrap();
        let (train, test) = c.load_split().unwrap();
        assert_eq!((train.len(), test.len()), (5, 2));
    }
}
