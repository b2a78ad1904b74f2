use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::error::{Error, Result};
use crate::train::{InitScheme, Optimizer, TrainConfig};

/// Environment variable that overrides the data seed of any loaded config.
pub const SEED_ENV: &str = "BNLAB_SEED";

const SECTIONS: [&str; 4] = ["data", "train", "sweep", "output"];

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format {
        what: "config",
        msg: msg.into(),
    }
}

/// INI document that remembers which keys were read, so leftovers can be rejected.
struct Doc {
    ini: Ini,
    used: BTreeSet<(String, String)>,
}

impl Doc {
    fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str_noescape(text).map_err(|e| format_err(e.to_string()))?;
        Ok(Self {
            ini,
            used: BTreeSet::new(),
        })
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<String> {
        let value = self.ini.section(Some(section))?.get(key)?.trim().to_string();
        self.used.insert((section.to_string(), key.to_string()));
        Some(value)
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str, into: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.raw(section, key) {
            *into = v
                .parse()
                .map_err(|e| format_err(format!("[{section}] {key} = {v:?}: {e}")))?;
        }
        Ok(())
    }

    fn get_list(&mut self, section: &str, key: &str, into: &mut Vec<usize>) -> Result<()> {
        if let Some(v) = self.raw(section, key) {
            *into = parse_list(&v).map_err(|e| format_err(format!("[{section}] {key}: {e}")))?;
        }
        Ok(())
    }

    fn get_opt(&mut self, section: &str, key: &str, into: &mut Option<usize>) -> Result<()> {
        if let Some(v) = self.raw(section, key) {
            *into = match v.to_ascii_lowercase().as_str() {
                "" | "none" | "auto" => None,
                s => Some(
                    s.parse()
                        .map_err(|e| format_err(format!("[{section}] {key} = {v:?}: {e}")))?,
                ),
            };
        }
        Ok(())
    }

    /// Errors on sections or keys that were never read.
    fn finish(self) -> Result<()> {
        for (name, props) in self.ini.iter() {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(format_err(format!("key {k:?} outside of any section")));
                }
                continue;
            };
            if !SECTIONS.contains(&name) {
                return Err(format_err(format!("unknown section [{name}]")));
            }
            for (k, _) in props.iter() {
                if !self.used.contains(&(name.to_string(), k.to_string())) {
                    return Err(format_err(format!("unknown key {k:?} in [{name}]")));
                }
            }
        }
        Ok(())
    }
}

/// Parses `"3-14"`, `"3,4,8"` or mixtures such as `"3-6,10"`.
pub fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
            let b: usize = b.trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
            if a > b {
                return Err(format!("empty range {part:?}"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|e| format!("{part:?}: {e}"))?);
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

fn read_train(doc: &mut Doc, t: &mut TrainConfig) -> Result<()> {
    doc.get("train", "lambda", &mut t.lambda)?;
    doc.get("train", "optimizer", &mut t.optimizer)?;
    doc.get("train", "eta", &mut t.eta0)?;
    doc.get("train", "eta_depth_scaled", &mut t.lr_depth_scaled)?;
    doc.get("train", "steps", &mut t.steps)?;
    doc.get_opt("train", "anneal_after", &mut t.anneal_after)?;
    doc.get("train", "anneal_factor", &mut t.anneal_factor)?;
    doc.get_opt("train", "batch", &mut t.batch)?;
    doc.get("train", "log_every", &mut t.log_every)?;
    doc.get("train", "backtracking", &mut t.backtracking)?;
    doc.get("train", "stop_cost", &mut t.stop_cost)?;
    t.validate()
}

fn write_train(out: &mut String, t: &TrainConfig, scheme: InitScheme) {
    let opt = |v: Option<usize>| v.map_or("none".to_string(), |v| v.to_string());
    let optimizer = match t.optimizer {
        Optimizer::Gd => "gd",
        Optimizer::Adam => "adam",
    };
    let scheme = match scheme {
        InitScheme::FanIn => "fan_in",
        InitScheme::Orthogonal => "orthogonal",
    };
    let _ = writeln!(out, "[train]");
    let _ = writeln!(out, "lambda = {}", t.lambda);
    let _ = writeln!(out, "optimizer = {optimizer}");
    let _ = writeln!(out, "eta = {}", t.eta0);
    let _ = writeln!(out, "eta_depth_scaled = {}", t.lr_depth_scaled);
    let _ = writeln!(out, "steps = {}", t.steps);
    let _ = writeln!(out, "anneal_after = {}", opt(t.anneal_after));
    let _ = writeln!(out, "anneal_factor = {}", t.anneal_factor);
    let _ = writeln!(out, "batch = {}", opt(t.batch));
    let _ = writeln!(out, "log_every = {}", t.log_every);
    let _ = writeln!(out, "backtracking = {}", t.backtracking);
    let _ = writeln!(out, "stop_cost = {}", t.stop_cost);
    let _ = writeln!(out, "init = {scheme}");
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| format_err(format!("{SEED_ENV}={v:?}: {e}"))),
        Err(_) => Ok(None),
    }
}

/// Norm-versus-depth sweep on the rank-2 synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub data_seed: u64,
    pub n_samples: usize,
    /// RMS column norm the inputs are rescaled to.
    pub x_norm: f64,
    pub y_norm: f64,
    pub width: usize,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub scheme: InitScheme,
    pub train: TrainConfig,
    /// Absolute singular-value cut for the middle-layer rank.
    pub rank_threshold: f64,
    /// A run counts as fitted when `MSE / mean‖y‖² < fit_cut`.
    pub fit_cut: f64,
    pub out_dir: PathBuf,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            data_seed: 0,
            n_samples: 256,
            x_norm: 3.0,
            y_norm: 0.3,
            width: 40,
            depths: (3..=14).collect(),
            seeds: vec![0, 1, 2],
            scheme: InitScheme::FanIn,
            train: TrainConfig {
                lambda: 1e-3,
                optimizer: Optimizer::Adam,
                eta0: 1e-3,
                steps: 20_000,
                anneal_after: Some(16_000),
                anneal_factor: 0.1,
                log_every: 1000,
                ..TrainConfig::default()
            },
            rank_threshold: 0.1,
            fit_cut: 0.1,
            out_dir: PathBuf::from("out/sweep"),
        }
    }
}

impl SweepConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let mut doc = Doc::parse(text)?;
        let mut c = Self::default();
        doc.get("data", "seed", &mut c.data_seed)?;
        doc.get("data", "n_samples", &mut c.n_samples)?;
        doc.get("data", "x_norm", &mut c.x_norm)?;
        doc.get("data", "y_norm", &mut c.y_norm)?;
        read_train(&mut doc, &mut c.train)?;
        doc.get("train", "init", &mut c.scheme)?;
        doc.get("sweep", "width", &mut c.width)?;
        doc.get_list("sweep", "depths", &mut c.depths)?;
        let mut seeds: Vec<usize> = c.seeds.iter().map(|&s| s as usize).collect();
        doc.get_list("sweep", "seeds", &mut seeds)?;
        c.seeds = seeds.into_iter().map(|s| s as u64).collect();
        doc.get("sweep", "rank_threshold", &mut c.rank_threshold)?;
        doc.get("sweep", "fit_cut", &mut c.fit_cut)?;
        let mut dir = c.out_dir.display().to_string();
        doc.get("output", "dir", &mut dir)?;
        c.out_dir = PathBuf::from(dir);
        doc.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file and applies the `BNLAB_SEED` override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_ini_str(&std::fs::read_to_string(path)?)?.with_env()
    }

    pub fn with_env(mut self) -> Result<Self> {
        if let Some(seed) = env_seed()? {
            self.data_seed = seed;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.n_samples < 2 {
            return bad(format!("need at least 2 samples, got {}", self.n_samples));
        }
        if !(self.x_norm > 0.0 && self.y_norm > 0.0) {
            return bad("data norms must be positive".into());
        }
        if self.width == 0 || self.depths.is_empty() || self.depths.contains(&0) {
            return bad("width and depths must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.rank_threshold > 0.0 && self.fit_cut > 0.0) {
            return bad("rank_threshold and fit_cut must be positive".into());
        }
        self.train.validate()
    }

    pub fn to_ini_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "seed = {}", self.data_seed);
        let _ = writeln!(s, "n_samples = {}", self.n_samples);
        let _ = writeln!(s, "x_norm = {}", self.x_norm);
        let _ = writeln!(s, "y_norm = {}\n", self.y_norm);
        write_train(&mut s, &self.train, self.scheme);
        let join = |v: Vec<String>| v.join(",");
        let _ = writeln!(s, "\n[sweep]");
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "depths = {}", join(self.depths.iter().map(usize::to_string).collect()));
        let _ = writeln!(s, "seeds = {}", join(self.seeds.iter().map(u64::to_string).collect()));
        let _ = writeln!(s, "rank_threshold = {}", self.rank_threshold);
        let _ = writeln!(s, "fit_cut = {}", self.fit_cut);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        s
    }
}

/// Symmetry-learning run on the inner-GD loss prediction task.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryConfig {
    pub seed: u64,
    pub dim: usize,
    pub horizon: usize,
    pub noise_scale: f64,
    pub inner_eta: f64,
    pub n_samples: usize,
    pub x_norm: f64,
    pub y_norm: f64,
    pub depth: usize,
    pub width: usize,
    pub init_seed: u64,
    pub scheme: InitScheme,
    pub train: TrainConfig,
    pub rank_threshold: f64,
    /// The run counts as successful when `MSE / mean‖y‖² < fit_cut`.
    pub fit_cut: f64,
    /// Hidden layer for the PCA and orbit analysis; `None` picks the clearest 2-outlier layer.
    pub layer: Option<usize>,
    pub orbit_pairs: usize,
    pub pca_paths: usize,
    pub out_dir: PathBuf,
}

impl Default for SymmetryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 20,
            horizon: 10,
            noise_scale: 0.01,
            inner_eta: 0.05,
            n_samples: 512,
            x_norm: 3.0,
            y_norm: 1.0,
            depth: 12,
            width: 64,
            init_seed: 0,
            scheme: InitScheme::FanIn,
            train: TrainConfig {
                lambda: 2e-4,
                optimizer: Optimizer::Adam,
                eta0: 1e-3,
                steps: 30_000,
                anneal_after: Some(24_000),
                anneal_factor: 0.1,
                log_every: 1000,
                ..TrainConfig::default()
            },
            rank_threshold: 0.1,
            fit_cut: 0.1,
            layer: None,
            orbit_pairs: 256,
            pca_paths: 12,
            out_dir: PathBuf::from("out/symmetry"),
        }
    }
}

impl SymmetryConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let mut doc = Doc::parse(text)?;
        let mut c = Self::default();
        doc.get("data", "seed", &mut c.seed)?;
        doc.get("data", "dim", &mut c.dim)?;
        doc.get("data", "horizon", &mut c.horizon)?;
        doc.get("data", "noise_scale", &mut c.noise_scale)?;
        doc.get("data", "inner_eta", &mut c.inner_eta)?;
        doc.get("data", "n_samples", &mut c.n_samples)?;
        doc.get("data", "x_norm", &mut c.x_norm)?;
        doc.get("data", "y_norm", &mut c.y_norm)?;
        read_train(&mut doc, &mut c.train)?;
        doc.get("train", "init", &mut c.scheme)?;
        doc.get("train", "init_seed", &mut c.init_seed)?;
        doc.get("sweep", "depth", &mut c.depth)?;
        doc.get("sweep", "width", &mut c.width)?;
        doc.get("sweep", "rank_threshold", &mut c.rank_threshold)?;
        doc.get("sweep", "fit_cut", &mut c.fit_cut)?;
        doc.get_opt("sweep", "layer", &mut c.layer)?;
        doc.get("sweep", "orbit_pairs", &mut c.orbit_pairs)?;
        doc.get("sweep", "pca_paths", &mut c.pca_paths)?;
        let mut dir = c.out_dir.display().to_string();
        doc.get("output", "dir", &mut dir)?;
        c.out_dir = PathBuf::from(dir);
        doc.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file and applies the `BNLAB_SEED` override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_ini_str(&std::fs::read_to_string(path)?)?.with_env()
    }

    pub fn with_env(mut self) -> Result<Self> {
        if let Some(seed) = env_seed()? {
            self.seed = seed;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if self.dim < 3 || self.horizon == 0 || self.n_samples < 2 {
            return bad("need dim >= 3, horizon >= 1 and at least 2 samples".into());
        }
        if !(self.x_norm > 0.0 && self.y_norm > 0.0) {
            return bad("data norms must be positive".into());
        }
        if self.depth < 2 || self.width == 0 {
            return bad("need depth >= 2 and a positive width".into());
        }
        if let Some(l) = self.layer {
            if l == 0 || l >= self.depth {
                return bad(format!("layer must be a hidden layer in 1..{}, got {l}", self.depth));
            }
        }
        if self.orbit_pairs < 2 || self.pca_paths == 0 {
            return bad("need at least 2 orbit pairs and 1 PCA path".into());
        }
        if !(self.rank_threshold > 0.0 && self.fit_cut > 0.0) {
            return bad("rank_threshold and fit_cut must be positive".into());
        }
        self.train.validate()
    }

    pub fn to_ini_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "noise_scale = {}", self.noise_scale);
        let _ = writeln!(s, "inner_eta = {}", self.inner_eta);
        let _ = writeln!(s, "n_samples = {}", self.n_samples);
        let _ = writeln!(s, "x_norm = {}", self.x_norm);
        let _ = writeln!(s, "y_norm = {}\n", self.y_norm);
        write_train(&mut s, &self.train, self.scheme);
        let _ = writeln!(s, "init_seed = {}", self.init_seed);
        let _ = writeln!(s, "\n[sweep]");
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "rank_threshold = {}", self.rank_threshold);
        let _ = writeln!(s, "fit_cut = {}", self.fit_cut);
        let layer = self.layer.map_or("auto".to_string(), |l| l.to_string());
        let _ = writeln!(s, "layer = {layer}");
        let _ = writeln!(s, "orbit_pairs = {}", self.orbit_pairs);
        let _ = writeln!(s, "pca_paths = {}", self.pca_paths);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        s
    }
}
