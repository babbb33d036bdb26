//! Run configuration files: `[model]`, `[data]`, `[training]` and `[map]`
//! sections of `key = value` lines. Unknown sections and keys are errors.

use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::TNorm;
use crate::grounding::DEFAULT_CAPACITY;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tnorm: TNorm,
    pub embedding_dim: usize,
    pub hidden: usize,
    /// Largest number of groundings allowed for a single rule.
    pub capacity: u64,
    /// Sampled zero targets per positive fact; 0 targets every unobserved atom.
    #[serde(default)]
    pub negatives: usize,
    pub training: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tnorm: TNorm::Product,
            embedding_dim: 10,
            hidden: 10,
            capacity: DEFAULT_CAPACITY,
            negatives: 0,
            training: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{value}`")))
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = RunConfig::default();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!("key `{k}` outside of any section")));
                }
                continue;
            };
            for (key, value) in props.iter() {
                cfg.set(section, key, value)?;
            }
        }
        cfg.training.validate()?;
        if cfg.embedding_dim == 0 || cfg.hidden == 0 || cfg.capacity == 0 {
            return Err(Error::Config("embedding_dim, hidden and capacity must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_str(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let t = &mut self.training;
        let s = section;
        match (section, key) {
            ("model", "tnorm") => self.tnorm = v.trim().parse()?,
            ("model", "embedding_dim") => self.embedding_dim = parse(s, key, v)?,
            ("model", "hidden") => self.hidden = parse(s, key, v)?,
            ("model", "capacity") => self.capacity = parse(s, key, v)?,
            ("data", "negatives") => self.negatives = parse(s, key, v)?,
            ("training", "mode") => t.mode = v.trim().parse()?,
            ("training", "alpha") => t.alpha = parse(s, key, v)?,
            ("training", "beta") => t.beta = parse(s, key, v)?,
            ("training", "lr_w") => t.lr_w = parse(s, key, v)?,
            ("training", "lr_lambda") => t.lr_lambda = parse(s, key, v)?,
            ("training", "optimizer") => t.optimizer = v.trim().parse()?,
            ("training", "max_iterations") => t.max_iterations = parse(s, key, v)?,
            ("training", "window") => t.window = parse(s, key, v)?,
            ("training", "tolerance") => t.tolerance = parse(s, key, v)?,
            ("training", "batch_size") => t.batch_size = parse(s, key, v)?,
            ("training", "seed") => t.seed = parse(s, key, v)?,
            ("training", "fill") => t.fill = v.trim().parse()?,
            ("training", "pretrain_iterations") => t.pretrain_iterations = parse(s, key, v)?,
            ("training", "warm_map_iterations") => t.warm_map_iterations = parse(s, key, v)?,
            ("training", "prior_bias") => t.prior_bias = parse(s, key, v)?,
            ("map", "step") => t.map.step = parse(s, key, v)?,
            ("map", "max_iters") => t.map.max_iters = parse(s, key, v)?,
            ("map", "tol") => t.map.tol = parse(s, key, v)?,
            ("map", "restarts") => t.map.restarts = parse(s, key, v)?,
            ("map", "seed") => t.map.seed = parse(s, key, v)?,
            ("model" | "data" | "training" | "map", _) => return Err(Error::Config(format!("unknown key `{key}` in [{section}]"))),
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal value.
    pub fn to_ini_string(&self) -> String {
        let t = &self.training;
        let fill = match t.fill {
            crate::train::FillPolicy::FromMap => "map",
            crate::train::FillPolicy::FromFnn => "fnn",
        };
        format!(
            "[model]\ntnorm = {}\nembedding_dim = {}\nhidden = {}\ncapacity = {}\n\n[data]\nnegatives = {}\n\n\
             [training]\nmode = {}\nalpha = {:?}\nbeta = {:?}\nlr_w = {:?}\nlr_lambda = {:?}\noptimizer = {}\n\
             max_iterations = {}\nwindow = {}\ntolerance = {:?}\nbatch_size = {}\nseed = {}\nfill = {fill}\n\
             pretrain_iterations = {}\nwarm_map_iterations = {}\nprior_bias = {}\n\n\
             [map]\nstep = {:?}\nmax_iters = {}\ntol = {:?}\nrestarts = {}\nseed = {}\n",
            self.tnorm,
            self.embedding_dim,
            self.hidden,
            self.capacity,
            self.negatives,
            format!("{:?}", t.mode).to_ascii_lowercase(),
            t.alpha,
            t.beta,
            t.lr_w,
            t.lr_lambda,
            format!("{:?}", t.optimizer).to_ascii_lowercase(),
            t.max_iterations,
            t.window,
            t.tolerance,
            t.batch_size,
            t.seed,
            t.pretrain_iterations,
            t.warm_map_iterations,
            t.prior_bias,
            t.map.step,
            t.map.max_iters,
            t.map.tol,
            t.map.restarts,
            t.map.seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{FillPolicy, Optimizer, TrainMode};

    #[test]
    fn parses_all_sections() {
        let cfg = RunConfig::from_str(
            "# comment\n[model]\ntnorm = lukasiewicz\nhidden=7\ncapacity = 50000000\n\
             [training]\nmode = contrastive\nalpha=0.5\nlr_lambda = 2\nbatch_size = 64\nseed = 9\nfill = fnn\noptimizer = adam\n\
             [map]\nstep = 0.05\nmax_iters = 100\ntol = 1e-6\nrestarts = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.tnorm, TNorm::Lukasiewicz);
        assert_eq!(cfg.hidden, 7);
        assert_eq!(cfg.capacity, 50_000_000);
        assert_eq!(cfg.training.mode, TrainMode::Contrastive);
        assert_eq!(cfg.training.alpha, 0.5);
        assert_eq!(cfg.training.lr_lambda, 2.0);
        assert_eq!(cfg.training.batch_size, 64);
        assert_eq!(cfg.training.fill, FillPolicy::FromFnn);
        assert_eq!(cfg.training.optimizer, Optimizer::Adam);
        assert_eq!(cfg.training.map.step, 0.05);
        assert_eq!(cfg.training.map.restarts, 3);
        assert_eq!(cfg.training.lr_w, 0.01);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        for text in [
            "[training]\nlearning_rate = 0.1\n",
            "[optimizer]\nlr = 1\n",
            "tnorm = product\n",
            "[model]\ntnorm = hamacher\n",
            "[training]\nalpha = -1\n",
            "[map]\nstep = fast\n",
            "[training]\nmax_iterations = -3\n",
        ] {
            assert!(matches!(RunConfig::from_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.training.lr_w = 0.1 + 0.2;
        cfg.training.map.tol = 1e-7;
        cfg.training.mode = TrainMode::Lagrangian;
        cfg.negatives = 4;
        cfg.training.prior_bias = true;
        let back = RunConfig::from_str(&cfg.to_ini_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
