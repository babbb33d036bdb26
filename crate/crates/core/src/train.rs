//! Alternating training: network forward, MAP solve, parameter step.
//!
//! Three update modes share one loop. `Cost` descends the local cost with
//! both quadratic pulls on `f_nn` (towards the targets and towards `y_M`),
//! `Contrastive` uses the difference form of the approximate likelihood, and
//! `Lagrangian` runs a saddle iteration in which `y` is a persistent primal
//! variable instead of a fresh MAP solution.
//!
//! In every mode the rule weights move along `Φ_c(y_t) − Φ_c(y_M) − βλ_c`,
//! where `y_t` is completed on untargeted atoms by the [`FillPolicy`].

use std::io::Write;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::grounding::{sample_batch, AtomBatch, AtomIndex, Batch, GroundedPotential};
use crate::logic::Fact;
use crate::map::{map_infer, map_infer_batch, map_objective, MapConfig, MapInit, MapResult};
use crate::network::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TrainMode {
    #[default]
    Cost,
    Contrastive,
    Lagrangian,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cost" => Ok(TrainMode::Cost),
            "contrastive" => Ok(TrainMode::Contrastive),
            "lagrangian" => Ok(TrainMode::Lagrangian),
            other => Err(Error::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

/// Source of values for atoms without a target when evaluating `Φ_c(y_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FillPolicy {
    #[default]
    FromMap,
    FromFnn,
}

impl std::str::FromStr for FillPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "map" | "from_map" => Ok(FillPolicy::FromMap),
            "fnn" | "from_fnn" => Ok(FillPolicy::FromFnn),
            other => Err(Error::Config(format!("unknown fill policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub alpha: f64,
    pub beta: f64,
    pub lr_w: f64,
    pub lr_lambda: f64,
    pub optimizer: Optimizer,
    pub max_iterations: usize,
    /// Convergence is declared when the relative cost change over this many
    /// iterations falls below `tolerance`.
    pub window: usize,
    pub tolerance: f64,
    /// Grounding tuples per rule and atoms per step; 0 trains on everything.
    pub batch_size: usize,
    pub seed: u64,
    pub fill: FillPolicy,
    /// Iterations at the start with λ held fixed and no rule statistics.
    pub pretrain_iterations: usize,
    /// If positive, each step's MAP starts from the previous solution and runs
    /// at most this many iterations; the full budget is spent once at the end.
    pub warm_map_iterations: usize,
    /// Start each predicate's output at the mean of its targets instead of 0.5.
    #[serde(default)]
    pub prior_bias: bool,
    pub map: MapConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Cost,
            alpha: 0.0,
            beta: 0.0,
            lr_w: 0.01,
            lr_lambda: 0.1,
            optimizer: Optimizer::Sgd,
            max_iterations: 2000,
            window: 10,
            tolerance: 1e-5,
            batch_size: 0,
            seed: 0,
            fill: FillPolicy::FromMap,
            pretrain_iterations: 0,
            warm_map_iterations: 0,
            prior_bias: false,
            map: MapConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !nonneg(self.alpha) || !nonneg(self.beta) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if !pos(self.lr_w) || !pos(self.lr_lambda) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("convergence window must be positive".into()));
        }
        if !nonneg(self.tolerance) {
            return Err(Error::Config("tolerance must be non-negative".into()));
        }
        self.map.validate()
    }
}

/// Partial assignment of target values, sorted by atom index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTargets {
    entries: Vec<(usize, f64)>,
}

impl TrainTargets {
    pub fn new(mut entries: Vec<(usize, f64)>, n: usize) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Config(format!("atom {} targeted twice", w[0].0)));
            }
        }
        for &(i, v) in &entries {
            if i >= n {
                return Err(Error::UnknownAtom(format!("index {i} of {n}")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain { value: v });
            }
        }
        Ok(TrainTargets { entries })
    }

    pub fn from_facts(facts: &[Fact], index: &AtomIndex) -> Result<Self> {
        let entries = facts
            .iter()
            .map(|f| {
                index
                    .index_of(&f.atom)
                    .map(|i| (i, f.value))
                    .ok_or_else(|| Error::UnknownAtom(f.atom.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        TrainTargets::new(entries, index.n())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `y_t` with untargeted atoms copied from `fill`.
    pub fn complete(&self, fill: &[f64]) -> Vec<f64> {
        let mut y = fill.to_vec();
        for &(i, v) in &self.entries {
            y[i] = v;
        }
        y
    }
}

/// Everything the loop reads but never changes.
#[derive(Clone, Copy)]
pub struct Model<'a> {
    pub index: &'a AtomIndex,
    pub potentials: &'a [GroundedPotential],
    pub network: &'a Network,
    pub features: Option<&'a Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub cost: f64,
    pub lambda: Vec<f64>,
    /// Empty during pretraining.
    pub phi_t: Vec<f64>,
    pub phi_m: Vec<f64>,
    pub grad_w: f64,
    pub grad_lambda: f64,
    pub map_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rules: usize,
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string(), "cost".to_string()];
        for prefix in ["lambda", "phi_t", "phi_m"] {
            header.extend((0..self.rules).map(|c| format!("{prefix}_{c}")));
        }
        header.extend(["grad_w", "grad_lambda", "map_iterations"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), r.cost.to_string()];
            row.extend(r.lambda.iter().map(f64::to_string));
            for phi in [&r.phi_t, &r.phi_m] {
                if phi.is_empty() {
                    row.extend(std::iter::repeat(String::new()).take(self.rules));
                } else {
                    row.extend(phi.iter().map(f64::to_string));
                }
            }
            row.push(r.grad_w.to_string());
            row.push(r.grad_lambda.to_string());
            row.push(r.map_iterations.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub map: MapResult,
    pub trace: TrainTrace,
    pub converged: bool,
}

/// Ascent direction for one rule weight.
pub fn lambda_gradient(phi_t: f64, phi_m: f64, lambda: f64, beta: f64) -> f64 {
    phi_t - phi_m - beta * lambda
}

fn check_lengths(n: usize, vs: &[&[f64]]) -> Result<()> {
    for v in vs {
        if v.len() != n {
            return Err(Error::Shape(format!("vector of {} entries, expected {n}", v.len())));
        }
    }
    Ok(())
}

/// Local cost around the current MAP solution; `y_tc` is the completed target
/// vector. The rule term enters as `Σ λ_c (Φ_c(y_M) − Φ_c(y_t))`, so descending
/// it in `λ` is ascending `Φ_c(y_t) − Φ_c(y_M)`.
#[allow(clippy::too_many_arguments)]
pub fn cost_function(
    targets: &TrainTargets,
    y_tc: &[f64],
    y_m: &[f64],
    f_nn: &[f64],
    params: &ParamStore,
    alpha: f64,
    beta: f64,
    potentials: &[GroundedPotential],
) -> Result<f64> {
    check_lengths(f_nn.len(), &[y_tc, y_m])?;
    let target_term: f64 = targets.entries.iter().map(|&(i, v)| 0.5 * (v - f_nn[i]).powi(2)).sum();
    let map_term: f64 = y_m.iter().zip(f_nn).map(|(a, b)| 0.5 * (a - b).powi(2)).sum();
    let rules: f64 = potentials
        .iter()
        .zip(&params.lambda)
        .map(|(p, &l)| if l == 0.0 { 0.0 } else { l * (p.eval(y_m) - p.eval(y_tc)) })
        .sum();
    let prior = alpha * params.half_sq_norm() + 0.5 * beta * params.lambda.iter().map(|l| l * l).sum::<f64>();
    Ok(prior + target_term + map_term + rules)
}

/// `Σ_c λ_c (Φ_c(y_M) − Φ_c(y_t)) + Σ_i (φ_i(y_M) − φ_i(y_t))` with
/// `φ_i(y) = −½ (y_i − f_i)²`.
pub fn contrastive_loss(y_tc: &[f64], y_m: &[f64], f_nn: &[f64], lambda: &[f64], potentials: &[GroundedPotential]) -> Result<f64> {
    check_lengths(f_nn.len(), &[y_tc, y_m])?;
    let rules: f64 = potentials
        .iter()
        .zip(lambda)
        .map(|(p, &l)| if l == 0.0 { 0.0 } else { l * (p.eval(y_m) - p.eval(y_tc)) })
        .sum();
    let evidence: f64 = (0..f_nn.len())
        .map(|i| -0.5 * (y_m[i] - f_nn[i]).powi(2) + 0.5 * (y_tc[i] - f_nn[i]).powi(2))
        .sum();
    Ok(rules + evidence)
}

/// Result of one saddle step on `(y, λ)`; `f_seed` is `∂/∂f_nn` of the
/// network-side cost at the pre-step `y`.
#[derive(Debug, Clone)]
pub struct LagrangianStep {
    pub residuals: Vec<f64>,
    pub phi_t: Vec<f64>,
    pub phi_y: Vec<f64>,
    pub f_seed: Vec<f64>,
}

/// One simultaneous step: `y` descends `(y − f) − Σ λ ∇ψ(y)` and is clipped
/// to the box, `λ` ascends the residual `ψ(y_t) − ψ(y) − βλ`.
#[allow(clippy::too_many_arguments)]
pub fn lagrangian_step(
    y: &mut [f64],
    lambda: &mut [f64],
    targets: &TrainTargets,
    f_nn: &[f64],
    potentials: &[GroundedPotential],
    fill: FillPolicy,
    step_y: f64,
    lr_lambda: f64,
    beta: f64,
) -> Result<LagrangianStep> {
    check_lengths(f_nn.len(), &[y])?;
    if lambda.len() != potentials.len() {
        return Err(Error::Shape(format!("{} weights for {} rules", lambda.len(), potentials.len())));
    }
    let y_tc = targets.complete(match fill {
        FillPolicy::FromMap => y,
        FillPolicy::FromFnn => f_nn,
    });
    let mut grad: Vec<f64> = y.iter().zip(f_nn).map(|(a, b)| a - b).collect();
    let mut phi_y = Vec::with_capacity(potentials.len());
    let mut ascent = vec![0.0; y.len()];
    for (p, &l) in potentials.iter().zip(lambda.iter()) {
        phi_y.push(if l == 0.0 { p.eval(y) } else { p.eval_grad(y, l, &mut ascent) });
    }
    for (g, a) in grad.iter_mut().zip(&ascent) {
        *g -= a;
    }
    let phi_t: Vec<f64> = potentials.iter().map(|p| p.eval(&y_tc)).collect();
    let mut f_seed: Vec<f64> = f_nn.iter().zip(y.iter()).map(|(f, a)| f - a).collect();
    for &(i, v) in targets.entries() {
        f_seed[i] += f_nn[i] - v;
    }
    let residuals: Vec<f64> = (0..lambda.len()).map(|c| lambda_gradient(phi_t[c], phi_y[c], lambda[c], beta)).collect();
    if grad.iter().chain(&residuals).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lagrangian step".into()));
    }
    for (v, g) in y.iter_mut().zip(&grad) {
        *v = (*v - step_y * g).clamp(0.0, 1.0);
    }
    for (l, r) in lambda.iter_mut().zip(&residuals) {
        *l += lr_lambda * r;
    }
    Ok(LagrangianStep { residuals, phi_t, phi_y, f_seed })
}

/// Per-rule ascent directions for λ measured on a batch.
pub fn batch_lambda_gradient(y_tc: &[f64], y_m: &[f64], lambda: &[f64], beta: f64, potentials: &[GroundedPotential], batch: &Batch) -> Vec<f64> {
    potentials
        .iter()
        .zip(lambda)
        .map(|(p, &l)| {
            let rb = &batch.rules[p.rule_id()];
            lambda_gradient(p.eval_batch(y_tc, rb), p.eval_batch(y_m, rb), l, beta)
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Adam {
    t: i32,
    t_l: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    m_l: Vec<f64>,
    v_l: Vec<f64>,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(params: &ParamStore) -> Self {
        let m: Vec<Array2<f64>> = (0..params.len()).map(|i| Array2::zeros(params.tensor(i).raw_dim())).collect();
        Adam {
            t: 0,
            t_l: 0,
            v: m.clone(),
            m,
            m_l: vec![0.0; params.lambda.len()],
            v_l: vec![0.0; params.lambda.len()],
        }
    }

    fn step(&mut self, params: &mut ParamStore, lr_w: f64, lr_lambda: Option<f64>) {
        self.t += 1;
        let c1 = 1.0 - ADAM_B1.powi(self.t);
        let c2 = 1.0 - ADAM_B2.powi(self.t);
        for i in 0..params.len() {
            let g = params.grad(i).clone();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(&mut *m).and(&mut *v).and(&g).for_each(|m, v, &g| {
                *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * g;
                *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * g * g;
            });
            ndarray::Zip::from(params.tensor_mut(i)).and(&*m).and(&*v).for_each(|w, &m, &v| {
                *w -= lr_w * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
            });
        }
        if let Some(lr) = lr_lambda {
            self.t_l += 1;
            let c1 = 1.0 - ADAM_B1.powi(self.t_l);
            let c2 = 1.0 - ADAM_B2.powi(self.t_l);
            for c in 0..params.lambda.len() {
                let g = params.lambda_grad[c];
                self.m_l[c] = ADAM_B1 * self.m_l[c] + (1.0 - ADAM_B1) * g;
                self.v_l[c] = ADAM_B2 * self.v_l[c] + (1.0 - ADAM_B2) * g * g;
                params.lambda[c] -= lr * (self.m_l[c] / c1) / ((self.v_l[c] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// What one iteration produced; `lambda_step` is the applied change of λ.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub cost: f64,
    pub f_nn: Vec<f64>,
    pub y_m: Vec<f64>,
    pub phi_t: Vec<f64>,
    pub phi_m: Vec<f64>,
    pub lambda_step: Vec<f64>,
    pub map_iterations: usize,
}

/// Owns the parameters of one run and advances it one iteration at a time.
#[derive(Clone)]
pub struct Trainer<'a> {
    model: Model<'a>,
    targets: &'a TrainTargets,
    pub cfg: TrainConfig,
    pub params: ParamStore,
    rng: ChaCha8Rng,
    adam: Option<Adam>,
    y_prev: Option<Vec<f64>>,
    atoms: Vec<usize>,
    iteration: usize,
    pub trace: TrainTrace,
}

impl<'a> Trainer<'a> {
    /// Fresh run: `λ = 0` and network weights drawn from the seed.
    pub fn new(model: Model<'a>, targets: &'a TrainTargets, cfg: TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new(model.potentials.len());
        model.network.init_params(model.index, &mut params, &mut rng)?;
        if cfg.prior_bias {
            let rates: Vec<f64> = model
                .index
                .predicates()
                .iter()
                .map(|p| {
                    let (sum, count) = targets
                        .entries()
                        .iter()
                        .filter(|(i, _)| p.range().contains(i))
                        .fold((0.0, 0usize), |(s, c), &(_, v)| (s + v, c + 1));
                    if count == 0 { 0.5 } else { sum / count as f64 }
                })
                .collect();
            model.network.set_output_bias(model.index, &mut params, &rates)?;
        }
        Trainer::resume(model, targets, cfg, params, rng)
    }

    /// Continues from existing parameters; `rng` drives batch sampling.
    pub fn resume(model: Model<'a>, targets: &'a TrainTargets, cfg: TrainConfig, mut params: ParamStore, rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        model.network.validate(model.index)?;
        if targets.is_empty() {
            return Err(Error::Config("no training targets".into()));
        }
        if let Some(&(i, _)) = targets.entries().last() {
            if i >= model.index.n() {
                return Err(Error::UnknownAtom(format!("index {i} of {}", model.index.n())));
            }
        }
        if params.lambda.len() != model.potentials.len() {
            return Err(Error::Shape(format!("{} weights for {} rules", params.lambda.len(), model.potentials.len())));
        }
        params.ensure_grads();
        let adam = (cfg.optimizer == Optimizer::Adam).then(|| Adam::new(&params));
        Ok(Trainer {
            model,
            targets,
            atoms: (0..model.index.n()).collect(),
            trace: TrainTrace {
                rules: model.potentials.len(),
                records: Vec::new(),
            },
            cfg,
            params,
            rng,
            adam,
            y_prev: None,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn map_config(&self) -> MapConfig {
        let mut cfg = self.cfg.map.clone();
        if self.cfg.warm_map_iterations > 0 && self.iteration >= self.cfg.pretrain_iterations {
            cfg.max_iters = self.cfg.warm_map_iterations;
            if let Some(y) = &self.y_prev {
                cfg.init = MapInit::FromVector(y.clone());
            }
        }
        cfg
    }

    /// Runs one iteration and appends it to the trace.
    pub fn step(&mut self) -> Result<StepReport> {
        let model = self.model;
        let n = model.index.n();
        let pretraining = self.iteration < self.cfg.pretrain_iterations;
        let batch = if self.cfg.batch_size > 0 {
            sample_batch(&mut self.rng, model.potentials, &self.atoms, self.cfg.batch_size)
        } else {
            Batch::full(model.potentials.len())
        };
        let full = batch.is_full();
        let (batch_atoms, scale): (Option<Vec<bool>>, f64) = match &batch.atoms {
            AtomBatch::All => (None, 1.0),
            AtomBatch::Subset(ids) => {
                let mut mask = vec![false; n];
                ids.iter().for_each(|&i| mask[i] = true);
                (Some(mask), n as f64 / ids.len() as f64)
            }
        };
        let in_batch = |i: usize| batch_atoms.as_ref().map_or(true, |m| m[i]);

        let mut tape = Tape::new();
        let f_node = model.network.forward(&mut tape, &self.params, model.index, model.features)?;
        let f_nn: Vec<f64> = tape.value(f_node).column(0).to_vec();

        let lagrangian = self.cfg.mode == TrainMode::Lagrangian;
        let (y_m, map_iterations) = if lagrangian {
            (self.y_prev.clone().unwrap_or_else(|| f_nn.clone()), 0)
        } else {
            let mcfg = self.map_config();
            let r = if full {
                map_infer(&f_nn, &self.params.lambda, model.potentials, &mcfg)?
            } else {
                map_infer_batch(&f_nn, &self.params.lambda, model.potentials, &mcfg, &batch)?
            };
            (r.y, r.iterations)
        };
        let y_tc = self.targets.complete(match self.cfg.fill {
            FillPolicy::FromMap => &y_m,
            FillPolicy::FromFnn => &f_nn,
        });

        let (phi_t, phi_m): (Vec<f64>, Vec<f64>) = if pretraining {
            (Vec::new(), Vec::new())
        } else {
            model
                .potentials
                .iter()
                .map(|p| {
                    let rb = &batch.rules[p.rule_id()];
                    (p.eval_batch(&y_tc, rb), p.eval_batch(&y_m, rb))
                })
                .unzip()
        };

        // ∂cost/∂f_nn and the cost value, restricted to the batch atoms
        let mut seed = vec![0.0; n];
        let mut cost = 0.0;
        let mut y_next = None;
        match self.cfg.mode {
            TrainMode::Cost | TrainMode::Lagrangian => {
                for &(i, v) in self.targets.entries() {
                    if in_batch(i) {
                        seed[i] += scale * (f_nn[i] - v);
                        cost += scale * 0.5 * (v - f_nn[i]).powi(2);
                    }
                }
                for i in (0..n).filter(|&i| in_batch(i)) {
                    seed[i] += scale * (f_nn[i] - y_m[i]);
                    cost += scale * 0.5 * (y_m[i] - f_nn[i]).powi(2);
                }
            }
            TrainMode::Contrastive => {
                for i in (0..n).filter(|&i| in_batch(i)) {
                    seed[i] = scale * (y_m[i] - y_tc[i]);
                    cost += scale * (0.5 * (y_tc[i] - f_nn[i]).powi(2) - 0.5 * (y_m[i] - f_nn[i]).powi(2));
                }
            }
        }
        if lagrangian {
            let mut y = y_m.clone();
            let mut lambda = self.params.lambda.clone();
            lagrangian_step(
                &mut y,
                &mut lambda,
                self.targets,
                &f_nn,
                model.potentials,
                self.cfg.fill,
                self.cfg.map.step,
                self.cfg.lr_lambda,
                self.cfg.beta,
            )?;
            y_next = Some(y);
        }

        self.params.zero_grads();
        tape.backward_seeded(f_node, Array2::from_shape_vec((n, 1), seed).expect("n × 1"), &mut self.params)?;
        self.params.add_weight_decay(self.cfg.alpha);
        cost += self.cfg.alpha * self.params.half_sq_norm();
        cost += 0.5 * self.cfg.beta * self.params.lambda.iter().map(|l| l * l).sum::<f64>();
        if !pretraining {
            for c in 0..self.params.lambda.len() {
                let l = self.params.lambda[c];
                cost += l * (phi_m[c] - phi_t[c]);
                self.params.lambda_grad[c] = -lambda_gradient(phi_t[c], phi_m[c], l, self.cfg.beta);
            }
        }
        if !cost.is_finite() {
            return Err(Error::NonFinite("training cost".into()));
        }
        let grad_w = self.params.grad_norm();
        let grad_lambda = self.params.lambda_grad.iter().map(|g| g * g).sum::<f64>().sqrt();

        let before = self.params.lambda.clone();
        let lr_lambda = (!pretraining).then_some(self.cfg.lr_lambda);
        match &mut self.adam {
            Some(adam) => adam.step(&mut self.params, self.cfg.lr_w, lr_lambda),
            None => {
                self.params.descend(self.cfg.lr_w);
                if let Some(lr) = lr_lambda {
                    for (l, g) in self.params.lambda.iter_mut().zip(&self.params.lambda_grad) {
                        *l -= lr * g;
                    }
                }
            }
        }
        let lambda_step: Vec<f64> = self.params.lambda.iter().zip(&before).map(|(a, b)| a - b).collect();

        self.iteration += 1;
        self.trace.records.push(TraceRecord {
            iteration: self.iteration,
            cost,
            lambda: self.params.lambda.clone(),
            phi_t: phi_t.clone(),
            phi_m: phi_m.clone(),
            grad_w,
            grad_lambda,
            map_iterations,
        });
        self.y_prev = Some(y_next.unwrap_or_else(|| y_m.clone()));
        Ok(StepReport {
            cost,
            f_nn,
            y_m,
            phi_t,
            phi_m,
            lambda_step,
            map_iterations,
        })
    }

    /// True once the cost moved by less than `tolerance` (relative) over the
    /// last `window` iterations.
    pub fn converged(&self) -> bool {
        let r = &self.trace.records;
        let w = self.cfg.window;
        if r.len() <= w || self.iteration <= self.cfg.pretrain_iterations + w {
            return false;
        }
        let now = r[r.len() - 1].cost;
        let then = r[r.len() - 1 - w].cost;
        (now - then).abs() <= self.cfg.tolerance * then.abs().max(f64::MIN_POSITIVE)
    }

    /// MAP solution under the current parameters with the full solver budget.
    pub fn final_map(&self) -> Result<MapResult> {
        let model = self.model;
        let f_nn = crate::network::predict_fnn(&self.params, model.network, model.index, model.features)?;
        if self.cfg.mode == TrainMode::Lagrangian {
            if let Some(y) = &self.y_prev {
                let objective = map_objective(y, &f_nn, &self.params.lambda, model.potentials);
                return Ok(MapResult {
                    y: y.clone(),
                    objective,
                    iterations: self.iteration,
                    converged: self.converged(),
                });
            }
        }
        let mut cfg = self.cfg.map.clone();
        if self.cfg.warm_map_iterations > 0 {
            if let Some(y) = &self.y_prev {
                cfg.init = MapInit::FromVector(y.clone());
            }
        }
        map_infer(&f_nn, &self.params.lambda, model.potentials, &cfg)
    }

    /// Iterates until convergence or `max_iterations`, then solves MAP once more.
    pub fn run(mut self) -> Result<TrainOutcome> {
        let mut converged = false;
        while self.iteration < self.cfg.max_iterations {
            self.step()?;
            if self.converged() {
                converged = true;
                break;
            }
        }
        let map = self.final_map()?;
        Ok(TrainOutcome {
            params: self.params,
            map,
            trace: self.trace,
            converged,
        })
    }
}

/// Full training run from a fresh initialisation.
pub fn train(model: Model<'_>, targets: &TrainTargets, cfg: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(model, targets, cfg.clone())?.run()
}

/// [`train`] with sampled batches; `batch_size` must be positive.
pub fn train_minibatch(model: Model<'_>, targets: &TrainTargets, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("mini-batch training needs batch_size > 0".into()));
    }
    train(model, targets, cfg)
}
