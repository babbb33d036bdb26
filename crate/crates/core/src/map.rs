//! MAP inference: `y_M = argmax_y −½‖y − f_nn‖² + Σ_c λ_c Φ_c(y)` over `[0,1]^n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{Batch, GroundedPotential};

const MAX_HALVINGS: usize = 20;
const MAX_BUNDLE: usize = 6;
const MAX_COORDINATES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum MapInit {
    #[default]
    FromFnn,
    FromVector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    #[serde(default)]
    pub init: MapInit,
    /// Extra starts after the configured one: all-ones, all-zeros, then
    /// random Boolean corners alternating with uniform interior points.
    /// The best objective wins.
    #[serde(default)]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            step: 0.1,
            max_iters: 500,
            tol: 1e-4,
            init: MapInit::FromFnn,
            restarts: 0,
            seed: 0,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || self.max_iters == 0 || !(self.tol >= 0.0) {
            return Err(Error::Config(format!(
                "map settings need step > 0, max_iters >= 1, tol >= 0 (got {}, {}, {})",
                self.step, self.max_iters, self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `−½‖y − f_nn‖² + Σ_c λ_c Φ_c(y)`.
pub fn map_objective(y: &[f64], f_nn: &[f64], lambda: &[f64], potentials: &[GroundedPotential]) -> f64 {
    objective(y, f_nn, lambda, potentials, None)
}

fn objective(y: &[f64], f_nn: &[f64], lambda: &[f64], potentials: &[GroundedPotential], batch: Option<&Batch>) -> f64 {
    let mut v = -0.5 * y.iter().zip(f_nn).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    for (p, &l) in potentials.iter().zip(lambda) {
        if l != 0.0 {
            v += l * match batch {
                Some(b) => p.eval_batch(y, &b.rules[p.rule_id()]),
                None => p.eval(y),
            };
        }
    }
    v
}

fn objective_grad(
    y: &[f64],
    f_nn: &[f64],
    lambda: &[f64],
    potentials: &[GroundedPotential],
    batch: Option<&Batch>,
    grad: &mut [f64],
) -> f64 {
    let mut v = 0.0;
    for ((g, a), b) in grad.iter_mut().zip(y).zip(f_nn) {
        *g = b - a;
        v -= 0.5 * (a - b) * (a - b);
    }
    for (p, &l) in potentials.iter().zip(lambda) {
        if l != 0.0 {
            v += l * match batch {
                Some(bt) => p.eval_grad_batch(y, &bt.rules[p.rule_id()], l, grad),
                None => p.eval_grad(y, l, grad),
            };
        }
    }
    v
}

/// Projected gradient ascent from the configured start, with step halving
/// whenever a trial step would lower the objective.
pub fn map_infer(f_nn: &[f64], lambda: &[f64], potentials: &[GroundedPotential], cfg: &MapConfig) -> Result<MapResult> {
    solve(f_nn, lambda, potentials, cfg, None)
}

/// MAP restricted to the batch's grounding tuples.
pub fn map_infer_batch(
    f_nn: &[f64],
    lambda: &[f64],
    potentials: &[GroundedPotential],
    cfg: &MapConfig,
    batch: &Batch,
) -> Result<MapResult> {
    solve(f_nn, lambda, potentials, cfg, Some(batch))
}

fn solve(
    f_nn: &[f64],
    lambda: &[f64],
    potentials: &[GroundedPotential],
    cfg: &MapConfig,
    batch: Option<&Batch>,
) -> Result<MapResult> {
    cfg.validate()?;
    if lambda.len() != potentials.len() {
        return Err(Error::Shape(format!("{} weights for {} rules", lambda.len(), potentials.len())));
    }
    let n = f_nn.len();
    let y0: Vec<f64> = match &cfg.init {
        MapInit::FromFnn => f_nn.to_vec(),
        MapInit::FromVector(v) if v.len() == n => v.clone(),
        MapInit::FromVector(v) => return Err(Error::Shape(format!("initial y has {} entries, expected {n}", v.len()))),
    };
    let mut best = ascend(y0, f_nn, lambda, potentials, cfg, batch)?;
    for start in restart_points(n, cfg.restarts, cfg.seed) {
        let r = ascend(start, f_nn, lambda, potentials, cfg, batch)?;
        if r.objective > best.objective {
            best = r;
        }
    }
    Ok(best)
}

fn restart_points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if n == 0 {
        return starts;
    }
    let total_corners = if n < 63 { 1u64 << n } else { u64::MAX };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    for k in 0..count {
        let start: Vec<f64> = match k {
            0 => vec![1.0; n],
            1 => vec![0.0; n],
            _ if k % 2 == 0 && (seen.len() as u64) < total_corners => loop {
                let c: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
                if !seen.contains(&bits(&c)) {
                    break c;
                }
            },
            _ => (0..n).map(|_| rng.gen::<f64>()).collect(),
        };
        if k < 2 || k % 2 == 0 && start.iter().all(|&v| v == 0.0 || v == 1.0) {
            seen.insert(bits(&start));
        }
        starts.push(start);
    }
    starts
}

fn bits(c: &[f64]) -> Vec<bool> {
    c.iter().map(|&v| v > 0.5).collect()
}

fn ascend(
    mut y: Vec<f64>,
    f_nn: &[f64],
    lambda: &[f64],
    potentials: &[GroundedPotential],
    cfg: &MapConfig,
    batch: Option<&Batch>,
) -> Result<MapResult> {
    let n = f_nn.len();
    y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let mut grad = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut value = f64::NAN;
    let mut used = 0;
    for iter in 1..=cfg.max_iters {
        used = iter;
        value = objective_grad(&y, f_nn, lambda, potentials, batch, &mut grad);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("map objective".into()));
        }
        project(&y, &mut grad);
        if norm(&grad) <= cfg.tol {
            return Ok(MapResult { y, objective: value, iterations: iter, converged: true });
        }
        // Near a kink the plain step can fail for every halving; gradients
        // sampled across the kink are then bundled and the search direction
        // becomes the min-norm element of their hull.
        let mut bundle = vec![grad.clone()];
        let mut dir = grad.clone();
        let mut accepted = false;
        for round in 0..=MAX_BUNDLE {
            if round > 0 && norm(&dir) <= cfg.tol {
                return Ok(MapResult { y, objective: value, iterations: iter, converged: true });
            }
            match line_search(&y, &dir, value, cfg.step, &mut trial, f_nn, lambda, potentials, batch)? {
                Search::Accepted(v) => {
                    std::mem::swap(&mut y, &mut trial);
                    value = v;
                    accepted = true;
                    break;
                }
                Search::Rejected(probe) if round < MAX_BUNDLE => {
                    let mut g = vec![0.0; n];
                    objective_grad(&probe, f_nn, lambda, potentials, batch, &mut g);
                    project(&y, &mut g);
                    bundle.push(g);
                    dir = min_norm_hull(&bundle);
                }
                Search::Rejected(_) => {}
            }
        }
        // Last resort on a discontinuity: move one coordinate at a time,
        // largest gradient entries first.
        if !accepted {
            let mut order: Vec<usize> = (0..n).filter(|&i| grad[i] != 0.0).collect();
            order.sort_by(|&i, &j| grad[j].abs().total_cmp(&grad[i].abs()));
            for &i in order.iter().take(MAX_COORDINATES) {
                let mut e = vec![0.0; n];
                e[i] = grad[i];
                if let Search::Accepted(v) = line_search(&y, &e, value, cfg.step, &mut trial, f_nn, lambda, potentials, batch)? {
                    std::mem::swap(&mut y, &mut trial);
                    value = v;
                    accepted = true;
                    break;
                }
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(MapResult { y, objective: value, iterations: used, converged: false })
}

enum Search {
    Accepted(f64),
    Rejected(Vec<f64>),
}

/// Backtracking along `dir`; on success the new point is left in `trial`.
#[allow(clippy::too_many_arguments)]
fn line_search(
    y: &[f64],
    dir: &[f64],
    value: f64,
    step: f64,
    trial: &mut [f64],
    f_nn: &[f64],
    lambda: &[f64],
    potentials: &[GroundedPotential],
    batch: Option<&Batch>,
) -> Result<Search> {
    let mut step = step;
    let mut first: Option<Vec<f64>> = None;
    for _ in 0..=MAX_HALVINGS {
        for ((t, &a), &g) in trial.iter_mut().zip(y).zip(dir) {
            *t = (a + step * g).clamp(0.0, 1.0);
        }
        let v = objective(trial, f_nn, lambda, potentials, batch);
        if !v.is_finite() {
            return Err(Error::NonFinite("map objective".into()));
        }
        if v > value || (v == value && trial != y) {
            return Ok(Search::Accepted(v));
        }
        if first.is_none() {
            first = Some(trial.to_vec());
        }
        step *= 0.5;
    }
    Ok(Search::Rejected(first.expect("at least one trial")))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Zeroes components that point out of the box at an active bound.
fn project(y: &[f64], g: &mut [f64]) {
    for (&a, g) in y.iter().zip(g.iter_mut()) {
        if (a <= 0.0 && *g < 0.0) || (a >= 1.0 && *g > 0.0) {
            *g = 0.0;
        }
    }
}

/// Minimum-norm point of the convex hull of `points` (Frank-Wolfe with exact
/// line search).
fn min_norm_hull(points: &[Vec<f64>]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = points
        .iter()
        .min_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
        .expect("non-empty")
        .clone();
    for _ in 0..1000 {
        let (i, _) = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, dot(&x, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        let diff: Vec<f64> = x.iter().zip(&points[i]).map(|(a, b)| a - b).collect();
        let gap = dot(&x, &diff);
        let dd = dot(&diff, &diff);
        if gap <= 1e-15 * (1.0 + dot(&x, &x)) || dd == 0.0 {
            break;
        }
        let theta = (gap / dd).clamp(0.0, 1.0);
        for (a, d) in x.iter_mut().zip(&diff) {
            *a -= theta * d;
        }
    }
    x
}

/// Norm of the gradient projected onto the feasible directions of the box.
pub fn projected_norm(y: &[f64], grad: &[f64]) -> f64 {
    y.iter()
        .zip(grad)
        .map(|(&a, &g)| if (a <= 0.0 && g < 0.0) || (a >= 1.0 && g > 0.0) { 0.0 } else { g * g })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzy::TNorm;
    use crate::grounding::{build_atom_index, ground_all, DEFAULT_CAPACITY};
    use crate::logic::parse_kb;
    use approx::assert_relative_eq;

    fn pots(src: &str, t: TNorm) -> Vec<GroundedPotential> {
        let kb = parse_kb(src).unwrap();
        let idx = build_atom_index(&kb).unwrap();
        ground_all(&kb, t, &idx, DEFAULT_CAPACITY).unwrap()
    }

    const PQ: &str = "domain d {a}. predicate P(d). predicate Q(d).\nrule forall x in d: P(x) -> Q(x).";

    #[test]
    fn objective_examples() {
        let f = [0.3, 0.6, 0.2];
        assert_eq!(map_objective(&f, &f, &[], &[]), 0.0);
        let y = [0.4, 0.6, 0.2];
        assert_relative_eq!(map_objective(&y, &f, &[], &[]), -0.005, epsilon = 1e-15);
        let kb = "domain people {mary, john}. domain cities {munich, london}.\n\
                  predicate A(people, cities). predicate B(people).\n\
                  rule forall v1 in people forall v2 in cities: not A(v1, v2) and B(v1).";
        let p = pots(kb, TNorm::Product);
        let y = [0.5, 0.5, 0.5, 0.5, 0.8, 0.8];
        assert_relative_eq!(map_objective(&y, &y, &[2.0], &p), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn zero_lambda_returns_fnn() {
        let p = pots(PQ, TNorm::Product);
        let f = [0.9, 0.1];
        let r = map_infer(&f, &[0.0], &p, &MapConfig::default()).unwrap();
        assert_eq!(r.y, f.to_vec());
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
    }

    #[test]
    fn single_atom_linear_potential_clamps() {
        let p = pots("domain d {a}. predicate P(d).\nrule forall x in d: P(x).", TNorm::Product);
        let r = map_infer(&[0.5], &[1.0], &p, &MapConfig::default()).unwrap();
        assert_eq!(r.y, vec![1.0]);
        assert!(r.converged);
    }

    #[test]
    fn two_atom_rule_matches_grid() {
        let p = pots(PQ, TNorm::Product);
        let f = [0.9, 0.1];
        let r = map_infer(&f, &[10.0], &p, &MapConfig::default()).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..=100 {
            for j in 0..=100 {
                best = best.max(map_objective(&[i as f64 / 100.0, j as f64 / 100.0], &f, &[10.0], &p));
            }
        }
        assert!((r.objective - best).abs() <= 1e-3 || r.objective > best, "{} vs {best}", r.objective);
        assert_relative_eq!(r.objective, map_objective(&r.y, &f, &[10.0], &p), epsilon = 1e-12);
    }

    #[test]
    fn fixed_point_is_kept() {
        let p = pots(PQ, TNorm::Product);
        // P <= Q already satisfies the rule, so f_nn is the maximizer
        let f = [0.2, 0.8];
        let r = map_infer(&f, &[5.0], &p, &MapConfig::default()).unwrap();
        assert_eq!(r.y, f.to_vec());
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn restarts_escape_a_plateau() {
        // Lukasiewicz conjunction is flat at zero around f_nn
        let p = pots("domain d {a}. predicate P(d). predicate Q(d).\nrule forall x in d: P(x) and Q(x).", TNorm::Lukasiewicz);
        let f = [0.4, 0.4];
        let single = map_infer(&f, &[5.0], &p, &MapConfig::default()).unwrap();
        assert_eq!(single.y, f.to_vec());
        let multi = map_infer(&f, &[5.0], &p, &MapConfig { restarts: 4, ..Default::default() }).unwrap();
        assert!(multi.objective > 4.0, "{multi:?}");
    }

    #[test]
    fn restart_points_cover_corners_then_interior() {
        let c = restart_points(2, 10, 1);
        assert_eq!(c.len(), 10);
        assert_eq!(c[0], vec![1.0; 2]);
        assert_eq!(c[1], vec![0.0; 2]);
        let corners: std::collections::HashSet<_> =
            c.iter().filter(|v| v.iter().all(|&x| x == 0.0 || x == 1.0)).map(|v| bits(v)).collect();
        assert_eq!(corners.len(), 4);
        assert!(c.iter().all(|v| v.iter().all(|x| (0.0..=1.0).contains(x))));
        assert!(c[3].iter().all(|&x| x > 0.0 && x < 1.0));
        assert_eq!(restart_points(3, 5, 9), restart_points(3, 5, 9));
    }

    #[test]
    fn min_norm_hull_examples() {
        let d = min_norm_hull(&[vec![1.0, 1.0], vec![-1.0, 1.0]]);
        assert_relative_eq!(d[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(d[1], 1.0, epsilon = 1e-12);
        let d = min_norm_hull(&[vec![2.0, 0.0], vec![3.0, 1.0]]);
        assert_eq!(d, vec![2.0, 0.0]);
    }

    #[test]
    fn iterates_stay_feasible_and_ascend() {
        let p = pots(PQ, TNorm::Lukasiewicz);
        let f = [0.95, 0.02];
        let mut prev = map_objective(&f, &f, &[50.0], &p);
        let mut y = f.to_vec();
        for _ in 0..30 {
            let cfg = MapConfig { max_iters: 1, init: MapInit::FromVector(y.clone()), ..Default::default() };
            let r = map_infer(&f, &[50.0], &p, &cfg).unwrap();
            assert!(r.y.iter().all(|v| (0.0..=1.0).contains(v)));
            let now = map_objective(&r.y, &f, &[50.0], &p);
            assert!(now >= prev - 1e-15);
            prev = now;
            y = r.y;
        }
    }

    #[test]
    fn bad_inputs() {
        let p = pots(PQ, TNorm::Product);
        assert!(matches!(map_infer(&[0.5, 0.5], &[], &p, &MapConfig::default()), Err(Error::Shape(_))));
        let cfg = MapConfig { step: 0.0, ..Default::default() };
        assert!(matches!(map_infer(&[0.5, 0.5], &[1.0], &p, &cfg), Err(Error::Config(_))));
        assert!(matches!(map_infer(&[0.5, 0.5], &[f64::NAN], &p, &MapConfig::default()), Err(Error::NonFinite(_))));
    }
}
