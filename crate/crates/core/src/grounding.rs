//! Grounding: the atom index shared by `y` and `f_nn`, and rule potentials
//! compiled into an expression template plus a grounding enumerator.
//!
//! A grounding tuple assigns one constant to each quantified variable, outer
//! variable first. Tuples are enumerated lexicographically in declaration order
//! of the domain constants; a tuple's linear id is its row-major position.
//!
//! Full evaluation walks the outer variables recursively and evaluates the
//! template on whole rows of the innermost variable at once. Batch evaluation
//! works tuple by tuple on a sorted sample.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;

// Instantiates the body once per t-norm so the inner loops see a constant.
macro_rules! per_tnorm {
    ($t:expr, |$k:ident| $body:expr) => {
        match $t {
            TNorm::Product => {
                let $k = TNorm::Product;
                $body
            }
            TNorm::Minimum => {
                let $k = TNorm::Minimum;
                $body
            }
            TNorm::Lukasiewicz => {
                let $k = TNorm::Lukasiewicz;
                $body
            }
        }
    };
}

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fuzzy::TNorm;
use crate::logic::{Formula, GroundAtom, KnowledgeBase, Quantifier, Term};

/// Default ceiling on the number of groundings of one rule (and on `n`).
pub const DEFAULT_CAPACITY: u64 = 10_000_000;

#[derive(Debug, Clone)]
pub struct PredicateLayout {
    pub name: String,
    pub offset: usize,
    pub domains: Vec<usize>,
    pub sizes: Vec<usize>,
    pub strides: Vec<usize>,
}

impl PredicateLayout {
    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Bijection between ground atoms and coordinates `0..n` of `y` / `f_nn`.
///
/// Predicates occupy consecutive blocks in declaration order; inside a block the
/// argument tuple is laid out row-major over the domain constant order.
#[derive(Debug, Clone)]
pub struct AtomIndex {
    predicates: Vec<PredicateLayout>,
    by_name: HashMap<String, usize>,
    domain_names: Vec<String>,
    constants: Vec<Vec<String>>,
    constant_pos: Vec<HashMap<String, usize>>,
    n: usize,
}

pub fn build_atom_index(kb: &KnowledgeBase) -> Result<AtomIndex> {
    AtomIndex::with_capacity(kb, DEFAULT_CAPACITY)
}

impl AtomIndex {
    pub fn with_capacity(kb: &KnowledgeBase, limit: u64) -> Result<Self> {
        let domain_names: Vec<String> = kb.domains.iter().map(|d| d.name.clone()).collect();
        let constants: Vec<Vec<String>> = kb.domains.iter().map(|d| d.constants.clone()).collect();
        let constant_pos = constants
            .iter()
            .map(|cs| cs.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect())
            .collect();
        let mut predicates = Vec::with_capacity(kb.predicates.len());
        let mut by_name = HashMap::new();
        let mut n: u128 = 0;
        for p in &kb.predicates {
            let mut domains = Vec::with_capacity(p.arity());
            let mut sizes = Vec::with_capacity(p.arity());
            for d in &p.argument_domains {
                let di = kb
                    .domain_index(d)
                    .ok_or_else(|| Error::Config(format!("predicate `{}` uses unknown domain `{d}`", p.name)))?;
                if kb.domains[di].constants.is_empty() {
                    return Err(Error::Config(format!("domain `{d}` is empty")));
                }
                domains.push(di);
                sizes.push(kb.domains[di].constants.len());
            }
            let mut strides = vec![1usize; sizes.len()];
            for k in (0..sizes.len().saturating_sub(1)).rev() {
                strides[k] = strides[k + 1] * sizes[k + 1];
            }
            let count: u128 = sizes.iter().map(|&s| s as u128).product();
            by_name.insert(p.name.clone(), predicates.len());
            predicates.push(PredicateLayout {
                name: p.name.clone(),
                offset: n as usize,
                domains,
                sizes,
                strides,
            });
            n += count;
            if n > limit as u128 {
                return Err(Error::Capacity {
                    what: "atom index".into(),
                    needed: n,
                    limit,
                });
            }
        }
        Ok(AtomIndex {
            predicates,
            by_name,
            domain_names,
            constants,
            constant_pos,
            n: n as usize,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn predicates(&self) -> &[PredicateLayout] {
        &self.predicates
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateLayout> {
        self.by_name.get(name).map(|&i| &self.predicates[i])
    }

    pub fn predicate_id(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn domain_constants(&self, domain: usize) -> &[String] {
        &self.constants[domain]
    }

    pub fn domain_name(&self, domain: usize) -> &str {
        &self.domain_names[domain]
    }

    pub fn domain_id(&self, name: &str) -> Option<usize> {
        self.domain_names.iter().position(|d| d == name)
    }

    pub fn constant_position(&self, domain: usize, constant: &str) -> Option<usize> {
        self.constant_pos[domain].get(constant).copied()
    }

    /// Coordinate of `pred(args...)` given constant positions.
    pub fn index_of_ids(&self, pred: usize, args: &[usize]) -> usize {
        let p = &self.predicates[pred];
        p.offset + args.iter().zip(&p.strides).map(|(a, s)| a * s).sum::<usize>()
    }

    pub fn index_of(&self, atom: &GroundAtom) -> Option<usize> {
        let pid = self.predicate_id(&atom.predicate)?;
        let p = &self.predicates[pid];
        if p.domains.len() != atom.args.len() {
            return None;
        }
        let mut idx = p.offset;
        for ((c, &d), s) in atom.args.iter().zip(&p.domains).zip(&p.strides) {
            idx += self.constant_position(d, c)? * s;
        }
        Some(idx)
    }

    /// Predicate id and constant positions of coordinate `i`.
    pub fn decode(&self, i: usize) -> (usize, Vec<usize>) {
        assert!(i < self.n, "atom {i} out of range");
        let pid = self.predicates.partition_point(|p| p.offset + p.len() <= i);
        let p = &self.predicates[pid];
        let mut rest = i - p.offset;
        let args = p
            .strides
            .iter()
            .map(|&s| {
                let a = rest / s;
                rest %= s;
                a
            })
            .collect();
        (pid, args)
    }

    pub fn atom(&self, i: usize) -> GroundAtom {
        let (pid, args) = self.decode(i);
        let p = &self.predicates[pid];
        GroundAtom {
            predicate: p.name.clone(),
            args: args
                .iter()
                .zip(&p.domains)
                .map(|(&a, &d)| self.constants[d][a].clone())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reducer {
    Mean,
    Max,
}

impl From<Quantifier> for Reducer {
    fn from(q: Quantifier) -> Self {
        match q {
            Quantifier::Forall => Reducer::Mean,
            Quantifier::Exists => Reducer::Max,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Level {
    pub var: String,
    pub reducer: Reducer,
    pub size: usize,
}

#[derive(Debug, Clone)]
enum Node {
    /// Coordinate = `base + sum(stride * tuple[level])`.
    Atom {
        base: usize,
        terms: Vec<(usize, usize)>,
    },
    Not(usize),
    And(usize, usize),
    Or(usize, usize),
    Implies(usize, usize),
}

/// One rule compiled into a template: quantifier levels (outer to inner) and a
/// postfix expression whose leaves address `y` through the grounding tuple.
#[derive(Debug, Clone)]
pub struct GroundedPotential {
    rule_id: usize,
    tnorm: TNorm,
    levels: Vec<Level>,
    nodes: Vec<Node>,
    groundings: u64,
    // per atom node: accumulated stride of each level
    level_strides: Vec<Vec<usize>>,
    atom_nodes: Vec<usize>,
}

pub fn ground_rule(
    rule_id: usize,
    rule: &Formula,
    kb: &KnowledgeBase,
    t: TNorm,
    index: &AtomIndex,
) -> Result<GroundedPotential> {
    GroundedPotential::compile(rule_id, rule, kb, t, index, DEFAULT_CAPACITY)
}

/// Grounds every rule of `kb` in order.
pub fn ground_all(kb: &KnowledgeBase, t: TNorm, index: &AtomIndex, limit: u64) -> Result<Vec<GroundedPotential>> {
    kb.rules
        .iter()
        .enumerate()
        .map(|(i, r)| GroundedPotential::compile(i, r, kb, t, index, limit))
        .collect()
}

impl GroundedPotential {
    pub fn compile(
        rule_id: usize,
        rule: &Formula,
        kb: &KnowledgeBase,
        tnorm: TNorm,
        index: &AtomIndex,
        limit: u64,
    ) -> Result<Self> {
        let (prefix, matrix) = rule.prenex();
        if matrix.contains_quantifier() {
            return Err(Error::NotPrenex { rule: rule_id });
        }
        let mut levels = Vec::with_capacity(prefix.len());
        let mut groundings: u128 = 1;
        for (q, var, dom) in &prefix {
            let d = kb
                .domain(dom)
                .ok_or_else(|| Error::Config(format!("rule {rule_id}: unknown domain `{dom}`")))?;
            if d.constants.is_empty() {
                return Err(Error::Config(format!("domain `{dom}` is empty")));
            }
            groundings *= d.constants.len() as u128;
            levels.push(Level {
                var: var.to_string(),
                reducer: (*q).into(),
                size: d.constants.len(),
            });
        }
        if groundings > limit as u128 {
            return Err(Error::Capacity {
                what: format!("rule {rule_id}"),
                needed: groundings,
                limit,
            });
        }
        let mut nodes = Vec::new();
        compile_node(matrix, &prefix, index, &mut nodes)?;
        let atom_nodes: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n, Node::Atom { .. }))
            .map(|(i, _)| i)
            .collect();
        let level_strides = atom_nodes
            .iter()
            .map(|&i| {
                let Node::Atom { terms, .. } = &nodes[i] else { unreachable!() };
                let mut s = vec![0usize; levels.len()];
                for &(l, st) in terms {
                    s[l] += st;
                }
                s
            })
            .collect();
        Ok(GroundedPotential {
            rule_id,
            tnorm,
            levels,
            nodes,
            groundings: groundings as u64,
            level_strides,
            atom_nodes,
        })
    }

    pub fn rule_id(&self) -> usize {
        self.rule_id
    }

    pub fn tnorm(&self) -> TNorm {
        self.tnorm
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    /// Number of grounding tuples (product of the quantified domain sizes).
    pub fn groundings(&self) -> u64 {
        self.groundings
    }

    /// Atoms per grounded clique (leaf count of the template).
    pub fn clique_size(&self) -> usize {
        self.atom_nodes.len()
    }

    /// Decodes a linear grounding id into one constant position per level.
    pub fn tuple(&self, id: u64) -> Vec<usize> {
        let mut rest = id;
        let mut out = vec![0usize; self.levels.len()];
        for (k, l) in self.levels.iter().enumerate().rev() {
            out[k] = (rest % l.size as u64) as usize;
            rest /= l.size as u64;
        }
        out
    }

    /// Coordinates of `y` touched by one grounding, in leaf order.
    pub fn atoms_of(&self, tuple: &[usize]) -> Vec<usize> {
        self.atom_nodes
            .iter()
            .map(|&i| {
                let Node::Atom { base, terms } = &self.nodes[i] else { unreachable!() };
                base + terms.iter().map(|&(l, s)| tuple[l] * s).sum::<usize>()
            })
            .collect()
    }

    /// Value of the propositional template for one grounding.
    pub fn term_value(&self, y: &[f64], tuple: &[usize]) -> f64 {
        let mut vals = vec![0.0; self.nodes.len()];
        self.scalar_forward(y, tuple, &mut vals);
        vals[self.nodes.len() - 1]
    }

    fn scalar_forward(&self, y: &[f64], tuple: &[usize], vals: &mut [f64]) {
        let t = self.tnorm;
        for (i, node) in self.nodes.iter().enumerate() {
            vals[i] = match *node {
                Node::Atom { base, ref terms } => {
                    y[base + terms.iter().map(|&(l, s)| tuple[l] * s).sum::<usize>()]
                }
                Node::Not(a) => t.not(vals[a]),
                Node::And(a, b) => t.and(vals[a], vals[b]),
                Node::Or(a, b) => t.or(vals[a], vals[b]),
                Node::Implies(a, b) => t.implies(vals[a], vals[b]),
            };
        }
    }

    fn scalar_backward(&self, y: &[f64], tuple: &[usize], vals: &mut [f64], adj: &mut [f64], weight: f64, grad: &mut [f64]) {
        let _ = y;
        let t = self.tnorm;
        adj.iter_mut().for_each(|a| *a = 0.0);
        let last = self.nodes.len() - 1;
        adj[last] = weight;
        for i in (0..self.nodes.len()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match self.nodes[i] {
                Node::Atom { base, ref terms } => {
                    grad[base + terms.iter().map(|&(l, s)| tuple[l] * s).sum::<usize>()] += g;
                }
                Node::Not(a) => adj[a] -= g,
                Node::And(a, b) => {
                    let (ga, gb) = t.and_grad(vals[a], vals[b]);
                    adj[a] += g * ga;
                    adj[b] += g * gb;
                }
                Node::Or(a, b) => {
                    let (ga, gb) = t.or_grad(vals[a], vals[b]);
                    adj[a] += g * ga;
                    adj[b] += g * gb;
                }
                Node::Implies(a, b) => {
                    let (ga, gb) = t.implies_grad(vals[a], vals[b]);
                    adj[a] += g * ga;
                    adj[b] += g * gb;
                }
            }
        }
    }

    /// Φ(y): nested quantifier aggregation over every grounding.
    pub fn eval(&self, y: &[f64]) -> f64 {
        SCRATCH.with(|cell| {
            let mut ws = cell.borrow_mut();
            ws.prepare(self);
            self.value_rec(y, 0, &mut ws)
        })
    }

    /// Returns Φ(y) and adds `weight * dΦ/dy` into `grad`.
    pub fn eval_grad(&self, y: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
        SCRATCH.with(|cell| {
            let mut ws = cell.borrow_mut();
            ws.prepare(self);
            self.grad_rec(y, 0, weight, grad, &mut ws)
        })
    }

    fn value_rec(&self, y: &[f64], level: usize, ws: &mut Workspace) -> f64 {
        if self.levels.is_empty() {
            self.scalar_forward(y, &[], &mut ws.vals);
            return ws.vals[self.nodes.len() - 1];
        }
        let last = self.levels.len() - 1;
        if level == last {
            self.row_forward(y, ws);
            let m = self.levels[last].size;
            let root = &ws.vals[(self.nodes.len() - 1) * m..];
            return match self.levels[last].reducer {
                Reducer::Mean => root[..m].iter().sum::<f64>() / m as f64,
                Reducer::Max => root[..m].iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
        }
        let size = self.levels[level].size;
        let reducer = self.levels[level].reducer;
        let mut acc = match reducer {
            Reducer::Mean => 0.0,
            Reducer::Max => f64::NEG_INFINITY,
        };
        ws.save_offsets(level);
        for c in 0..size {
            for (k, o) in ws.offsets.iter_mut().enumerate() {
                *o = ws.saved[level][k] + c * self.level_strides[k][level];
            }
            let v = self.value_rec(y, level + 1, ws);
            match reducer {
                Reducer::Mean => acc += v,
                Reducer::Max => acc = acc.max(v),
            }
        }
        ws.restore_offsets(level);
        match reducer {
            Reducer::Mean => acc / size as f64,
            Reducer::Max => acc,
        }
    }

    fn grad_rec(&self, y: &[f64], level: usize, weight: f64, grad: &mut [f64], ws: &mut Workspace) -> f64 {
        if self.levels.is_empty() {
            let mut vals = vec![0.0; self.nodes.len()];
            let mut adj = vec![0.0; self.nodes.len()];
            self.scalar_forward(y, &[], &mut vals);
            self.scalar_backward(y, &[], &mut vals, &mut adj, weight, grad);
            return vals[self.nodes.len() - 1];
        }
        let last = self.levels.len() - 1;
        if level == last {
            self.row_forward(y, ws);
            let m = self.levels[last].size;
            let root_off = (self.nodes.len() - 1) * m;
            let value;
            {
                let root = &ws.vals[root_off..root_off + m];
                let seed = &mut ws.adj[root_off..root_off + m];
                match self.levels[last].reducer {
                    Reducer::Mean => {
                        value = root.iter().sum::<f64>() / m as f64;
                        seed.iter_mut().for_each(|s| *s = weight / m as f64);
                    }
                    Reducer::Max => {
                        let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                        for (j, &v) in root.iter().enumerate() {
                            if v > best {
                                best = v;
                                arg = j;
                            }
                        }
                        value = best;
                        seed.iter_mut().for_each(|s| *s = 0.0);
                        seed[arg] = weight;
                    }
                }
            }
            self.row_backward(grad, ws);
            return value;
        }
        let size = self.levels[level].size;
        ws.save_offsets(level);
        let set = |ws: &mut Workspace, c: usize| {
            for (k, o) in ws.offsets.iter_mut().enumerate() {
                *o = ws.saved[level][k] + c * self.level_strides[k][level];
            }
        };
        let out = match self.levels[level].reducer {
            Reducer::Mean => {
                let w = weight / size as f64;
                let mut acc = 0.0;
                for c in 0..size {
                    set(ws, c);
                    acc += self.grad_rec(y, level + 1, w, grad, ws);
                }
                acc / size as f64
            }
            Reducer::Max => {
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
                for c in 0..size {
                    set(ws, c);
                    let v = self.value_rec(y, level + 1, ws);
                    if v > best {
                        best = v;
                        arg = c;
                    }
                }
                set(ws, arg);
                self.grad_rec(y, level + 1, weight, grad, ws);
                best
            }
        };
        ws.restore_offsets(level);
        out
    }

    /// Evaluates the template on the whole innermost row for the current offsets.
    fn row_forward(&self, y: &[f64], ws: &mut Workspace) {
        let last = self.levels.len() - 1;
        let m = self.levels[last].size;
        let t = self.tnorm;
        let mut atom_k = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            let (lo, hi) = ws.vals.split_at_mut(i * m);
            let out = &mut hi[..m];
            match *node {
                Node::Atom { .. } => {
                    let off = ws.offsets[atom_k];
                    let s = self.level_strides[atom_k][last];
                    atom_k += 1;
                    if s == 0 {
                        out.fill(y[off]);
                    } else if s == 1 {
                        out.copy_from_slice(&y[off..off + m]);
                    } else {
                        for (j, o) in out.iter_mut().enumerate() {
                            *o = y[off + j * s];
                        }
                    }
                }
                Node::Not(a) => {
                    for (o, &x) in out.iter_mut().zip(&lo[a * m..a * m + m]) {
                        *o = 1.0 - x;
                    }
                }
                Node::And(a, b) | Node::Or(a, b) | Node::Implies(a, b) => {
                    let (x, y) = (&lo[a * m..a * m + m], &lo[b * m..b * m + m]);
                    per_tnorm!(t, |k| match *node {
                        Node::And(..) => binary_row(out, x, y, |p, q| k.and(p, q)),
                        Node::Or(..) => binary_row(out, x, y, |p, q| k.or(p, q)),
                        _ => binary_row(out, x, y, |p, q| k.implies(p, q)),
                    })
                }
            }
        }
    }

    /// Back-propagates the root adjoint row (already seeded) into `grad`.
    fn row_backward(&self, grad: &mut [f64], ws: &mut Workspace) {
        let last = self.levels.len() - 1;
        let m = self.levels[last].size;
        let t = self.tnorm;
        let n_nodes = self.nodes.len();
        ws.adj[..(n_nodes - 1) * m].iter_mut().for_each(|a| *a = 0.0);
        let mut atom_k = self.atom_nodes.len();
        for i in (0..n_nodes).rev() {
            let (lo, hi) = ws.adj.split_at_mut(i * m);
            let g = &hi[..m];
            let vals = &ws.vals;
            match self.nodes[i] {
                Node::Atom { .. } => {
                    atom_k -= 1;
                    let off = ws.offsets[atom_k];
                    let s = self.level_strides[atom_k][last];
                    if s == 0 {
                        grad[off] += g.iter().sum::<f64>();
                    } else {
                        for (j, &gj) in g.iter().enumerate() {
                            grad[off + j * s] += gj;
                        }
                    }
                }
                Node::Not(a) => {
                    for (o, &gj) in lo[a * m..a * m + m].iter_mut().zip(g) {
                        *o -= gj;
                    }
                }
                Node::And(a, b) | Node::Or(a, b) | Node::Implies(a, b) => {
                    let node = &self.nodes[i];
                    per_tnorm!(t, |k| match *node {
                        Node::And(..) => binary_row_back(lo, g, vals, a, b, m, |x, y| k.and_grad(x, y)),
                        Node::Or(..) => binary_row_back(lo, g, vals, a, b, m, |x, y| k.or_grad(x, y)),
                        _ => binary_row_back(lo, g, vals, a, b, m, |x, y| k.implies_grad(x, y)),
                    })
                }
            }
        }
    }

    /// Φ restricted to a batch: the same nested aggregation, where each run of
    /// consecutive quantifiers of one kind aggregates over the sampled tuples only.
    pub fn eval_batch(&self, y: &[f64], batch: &RuleBatch) -> f64 {
        match batch {
            RuleBatch::All => self.eval(y),
            RuleBatch::Tuples(ids) => {
                let (tuples, terms) = self.batch_terms(y, ids);
                let blocks = self.blocks();
                aggregate(&blocks, &tuples, &terms, 0, 0, tuples.len())
            }
        }
    }

    /// Batch counterpart of [`eval_grad`](Self::eval_grad).
    pub fn eval_grad_batch(&self, y: &[f64], batch: &RuleBatch, weight: f64, grad: &mut [f64]) -> f64 {
        match batch {
            RuleBatch::All => self.eval_grad(y, weight, grad),
            RuleBatch::Tuples(ids) => {
                let (tuples, terms) = self.batch_terms(y, ids);
                let blocks = self.blocks();
                let mut w = vec![0.0; terms.len()];
                let v = aggregate_grad(&blocks, &tuples, &terms, 0, 0, tuples.len(), weight, &mut w);
                let mut vals = vec![0.0; self.nodes.len()];
                let mut adj = vec![0.0; self.nodes.len()];
                for (tuple, &wt) in tuples.iter().zip(&w) {
                    if wt != 0.0 {
                        self.scalar_forward(y, tuple, &mut vals);
                        self.scalar_backward(y, tuple, &mut vals, &mut adj, wt, grad);
                    }
                }
                v
            }
        }
    }

    fn batch_terms(&self, y: &[f64], ids: &[u64]) -> (Vec<Vec<usize>>, Vec<f64>) {
        let mut vals = vec![0.0; self.nodes.len()];
        let tuples: Vec<Vec<usize>> = ids.iter().map(|&id| self.tuple(id)).collect();
        let terms = tuples
            .iter()
            .map(|t| {
                self.scalar_forward(y, t, &mut vals);
                vals[self.nodes.len() - 1]
            })
            .collect();
        (tuples, terms)
    }

    /// Maximal runs of equal reducers as `(end_level_exclusive, reducer)`.
    fn blocks(&self) -> Vec<(usize, Reducer)> {
        let mut out: Vec<(usize, Reducer)> = Vec::new();
        for (k, l) in self.levels.iter().enumerate() {
            match out.last_mut() {
                Some((end, r)) if *r == l.reducer => *end = k + 1,
                _ => out.push((k + 1, l.reducer)),
            }
        }
        out
    }
}

fn binary_row(out: &mut [f64], a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f(x, y);
    }
}

fn binary_row_back(
    adj: &mut [f64],
    g: &[f64],
    vals: &[f64],
    a: usize,
    b: usize,
    m: usize,
    d: impl Fn(f64, f64) -> (f64, f64),
) {
    let va = &vals[a * m..a * m + m];
    let vb = &vals[b * m..b * m + m];
    let g = &g[..m];
    for j in 0..m {
        if g[j] == 0.0 {
            continue;
        }
        let (ga, gb) = d(va[j], vb[j]);
        adj[a * m + j] += g[j] * ga;
        adj[b * m + j] += g[j] * gb;
    }
}

#[derive(Default)]
struct Workspace {
    vals: Vec<f64>,
    adj: Vec<f64>,
    offsets: Vec<usize>,
    // offsets on entry to each level, so recursion allocates nothing
    saved: Vec<Vec<usize>>,
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Workspace> = std::cell::RefCell::new(Workspace::default());
}

impl Workspace {
    fn prepare(&mut self, p: &GroundedPotential) {
        let m = p.levels.last().map_or(1, |l| l.size);
        let len = p.nodes.len() * m;
        if self.vals.len() < len {
            self.vals.resize(len, 0.0);
            self.adj.resize(len, 0.0);
        }
        self.offsets.clear();
        self.offsets.extend(p.atom_nodes.iter().map(|&i| match p.nodes[i] {
            Node::Atom { base, .. } => base,
            _ => unreachable!(),
        }));
        if self.saved.len() < p.levels.len() {
            self.saved.resize(p.levels.len(), Vec::new());
        }
    }

    fn save_offsets(&mut self, level: usize) {
        let (offsets, saved) = (&self.offsets, &mut self.saved[level]);
        saved.clear();
        saved.extend_from_slice(offsets);
    }

    fn restore_offsets(&mut self, level: usize) {
        let (offsets, saved) = (&mut self.offsets, &self.saved[level]);
        offsets.copy_from_slice(saved);
    }
}

fn same_prefix(a: &[usize], b: &[usize], end: usize) -> bool {
    a[..end] == b[..end]
}

fn aggregate(blocks: &[(usize, Reducer)], tuples: &[Vec<usize>], terms: &[f64], b: usize, lo: usize, hi: usize) -> f64 {
    if lo == hi {
        return 0.0;
    }
    let Some(&(end, reducer)) = blocks.get(b) else {
        return terms[lo];
    };
    let mut acc = match reducer {
        Reducer::Mean => 0.0,
        Reducer::Max => f64::NEG_INFINITY,
    };
    let mut groups = 0usize;
    let mut start = lo;
    while start < hi {
        let mut stop = start + 1;
        while stop < hi && same_prefix(&tuples[start], &tuples[stop], end) {
            stop += 1;
        }
        let v = aggregate(blocks, tuples, terms, b + 1, start, stop);
        match reducer {
            Reducer::Mean => acc += v,
            Reducer::Max => acc = acc.max(v),
        }
        groups += 1;
        start = stop;
    }
    match reducer {
        Reducer::Mean => acc / groups as f64,
        Reducer::Max => acc,
    }
}

#[allow(clippy::too_many_arguments)]
fn aggregate_grad(
    blocks: &[(usize, Reducer)],
    tuples: &[Vec<usize>],
    terms: &[f64],
    b: usize,
    lo: usize,
    hi: usize,
    weight: f64,
    w: &mut [f64],
) -> f64 {
    if lo == hi {
        return 0.0;
    }
    let Some(&(end, reducer)) = blocks.get(b) else {
        w[lo] += weight;
        return terms[lo];
    };
    let mut groups = Vec::new();
    let mut start = lo;
    while start < hi {
        let mut stop = start + 1;
        while stop < hi && same_prefix(&tuples[start], &tuples[stop], end) {
            stop += 1;
        }
        groups.push((start, stop));
        start = stop;
    }
    match reducer {
        Reducer::Mean => {
            let gw = weight / groups.len() as f64;
            let sum: f64 = groups
                .iter()
                .map(|&(s, e)| aggregate_grad(blocks, tuples, terms, b + 1, s, e, gw, w))
                .sum();
            sum / groups.len() as f64
        }
        Reducer::Max => {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for (k, &(s, e)) in groups.iter().enumerate() {
                let v = aggregate(blocks, tuples, terms, b + 1, s, e);
                if v > best {
                    best = v;
                    arg = k;
                }
            }
            let (s, e) = groups[arg];
            aggregate_grad(blocks, tuples, terms, b + 1, s, e, weight, w);
            best
        }
    }
}

fn compile_node(
    f: &Formula,
    prefix: &[(Quantifier, &str, &str)],
    index: &AtomIndex,
    nodes: &mut Vec<Node>,
) -> Result<usize> {
    let node = match f {
        Formula::Atom { predicate, args } => {
            let pid = index
                .predicate_id(predicate)
                .ok_or_else(|| Error::UnknownAtom(predicate.clone()))?;
            let layout = &index.predicates()[pid];
            if layout.domains.len() != args.len() {
                return Err(Error::Shape(format!("`{predicate}` arity mismatch")));
            }
            let mut base = layout.offset;
            let mut terms = Vec::new();
            for (k, a) in args.iter().enumerate() {
                match a {
                    Term::Var(v) => {
                        let level = prefix
                            .iter()
                            .rposition(|(_, name, _)| name == v)
                            .ok_or_else(|| Error::Config(format!("variable `{v}` is free")))?;
                        terms.push((level, layout.strides[k]));
                    }
                    Term::Const(c) => {
                        let pos = index
                            .constant_position(layout.domains[k], c)
                            .ok_or_else(|| Error::UnknownAtom(format!("{predicate}({c})")))?;
                        base += pos * layout.strides[k];
                    }
                }
            }
            Node::Atom { base, terms }
        }
        Formula::Not(a) => Node::Not(compile_node(a, prefix, index, nodes)?),
        Formula::And(a, b) => {
            let a = compile_node(a, prefix, index, nodes)?;
            Node::And(a, compile_node(b, prefix, index, nodes)?)
        }
        Formula::Or(a, b) => {
            let a = compile_node(a, prefix, index, nodes)?;
            Node::Or(a, compile_node(b, prefix, index, nodes)?)
        }
        Formula::Implies(a, b) => {
            let a = compile_node(a, prefix, index, nodes)?;
            Node::Implies(a, compile_node(b, prefix, index, nodes)?)
        }
        Formula::Quantified { .. } => unreachable!("prenex checked by caller"),
    };
    nodes.push(node);
    Ok(nodes.len() - 1)
}

pub fn eval_potential(p: &GroundedPotential, y: &[f64]) -> f64 {
    p.eval(y)
}

pub fn eval_potential_on_batch(p: &GroundedPotential, y: &[f64], batch: &Batch) -> f64 {
    p.eval_batch(y, &batch.rules[p.rule_id()])
}

/// Grounding tuples of one rule selected for a step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleBatch {
    All,
    /// Sorted linear grounding ids.
    Tuples(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AtomBatch {
    All,
    /// Sorted subset of the training atom coordinates.
    Subset(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub rules: Vec<RuleBatch>,
    pub atoms: AtomBatch,
}

impl Batch {
    pub fn full(rules: usize) -> Self {
        Batch {
            rules: vec![RuleBatch::All; rules],
            atoms: AtomBatch::All,
        }
    }

    pub fn is_full(&self) -> bool {
        self.atoms == AtomBatch::All && self.rules.iter().all(|r| *r == RuleBatch::All)
    }
}

/// Uniform sample without replacement of `batch_size` grounding tuples per rule
/// and of `batch_size` training atoms. A request that covers a whole population
/// selects all of it.
pub fn sample_batch<R: Rng + ?Sized>(
    rng: &mut R,
    rules: &[GroundedPotential],
    training_atoms: &[usize],
    batch_size: usize,
) -> Batch {
    assert!(batch_size >= 1, "batch_size must be positive");
    let rule_batches = rules
        .iter()
        .map(|p| {
            let total = p.groundings();
            if batch_size as u64 >= total {
                RuleBatch::All
            } else {
                let mut ids: Vec<u64> = index::sample(rng, total as usize, batch_size)
                    .into_iter()
                    .map(|i| i as u64)
                    .collect();
                ids.sort_unstable();
                RuleBatch::Tuples(ids)
            }
        })
        .collect();
    let atoms = if batch_size >= training_atoms.len() {
        AtomBatch::All
    } else {
        let mut picked: Vec<usize> = index::sample(rng, training_atoms.len(), batch_size)
            .into_iter()
            .map(|i| training_atoms[i])
            .collect();
        picked.sort_unstable();
        AtomBatch::Subset(picked)
    };
    Batch {
        rules: rule_batches,
        atoms,
    }
}

/// Plain-text grounding report used by the `compile` subcommand.
pub fn compile_report(kb: &KnowledgeBase, index: &AtomIndex, potentials: &[GroundedPotential]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "atoms n = {}", index.n());
    for p in index.predicates() {
        let _ = writeln!(s, "  predicate {:<16} groundings {:>10}  offset {}", p.name, p.len(), p.offset);
    }
    let mut total: u128 = 0;
    for (p, rule) in potentials.iter().zip(&kb.rules) {
        total += p.groundings() as u128;
        let vars: Vec<String> = p
            .levels()
            .iter()
            .map(|l| {
                let q = if l.reducer == Reducer::Mean { "forall" } else { "exists" };
                format!("{q} {}[{}]", l.var, l.size)
            })
            .collect();
        let _ = writeln!(
            s,
            "rule {:>3}: groundings {:>12}  clique size {}  {}\n           {}",
            p.rule_id(),
            p.groundings(),
            p.clique_size(),
            vars.join(" "),
            rule
        );
    }
    let _ = writeln!(s, "rules {}  total groundings {}", potentials.len(), total);
    s
}
