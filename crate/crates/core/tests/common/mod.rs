#![allow(dead_code)]

use dlm_core::grounding::{build_atom_index, ground_all, GroundedPotential, DEFAULT_CAPACITY};
use dlm_core::logic::parse_kb;
use dlm_core::logic::{Formula, Quantifier, Term};
use dlm_core::{AtomIndex, KnowledgeBase, TNorm};
use rand::Rng;

pub struct Instance {
    pub kb: KnowledgeBase,
    pub index: AtomIndex,
    pub potentials: Vec<GroundedPotential>,
    pub tnorm: TNorm,
    pub f_nn: Vec<f64>,
    pub lambda: Vec<f64>,
}

fn random_expr<R: Rng>(rng: &mut R, atoms: &[String], depth: usize, implications: bool) -> String {
    if depth == 0 || rng.gen_bool(0.3) {
        let a = &atoms[rng.gen_range(0..atoms.len())];
        return if rng.gen_bool(0.2) { format!("not {a}") } else { a.clone() };
    }
    let l = random_expr(rng, atoms, depth - 1, implications);
    let r = random_expr(rng, atoms, depth - 1, implications);
    let ops: &[&str] = if implications { &["and", "or", "->"] } else { &["and", "or"] };
    format!("({l} {} {r})", ops[rng.gen_range(0..ops.len())])
}

/// A random KB with at most four ground atoms and one or two rules.
///
/// Layouts: one constant with up to four unary predicates, two constants with
/// up to two unary predicates, or two constants with one binary predicate.
/// Minimum-t-norm rules avoid `->`, whose step jump has no gradient signal.
pub fn small_instance<R: Rng>(rng: &mut R) -> Instance {
    let tnorm = TNorm::ALL[rng.gen_range(0..3)];
    let implications = tnorm != TNorm::Minimum;
    let layout = rng.gen_range(0..3);
    let mut src = String::new();
    let mut rules = Vec::new();
    let n_rules = rng.gen_range(1..=2);
    match layout {
        0 => {
            let k = rng.gen_range(1..=4);
            src.push_str("domain d {a}.\n");
            let atoms: Vec<String> = (0..k).map(|i| format!("P{i}(x)")).collect();
            for i in 0..k {
                src.push_str(&format!("predicate P{i}(d).\n"));
            }
            for _ in 0..n_rules {
                rules.push(format!("forall x in d: {}", random_expr(rng, &atoms, 2, implications)));
            }
        }
        1 => {
            let k = rng.gen_range(1..=2);
            src.push_str("domain d {a, b}.\n");
            let atoms: Vec<String> = (0..k).map(|i| format!("P{i}(x)")).collect();
            for i in 0..k {
                src.push_str(&format!("predicate P{i}(d).\n"));
            }
            for _ in 0..n_rules {
                let q = if rng.gen_bool(0.25) { "exists" } else { "forall" };
                rules.push(format!("{q} x in d: {}", random_expr(rng, &atoms, 2, implications)));
            }
        }
        _ => {
            src.push_str("domain d {a, b}.\npredicate R(d, d).\n");
            let atoms = vec!["R(x, y)".to_string(), "R(y, x)".to_string(), "R(x, x)".to_string()];
            for _ in 0..n_rules {
                rules.push(format!("forall x in d forall y in d: {}", random_expr(rng, &atoms, 2, implications)));
            }
        }
    }
    for r in &rules {
        src.push_str(&format!("rule {r}.\n"));
    }
    let kb = parse_kb(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    let index = build_atom_index(&kb).unwrap();
    let potentials = ground_all(&kb, tnorm, &index, DEFAULT_CAPACITY).unwrap();
    let f_nn = (0..index.n()).map(|_| rng.gen_range(0.02..0.98)).collect();
    let lambda = (0..potentials.len()).map(|_| rng.gen_range(0.5..10.0)).collect();
    Instance { kb, index, potentials, tnorm, f_nn, lambda }
}

const G: usize = 101;
type Col = [f64; G];

enum Arg {
    Var(usize),
    Const(usize),
}

enum Node {
    Atom { offset: usize, args: Vec<(Arg, usize)> },
    Not(Box<Node>),
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
    Implies(Box<Node>, Box<Node>),
    Quant { forall: bool, slot: usize, size: usize, body: Box<Node> },
}

/// Direct interpreter of the rule formulas, written without the grounding
/// engine. Evaluates 101 values of the last atom at once for the grid search.
pub struct Oracle {
    n: usize,
    tnorm: TNorm,
    rules: Vec<(Node, usize)>,
}

impl Oracle {
    pub fn new(kb: &KnowledgeBase, tnorm: TNorm) -> Oracle {
        let mut offsets = Vec::new();
        let mut n = 0;
        for p in &kb.predicates {
            offsets.push(n);
            n += p.argument_domains.iter().map(|d| kb.domain(d).unwrap().constants.len()).product::<usize>();
        }
        let rules = kb
            .rules
            .iter()
            .map(|r| {
                let mut scope = Vec::new();
                let node = lower(r, kb, &offsets, &mut scope);
                let depth = max_depth(r);
                (node, depth)
            })
            .collect();
        Oracle { n, tnorm, rules }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn and(&self, a: f64, b: f64) -> f64 {
        match self.tnorm {
            TNorm::Product => a * b,
            TNorm::Minimum => a.min(b),
            TNorm::Lukasiewicz => (a + b - 1.0).max(0.0),
        }
    }

    fn or(&self, a: f64, b: f64) -> f64 {
        match self.tnorm {
            TNorm::Product => a + b - a * b,
            TNorm::Minimum => a.max(b),
            TNorm::Lukasiewicz => (a + b).min(1.0),
        }
    }

    fn implies(&self, a: f64, b: f64) -> f64 {
        match self.tnorm {
            TNorm::Product => if a <= b { 1.0 } else { b / a },
            TNorm::Minimum => if a <= b { 1.0 } else { b },
            TNorm::Lukasiewicz => (1.0 - a + b).min(1.0),
        }
    }

    fn eval(&self, node: &Node, env: &mut [usize], y: &[f64], col: &Col) -> Col {
        match node {
            Node::Atom { offset, args } => {
                let mut i = *offset;
                for (a, stride) in args {
                    i += stride * match a {
                        Arg::Var(s) => env[*s],
                        Arg::Const(c) => *c,
                    };
                }
                if i == self.n - 1 { *col } else { [y[i]; G] }
            }
            Node::Not(a) => self.eval(a, env, y, col).map(|v| 1.0 - v),
            Node::And(a, b) | Node::Or(a, b) | Node::Implies(a, b) => {
                let l = self.eval(a, env, y, col);
                let r = self.eval(b, env, y, col);
                let mut out = [0.0; G];
                for k in 0..G {
                    out[k] = match node {
                        Node::And(..) => self.and(l[k], r[k]),
                        Node::Or(..) => self.or(l[k], r[k]),
                        _ => self.implies(l[k], r[k]),
                    };
                }
                out
            }
            Node::Quant { forall, slot, size, body } => {
                let mut acc = if *forall { [0.0; G] } else { [f64::NEG_INFINITY; G] };
                for c in 0..*size {
                    env[*slot] = c;
                    let v = self.eval(body, env, y, col);
                    for k in 0..G {
                        acc[k] = if *forall { acc[k] + v[k] } else { acc[k].max(v[k]) };
                    }
                }
                if *forall {
                    acc.iter_mut().for_each(|v| *v /= *size as f64);
                }
                acc
            }
        }
    }

    /// Rule values with the last atom replaced by each entry of `col`.
    fn rule_columns(&self, y: &[f64], col: &Col) -> Vec<Col> {
        self.rules
            .iter()
            .map(|(node, depth)| {
                let mut env = vec![0; *depth];
                self.eval(node, &mut env, y, col)
            })
            .collect()
    }

    pub fn rule_values(&self, y: &[f64]) -> Vec<f64> {
        let col = [y[self.n - 1]; G];
        self.rule_columns(y, &col).iter().map(|c| c[0]).collect()
    }

    pub fn objective(&self, y: &[f64], f_nn: &[f64], lambda: &[f64]) -> f64 {
        let quad: f64 = y.iter().zip(f_nn).map(|(a, b)| (a - b) * (a - b)).sum();
        let phi: f64 = self.rule_values(y).iter().zip(lambda).map(|(v, l)| v * l).sum();
        -0.5 * quad + phi
    }

    /// Exhaustive maximum of the MAP objective over the 0.01 grid, with its argmax.
    pub fn grid_max(&self, f_nn: &[f64], lambda: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n;
        let mut col = [0.0; G];
        for (k, v) in col.iter_mut().enumerate() {
            *v = k as f64 / 100.0;
        }
        let last_quad: Vec<f64> = col.iter().map(|v| (v - f_nn[n - 1]).powi(2)).collect();
        let mut idx = vec![0usize; n - 1];
        let mut y = vec![0.0; n];
        let mut best = (f64::NEG_INFINITY, vec![]);
        loop {
            for (v, &i) in y.iter_mut().zip(&idx) {
                *v = i as f64 / 100.0;
            }
            let quad: f64 = (0..n - 1).map(|i| (y[i] - f_nn[i]).powi(2)).sum();
            let cols = self.rule_columns(&y, &col);
            for k in 0..G {
                let mut v = -0.5 * (quad + last_quad[k]);
                for (c, l) in cols.iter().zip(lambda) {
                    v += l * c[k];
                }
                if v > best.0 {
                    y[n - 1] = col[k];
                    best = (v, y.clone());
                }
            }
            let mut k = 0;
            loop {
                if k == n - 1 {
                    return best;
                }
                idx[k] += 1;
                if idx[k] <= 100 {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

fn max_depth(f: &Formula) -> usize {
    match f {
        Formula::Atom { .. } => 0,
        Formula::Not(a) => max_depth(a),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => max_depth(a).max(max_depth(b)),
        Formula::Quantified { body, .. } => 1 + max_depth(body),
    }
}

fn lower(f: &Formula, kb: &KnowledgeBase, offsets: &[usize], scope: &mut Vec<String>) -> Node {
    match f {
        Formula::Atom { predicate, args } => {
            let pi = kb.predicates.iter().position(|p| &p.name == predicate).unwrap();
            let decl = &kb.predicates[pi];
            let sizes: Vec<usize> = decl.argument_domains.iter().map(|d| kb.domain(d).unwrap().constants.len()).collect();
            let args = args
                .iter()
                .enumerate()
                .map(|(k, t)| {
                    let stride: usize = sizes[k + 1..].iter().product();
                    let arg = match t {
                        Term::Var(v) => Arg::Var(scope.iter().rposition(|s| s == v).unwrap()),
                        Term::Const(c) => Arg::Const(kb.domain(&decl.argument_domains[k]).unwrap().position(c).unwrap()),
                    };
                    (arg, stride)
                })
                .collect();
            Node::Atom { offset: offsets[pi], args }
        }
        Formula::Not(a) => Node::Not(Box::new(lower(a, kb, offsets, scope))),
        Formula::And(a, b) => Node::And(Box::new(lower(a, kb, offsets, scope)), Box::new(lower(b, kb, offsets, scope))),
        Formula::Or(a, b) => Node::Or(Box::new(lower(a, kb, offsets, scope)), Box::new(lower(b, kb, offsets, scope))),
        Formula::Implies(a, b) => Node::Implies(Box::new(lower(a, kb, offsets, scope)), Box::new(lower(b, kb, offsets, scope))),
        Formula::Quantified { quantifier, var, domain, body } => {
            scope.push(var.clone());
            let slot = scope.len() - 1;
            let body = lower(body, kb, offsets, scope);
            scope.pop();
            Node::Quant {
                forall: *quantifier == Quantifier::Forall,
                slot,
                size: kb.domain(domain).unwrap().constants.len(),
                body: Box::new(body),
            }
        }
    }
}
