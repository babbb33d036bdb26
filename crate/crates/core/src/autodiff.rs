//! Reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] records operations in execution order; [`Tape::backward`]
//! replays them in reverse and accumulates parameter gradients into the
//! [`ParamStore`] the parameters were read from. Vectors are `n × 1` columns
//! and scalars are `1 × 1`.

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::GroundedPotential;

pub type NodeId = usize;

pub const SQUASH_EPS: f64 = 1e-12;

/// Named network tensors `w`, rule weights `λ` and their gradient accumulators.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
    #[serde(skip)]
    grads: Vec<Array2<f64>>,
    pub lambda: Vec<f64>,
    #[serde(skip)]
    pub lambda_grad: Vec<f64>,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors == other.tensors && self.lambda == other.lambda
    }
}

impl ParamStore {
    /// A store with `rules` constraint weights, all zero.
    pub fn new(rules: usize) -> Self {
        ParamStore {
            lambda: vec![0.0; rules],
            lambda_grad: vec![0.0; rules],
            ..Default::default()
        }
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> Result<usize> {
        if self.id(name).is_some() {
            return Err(Error::Config(format!("parameter `{name}` defined twice")));
        }
        self.names.push(name.to_string());
        self.grads.push(Array2::zeros(value.raw_dim()));
        self.tensors.push(value);
        Ok(self.tensors.len() - 1)
    }

    /// Glorot-uniform matrix `rows × cols`.
    pub fn add_glorot<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<usize> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let m = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..=limit));
        self.add(name, m)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn tensor(&self, id: usize) -> &Array2<f64> {
        &self.tensors[id]
    }

    pub fn tensor_mut(&mut self, id: usize) -> &mut Array2<f64> {
        &mut self.tensors[id]
    }

    pub fn grad(&self, id: usize) -> &Array2<f64> {
        &self.grads[id]
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    /// Total number of scalar entries in `w`.
    pub fn weight_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Restores accumulators after deserialization or external edits.
    pub fn ensure_grads(&mut self) {
        if self.grads.len() != self.tensors.len() {
            self.grads = self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        }
        if self.lambda_grad.len() != self.lambda.len() {
            self.lambda_grad = vec![0.0; self.lambda.len()];
        }
    }

    pub fn zero_grads(&mut self) {
        self.ensure_grads();
        for g in &mut self.grads {
            g.fill(0.0);
        }
        self.lambda_grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// ½‖w‖².
    pub fn half_sq_norm(&self) -> f64 {
        0.5 * self.tensors.iter().map(|t| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
    }

    /// Adds `alpha · w` to the weight accumulators.
    pub fn add_weight_decay(&mut self, alpha: f64) {
        self.ensure_grads();
        if alpha == 0.0 {
            return;
        }
        for (g, t) in self.grads.iter_mut().zip(&self.tensors) {
            g.scaled_add(alpha, t);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// `w ← w − lr · grad`.
    pub fn descend(&mut self, lr: f64) {
        for (t, g) in self.tensors.iter_mut().zip(&self.grads) {
            t.scaled_add(-lr, g);
        }
    }

    pub fn flat_weights(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    fn accumulate(&mut self, id: usize, g: &Array2<f64>) {
        self.ensure_grads();
        self.grads[id] += g;
    }
}

#[derive(Debug, Clone)]
enum Op<'p> {
    Constant,
    Param(usize),
    Gather { src: NodeId, rows: Vec<usize> },
    SliceRows { src: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Squash(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Assemble(Vec<Part>),
    Potential(NodeId, &'p GroundedPotential),
}

/// `out[offset + i] = src[rows[i], col]`.
#[derive(Debug, Clone)]
struct Part {
    src: NodeId,
    col: usize,
    rows: Vec<usize>,
    offset: usize,
}

/// Recorded computation. Potentials are borrowed for the tape's lifetime.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    ops: Vec<Op<'p>>,
    values: Vec<Array2<f64>>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { ops: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.values[id][[0, 0]]
    }

    fn push(&mut self, op: Op<'p>, value: Array2<f64>) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        self.ops.len() - 1
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Column vector constant.
    pub fn vector(&mut self, v: &[f64]) -> NodeId {
        self.constant(Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column shape"))
    }

    pub fn param(&mut self, params: &ParamStore, id: usize) -> NodeId {
        self.push(Op::Param(id), params.tensor(id).clone())
    }

    pub fn gather(&mut self, src: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let v = &self.values[src];
        if let Some(&bad) = rows.iter().find(|&&r| r >= v.nrows()) {
            return Err(Error::Shape(format!("gather row {bad} of {}", v.nrows())));
        }
        let out = v.select(Axis(0), &rows);
        Ok(self.push(Op::Gather { src, rows }, out))
    }

    pub fn slice_rows(&mut self, src: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = &self.values[src];
        if start > end || end > v.nrows() {
            return Err(Error::Shape(format!("rows {start}..{end} of {}", v.nrows())));
        }
        let out = v.slice(s![start..end, ..]).to_owned();
        Ok(self.push(Op::SliceRows { src, start }, out))
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> Result<NodeId> {
        let views: Vec<_> = parts.iter().map(|&p| self.values[p].view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.push(Op::ConcatCols(parts), out))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (&self.values[a], &self.values[b]);
        if x.ncols() != y.nrows() {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", x.dim(), y.dim())));
        }
        let out = x.dot(y);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// Adds a `1 × k` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (x, r) = (&self.values[a], &self.values[row]);
        if r.nrows() != 1 || r.ncols() != x.ncols() {
            return Err(Error::Shape(format!("add_row {:?} + {:?}", x.dim(), r.dim())));
        }
        let out = x + r;
        Ok(self.push(Op::AddRow(a, row), out))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.values[a].mapv(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.values[a].mapv(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    /// Sigmoid mapped into `[SQUASH_EPS, 1 − SQUASH_EPS]`, so outputs stay
    /// strictly inside (0,1) even where the plain sigmoid rounds to 0 or 1.
    pub fn squash(&mut self, a: NodeId) -> NodeId {
        let out = self.values[a].mapv(|x| SQUASH_EPS + (1.0 - 2.0 * SQUASH_EPS) * sigmoid(x));
        self.push(Op::Squash(a), out)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.values[a].dim() != self.values[b].dim() {
            return Err(Error::Shape(format!("{what} {:?} vs {:?}", self.values[a].dim(), self.values[b].dim())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let out = &self.values[a] + &self.values[b];
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let out = &self.values[a] - &self.values[b];
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let out = &self.values[a] * &self.values[b];
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let out = &self.values[a] * k;
        self.push(Op::Scale(a, k), out)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Array2::from_elem((1, 1), self.values[a].sum());
        self.push(Op::Sum(a), out)
    }

    /// Σ (a − b)² · k.
    pub fn scaled_sq_dist(&mut self, a: NodeId, b: NodeId, k: f64) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let d2 = self.mul(d, d)?;
        let s = self.sum(d2);
        Ok(self.scale(s, k))
    }

    /// Builds an `n × 1` vector from columns of other nodes. Every coordinate
    /// must be written exactly once.
    pub fn assemble(&mut self, n: usize, parts: Vec<(NodeId, usize, Vec<usize>, usize)>) -> Result<NodeId> {
        let mut out = Array2::zeros((n, 1));
        let mut written = vec![false; n];
        let mut stored = Vec::with_capacity(parts.len());
        for (src, col, rows, offset) in parts {
            let v = &self.values[src];
            if col >= v.ncols() || offset + rows.len() > n {
                return Err(Error::Shape(format!("assemble part from {:?} at {offset}", v.dim())));
            }
            for (i, &r) in rows.iter().enumerate() {
                if r >= v.nrows() || written[offset + i] {
                    return Err(Error::Shape(format!("assemble coordinate {}", offset + i)));
                }
                written[offset + i] = true;
                out[[offset + i, 0]] = v[[r, col]];
            }
            stored.push(Part { src, col, rows, offset });
        }
        if let Some(miss) = written.iter().position(|w| !w) {
            return Err(Error::Shape(format!("coordinate {miss} has no network output")));
        }
        Ok(self.push(Op::Assemble(stored), out))
    }

    /// Φ(y) of a grounded potential applied to an `n × 1` node.
    pub fn potential(&mut self, y: NodeId, p: &'p GroundedPotential) -> Result<NodeId> {
        let v = &self.values[y];
        if v.ncols() != 1 {
            return Err(Error::Shape(format!("potential input {:?}", v.dim())));
        }
        let col: Vec<f64> = v.column(0).to_vec();
        let out = Array2::from_elem((1, 1), p.eval(&col));
        Ok(self.push(Op::Potential(y, p), out))
    }

    /// Back-propagates from a scalar root with adjoint 1.
    pub fn backward(&self, root: NodeId, params: &mut ParamStore) -> Result<()> {
        if self.values[root].dim() != (1, 1) {
            return Err(Error::Shape(format!("backward root {:?} is not scalar", self.values[root].dim())));
        }
        self.backward_seeded(root, Array2::from_elem((1, 1), 1.0), params)
    }

    /// Back-propagates an explicit adjoint of `root`, e.g. ∂cost/∂f_nn.
    pub fn backward_seeded(&self, root: NodeId, seed: Array2<f64>, params: &mut ParamStore) -> Result<()> {
        if seed.dim() != self.values[root].dim() {
            return Err(Error::Shape(format!("seed {:?} for node {:?}", seed.dim(), self.values[root].dim())));
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; root + 1];
        adj[root] = Some(seed);
        for id in (0..=root).rev() {
            let Some(g) = adj[id].take() else { continue };
            match &self.ops[id] {
                Op::Constant => {}
                Op::Param(p) => params.accumulate(*p, &g),
                Op::Gather { src, rows } => {
                    let mut d = Array2::zeros(self.values[*src].raw_dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &g.row(i);
                    }
                    add_adj(&mut adj, *src, d);
                }
                Op::SliceRows { src, start } => {
                    let mut d = Array2::zeros(self.values[*src].raw_dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    add_adj(&mut adj, *src, d);
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let w = self.values[p].ncols();
                        add_adj(&mut adj, p, g.slice(s![.., c..c + w]).to_owned());
                        c += w;
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.values[*b].t());
                    let db = self.values[*a].t().dot(&g);
                    add_adj(&mut adj, *a, da);
                    add_adj(&mut adj, *b, db);
                }
                Op::AddRow(a, r) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_adj(&mut adj, *r, dr);
                    add_adj(&mut adj, *a, g);
                }
                Op::Tanh(a) => {
                    let y = &self.values[id];
                    let d = &g * &y.mapv(|t| 1.0 - t * t);
                    add_adj(&mut adj, *a, d);
                }
                Op::Sigmoid(a) => {
                    let y = &self.values[id];
                    let d = &g * &y.mapv(|t| t * (1.0 - t));
                    add_adj(&mut adj, *a, d);
                }
                Op::Squash(a) => {
                    let d = &g * &self.values[*a].mapv(|x| {
                        let t = sigmoid(x);
                        (1.0 - 2.0 * SQUASH_EPS) * t * (1.0 - t)
                    });
                    add_adj(&mut adj, *a, d);
                }
                Op::Add(a, b) => {
                    add_adj(&mut adj, *b, g.clone());
                    add_adj(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    add_adj(&mut adj, *b, -&g);
                    add_adj(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.values[*b];
                    let db = &g * &self.values[*a];
                    add_adj(&mut adj, *a, da);
                    add_adj(&mut adj, *b, db);
                }
                Op::Scale(a, k) => add_adj(&mut adj, *a, g * *k),
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.values[*a].raw_dim(), g[[0, 0]]);
                    add_adj(&mut adj, *a, d);
                }
                Op::Assemble(parts) => {
                    for part in parts {
                        let mut d = Array2::zeros(self.values[part.src].raw_dim());
                        for (i, &r) in part.rows.iter().enumerate() {
                            d[[r, part.col]] += g[[part.offset + i, 0]];
                        }
                        add_adj(&mut adj, part.src, d);
                    }
                }
                Op::Potential(y, p) => {
                    let col: Vec<f64> = self.values[*y].column(0).to_vec();
                    let mut grad = vec![0.0; col.len()];
                    p.eval_grad(&col, g[[0, 0]], &mut grad);
                    let d = Array2::from_shape_vec((col.len(), 1), grad).expect("column shape");
                    add_adj(&mut adj, *y, d);
                }
            }
        }
        Ok(())
    }
}

fn add_adj(adj: &mut [Option<Array2<f64>>], id: NodeId, d: Array2<f64>) {
    match &mut adj[id] {
        Some(a) => *a += &d,
        slot @ None => *slot = Some(d),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Compares tape gradients with central differences on `samples` randomly
/// chosen weight entries. `build` records the scalar root for the given
/// parameters. Entries whose left and right one-sided differences disagree
/// straddle a kink and are skipped.
pub fn finite_diff_check<'p, R, F>(params: &ParamStore, eps: f64, samples: usize, rng: &mut R, build: F) -> Result<FdReport>
where
    R: Rng + ?Sized,
    F: Fn(&mut Tape<'p>, &ParamStore) -> Result<NodeId>,
{
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let root = build(&mut tape, p)?;
        Ok(tape.scalar(root))
    };
    let mut analytic = params.clone();
    analytic.zero_grads();
    {
        let mut tape = Tape::new();
        let root = build(&mut tape, params)?;
        tape.backward(root, &mut analytic)?;
    }
    let total = params.weight_count();
    if total == 0 {
        return Ok(FdReport { max_rel_error: 0.0, checked: 0, skipped: 0 });
    }
    let f0 = eval(params)?;
    let mut report = FdReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    let mut work = params.clone();
    for _ in 0..samples {
        let mut k = rng.gen_range(0..total);
        let mut id = 0;
        while k >= params.tensor(id).len() {
            k -= params.tensor(id).len();
            id += 1;
        }
        let orig = params.tensor(id).as_slice_memory_order().expect("contiguous")[k];
        let set = |w: &mut ParamStore, v: f64| w.tensor_mut(id).as_slice_memory_order_mut().expect("contiguous")[k] = v;
        set(&mut work, orig + eps);
        let fp = eval(&work)?;
        set(&mut work, orig - eps);
        let fm = eval(&work)?;
        set(&mut work, orig);
        let central = (fp - fm) / (2.0 * eps);
        let right = (fp - f0) / eps;
        let left = (f0 - fm) / eps;
        if (right - left).abs() > 1e-3 * (central.abs() + 1e-3) + 1e4 * eps {
            report.skipped += 1;
            continue;
        }
        let a = analytic.grad(id).as_slice_memory_order().expect("contiguous")[k];
        let err = (a - central).abs() / (central.abs() + 1e-8);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_root() {
        let mut p = ParamStore::new(0);
        let a = p.add("a", array![[2.0]]).unwrap();
        p.add("b", array![[3.0]]).unwrap();
        let mut tape = Tape::new();
        let r = tape.param(&p, a);
        tape.backward(r, &mut p).unwrap();
        assert_eq!(p.grad(0)[[0, 0]], 1.0);
        assert_eq!(p.grad(1)[[0, 0]], 0.0);
    }

    #[test]
    fn quadratic_evidence_derivative() {
        let mut p = ParamStore::new(0);
        let f = p.add("f", array![[0.3]]).unwrap();
        let mut tape = Tape::new();
        let fnode = tape.param(&p, f);
        let y = tape.constant(array![[0.8]]);
        let r = tape.scaled_sq_dist(y, fnode, -0.5).unwrap();
        tape.backward(r, &mut p).unwrap();
        assert_relative_eq!(p.grad(f)[[0, 0]], 0.8 - 0.3, epsilon = 1e-15);
    }

    #[test]
    fn linear_root_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamStore::new(0);
        p.add_glorot("w", 4, 3, 4, 3, &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i + j + 1) as f64 * 0.25);
        let rep = finite_diff_check(&p, 1e-5, 100, &mut rng, |t, p| {
            let xi = t.constant(x.clone());
            let w = t.param(p, 0);
            let h = t.matmul(xi, w)?;
            Ok(t.sum(h))
        })
        .unwrap();
        assert!(rep.max_rel_error <= 1e-9, "{rep:?}");
    }

    #[test]
    fn sigmoid_chain_depth_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamStore::new(0);
        for l in 0..5 {
            p.add_glorot(&format!("w{l}"), 3, 3, 3, 3, &mut rng).unwrap();
            p.add(&format!("b{l}"), Array2::from_shape_fn((1, 3), |(_, j)| 0.1 * j as f64)).unwrap();
        }
        let x = Array2::from_shape_fn((4, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let rep = finite_diff_check(&p, 1e-5, 100, &mut rng, |t, p| {
            let mut h = t.constant(x.clone());
            for l in 0..5 {
                let w = t.param(p, 2 * l);
                let b = t.param(p, 2 * l + 1);
                let z = t.matmul(h, w)?;
                let z = t.add_row(z, b)?;
                h = t.sigmoid(z);
            }
            Ok(t.sum(h))
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
        assert_eq!(rep.checked + rep.skipped, 100);
    }

    #[test]
    fn kink_at_tie_is_skipped() {
        use crate::fuzzy::TNorm;
        use crate::grounding::{build_atom_index, ground_all, DEFAULT_CAPACITY};
        use crate::logic::parse_kb;
        let kb = parse_kb("domain d {a}. predicate P(d). predicate Q(d).\nrule forall x in d: P(x) and Q(x).").unwrap();
        let idx = build_atom_index(&kb).unwrap();
        let pots = ground_all(&kb, TNorm::Minimum, &idx, DEFAULT_CAPACITY).unwrap();
        let mut p = ParamStore::new(1);
        p.add("y", array![[0.4], [0.4]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep = finite_diff_check(&p, 1e-5, 20, &mut rng, |t, p| {
            let y = t.param(p, 0);
            t.potential(y, &pots[0])
        })
        .unwrap();
        assert_eq!(rep.checked, 0);
        assert_eq!(rep.skipped, 20);
    }

    #[test]
    fn gather_slice_concat_assemble_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ParamStore::new(0);
        p.add_glorot("emb", 5, 3, 5, 3, &mut rng).unwrap();
        p.add_glorot("w", 6, 2, 6, 2, &mut rng).unwrap();
        let rep = finite_diff_check(&p, 1e-5, 60, &mut rng, |t, p| {
            let e = t.param(p, 0);
            let a = t.gather(e, vec![0, 2, 2, 4])?;
            let b = t.gather(e, vec![1, 1, 3, 0])?;
            let x = t.concat_cols(vec![a, b])?;
            let w = t.param(p, 1);
            let top = t.slice_rows(w, 0, 6)?;
            let h = t.matmul(x, top)?;
            let h = t.tanh(h);
            let v = t.assemble(6, vec![(h, 0, vec![0, 1, 2], 0), (h, 1, vec![3, 2, 0], 3)])?;
            let v = t.mul(v, v)?;
            Ok(t.sum(v))
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.constant(Array2::zeros((2, 3)));
        let b = t.constant(Array2::zeros((2, 3)));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape(_))));
        assert!(matches!(t.gather(a, vec![2]), Err(Error::Shape(_))));
        assert!(t.assemble(3, vec![(a, 0, vec![0, 1], 0)]).is_err());
        let mut p = ParamStore::new(0);
        assert!(t.backward(a, &mut p).is_err());
    }

    #[test]
    fn squash_stays_open() {
        let mut t = Tape::new();
        let a = t.constant(array![[-1e6, -40.0, 0.0, 40.0, 1e6]]);
        let s = t.squash(a);
        assert!(t.value(s).iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(t.value(s)[[0, 2]], 0.5);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-30.0) > 0.0 && sigmoid(30.0) < 1.0);
    }
}
