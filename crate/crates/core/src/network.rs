//! Neural predicates producing `f_nn`, one output per ground atom.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::grounding::AtomIndex;

/// Feature row feeding one predicate's atoms: `rows[k]` is the input row for
/// the predicate's `k`-th atom in index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub predicate: String,
    pub output: usize,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetworkSpec {
    /// Learned constant embeddings, one table per domain and shared by all
    /// listed predicates. Each predicate has its own MLP
    /// `concat(embeddings) → tanh(hidden) → sigmoid`.
    Relational {
        embedding_dim: usize,
        hidden: usize,
        predicates: Vec<String>,
    },
    /// Feature classifier `x → tanh(hidden) → sigmoid(outputs)`; each binding
    /// routes one output column to one predicate.
    Classifier {
        name: String,
        input_dim: usize,
        hidden: usize,
        outputs: usize,
        bindings: Vec<Binding>,
    },
}

/// The full `f_nn` model: every predicate must be produced by exactly one spec.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub specs: Vec<NetworkSpec>,
}

impl Network {
    pub fn new(specs: Vec<NetworkSpec>) -> Self {
        Network { specs }
    }

    /// Relational model over every predicate of the index.
    pub fn relational(index: &AtomIndex, embedding_dim: usize, hidden: usize) -> Self {
        Network::new(vec![NetworkSpec::Relational {
            embedding_dim,
            hidden,
            predicates: index.predicates().iter().map(|p| p.name.clone()).collect(),
        }])
    }

    pub fn validate(&self, index: &AtomIndex) -> Result<()> {
        let mut owner = vec![false; index.predicates().len()];
        let mut claim = |name: &str| -> Result<usize> {
            let id = index
                .predicate_id(name)
                .ok_or_else(|| Error::Config(format!("network references unknown predicate `{name}`")))?;
            if owner[id] {
                return Err(Error::Config(format!("predicate `{name}` produced by two networks")));
            }
            owner[id] = true;
            Ok(id)
        };
        for spec in &self.specs {
            match spec {
                NetworkSpec::Relational { embedding_dim, hidden, predicates } => {
                    if *embedding_dim == 0 || *hidden == 0 {
                        return Err(Error::Config("relational sizes must be positive".into()));
                    }
                    for p in predicates {
                        claim(p)?;
                    }
                }
                NetworkSpec::Classifier { input_dim, hidden, outputs, bindings, .. } => {
                    if *input_dim == 0 || *hidden == 0 || *outputs == 0 {
                        return Err(Error::Config("classifier sizes must be positive".into()));
                    }
                    for b in bindings {
                        let id = claim(&b.predicate)?;
                        if b.output >= *outputs {
                            return Err(Error::Config(format!("binding `{}` uses output {}", b.predicate, b.output)));
                        }
                        if b.rows.len() != index.predicates()[id].len() {
                            return Err(Error::Shape(format!(
                                "binding `{}` has {} rows for {} atoms",
                                b.predicate,
                                b.rows.len(),
                                index.predicates()[id].len()
                            )));
                        }
                    }
                }
            }
        }
        if let Some(miss) = owner.iter().position(|o| !o) {
            return Err(Error::Config(format!(
                "predicate `{}` has no network",
                index.predicates()[miss].name
            )));
        }
        Ok(())
    }

    /// Adds Glorot-initialised weights (zero biases) for every spec.
    pub fn init_params<R: Rng + ?Sized>(&self, index: &AtomIndex, params: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.validate(index)?;
        for spec in &self.specs {
            match spec {
                NetworkSpec::Relational { embedding_dim, hidden, predicates } => {
                    let d = *embedding_dim;
                    for p in predicates {
                        let layout = index.predicate(p).expect("validated");
                        for &dom in &layout.domains {
                            let name = embedding_name(index, dom);
                            if params.id(&name).is_none() {
                                let v = index.domain_constants(dom).len();
                                params.add_glorot(&name, v, d, v, d, rng)?;
                            }
                        }
                        let fan_in = d * layout.domains.len();
                        params.add_glorot(&format!("{p}.w1"), fan_in, *hidden, fan_in, *hidden, rng)?;
                        params.add(&format!("{p}.b1"), Array2::zeros((1, *hidden)))?;
                        params.add_glorot(&format!("{p}.w2"), *hidden, 1, *hidden, 1, rng)?;
                        params.add(&format!("{p}.b2"), Array2::zeros((1, 1)))?;
                    }
                }
                NetworkSpec::Classifier { name, input_dim, hidden, outputs, .. } => {
                    params.add_glorot(&format!("{name}.w1"), *input_dim, *hidden, *input_dim, *hidden, rng)?;
                    params.add(&format!("{name}.b1"), Array2::zeros((1, *hidden)))?;
                    params.add_glorot(&format!("{name}.w2"), *hidden, *outputs, *hidden, *outputs, rng)?;
                    params.add(&format!("{name}.b2"), Array2::zeros((1, *outputs)))?;
                }
            }
        }
        Ok(())
    }

    /// Sets each output bias so the untrained network predicts `rates[p]`
    /// for every atom of predicate `p`.
    pub fn set_output_bias(&self, index: &AtomIndex, params: &mut ParamStore, rates: &[f64]) -> Result<()> {
        let logit = |r: f64| {
            let r = r.clamp(1e-6, 1.0 - 1e-6);
            (r / (1.0 - r)).ln()
        };
        for spec in &self.specs {
            match spec {
                NetworkSpec::Relational { predicates, .. } => {
                    for p in predicates {
                        let pid = index.predicate_id(p).ok_or_else(|| Error::Config(format!("unknown predicate `{p}`")))?;
                        let id = params.id(&format!("{p}.b2")).ok_or_else(|| Error::Config(format!("`{p}` has no parameters")))?;
                        params.tensor_mut(id).fill(logit(rates[pid]));
                    }
                }
                NetworkSpec::Classifier { name, bindings, .. } => {
                    let id = params.id(&format!("{name}.b2")).ok_or_else(|| Error::Config(format!("`{name}` has no parameters")))?;
                    for b in bindings {
                        let pid = index.predicate_id(&b.predicate).ok_or_else(|| Error::Config(format!("unknown predicate `{}`", b.predicate)))?;
                        params.tensor_mut(id)[[0, b.output]] = logit(rates[pid]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Records the forward pass and returns the `n × 1` node holding `f_nn`.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &ParamStore,
        index: &AtomIndex,
        features: Option<&Array2<f64>>,
    ) -> Result<NodeId> {
        let mut parts = Vec::new();
        for spec in &self.specs {
            match spec {
                NetworkSpec::Relational { embedding_dim, predicates, .. } => {
                    let d = *embedding_dim;
                    for p in predicates {
                        let layout = index.predicate(p).ok_or_else(|| Error::UnknownAtom(p.clone()))?;
                        let w1 = tape.param(params, param_id(params, &format!("{p}.w1"))?);
                        // concat(e_1..e_m)·W1 == Σ_k e_k·W1[k], computed per table
                        // before the gather so the wide product is never formed
                        let mut pre: Option<NodeId> = None;
                        for (k, &dom) in layout.domains.iter().enumerate() {
                            let e = tape.param(params, param_id(params, &embedding_name(index, dom))?);
                            let wk = tape.slice_rows(w1, k * d, (k + 1) * d)?;
                            let proj = tape.matmul(e, wk)?;
                            let rows = argument_rows(&layout.sizes, &layout.strides, k);
                            let g = tape.gather(proj, rows)?;
                            pre = Some(match pre {
                                None => g,
                                Some(acc) => tape.add(acc, g)?,
                            });
                        }
                        let pre = pre.ok_or_else(|| Error::Shape(format!("`{p}` has no arguments")))?;
                        let out = mlp_tail(tape, params, p, pre)?;
                        parts.push((out, 0, (0..layout.len()).collect(), layout.offset));
                    }
                }
                NetworkSpec::Classifier { name, input_dim, bindings, .. } => {
                    let x = features.ok_or_else(|| Error::Shape(format!("classifier `{name}` needs features")))?;
                    if x.ncols() != *input_dim {
                        return Err(Error::Shape(format!("features have {} columns, `{name}` expects {input_dim}", x.ncols())));
                    }
                    let xi = tape.constant(x.clone());
                    let w1 = tape.param(params, param_id(params, &format!("{name}.w1"))?);
                    let pre = tape.matmul(xi, w1)?;
                    let out = mlp_tail(tape, params, name, pre)?;
                    for b in bindings {
                        let layout = index.predicate(&b.predicate).ok_or_else(|| Error::UnknownAtom(b.predicate.clone()))?;
                        if let Some(&r) = b.rows.iter().find(|&&r| r >= x.nrows()) {
                            return Err(Error::Shape(format!("binding `{}` row {r} of {}", b.predicate, x.nrows())));
                        }
                        parts.push((out, b.output, b.rows.clone(), layout.offset));
                    }
                }
            }
        }
        tape.assemble(index.n(), parts)
    }
}

fn mlp_tail(tape: &mut Tape<'_>, params: &ParamStore, prefix: &str, pre: NodeId) -> Result<NodeId> {
    let b1 = tape.param(params, param_id(params, &format!("{prefix}.b1"))?);
    let h = tape.add_row(pre, b1)?;
    let h = tape.tanh(h);
    let w2 = tape.param(params, param_id(params, &format!("{prefix}.w2"))?);
    let b2 = tape.param(params, param_id(params, &format!("{prefix}.b2"))?);
    let z = tape.matmul(h, w2)?;
    let z = tape.add_row(z, b2)?;
    Ok(tape.squash(z))
}

fn param_id(params: &ParamStore, name: &str) -> Result<usize> {
    params.id(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
}

fn embedding_name(index: &AtomIndex, domain: usize) -> String {
    format!("emb.{}", index.domain_name(domain))
}

/// Constant position of argument `k` for every atom of a predicate, in index order.
fn argument_rows(sizes: &[usize], strides: &[usize], k: usize) -> Vec<usize> {
    let total: usize = sizes.iter().product();
    (0..total).map(|i| (i / strides[k]) % sizes[k]).collect()
}

/// Forward pass only: `f_nn` as a plain vector.
pub fn predict_fnn(params: &ParamStore, net: &Network, index: &AtomIndex, features: Option<&Array2<f64>>) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let out = net.forward(&mut tape, params, index, features)?;
    Ok(tape.value(out).column(0).to_vec())
}
