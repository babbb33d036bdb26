//! Countries link-prediction tasks: loading, splits, task removals and
//! evaluation.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grounding::{ground_all, AtomIndex};
use crate::network::{predict_fnn, Network};
use crate::logic::{build_countries_rules, DomainDecl, Fact, GroundAtom, KnowledgeBase, PredicateDecl, COUNTRIES_DOMAIN, LOCATED_IN, NEIGHBOR_OF};
use crate::train::{Model, TrainOutcome, TrainTargets, Trainer};

/// The facts file split by constant kind.
///
/// Regions are `locatedIn` objects that are never subjects, sub-regions are
/// both, and every other constant is a country.
#[derive(Debug, Clone, PartialEq)]
pub struct CountriesData {
    pub kb: KnowledgeBase,
    pub countries: Vec<String>,
    pub regions: Vec<String>,
    pub subregions: Vec<String>,
}

fn parse_fact_line(line: &str) -> Option<(&str, &str, &str)> {
    let body = line.strip_suffix('.')?;
    let (pred, rest) = body.split_once('(')?;
    let args = rest.strip_suffix(')')?;
    let (a, b) = args.split_once(',')?;
    let ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    let (pred, a, b) = (pred.trim(), a.trim(), b.trim());
    (ok(pred) && ok(a) && ok(b)).then_some((pred, a, b))
}

impl CountriesData {
    pub fn parse(text: &str) -> Result<Self> {
        let mut constants: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        let mut facts = Vec::new();
        let mut fact_set = HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let err = |message: String| Error::Format { line: no + 1, message };
            let (pred, a, b) = parse_fact_line(line).ok_or_else(|| err(format!("expected `pred(a, b).`, found `{line}`")))?;
            if pred != LOCATED_IN && pred != NEIGHBOR_OF {
                return Err(err(format!("unknown relation `{pred}`")));
            }
            for c in [a, b] {
                if seen.insert(c.to_string()) {
                    constants.push(c.to_string());
                }
            }
            let atom = GroundAtom::new(pred, &[a, b]);
            if !fact_set.insert(atom.clone()) {
                return Err(err(format!("duplicate fact {atom}")));
            }
            facts.push(Fact { atom, value: 1.0 });
        }
        if facts.is_empty() {
            return Err(Error::Format { line: text.lines().count(), message: "no facts".into() });
        }

        let subjects: HashSet<&str> = facts.iter().filter(|f| f.atom.predicate == LOCATED_IN).map(|f| f.atom.args[0].as_str()).collect();
        let objects: HashSet<&str> = facts.iter().filter(|f| f.atom.predicate == LOCATED_IN).map(|f| f.atom.args[1].as_str()).collect();
        let mut countries = Vec::new();
        let mut regions = Vec::new();
        let mut subregions = Vec::new();
        for c in &constants {
            match (subjects.contains(c.as_str()), objects.contains(c.as_str())) {
                (false, true) => regions.push(c.clone()),
                (true, true) => subregions.push(c.clone()),
                _ => countries.push(c.clone()),
            }
        }

        let kb = KnowledgeBase {
            domains: vec![DomainDecl { name: COUNTRIES_DOMAIN.into(), constants }],
            predicates: [LOCATED_IN, NEIGHBOR_OF]
                .iter()
                .map(|p| PredicateDecl { name: (*p).into(), argument_domains: vec![COUNTRIES_DOMAIN.into(); 2] })
                .collect(),
            facts,
            rules: build_countries_rules(),
        };
        Ok(CountriesData { kb, countries, regions, subregions })
    }

    pub fn load(path: &Path) -> Result<Self> {
        CountriesData::parse(&std::fs::read_to_string(path)?)
    }

    pub fn constants(&self) -> &[String] {
        &self.kb.domains[0].constants
    }

    fn has_fact(&self, pred: &str, a: &str, b: &str) -> bool {
        self.kb.facts.iter().any(|f| f.atom.predicate == pred && f.atom.args[0] == a && f.atom.args[1] == b)
    }

    pub fn neighbors(&self) -> HashMap<&str, Vec<&str>> {
        let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
        for f in &self.kb.facts {
            if f.atom.predicate == NEIGHBOR_OF {
                out.entry(f.atom.args[0].as_str()).or_default().push(f.atom.args[1].as_str());
            }
        }
        out
    }

    /// The true region of every country that has exactly one.
    pub fn region_of(&self, country: &str) -> Option<&str> {
        let mut it = self.regions.iter().filter(|r| self.has_fact(LOCATED_IN, country, r));
        match (it.next(), it.next()) {
            (Some(r), None) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountriesSplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl CountriesSplit {
    /// Reads `[train]`, `[dev]` and `[test]` sections, one country per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut split = CountriesSplit { train: vec![], dev: vec![], test: vec![] };
        let mut current: Option<&mut Vec<String>> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('%') || line.starts_with('#') {
                continue;
            }
            current = match line {
                "[train]" => Some(&mut split.train),
                "[dev]" => Some(&mut split.dev),
                "[test]" => Some(&mut split.test),
                _ if line.starts_with('[') => {
                    return Err(Error::Format { line: no + 1, message: format!("unknown section {line}") });
                }
                _ => match current {
                    Some(v) => {
                        v.push(line.to_string());
                        Some(v)
                    }
                    None => return Err(Error::Format { line: no + 1, message: "country outside a section".into() }),
                },
            };
        }
        Ok(split)
    }

    pub fn load(path: &Path) -> Result<Self> {
        CountriesSplit::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, list) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            s.push_str(&format!("[{name}]\n"));
            for c in list {
                s.push_str(c);
                s.push('\n');
            }
        }
        s
    }

    /// Checks that the split partitions the countries and that every dev and
    /// test country has a neighbour in train.
    pub fn validate(&self, data: &CountriesData) -> Result<()> {
        let all: BTreeSet<&str> = data.countries.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        for c in self.train.iter().chain(&self.dev).chain(&self.test) {
            if !all.contains(c.as_str()) {
                return Err(Error::SplitViolation(format!("`{c}` is not a country")));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::SplitViolation(format!("`{c}` listed twice")));
            }
        }
        if seen.len() != all.len() {
            let missing = all.difference(&seen).next().unwrap();
            return Err(Error::SplitViolation(format!("`{missing}` is not assigned")));
        }
        let train: HashSet<&str> = self.train.iter().map(String::as_str).collect();
        let nb = data.neighbors();
        for c in self.dev.iter().chain(&self.test) {
            let ok = nb.get(c.as_str()).is_some_and(|v| v.iter().any(|n| train.contains(n)));
            if !ok {
                return Err(Error::SplitViolation(format!("`{c}` has no neighbour in train")));
            }
        }
        Ok(())
    }

    /// Seeded random split with `dev` and `test` countries.
    ///
    /// Candidates are drawn in shuffled order and rejected when they have no
    /// remaining train neighbour, or when moving them out of train would strip
    /// an already held-out country of its last train neighbour.
    pub fn random(data: &CountriesData, dev: usize, test: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<&str> = data.countries.iter().map(String::as_str).collect();
        order.shuffle(&mut rng);
        let nb = data.neighbors();
        let mut held: Vec<&str> = Vec::new();
        let mut out: HashSet<&str> = HashSet::new();
        let train_neighbors = |c: &str, out: &HashSet<&str>| nb.get(c).map_or(0, |v| v.iter().filter(|n| !out.contains(*n) && data.countries.iter().any(|k| k == *n)).count());
        for c in order {
            if held.len() == dev + test {
                break;
            }
            if train_neighbors(c, &out) == 0 {
                continue;
            }
            out.insert(c);
            if held.iter().any(|h| train_neighbors(h, &out) == 0) {
                out.remove(c);
                continue;
            }
            held.push(c);
        }
        if held.len() < dev + test {
            return Err(Error::SplitViolation(format!("only {} countries can be held out", held.len())));
        }
        let train = data.countries.iter().filter(|c| !out.contains(c.as_str())).cloned().collect();
        let split = CountriesSplit {
            train,
            dev: held[..dev].iter().map(|s| s.to_string()).collect(),
            test: held[dev..].iter().map(|s| s.to_string()).collect(),
        };
        split.validate(data)?;
        Ok(split)
    }
}

/// Loads a facts file and a split file and validates the split.
pub fn load_countries(facts: &Path, split: &Path) -> Result<(CountriesData, CountriesSplit)> {
    let data = CountriesData::load(facts)?;
    let split = CountriesSplit::load(split)?;
    split.validate(&data)?;
    Ok((data, split))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    S1,
    S2,
    S3,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::S1, Task::S2, Task::S3];
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::S1 => "S1",
            Task::S2 => "S2",
            Task::S3 => "S3",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Task::S1),
            "s2" => Ok(Task::S2),
            "s3" => Ok(Task::S3),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

/// One evaluation query `locatedIn(country, region)` with its truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub country: String,
    pub region: String,
    pub truth: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountriesTask {
    pub task: Task,
    pub retained: Vec<Fact>,
    pub removed: Vec<Fact>,
    /// Atoms whose value is hidden from training, true or not.
    pub hidden: BTreeSet<GroundAtom>,
    pub queries: Vec<Query>,
}

/// Hides the task's `locatedIn` blocks. Every atom of a hidden block leaves
/// the training targets, so the targets reveal nothing about which of them
/// were facts.
pub fn apply_task_removal(data: &CountriesData, split: &CountriesSplit, task: Task) -> CountriesTask {
    let loc = |c: &str, r: &str| GroundAtom::new(LOCATED_IN, &[c, r]);
    let mut hidden = BTreeSet::new();
    for c in &split.test {
        for r in &data.regions {
            hidden.insert(loc(c, r));
        }
        if task != Task::S1 {
            for s in &data.subregions {
                hidden.insert(loc(c, s));
            }
        }
    }
    if task == Task::S3 {
        let held: HashSet<&str> = split.dev.iter().chain(&split.test).map(String::as_str).collect();
        let nb = data.neighbors();
        for c in &split.train {
            if nb.get(c.as_str()).is_some_and(|v| v.iter().any(|n| held.contains(n))) {
                for r in &data.regions {
                    hidden.insert(loc(c, r));
                }
            }
        }
    }
    let (removed, retained) = data.kb.facts.iter().cloned().partition(|f| hidden.contains(&f.atom));
    let facts: HashSet<&GroundAtom> = data.kb.facts.iter().map(|f| &f.atom).collect();
    let queries = split
        .test
        .iter()
        .flat_map(|c| {
            data.regions.iter().map(|r| Query { country: c.clone(), region: r.clone(), truth: facts.contains(&loc(c, r)) })
        })
        .collect();
    CountriesTask { task, retained, removed, hidden, queries }
}

impl CountriesTask {
    /// The knowledge base seen by training: all constants and rules, retained facts only.
    pub fn kb(&self, data: &CountriesData) -> KnowledgeBase {
        KnowledgeBase { facts: self.retained.clone(), ..data.kb.clone() }
    }

    /// Targets over the visible atoms: retained facts are 1 and other visible
    /// atoms are 0. With `negatives > 0` only that many zeros per fact are
    /// kept, drawn with `seed`; 0 keeps the whole closed world.
    pub fn targets(&self, index: &AtomIndex, negatives: usize, seed: u64) -> Result<TrainTargets> {
        let mut value = vec![Some(0.0); index.n()];
        for atom in &self.hidden {
            let i = index.index_of(atom).ok_or_else(|| Error::UnknownAtom(atom.to_string()))?;
            value[i] = None;
        }
        let mut positives = Vec::with_capacity(self.retained.len());
        for f in &self.retained {
            let i = index.index_of(&f.atom).ok_or_else(|| Error::UnknownAtom(f.atom.to_string()))?;
            value[i] = None;
            positives.push((i, f.value));
        }
        let mut zeros: Vec<usize> = (0..value.len()).filter(|&i| value[i].is_some()).collect();
        if negatives > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keep = (negatives * positives.len()).min(zeros.len());
            zeros.partial_shuffle(&mut rng, keep);
            zeros.truncate(keep);
        }
        let entries = positives.into_iter().chain(zeros.into_iter().map(|i| (i, 0.0))).collect();
        TrainTargets::new(entries, index.n())
    }

    /// Query scores read from `y`.
    pub fn scores(&self, index: &AtomIndex, y: &[f64]) -> Result<Vec<f64>> {
        self.queries
            .iter()
            .map(|q| {
                let atom = GroundAtom::new(LOCATED_IN, &[&q.country, &q.region]);
                index.index_of(&atom).map(|i| y[i]).ok_or_else(|| Error::UnknownAtom(atom.to_string()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryScore {
    pub country: String,
    pub truth: String,
    pub scores: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub auc_pr: f64,
    pub countries: Vec<CountryScore>,
}

/// Argmax accuracy over each country's regions, plus AUC-PR over all queries.
///
/// A tie between `k` top regions that includes the true one counts `1/k`,
/// the expected accuracy of a uniform tie-break.
pub fn evaluate_countries(queries: &[Query], scores: &[f64]) -> EvalReport {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        match groups.last_mut() {
            Some((c, v)) if *c == q.country => v.push(i),
            _ => groups.push((q.country.clone(), vec![i])),
        }
    }
    let mut correct = 0.0;
    let mut countries = Vec::new();
    for (country, ids) in &groups {
        let best = ids.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        let top: Vec<usize> = ids.iter().copied().filter(|&i| scores[i] == best).collect();
        if top.iter().any(|&i| queries[i].truth) {
            correct += 1.0 / top.len() as f64;
        }
        countries.push(CountryScore {
            country: country.clone(),
            truth: ids.iter().find(|&&i| queries[i].truth).map(|&i| queries[i].region.clone()).unwrap_or_default(),
            scores: ids.iter().map(|&i| (queries[i].region.clone(), scores[i])).collect(),
        });
    }
    let accuracy = if groups.is_empty() { 0.0 } else { correct / groups.len() as f64 };
    let labels: Vec<bool> = queries.iter().map(|q| q.truth).collect();
    EvalReport { accuracy, auc_pr: average_precision(&labels, scores), countries }
}

/// Area under the precision-recall curve as average precision; tied scores
/// enter the curve together.
pub fn average_precision(labels: &[bool], scores: &[f64]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            tp += labels[order[k]] as usize;
            seen += 1;
            k += 1;
        }
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
    }
    ap
}

/// A trained Countries model and its report.
pub struct TaskRun {
    pub index: AtomIndex,
    pub network: Network,
    pub outcome: TrainOutcome,
    pub f_nn: Vec<f64>,
    pub report: EvalReport,
}

/// Trains on one task and evaluates the MAP state on its queries. With
/// `rules == false` the rules are dropped, which freezes every rule weight at
/// zero and leaves the network alone.
pub fn run_task(data: &CountriesData, split: &CountriesSplit, task: Task, cfg: &RunConfig, rules: bool) -> Result<TaskRun> {
    let t = apply_task_removal(data, split, task);
    let mut kb = t.kb(data);
    if !rules {
        kb.rules.clear();
    }
    let index = AtomIndex::with_capacity(&kb, cfg.capacity)?;
    let potentials = ground_all(&kb, cfg.tnorm, &index, cfg.capacity)?;
    let network = Network::relational(&index, cfg.embedding_dim, cfg.hidden);
    let targets = t.targets(&index, cfg.negatives, cfg.training.seed)?;
    let model = Model { index: &index, potentials: &potentials, network: &network, features: None };
    let outcome = Trainer::new(model, &targets, cfg.training.clone())?.run()?;
    let f_nn = predict_fnn(&outcome.params, &network, &index, None)?;
    let report = evaluate_countries(&t.queries, &t.scores(&index, &outcome.map.y)?);
    Ok(TaskRun { index, network, outcome, f_nn, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "\
locatedIn(a, s1).
locatedIn(a, r1).
locatedIn(b, s1).
locatedIn(b, r1).
locatedIn(c, s2).
locatedIn(c, r2).
locatedIn(s1, r1).
locatedIn(s2, r2).
neighborOf(a, b).
neighborOf(b, a).
neighborOf(b, c).
neighborOf(c, b).
";

    #[test]
    fn classifies_constants() {
        let d = CountriesData::parse(TINY).unwrap();
        assert_eq!(d.countries, ["a", "b", "c"]);
        assert_eq!(d.subregions, ["s1", "s2"]);
        assert_eq!(d.regions, ["r1", "r2"]);
        assert_eq!(d.kb.facts.len(), 12);
        assert_eq!(d.kb.rules.len(), 8);
        assert_eq!(d.region_of("c"), Some("r2"));
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        let bad = "locatedIn(a, b).\nlocatedIn(a, \n";
        assert!(matches!(CountriesData::parse(bad), Err(Error::Format { line: 2, .. })));
        let bad = "locatedIn(a, b).\n\nborders(a, b).\n";
        assert!(matches!(CountriesData::parse(bad), Err(Error::Format { line: 3, .. })));
        assert!(matches!(CountriesData::parse("locatedIn(a, b).\nlocatedIn(a, b).\n"), Err(Error::Format { line: 2, .. })));
    }

    #[test]
    fn split_checks() {
        let d = CountriesData::parse(TINY).unwrap();
        let s = CountriesSplit::parse("[train]\na\nb\n[dev]\n[test]\nc\n").unwrap();
        s.validate(&d).unwrap();
        assert_eq!(CountriesSplit::parse(&s.to_text()).unwrap(), s);
        let s = CountriesSplit::parse("[train]\nc\n[dev]\nb\n[test]\na\n").unwrap();
        assert!(matches!(s.validate(&d), Err(Error::SplitViolation(_))));
        let s = CountriesSplit::parse("[train]\na\n[test]\nc\n").unwrap();
        assert!(matches!(s.validate(&d), Err(Error::SplitViolation(_))));
        assert!(matches!(CountriesSplit::parse("a\n[train]\n"), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn task_blocks() {
        let d = CountriesData::parse(TINY).unwrap();
        let s = CountriesSplit { train: vec!["a".into(), "b".into()], dev: vec![], test: vec!["c".into()] };
        let s1 = apply_task_removal(&d, &s, Task::S1);
        assert_eq!(s1.removed.len(), 1);
        assert_eq!(s1.queries.len(), 2);
        let s2 = apply_task_removal(&d, &s, Task::S2);
        assert_eq!(s2.removed.len(), 2);
        let s3 = apply_task_removal(&d, &s, Task::S3);
        assert_eq!(s3.removed.len(), 3);
        assert!(s3.removed.iter().any(|f| f.atom == GroundAtom::new(LOCATED_IN, &["b", "r1"])));
    }

    #[test]
    fn evaluation_by_hand() {
        let q = |c: &str, r: &str, t| Query { country: c.into(), region: r.into(), truth: t };
        let queries = vec![
            q("x", "r1", true),
            q("x", "r2", false),
            q("y", "r1", false),
            q("y", "r2", true),
            q("z", "r1", true),
            q("z", "r2", false),
        ];
        let rep = evaluate_countries(&queries, &[0.9, 0.1, 0.8, 0.3, 0.5, 0.5]);
        assert!((rep.accuracy - 1.5 / 3.0).abs() < 1e-15);
        let rep = evaluate_countries(&queries, &[0.9, 0.1, 0.2, 0.7, 0.6, 0.5]);
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.auc_pr, 1.0);
    }

    #[test]
    fn average_precision_small_cases() {
        assert!((average_precision(&[true, false, true], &[0.9, 0.8, 0.7]) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((average_precision(&[true, false], &[0.5, 0.5]) - 0.5).abs() < 1e-15);
    }
}
