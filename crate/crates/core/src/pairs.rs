//! PAIRS: pairs of digit images whose second digit depends on the first.
//!
//! The first digit is uniform over 0..=9. The second has the same parity and
//! sits `2k` places further on the circle of same-parity digits with
//! probability `p[k]`, so after a 2 comes a 2, 4, 6, 8 or 0 with
//! probabilities `p[0..5]`. Each image is rotated by an independent uniform
//! angle in `[0°, max_angle]`, anti-clockwise.

use std::path::Path;

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grounding::{ground_all, AtomIndex};
use crate::logic::{DomainDecl, Formula, GroundAtom, KnowledgeBase, PredicateDecl};
use crate::network::{predict_fnn, Binding, Network, NetworkSpec};
use crate::train::{Model, TrainOutcome, TrainTargets, Trainer};

pub const DIGITS: usize = 10;
pub const PAIR_DOMAIN: &str = "pair";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsSpec {
    pub pairs: usize,
    pub probs: [f64; 5],
    pub max_angle: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for PairsSpec {
    fn default() -> Self {
        PairsSpec {
            pairs: 1000,
            probs: [0.9, 0.07, 0.01, 0.01, 0.01],
            max_angle: 90.0,
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

impl PairsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 {
            return Err(Error::Config("at least one pair is required".into()));
        }
        if self.probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.probs.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Config(format!("probabilities {:?} must be non-increasing in [0,1]", self.probs)));
        }
        if (self.probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("probabilities {:?} do not sum to 1", self.probs)));
        }
        if !(0.0..=360.0).contains(&self.max_angle) || !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::Config("max_angle or train_fraction out of range".into()));
        }
        Ok(())
    }
}

/// Draws the digit pair `(first, second)`.
pub fn sample_digits<R: Rng + ?Sized>(probs: &WeightedIndex<f64>, rng: &mut R) -> (usize, usize) {
    let first = rng.gen_range(0..DIGITS);
    let k = probs.sample(rng);
    (first, (first + 2 * k) % DIGITS)
}

/// A labelled image generator; `angle` is in degrees, anti-clockwise.
pub trait ImageSource {
    fn dim(&self) -> usize;
    fn sample(&mut self, digit: usize, angle: f64, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// Real digit images read from IDX files, scaled to `[0,1]`.
pub struct IdxSource {
    rows: usize,
    cols: usize,
    by_digit: Vec<Vec<Vec<u8>>>,
}

fn be_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::SourceUnavailable("truncated IDX header".into()))
}

/// Reads an IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    if be_u32(bytes, 0)? != 0x0000_0803 {
        return Err(Error::SourceUnavailable("bad IDX image magic".into()));
    }
    let (n, r, c) = (be_u32(bytes, 4)? as usize, be_u32(bytes, 8)? as usize, be_u32(bytes, 12)? as usize);
    let data = bytes.get(16..16 + n * r * c).ok_or_else(|| Error::SourceUnavailable("truncated IDX images".into()))?;
    Ok((n, r, c, data.to_vec()))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    if be_u32(bytes, 0)? != 0x0000_0801 {
        return Err(Error::SourceUnavailable("bad IDX label magic".into()));
    }
    let n = be_u32(bytes, 4)? as usize;
    let data = bytes.get(8..8 + n).ok_or_else(|| Error::SourceUnavailable("truncated IDX labels".into()))?;
    Ok(data.to_vec())
}

impl IdxSource {
    pub fn from_bytes(images: &[u8], labels: &[u8]) -> Result<Self> {
        let (n, rows, cols, pixels) = read_idx_images(images)?;
        let labels = read_idx_labels(labels)?;
        if labels.len() != n {
            return Err(Error::SourceUnavailable(format!("{n} images but {} labels", labels.len())));
        }
        let mut by_digit = vec![Vec::new(); DIGITS];
        for (i, &l) in labels.iter().enumerate() {
            let d = l as usize;
            if d >= DIGITS {
                return Err(Error::SourceUnavailable(format!("label {d}")));
            }
            by_digit[d].push(pixels[i * rows * cols..(i + 1) * rows * cols].to_vec());
        }
        if let Some(d) = by_digit.iter().position(Vec::is_empty) {
            return Err(Error::SourceUnavailable(format!("no image of digit {d}")));
        }
        Ok(IdxSource { rows, cols, by_digit })
    }

    pub fn open(images: &Path, labels: &Path) -> Result<Self> {
        let read = |p: &Path| std::fs::read(p).map_err(|e| Error::SourceUnavailable(format!("{}: {e}", p.display())));
        IdxSource::from_bytes(&read(images)?, &read(labels)?)
    }
}

impl ImageSource for IdxSource {
    fn dim(&self) -> usize {
        self.rows * self.cols
    }

    fn sample(&mut self, digit: usize, angle: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let img = self.by_digit[digit].choose(rng).expect("non-empty");
        let px: Vec<f64> = img.iter().map(|&v| v as f64 / 255.0).collect();
        rotate_bilinear(&px, self.rows, self.cols, angle)
    }
}

/// Rotates a row-major image anti-clockwise about its centre. Samples that
/// fall outside the source read as zero.
pub fn rotate_bilinear(img: &[f64], rows: usize, cols: usize, degrees: f64) -> Vec<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let at = |r: isize, k: isize| -> f64 {
        if r < 0 || k < 0 || r >= rows as isize || k >= cols as isize {
            0.0
        } else {
            img[r as usize * cols + k as usize]
        }
    };
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for k in 0..cols {
            let dx = k as f64 - cx;
            let dy = r as f64 - cy;
            let sx = cx + dx * c - dy * s;
            let sy = cy + dx * s + dy * c;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            out[r * cols + k] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    }
    out
}

/// Gaussian class prototypes with isotropic noise. Rotation acts through a
/// fixed random orthonormal basis `Q` as `Q R(θ) Qᵀ`, where `R(θ)` turns each
/// consecutive coordinate pair by `θ`.
pub struct SyntheticSource {
    pub prototypes: Array2<f64>,
    pub basis: Array2<f64>,
    pub noise: f64,
}

pub const SYNTHETIC_DIM: usize = 64;

impl SyntheticSource {
    pub fn new(seed: u64, noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = SYNTHETIC_DIM;
        let prototypes = Array2::from_shape_simple_fn((DIGITS, d), || rng.sample::<f64, _>(StandardNormal));
        SyntheticSource { prototypes, basis: random_orthogonal(d, &mut rng), noise }
    }
}

/// Orthonormal matrix from Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array2<f64> {
    let mut q = Array2::from_shape_simple_fn((d, d), || rng.sample::<f64, _>(StandardNormal));
    for i in 0..d {
        for j in 0..i {
            let dot = q.row(i).dot(&q.row(j));
            let qj = q.row(j).to_owned();
            q.row_mut(i).scaled_add(-dot, &qj);
        }
        let norm = q.row(i).dot(&q.row(i)).sqrt();
        q.row_mut(i).mapv_inplace(|v| v / norm);
    }
    q
}

impl ImageSource for SyntheticSource {
    fn dim(&self) -> usize {
        SYNTHETIC_DIM
    }

    fn sample(&mut self, digit: usize, angle: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let x: Vec<f64> = self
            .prototypes
            .row(digit)
            .iter()
            .map(|m| m + self.noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let z = self.basis.dot(&ndarray::Array1::from(x));
        let (s, c) = angle.to_radians().sin_cos();
        let mut r = z.clone();
        for k in (0..SYNTHETIC_DIM - 1).step_by(2) {
            r[k] = c * z[k] - s * z[k + 1];
            r[k + 1] = s * z[k] + c * z[k + 1];
        }
        self.basis.t().dot(&r).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub first: usize,
    pub second: usize,
    pub train: bool,
}

/// Pairs, their images (rows `2k` and `2k + 1` belong to pair `k`) and the
/// knowledge base over them.
#[derive(Debug, Clone)]
pub struct PairsDataset {
    pub pairs: Vec<Pair>,
    pub features: Array2<f64>,
    pub kb: KnowledgeBase,
}

pub fn first_predicate(d: usize) -> String {
    format!("first_{d}")
}

pub fn second_predicate(d: usize) -> String {
    format!("second_{d}")
}

/// The 100 rules `forall p in pair: first_i(p) -> second_j(p)`, `i`-major.
pub fn pairs_rules() -> Vec<Formula> {
    (0..DIGITS)
        .flat_map(|i| {
            (0..DIGITS).map(move |j| {
                Formula::forall(
                    "p",
                    PAIR_DOMAIN,
                    Formula::implies(Formula::atom(first_predicate(i), &["p"]), Formula::atom(second_predicate(j), &["p"])),
                )
            })
        })
        .collect()
}

pub fn generate_pairs(spec: &PairsSpec, source: &mut dyn ImageSource) -> Result<PairsDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = WeightedIndex::new(spec.probs).map_err(|e| Error::Config(e.to_string()))?;
    let n_train = (spec.pairs as f64 * spec.train_fraction).round() as usize;
    let mut features = Array2::zeros((2 * spec.pairs, source.dim()));
    let mut pairs = Vec::with_capacity(spec.pairs);
    for k in 0..spec.pairs {
        let (first, second) = sample_digits(&weights, &mut rng);
        for (row, d) in [(2 * k, first), (2 * k + 1, second)] {
            let angle = rng.gen_range(0.0..=spec.max_angle);
            let img = source.sample(d, angle, &mut rng);
            features.row_mut(row).assign(&ndarray::ArrayView1::from(&img));
        }
        pairs.push(Pair { first, second, train: false });
    }
    let mut order: Vec<usize> = (0..spec.pairs).collect();
    order.shuffle(&mut rng);
    for &k in &order[..n_train] {
        pairs[k].train = true;
    }
    let kb = KnowledgeBase {
        domains: vec![DomainDecl { name: PAIR_DOMAIN.into(), constants: (0..spec.pairs).map(|k| format!("p{k}")).collect() }],
        predicates: (0..DIGITS)
            .map(first_predicate)
            .chain((0..DIGITS).map(second_predicate))
            .map(|name| PredicateDecl { name, argument_domains: vec![PAIR_DOMAIN.into()] })
            .collect(),
        facts: Vec::new(),
        rules: pairs_rules(),
    };
    Ok(PairsDataset { pairs, features, kb })
}

impl PairsDataset {
    /// One classifier with ten outputs shared by both positions.
    pub fn network(&self, hidden: usize) -> Network {
        let n = self.pairs.len();
        let bindings = (0..DIGITS)
            .map(|d| Binding { predicate: first_predicate(d), output: d, rows: (0..n).map(|k| 2 * k).collect() })
            .chain((0..DIGITS).map(|d| Binding { predicate: second_predicate(d), output: d, rows: (0..n).map(|k| 2 * k + 1).collect() }))
            .collect();
        Network::new(vec![NetworkSpec::Classifier {
            name: "digits".into(),
            input_dim: self.features.ncols(),
            hidden,
            outputs: DIGITS,
            bindings,
        }])
    }

    /// One-hot targets on both positions of every training pair.
    pub fn targets(&self, index: &AtomIndex) -> Result<TrainTargets> {
        let mut entries = Vec::new();
        for (k, p) in self.pairs.iter().enumerate().filter(|(_, p)| p.train) {
            let c = format!("p{k}");
            for d in 0..DIGITS {
                for (pred, truth) in [(first_predicate(d), p.first), (second_predicate(d), p.second)] {
                    let atom = GroundAtom::new(pred, &[&c]);
                    let i = index.index_of(&atom).ok_or_else(|| Error::UnknownAtom(atom.to_string()))?;
                    entries.push((i, if d == truth { 1.0 } else { 0.0 }));
                }
            }
        }
        TrainTargets::new(entries, index.n())
    }

    /// Argmax digit pair of every test pair read from `y`, with the truth.
    pub fn test_predictions(&self, index: &AtomIndex, y: &[f64]) -> Vec<((usize, usize), (usize, usize))> {
        let argmax = |pred: fn(usize) -> String, c: &str| {
            (0..DIGITS)
                .map(|d| y[index.index_of(&GroundAtom::new(pred(d), &[c])).expect("pair atom")])
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (d, v)| if v > best.1 { (d, v) } else { best })
                .0
        };
        self.pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.train)
            .map(|(k, p)| {
                let c = format!("p{k}");
                ((argmax(first_predicate, &c), argmax(second_predicate, &c)), (p.first, p.second))
            })
            .collect()
    }
}

/// Fraction of pairs with both digits right.
pub fn evaluate_pairs(predictions: &[(usize, usize)], truth: &[(usize, usize)]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / predictions.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsReport {
    /// Network outputs of the trained model.
    pub network: f64,
    /// MAP readout.
    pub map: f64,
}

pub struct PairsRun {
    pub index: AtomIndex,
    pub network: Network,
    pub outcome: TrainOutcome,
    pub f_nn: Vec<f64>,
    pub report: PairsReport,
}

/// Trains on the training pairs and scores the test pairs. With
/// `rules == false` the rules are dropped.
pub fn run_pairs(data: &PairsDataset, cfg: &RunConfig, rules: bool) -> Result<PairsRun> {
    let mut kb = data.kb.clone();
    if !rules {
        kb.rules.clear();
    }
    let index = AtomIndex::with_capacity(&kb, cfg.capacity)?;
    let potentials = ground_all(&kb, cfg.tnorm, &index, cfg.capacity)?;
    let network = data.network(cfg.hidden);
    let targets = data.targets(&index)?;
    let model = Model { index: &index, potentials: &potentials, network: &network, features: Some(&data.features) };
    let outcome = Trainer::new(model, &targets, cfg.training.clone())?.run()?;
    let f_nn = predict_fnn(&outcome.params, &network, &index, Some(&data.features))?;
    let score = |y: &[f64]| {
        let (p, t): (Vec<_>, Vec<_>) = data.test_predictions(&index, y).into_iter().unzip();
        evaluate_pairs(&p, &t)
    };
    let report = PairsReport { network: score(&f_nn), map: score(&outcome.map.y) };
    Ok(PairsRun { index, network, outcome, f_nn, report })
}
