use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dlm_core::checkpoint::Checkpoint;
use dlm_core::config::RunConfig;
use dlm_core::countries::{apply_task_removal, evaluate_countries, CountriesData, CountriesSplit, Task};
use dlm_core::grounding::{compile_report, ground_all, DEFAULT_CAPACITY};
use dlm_core::logic::{parse_facts, Fact};
use dlm_core::network::predict_fnn;
use dlm_core::pairs::{generate_pairs, IdxSource, ImageSource, PairsSpec, SyntheticSource};
use dlm_core::train::{Model, Trainer};
use dlm_core::{map_infer, parse_kb, AtomIndex, KnowledgeBase, Network, TNorm, TrainTargets};

#[derive(Parser)]
#[command(name = "dlm", version, about = "Deep logic models: fuzzy rules, neural predicates and MAP inference")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ground a knowledge base and print atom and rule statistics.
    Compile {
        kb: PathBuf,
        #[arg(long, default_value = "product")]
        tnorm: TNorm,
        #[arg(long, default_value_t = DEFAULT_CAPACITY)]
        capacity: u64,
    },
    /// Train a model and write a checkpoint and a trace CSV.
    Train {
        kb: PathBuf,
        targets: PathBuf,
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the checkpoint path with a `.trace.csv` suffix.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Solve MAP with a trained model and write one CSV row per atom.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a Countries model on the task's test queries.
    Eval {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "data/countries/countries.facts")]
        facts: PathBuf,
        #[arg(long, default_value = "data/countries/split.txt")]
        split: PathBuf,
    },
    /// Write the knowledge base and closed-world targets of a Countries task.
    CountriesGen {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "data/countries/countries.facts")]
        facts: PathBuf,
        /// Existing split file; a new seeded split is drawn when absent.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampled zero targets per fact; 0 writes the whole closed world.
        #[arg(long, default_value_t = 0)]
        negatives: usize,
    },
    /// Generate a PAIRS dataset.
    PairsGen {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// IDX image file; the synthetic source is used without it.
        #[arg(long, requires = "idx_labels")]
        idx_images: Option<PathBuf>,
        #[arg(long)]
        idx_labels: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    parse_kb(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn compile(kb: &Path, tnorm: TNorm, capacity: u64) -> Result<()> {
    let kb = load_kb(kb)?;
    let index = AtomIndex::with_capacity(&kb, capacity)?;
    let pots = ground_all(&kb, tnorm, &index, capacity)?;
    print!("{}", compile_report(&kb, &index, &pots));
    Ok(())
}

fn train(kb_path: &Path, targets: &Path, config: &Path, out: &Path, trace: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let kb = load_kb(kb_path)?;
    let facts = parse_facts(&read(targets)?, &kb).with_context(|| format!("parsing {}", targets.display()))?;
    let index = AtomIndex::with_capacity(&kb, cfg.capacity)?;
    let pots = ground_all(&kb, cfg.tnorm, &index, cfg.capacity)?;
    let targets = TrainTargets::from_facts(&facts, &index)?;
    let network = Network::relational(&index, cfg.embedding_dim, cfg.hidden);
    let model = Model { index: &index, potentials: &pots, network: &network, features: None };
    let outcome = Trainer::new(model, &targets, cfg.training.clone())?.run()?;
    let f_nn = predict_fnn(&outcome.params, &network, &index, None)?;

    let trace = trace.unwrap_or_else(|| out.with_extension("trace.csv"));
    outcome.trace.write_csv(BufWriter::new(File::create(&trace)?))?;
    let iterations = outcome.trace.len();
    Checkpoint::new(cfg, kb, network, outcome.params, outcome.map.y, f_nn).save(out)?;
    println!(
        "trained {iterations} iterations (converged: {}), checkpoint {}, trace {}",
        outcome.converged,
        out.display(),
        trace.display()
    );
    Ok(())
}

fn infer(model: &Path, out: Option<PathBuf>) -> Result<()> {
    let ck = Checkpoint::load(model)?;
    let cfg = &ck.config;
    let index = AtomIndex::with_capacity(&ck.kb, cfg.capacity)?;
    let pots = ground_all(&ck.kb, cfg.tnorm, &index, cfg.capacity)?;
    let f_nn = predict_fnn(&ck.params, &ck.network, &index, None)?;
    let map = map_infer(&f_nn, &ck.params.lambda, &pots, &cfg.training.map)?;

    let sink: Box<dyn Write> = match &out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let arity = ck.kb.predicates.iter().map(|p| p.arity()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().from_writer(BufWriter::new(sink));
    let mut header = vec!["predicate".to_string()];
    header.extend((1..=arity).map(|k| format!("arg{k}")));
    header.extend(["value".to_string(), "f_nn".to_string()]);
    w.write_record(&header)?;
    for i in 0..index.n() {
        let atom = index.atom(i);
        let mut row = vec![atom.predicate.clone()];
        row.extend(atom.args.iter().cloned());
        row.resize(1 + arity, String::new());
        row.push(map.y[i].to_string());
        row.push(f_nn[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    if let Some(p) = out {
        eprintln!("MAP objective {:.6} after {} iterations, wrote {}", map.objective, map.iterations, p.display());
    }
    Ok(())
}

fn eval(task: Task, model: &Path, facts: &Path, split: &Path) -> Result<()> {
    let ck = Checkpoint::load(model)?;
    let data = CountriesData::load(facts)?;
    let split = CountriesSplit::load(split)?;
    split.validate(&data)?;
    let t = apply_task_removal(&data, &split, task);
    let index = AtomIndex::with_capacity(&ck.kb, ck.config.capacity)?;
    if index.n() != ck.map_y.len() {
        bail!("checkpoint has {} atoms, its knowledge base {}", ck.map_y.len(), index.n());
    }
    let report = evaluate_countries(&t.queries, &t.scores(&index, &ck.map_y)?);
    println!("{task} accuracy: {:.4}", report.accuracy);
    println!("{task} AUC-PR: {:.4}", report.auc_pr);
    Ok(())
}

fn write_facts(path: &Path, facts: impl IntoIterator<Item = (String, f64)>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (atom, v) in facts {
        if v == 1.0 {
            writeln!(w, "{atom}.")?;
        } else {
            writeln!(w, "{atom} = {v:?}.")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn countries_gen(task: Task, out_dir: &Path, facts: &Path, split: Option<PathBuf>, seed: u64, negatives: usize) -> Result<()> {
    let data = CountriesData::load(facts)?;
    let split = match split {
        Some(p) => {
            let s = CountriesSplit::load(&p)?;
            s.validate(&data)?;
            s
        }
        None => CountriesSplit::random(&data, 20, 20, seed)?,
    };
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("split.txt"), split.to_text())?;
    let t = apply_task_removal(&data, &split, task);
    let kb = t.kb(&data);
    fs::write(out_dir.join("kb.dlm"), kb.to_string())?;
    let index = AtomIndex::with_capacity(&KnowledgeBase { rules: Vec::new(), ..kb.clone() }, u64::MAX)?;
    let targets = t.targets(&index, negatives, seed)?;
    write_facts(&out_dir.join("targets.dlm"), targets.entries().iter().map(|&(i, v)| (index.atom(i).to_string(), v)))?;
    println!(
        "{task}: {} facts kept, {} removed, {} targets, {} queries in {}",
        t.retained.len(),
        t.removed.len(),
        targets.len(),
        t.queries.len(),
        out_dir.display()
    );
    Ok(())
}

fn pairs_gen(out_dir: &Path, pairs: usize, seed: u64, images: Option<PathBuf>, labels: Option<PathBuf>, noise: f64) -> Result<()> {
    let spec = PairsSpec { pairs, seed, ..Default::default() };
    let mut source: Box<dyn ImageSource> = match (images, labels) {
        (Some(i), Some(l)) => Box::new(IdxSource::open(&i, &l)?),
        _ => Box::new(SyntheticSource::new(seed, noise)),
    };
    let data = generate_pairs(&spec, source.as_mut())?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("kb.dlm"), data.kb.to_string())?;
    let mut w = csv::Writer::from_path(out_dir.join("pairs.csv"))?;
    w.write_record(["pair", "first", "second", "split"])?;
    for (k, p) in data.pairs.iter().enumerate() {
        w.write_record([format!("p{k}"), p.first.to_string(), p.second.to_string(), if p.train { "train" } else { "test" }.into()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out_dir.join("features.csv"))?;
    for row in data.features.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    let targets: Vec<Fact> = data
        .pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.train)
        .flat_map(|(k, p)| {
            (0..10).flat_map(move |d| {
                [
                    Fact { atom: dlm_core::GroundAtom::new(format!("first_{d}"), &[&format!("p{k}")]), value: (d == p.first) as u8 as f64 },
                    Fact { atom: dlm_core::GroundAtom::new(format!("second_{d}"), &[&format!("p{k}")]), value: (d == p.second) as u8 as f64 },
                ]
            })
        })
        .collect();
    write_facts(&out_dir.join("targets.dlm"), targets.into_iter().map(|f| (f.atom.to_string(), f.value)))?;
    println!("{} pairs ({} features each) in {}", data.pairs.len(), data.features.ncols(), out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Compile { kb, tnorm, capacity } => compile(&kb, tnorm, capacity),
        Cmd::Train { kb, targets, config, out, trace } => train(&kb, &targets, &config, &out, trace),
        Cmd::Infer { model, out } => infer(&model, out),
        Cmd::Eval { task, model, facts, split } => eval(task, &model, &facts, &split),
        Cmd::CountriesGen { task, out_dir, facts, split, seed, negatives } => countries_gen(task, &out_dir, &facts, split, seed, negatives),
        Cmd::PairsGen { out_dir, pairs, seed, idx_images, idx_labels, noise } => pairs_gen(&out_dir, pairs, seed, idx_images, idx_labels, noise),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
