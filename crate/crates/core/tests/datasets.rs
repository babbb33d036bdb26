use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use dlm_core::countries::{apply_task_removal, load_countries, CountriesData, CountriesSplit, Task};
use dlm_core::pairs::{generate_pairs, sample_digits, PairsSpec, SyntheticSource};
use dlm_core::{AtomIndex, GroundAtom};
use proptest::prelude::*;
use rand::distributions::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn countries_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/countries")
}

fn bundled() -> (CountriesData, CountriesSplit) {
    let dir = countries_dir();
    load_countries(&dir.join("countries.facts"), &dir.join("split.txt")).unwrap()
}

#[test]
fn bundled_counts() {
    let (data, split) = bundled();
    assert_eq!(data.countries.len(), 246);
    assert_eq!(data.regions.len(), 5);
    assert_eq!(data.subregions.len(), 22);
    assert_eq!(data.constants().len(), 273);
    assert_eq!(data.kb.facts.len(), 1162);
    assert_eq!(data.kb.rules.len(), 8);
    assert_eq!((split.train.len(), split.dev.len(), split.test.len()), (206, 20, 20));
    let index = AtomIndex::with_capacity(&data.kb, 50_000_000).unwrap();
    assert_eq!(index.n(), 2 * 273 * 273);
}

#[test]
fn every_country_has_one_region_and_one_subregion() {
    let (data, _) = bundled();
    let regions: HashSet<&str> = data.regions.iter().map(String::as_str).collect();
    let subregions: HashSet<&str> = data.subregions.iter().map(String::as_str).collect();
    for c in &data.countries {
        let objects: Vec<&str> = data
            .kb
            .facts
            .iter()
            .filter(|f| f.atom.predicate == "locatedIn" && f.atom.args[0] == *c)
            .map(|f| f.atom.args[1].as_str())
            .collect();
        assert_eq!(objects.iter().filter(|o| regions.contains(*o)).count(), 1, "{c}");
        assert!(objects.iter().filter(|o| subregions.contains(*o)).count() <= 1, "{c}");
    }
}

#[test]
fn bundled_split_is_valid() {
    let (data, split) = bundled();
    split.validate(&data).unwrap();
    let text = std::fs::read_to_string(countries_dir().join("split.txt")).unwrap();
    assert_eq!(CountriesSplit::parse(&text).unwrap(), split);
    assert_eq!(split.to_text(), text);
}

#[test]
fn split_with_isolated_test_country_is_rejected() {
    let (data, split) = bundled();
    let isolated = data.countries.iter().find(|c| !data.neighbors().contains_key(c.as_str())).unwrap().clone();
    let mut bad = split.clone();
    bad.train.retain(|c| *c != isolated);
    bad.dev.retain(|c| *c != isolated);
    if !bad.test.contains(&isolated) {
        let moved = bad.test.pop().unwrap();
        bad.train.push(moved);
        bad.test.push(isolated);
    }
    assert!(bad.validate(&data).is_err());
}

#[test]
fn harder_tasks_hide_more() {
    let (data, split) = bundled();
    let [s1, s2, s3] = Task::ALL.map(|t| apply_task_removal(&data, &split, t));
    let kept = |t: &dlm_core::countries::CountriesTask| t.retained.iter().map(|f| f.atom.clone()).collect::<BTreeSet<_>>();
    assert!(kept(&s3).is_subset(&kept(&s2)));
    assert!(kept(&s2).is_subset(&kept(&s1)));
    assert!(s1.hidden.is_subset(&s2.hidden) && s2.hidden.is_subset(&s3.hidden));
    for t in [&s1, &s2, &s3] {
        assert_eq!(t.retained.len() + t.removed.len(), data.kb.facts.len());
        assert_eq!(t.queries.len(), 20 * 5);
        assert_eq!(t.queries.iter().filter(|q| q.truth).count(), 20);
    }
    assert_eq!(s1.removed.len(), 20);
}

#[test]
fn s3_removal_matches_brute_force_recount() {
    let (data, split) = bundled();
    let s3 = apply_task_removal(&data, &split, Task::S3);
    let held: HashSet<&String> = split.dev.iter().chain(&split.test).collect();
    let test: HashSet<&String> = split.test.iter().collect();
    let regions: HashSet<&String> = data.regions.iter().collect();
    let subregions: HashSet<&String> = data.subregions.iter().collect();
    let mut expected = 0;
    for f in &data.kb.facts {
        let (p, a, b) = (&f.atom.predicate, &f.atom.args[0], &f.atom.args[1]);
        if p != "locatedIn" {
            continue;
        }
        let train_with_held_neighbour = split.train.contains(a)
            && data.kb.facts.iter().any(|g| g.atom.predicate == "neighborOf" && g.atom.args[0] == *a && held.contains(&g.atom.args[1]));
        if (test.contains(a) && (regions.contains(b) || subregions.contains(b))) || (train_with_held_neighbour && regions.contains(b)) {
            expected += 1;
        }
    }
    assert_eq!(s3.removed.len(), expected);
    assert!(s3.removed.iter().all(|f| f.atom.predicate == "locatedIn"));
}

#[test]
fn closed_world_targets_skip_hidden_atoms() {
    let (data, split) = bundled();
    let t = apply_task_removal(&data, &split, Task::S2);
    let kb = t.kb(&data);
    let index = AtomIndex::with_capacity(&kb, 50_000_000).unwrap();
    let targets = t.targets(&index, 0, 0).unwrap();
    assert_eq!(targets.len(), index.n() - t.hidden.len());
    let ones = targets.entries().iter().filter(|e| e.1 == 1.0).count();
    assert_eq!(ones, t.retained.len());
    let hidden: HashSet<usize> = t.hidden.iter().map(|a| index.index_of(a).unwrap()).collect();
    assert!(targets.entries().iter().all(|(i, _)| !hidden.contains(i)));

    let sampled = t.targets(&index, 3, 9).unwrap();
    assert_eq!(sampled.len(), 4 * t.retained.len());
    assert_eq!(sampled, t.targets(&index, 3, 9).unwrap());
    assert!(sampled.entries().iter().all(|(i, _)| !hidden.contains(i)));
}

#[test]
fn query_atoms_are_hidden() {
    let (data, split) = bundled();
    for task in Task::ALL {
        let t = apply_task_removal(&data, &split, task);
        for q in &t.queries {
            assert!(t.hidden.contains(&GroundAtom::new("locatedIn", &[&q.country, &q.region])));
        }
    }
}

#[test]
fn pair_frequencies_over_many_draws() {
    let spec = PairsSpec::default();
    let w = WeightedIndex::new(spec.probs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 100_000;
    let mut offsets = [0usize; 5];
    for _ in 0..draws {
        let (a, b) = sample_digits(&w, &mut rng);
        assert_eq!(a % 2, b % 2);
        offsets[((b + 10 - a) % 10) / 2] += 1;
    }
    for (k, &p) in spec.probs.iter().enumerate() {
        let freq = offsets[k] as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "offset {}: {freq} vs {p}", 2 * k);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_pairs_are_consistent(seed in 0u64..1000, pairs in 10usize..60) {
        let spec = PairsSpec { pairs, seed, ..Default::default() };
        let data = generate_pairs(&spec, &mut SyntheticSource::new(seed, 0.5)).unwrap();
        prop_assert_eq!(data.pairs.len(), pairs);
        prop_assert_eq!(data.features.nrows(), 2 * pairs);
        let train = data.pairs.iter().filter(|p| p.train).count();
        prop_assert_eq!(train, (pairs as f64 * spec.train_fraction).round() as usize);
        for p in &data.pairs {
            prop_assert_eq!(p.first % 2, p.second % 2);
        }
        let again = generate_pairs(&spec, &mut SyntheticSource::new(seed, 0.5)).unwrap();
        prop_assert_eq!(again.features, data.features);
    }

    #[test]
    fn random_splits_validate(seed in 0u64..50) {
        let (data, _) = bundled();
        let split = CountriesSplit::random(&data, 20, 20, seed).unwrap();
        prop_assert!(split.validate(&data).is_ok());
        prop_assert_eq!(split.train.len() + split.dev.len() + split.test.len(), data.countries.len());
    }
}
