mod common;

use dlm_core::map::{map_infer, map_objective, MapConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn map_agrees_with_grid_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = MapConfig { restarts: 16, ..Default::default() };
    let mut failures = Vec::new();
    for case in 0..50 {
        let inst = common::small_instance(&mut rng);
        let oracle = common::Oracle::new(&inst.kb, inst.tnorm);
        assert_eq!(oracle.n(), inst.index.n());
        let r = map_infer(&inst.f_nn, &inst.lambda, &inst.potentials, &cfg).unwrap();
        let got = map_objective(&r.y, &inst.f_nn, &inst.lambda, &inst.potentials);
        let check = oracle.objective(&r.y, &inst.f_nn, &inst.lambda);
        assert!((got - check).abs() < 1e-9, "case {case}: engine {got} vs interpreter {check}");
        let (grid, arg) = oracle.grid_max(&inst.f_nn, &inst.lambda);
        if got < grid - 1e-3 {
            failures.push(format!("case {case}: map {got} < grid {grid} at {arg:?}\n{}", inst.kb));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

