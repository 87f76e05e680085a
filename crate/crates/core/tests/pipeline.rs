use std::collections::BTreeMap;

use pns_core::featurize::featurize;
use pns_core::gnn::{train, GnnModel, TrainConfig};
use pns_core::harness::{collect, evaluate, EvalConfig, Method, NO_SOLUTION_GAP};
use pns_core::instgen::{derive_seed, gen_independent_set, write_dataset, Family, GenSpec};
use pns_core::search::{predict_and_search, SearchConfig};
use pns_core::solver::{SolveParams, Status};
use pns_core::{check_feasible, parse_mps};

fn small_set(count: u64, seed: u64) -> Vec<pns_core::MilpInstance> {
    (0..count).map(|i| gen_independent_set(30, 3, derive_seed(seed, i)).unwrap()).collect()
}

#[test]
fn collect_train_search_evaluate() {
    let params = SolveParams::default();
    let data: Vec<_> = small_set(6, 11)
        .iter()
        .map(|inst| {
            let (res, label) = collect(inst, &params, 1.0).unwrap();
            assert_eq!(res.status, Status::Optimal);
            assert_eq!(label.marginals.len(), inst.num_binary());
            (featurize(inst), label.marginals)
        })
        .collect();
    let out = train(&data[..5], &data[5..], &TrainConfig { epochs: 5, hidden: 16, ..TrainConfig::default() }).unwrap();
    assert_eq!(out.history.len(), 5);
    assert!(out.history.iter().all(|r| r.train_loss.is_finite() && r.valid_loss.is_some()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    out.model.save(&path, Some(out.meta.clone())).unwrap();
    let loaded = GnnModel::load(&path).unwrap();

    let test = small_set(3, 12);
    for inst in &test {
        let g = featurize(inst);
        assert_eq!(out.model.predict(&g).unwrap(), loaded.predict(&g).unwrap());
        let base = SearchConfig::for_family("independent_set", inst.num_binary()).unwrap();
        // radius k1 always admits the empty set
        let cfg = SearchConfig::new(base.k0, base.k1, base.k1);
        let found = predict_and_search(inst, &loaded, &cfg).unwrap();
        let x = &found.result.incumbent.as_ref().unwrap().values;
        assert!(check_feasible(inst, x, 1e-6).unwrap());
        assert!(found.partial.distance(x) <= cfg.delta);
    }

    let eval = EvalConfig::new(vec![Method::Solver, Method::PsSearch, Method::PsFix], SolveParams::default().with_time_limit(1.0));
    let report = evaluate(&test, Some(&loaded), &BTreeMap::new(), &eval).unwrap();
    assert_eq!(report.records.len(), 9);
    assert!(report.records.iter().all(|r| (0.0..=NO_SOLUTION_GAP).contains(&r.gap_rel)));
    // the solver finishes these exactly, so it defines the reference
    let solver = report.summary.iter().find(|s| s.method == Method::Solver).unwrap();
    assert_eq!(solver.mean_gap_rel, 0.0);
}

#[test]
fn dataset_files_parse_back_to_generated_instances() {
    let spec = GenSpec { family: Family::IndependentSet { nodes: 25, affinity: 3 }, count: 3, seed: 5 };
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&spec, dir.path()).unwrap();
    assert_eq!(manifest.files.len(), 3);
    for (i, file) in manifest.files.iter().enumerate() {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(parse_mps(&text).unwrap(), spec.instance(i).unwrap());
    }
}
