//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pns_core::featurize::{featurize, BipartiteGraph};
use pns_core::gnn::{entropy_bound, train, Dims, GnnModel, TrainConfig};
use pns_core::harness::{collect, evaluate, gain, gaps, perturb_experiment, EvalConfig, Method, PerturbConfig};
use pns_core::instgen::{derive_seed, gen_combinatorial_auction, gen_independent_set};
use pns_core::labels::{marginals, weights_from_objectives};
use pns_core::search::{build_fixing, solve_restricted, Formulation, PartialSolution, SearchConfig};
use pns_core::solver::{brute_force, solve_milp, BruteForce, ClockMode, SolutionPool, SolveParams, Status};
use pns_core::{check_feasible, MilpInstance, RowSense};

const OBJ_TOL: f64 = 1e-6;
const SEARCH_TOL: f64 = 1e-9;
const FORMULATION_TOL: f64 = 1e-9;
const LABEL_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Random IS or CA instance with at most `max_q` binaries.
fn small_instance(rng: &mut ChaCha8Rng, max_q: usize) -> MilpInstance {
    let seed = rng.gen();
    if rng.gen_bool(0.5) {
        let nodes = rng.gen_range(6..=max_q);
        gen_independent_set(nodes, rng.gen_range(1..=3), seed).unwrap()
    } else {
        let bids = rng.gen_range(6..=max_q);
        gen_combinatorial_auction(rng.gen_range(4..=10), bids, seed).unwrap()
    }
}

fn exact() -> SolveParams {
    SolveParams::default()
}

fn same_outcome(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

fn solver_matches_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let inst = small_instance(&mut rng, 20);
        let res = solve_milp(&inst, &exact());
        match brute_force(&inst).unwrap() {
            BruteForce::Optimal { objective, .. } => {
                if res.status != Status::Optimal {
                    return Err(format!("case {i} ({}): solver status {:?}", inst.name, res.status));
                }
                worst = worst.max((res.objective().unwrap() - objective).abs());
            }
            BruteForce::Infeasible => {
                if res.status != Status::Infeasible {
                    return Err(format!("case {i}: oracle infeasible, solver {:?}", res.status));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst <= OBJ_TOL && secs < 60.0, format!("50 instances, max |diff| {worst:.1e}, {secs:.1} s"))
}

/// Partial solution of size `k0 + k1`: either read off a random feasible
/// point with a few flips, or drawn uniformly.
fn random_partial(inst: &MilpInstance, rng: &mut ChaCha8Rng, anchor: &[f64]) -> PartialSolution {
    let q = inst.num_binary();
    let size = rng.gen_range(1..=q);
    let chosen = sample(rng, q, size).into_vec();
    let flip_some = rng.gen_bool(0.5);
    let (mut i0, mut i1) = (Vec::new(), Vec::new());
    for d in chosen {
        let mut one = if flip_some { anchor[d] > 0.5 } else { rng.gen_bool(0.3) };
        if flip_some && rng.gen_bool(0.1) {
            one = !one;
        }
        if one {
            i1.push(d)
        } else {
            i0.push(d)
        }
    }
    PartialSolution::new(i0, i1)
}

struct SearchCase {
    inst: MilpInstance,
    ps: PartialSolution,
    delta: usize,
}

fn search_cases() -> Vec<SearchCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let deltas = [0, 1, 2, 5];
    (0..100)
        .map(|i| {
            let inst = small_instance(&mut rng, 16);
            let anchor = solve_milp(&inst, &exact()).incumbent.map(|s| s.values).unwrap_or_else(|| vec![0.0; inst.num_vars()]);
            let ps = random_partial(&inst, &mut rng, &anchor);
            let delta = deltas[i % deltas.len()].min(ps.len());
            SearchCase { inst, ps, delta }
        })
        .collect()
}

fn search_cfg(c: &SearchCase, delta: usize) -> SearchConfig {
    SearchConfig::new(c.ps.i0.len(), c.ps.i1.len(), delta)
}

fn search_dominates_fixing(cases: &[SearchCase]) -> Check {
    let mut feasible_fix = 0;
    for (i, c) in cases.iter().enumerate() {
        let fix = solve_milp(&build_fixing(&c.inst, &c.ps), &exact());
        let search = solve_restricted(&c.inst, &c.ps, &search_cfg(c, c.delta));
        let Some(z_fix) = fix.objective() else { continue };
        feasible_fix += 1;
        match search.objective() {
            None => return Err(format!("case {i}: fixing feasible, search {:?}", search.status)),
            Some(z) if z > z_fix + SEARCH_TOL => return Err(format!("case {i}: search {z} > fixing {z_fix}")),
            Some(_) => {}
        }
    }
    Ok(format!("100 cases, {feasible_fix} with feasible fixing"))
}

fn radius_extremes(cases: &[SearchCase]) -> Check {
    for (i, c) in cases.iter().enumerate() {
        let full = solve_milp(&c.inst, &exact()).objective();
        let wide = solve_restricted(&c.inst, &c.ps, &search_cfg(c, c.ps.len())).objective();
        if !same_outcome(full, wide, SEARCH_TOL) {
            return Err(format!("case {i}: full radius {wide:?}, unrestricted {full:?}"));
        }
        let fixed = solve_milp(&build_fixing(&c.inst, &c.ps), &exact()).objective();
        let zero = solve_restricted(&c.inst, &c.ps, &search_cfg(c, 0)).objective();
        if !same_outcome(fixed, zero, SEARCH_TOL) {
            return Err(format!("case {i}: zero radius {zero:?}, fixing {fixed:?}"));
        }
    }
    Ok("100 cases at both radius extremes".into())
}

fn formulations_agree(cases: &[SearchCase]) -> Check {
    let mut worst: f64 = 0.0;
    for (i, c) in cases.iter().take(50).enumerate() {
        let delta = c.delta.max(1).min(c.ps.len());
        let a = solve_restricted(&c.inst, &c.ps, &search_cfg(c, delta).with_formulation(Formulation::Indicator));
        let b = solve_restricted(&c.inst, &c.ps, &search_cfg(c, delta).with_formulation(Formulation::Compact));
        if a.status != b.status || !same_outcome(a.objective(), b.objective(), FORMULATION_TOL) {
            return Err(format!("case {i}: indicator {:?} {:?}, compact {:?} {:?}", a.status, a.objective(), b.status, b.objective()));
        }
        if let (Some(x), Some(y)) = (a.objective(), b.objective()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(format!("50 cases, max |diff| {worst:.1e}"))
}

fn label_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut shift_err: f64 = 0.0;
    for _ in 0..50 {
        let objs: Vec<f64> = (0..rng.gen_range(1..30)).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let c = rng.gen_range(-1e3..1e3);
        let shifted: Vec<f64> = objs.iter().map(|o| o + c).collect();
        let a = weights_from_objectives(&objs, 1.0).unwrap();
        let b = weights_from_objectives(&shifted, 1.0).unwrap();
        shift_err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(shift_err, f64::max);
    }

    // every feasible point of a tiny packing problem, weighted directly
    let inst = gen_independent_set(8, 2, 9).unwrap();
    let q = inst.num_binary();
    let mut pool = SolutionPool::new(1 << q);
    let mut points = Vec::new();
    for mask in 0u32..(1 << q) {
        let x: Vec<f64> = (0..q).map(|d| f64::from((mask >> d) & 1)).collect();
        if check_feasible(&inst, &x, 1e-9).unwrap() {
            let obj = inst.objective_value(&x);
            pool.insert(&x, obj, q);
            points.push((x, obj));
        }
    }
    let objs: Vec<f64> = pool.entries.iter().map(|e| e.objective).collect();
    let got = marginals(&pool, &weights_from_objectives(&objs, 1.0).unwrap(), q).unwrap();
    let best = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let z: f64 = points.iter().map(|p| (best - p.1).exp()).sum();
    let mut marg_err: f64 = 0.0;
    for d in 0..q {
        let exact: f64 = points.iter().filter(|p| p.0[d] > 0.5).map(|p| (best - p.1).exp() / z).sum();
        marg_err = marg_err.max((exact - got[d]).abs());
    }
    verdict(
        shift_err <= LABEL_TOL && marg_err <= LABEL_TOL,
        format!("shift {shift_err:.1e}, marginals over {} points {marg_err:.1e}", points.len()),
    )
}

fn three_by_two() -> BipartiteGraph {
    let mut inst = MilpInstance::new("g");
    for (n, c) in [("a", -1.0), ("b", 2.0), ("c", -0.5)] {
        inst.add_binary(n, c).unwrap();
    }
    inst.add_row("r0", [(0, 1.0), (1, 2.0)], RowSense::Le, 2.0).unwrap();
    inst.add_row("r1", [(1, -1.0), (2, 3.0)], RowSense::Ge, 1.0).unwrap();
    featurize(&inst)
}

fn gradient_check() -> Check {
    let g = three_by_two();
    let target = [0.7, 0.2, 0.9];
    let mut worst: f64 = 0.0;
    for aggregate_norm in [false, true] {
        let mut m = GnnModel::new(Dims { hidden: 16, aggregate_norm, ..Dims::default() }, 3);
        let (_, grad) = m.loss_and_gradient(&g, &target).unwrap();
        for i in 0..m.params.len() {
            let keep = m.params[i];
            m.params[i] = keep + FD_STEP;
            let up = m.loss(&g, &target).unwrap();
            m.params[i] = keep - FD_STEP;
            let down = m.loss(&g, &target).unwrap();
            m.params[i] = keep;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
        }
    }
    verdict(worst < FD_TOL, format!("max relative error {worst:.1e}"))
}

/// Labeled graphs for 40 seeded 150-node IS instances.
fn training_set() -> Vec<(BipartiteGraph, Vec<f64>)> {
    let params = SolveParams::default().with_time_limit(30.0);
    (0..40)
        .map(|i| {
            let inst = gen_independent_set(150, 4, derive_seed(1, i)).unwrap();
            let (_, label) = collect(&inst, &params, 1.0).unwrap();
            (featurize(&inst), label.marginals)
        })
        .collect()
}

fn training_converges(data: &[(BipartiteGraph, Vec<f64>)], collect_secs: f64) -> Check {
    let start = Instant::now();
    let out = train(data, &[], &TrainConfig { epochs: 20, ..TrainConfig::default() }).unwrap();
    let secs = collect_secs + start.elapsed().as_secs_f64();
    let first = out.history[0].train_loss;
    let last = out.history.last().unwrap().train_loss;
    let bound = data.iter().map(|(_, p)| entropy_bound(p)).sum::<f64>() / data.len() as f64;
    verdict(
        last <= 0.5 * first && last >= bound && secs < 600.0,
        format!("loss {first:.2} -> {last:.2} ({:.1}%), bound {bound:.2}, {secs:.0} s", 100.0 * last / first),
    )
}

fn beats_solver(data: &[(BipartiteGraph, Vec<f64>)]) -> Check {
    let split = data.len() * 4 / 5;
    let out = train(&data[..split], &data[split..], &TrainConfig { epochs: 80, ..TrainConfig::default() }).unwrap();
    let held_out: Vec<MilpInstance> = (0..20).map(|i| gen_independent_set(600, 4, derive_seed(2, i)).unwrap()).collect();
    let cfg = EvalConfig::new(
        vec![Method::Solver, Method::PsSearch, Method::PsFix],
        SolveParams::default().with_clock(ClockMode::Wall).with_time_limit(10.0),
    );
    let report = evaluate(&held_out, Some(&out.model), &BTreeMap::new(), &cfg).unwrap();
    let mean = |m: Method| report.summary.iter().find(|s| s.method == m).unwrap().mean_gap_rel;
    let (solver, search, fix) = (mean(Method::Solver), mean(Method::PsSearch), mean(Method::PsFix));
    verdict(
        search <= solver && search <= fix,
        format!("mean gap_rel solver {solver:.4}, ps-search {search:.4}, ps-fix {fix:.4}"),
    )
}

fn metric_rows() -> Check {
    let at = |v: f64, decimals: i32| (v * 10f64.powi(decimals)).round() / 10f64.powi(decimals);
    let (gap_a, _) = gaps(19.43, 12.02);
    let (gap_b, _) = gaps(15.46, 12.02);
    let (gain_a, gain_b) = (gain(7.41, 3.44), gain(3.29, 1.41));
    let ok = at(gap_a, 2) == 7.41 && at(gap_b, 2) == 3.44 && at(gain_a, 1) == 53.6 && at(gain_b, 1) == 57.1;
    verdict(ok, format!("gaps {gap_a:.2}, {gap_b:.2}; gains {gain_a:.1}%, {gain_b:.1}%"))
}

fn perturbation_monotone() -> Check {
    let ks = [0, 1, 2, 4, 8];
    let mut pct = vec![0.0; ks.len()];
    for i in 0..5 {
        let inst = gen_independent_set(150, 4, derive_seed(3, i)).unwrap();
        let res = solve_milp(&inst, &exact());
        let opt = res.incumbent.ok_or("no optimum")?;
        for (slot, &k) in pct.iter_mut().zip(&ks) {
            let s = perturb_experiment(&inst, &opt.values, opt.objective, &PerturbConfig::new(50, k, derive_seed(4, i))).unwrap();
            *slot += s.infeasible_pct / 5.0;
        }
    }
    let monotone = pct.windows(2).all(|w| w[0] <= w[1]);
    let shown: Vec<String> = ks.iter().zip(&pct).map(|(k, p)| format!("k={k}: {p:.0}%")).collect();
    verdict(monotone && pct[0] == 0.0, shown.join(", "))
}

fn pns(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pns"))
        .args(["--seed", "7"])
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("pns {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn run_pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let steps: &[&[&str]] = &[
        &["generate", "--nodes", "40", "--count", "6", "--out", "data"],
        &["generate", "--family", "combinatorial-auction", "--items", "8", "--bids", "16", "--out", "ca"],
        &["solve", "data/independent_set_0.mps", "--out", "solve.json"],
        &["oracle", "ca/combinatorial_auction_0.mps", "--out", "oracle.json"],
        &["featurize", "data/independent_set_0.mps", "--out", "graph.json"],
        &["collect", "data", "--time-limit", "2", "--out", "labels"],
        &["train", "data", "--labels", "labels", "--epochs", "4", "--out", "model.json", "--history", "history.csv"],
        &["predict", "data/independent_set_1.mps", "--model", "model.json", "--out", "probs.csv"],
        &["search", "data/independent_set_2.mps", "--model", "model.json", "--time-limit", "1", "--out", "search.json"],
        &["evaluate", "data", "--model", "model.json", "--time-limit", "0.5", "--bks-time-limit", "2", "--out", "eval"],
        &["perturb", "data/independent_set_3.mps", "--trials", "10", "--out", "perturb.csv"],
    ];
    for step in steps {
        pns(step, dir)?;
    }
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn pipelines_reproducible() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_pipeline(a.path())?;
    let second = run_pipeline(b.path())?;
    if first.keys().ne(second.keys()) {
        return Err("runs wrote different file sets".into());
    }
    let differing: Vec<&String> = first.iter().filter(|(k, v)| second[*k] != **v).map(|(k, _)| k).collect();
    verdict(differing.is_empty(), format!("{} files compared, differing: {differing:?}", first.len()))
}

fn main() {
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);

    let mut failed = 0;
    let mut report = |n: usize, name: &str, check: Check| {
        let (tag, detail) = match check {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{n:>2}] {tag} {name}: {detail}");
    };

    if wanted(1) {
        report(1, "solver agrees with enumeration", solver_matches_oracle());
    }
    if wanted(2) || wanted(3) || wanted(4) {
        let cases = search_cases();
        if wanted(2) {
            report(2, "trust region never worse than fixing", search_dominates_fixing(&cases));
        }
        if wanted(3) {
            report(3, "radius extremes", radius_extremes(&cases));
        }
        if wanted(4) {
            report(4, "indicator and compact formulations agree", formulations_agree(&cases));
        }
    }
    if wanted(5) {
        report(5, "label weights and marginals", label_exactness());
    }
    if wanted(6) {
        report(6, "analytic gradient", gradient_check());
    }
    if wanted(7) || wanted(8) {
        let start = Instant::now();
        let data = training_set();
        let collect_secs = start.elapsed().as_secs_f64();
        if wanted(7) {
            report(7, "training loss", training_converges(&data, collect_secs));
        }
        if wanted(8) {
            report(8, "predict-and-search against the solver", beats_solver(&data));
        }
    }
    if wanted(9) {
        report(9, "metric arithmetic", metric_rows());
    }
    if wanted(10) {
        report(10, "perturbation infeasibility", perturbation_monotone());
    }
    if wanted(11) {
        report(11, "byte-identical reruns", pipelines_reproducible());
    }

    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
