//! Experiment drivers: data collection, best-known solutions, primal-gap
//! evaluation of the plain solver against predict-and-search, and the
//! perturbation study.

mod metrics;
mod perturb;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::featurize;
use crate::gnn::GnnModel;
use crate::labels::{label_pool, LabeledSample};
use crate::milp::MilpInstance;
use crate::search::{search_with_probs, Mode, SearchConfig};
use crate::solver::{solve_milp, ClockMode, IncumbentEvent, SolveParams, SolveResult, Status};

pub use metrics::{gain, gaps, GAP_EPS, NO_SOLUTION_GAP};
pub use perturb::{perturb_experiment, PerturbConfig, PerturbScope, PerturbSummary};

/// Maps over instances; runs serially when solves are timed on the wall
/// clock so they do not compete for cores.
fn map_instances<T: Sync, R: Send>(items: &[T], clock: ClockMode, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    match clock {
        ClockMode::Wall => items.iter().map(f).collect(),
        ClockMode::Work { .. } => items.par_iter().map(f).collect(),
    }
}

/// Solves `inst` with a solution pool and turns the pool into labels.
pub fn collect(inst: &MilpInstance, params: &SolveParams, temperature: f64) -> Result<(SolveResult, LabeledSample)> {
    let res = solve_milp(inst, params);
    if res.pool.is_empty() {
        return Err(Error::invalid(format!("{}: no feasible solution found ({:?})", inst.name, res.status)));
    }
    let label = label_pool(inst, &res.pool, temperature)?;
    Ok((res, label))
}

/// Best objective (internal sense) of a long solve per instance. Instances
/// without any solution are left out with a warning.
pub fn compute_bks(instances: &[MilpInstance], params: &SolveParams) -> BTreeMap<String, f64> {
    let found = map_instances(instances, params.clock, |inst| (inst.name.clone(), solve_milp(inst, params).objective()));
    let mut bks = BTreeMap::new();
    for (name, obj) in found {
        match obj {
            Some(v) => {
                bks.insert(name, v);
            }
            None => log::warn!("{name}: no solution within the reference budget, excluded"),
        }
    }
    bks
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The branch-and-bound solver on the full instance.
    Solver,
    /// Trust-region search around the prediction.
    PsSearch,
    /// The prediction's selected binaries fixed.
    PsFix,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Solver => "solver",
            Method::PsSearch => "ps_search",
            Method::PsFix => "ps_fix",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Budget and clock shared by every method.
    pub solve: SolveParams,
    /// Partial-solution sizes; family defaults from instance metadata when absent.
    #[serde(default)]
    pub search: Option<SearchConfig>,
}

impl EvalConfig {
    pub fn new(methods: Vec<Method>, solve: SolveParams) -> Self {
        EvalConfig { methods, solve, search: None }
    }

    fn search_for(&self, inst: &MilpInstance, mode: Mode, budget: f64) -> Result<SearchConfig> {
        let base = match &self.search {
            Some(s) => s.clone(),
            None => {
                let family = inst.metadata.get("family").map(String::as_str).unwrap_or("independent_set");
                SearchConfig::for_family(family, inst.num_binary())?
            }
        };
        Ok(base.with_mode(mode).with_solve(self.solve.clone().with_time_limit(budget)))
    }
}

/// One method on one instance, before gaps are known. Internal sense.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub instance: String,
    pub method: Method,
    pub status: Status,
    pub objective: Option<f64>,
    pub time: f64,
    pub trace: Vec<IncumbentEvent>,
}

pub fn run_method(inst: &MilpInstance, method: Method, model: Option<&GnnModel>, cfg: &EvalConfig) -> Result<EvalRun> {
    let budget = cfg.solve.time_limit;
    let (res, offset) = match method {
        Method::Solver => (solve_milp(inst, &cfg.solve), 0.0),
        Method::PsSearch | Method::PsFix => {
            let model = model.ok_or_else(|| Error::invalid("predict-and-search needs a model"))?;
            let start = Instant::now();
            let probs = model.predict(&featurize(inst))?;
            // inference counts against the budget only on the wall clock
            let spent = match cfg.solve.clock {
                ClockMode::Wall => start.elapsed().as_secs_f64(),
                ClockMode::Work { .. } => 0.0,
            };
            let mode = if method == Method::PsSearch { Mode::Search } else { Mode::Fix };
            let scfg = cfg.search_for(inst, mode, (budget - spent).max(0.0))?;
            (search_with_probs(inst, &probs, &scfg)?.result, spent)
        }
    };
    Ok(EvalRun {
        instance: inst.name.clone(),
        method,
        status: res.status,
        objective: res.objective(),
        time: res.stats.time + offset,
        trace: res.trace.iter().map(|e| IncumbentEvent { time: e.time + offset, objective: e.objective }).collect(),
    })
}

/// Row of the records CSV; objectives in the instance's original sense.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance: String,
    pub method: Method,
    pub status: Status,
    pub obj: Option<f64>,
    pub bks: f64,
    pub gap_abs: Option<f64>,
    /// `NO_SOLUTION_GAP` when the method found nothing.
    pub gap_rel: f64,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub instances: usize,
    pub solved: usize,
    /// Over solved instances.
    pub mean_obj: Option<f64>,
    pub mean_gap_abs: Option<f64>,
    /// Over all instances.
    pub mean_gap_rel: f64,
    /// Reduction of `mean_gap_abs` against the solver, in percent.
    pub gain_vs_solver: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: Method,
    pub time: f64,
    pub mean_gap_rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Final best known objective per instance, original sense.
    pub bks: BTreeMap<String, f64>,
    pub records: Vec<EvalRecord>,
    pub summary: Vec<MethodSummary>,
    pub curves: Vec<CurvePoint>,
}

/// Runs every method on every instance, then scores against `bks`
/// (internal sense), lowering each entry to the best objective any method
/// reached.
pub fn evaluate(
    instances: &[MilpInstance],
    model: Option<&GnnModel>,
    bks: &BTreeMap<String, f64>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let runs: Vec<Vec<EvalRun>> = map_instances(instances, cfg.solve.clock, |inst| {
        cfg.methods.iter().map(|&m| run_method(inst, m, model, cfg)).collect::<Result<Vec<_>>>()
    })
    .into_iter()
    .collect::<Result<_>>()?;
    score(instances, &runs.concat(), bks)
}

/// Builds the report from raw runs. Pure, so it can be recomputed from
/// saved runs.
pub fn score(instances: &[MilpInstance], runs: &[EvalRun], bks: &BTreeMap<String, f64>) -> Result<EvalReport> {
    let by_name: BTreeMap<&str, &MilpInstance> = instances.iter().map(|i| (i.name.as_str(), i)).collect();
    let mut best = bks.clone();
    for r in runs {
        if let Some(obj) = r.objective {
            let e = best.entry(r.instance.clone()).or_insert(obj);
            *e = e.min(obj);
        }
    }

    let mut records = Vec::with_capacity(runs.len());
    let mut gap_of_run = Vec::with_capacity(runs.len());
    for r in runs {
        let inst = by_name.get(r.instance.as_str()).ok_or_else(|| Error::invalid(format!("unknown instance {}", r.instance)))?;
        let Some(&b) = best.get(&r.instance) else {
            log::warn!("{}: no known solution, excluded", r.instance);
            gap_of_run.push(None);
            continue;
        };
        let gap = r.objective.map(|o| gaps(o, b));
        gap_of_run.push(Some(b));
        records.push(EvalRecord {
            instance: r.instance.clone(),
            method: r.method,
            status: r.status,
            obj: r.objective.map(|o| inst.to_original(o)),
            bks: inst.to_original(b),
            gap_abs: gap.map(|g| g.0),
            gap_rel: gap.map_or(NO_SOLUTION_GAP, |g| g.1),
            time: r.time,
        });
    }

    let mut methods: Vec<Method> = runs.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();

    let mut summary = Vec::new();
    for &m in &methods {
        let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.method == m).collect();
        let solved: Vec<&&EvalRecord> = rs.iter().filter(|r| r.obj.is_some()).collect();
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        summary.push(MethodSummary {
            method: m,
            instances: rs.len(),
            solved: solved.len(),
            mean_obj: mean(solved.iter().filter_map(|r| r.obj).collect()),
            mean_gap_abs: mean(solved.iter().filter_map(|r| r.gap_abs).collect()),
            mean_gap_rel: mean(rs.iter().map(|r| r.gap_rel).collect()).unwrap_or(NO_SOLUTION_GAP),
            gain_vs_solver: None,
        });
    }
    let base = summary.iter().find(|s| s.method == Method::Solver).and_then(|s| s.mean_gap_abs);
    for s in &mut summary {
        if let (Some(b), Some(ours)) = (base, s.mean_gap_abs) {
            s.gain_vs_solver = Some(gain(b, ours));
        }
    }

    let mut curves = Vec::new();
    for &m in &methods {
        let series: Vec<(&EvalRun, f64)> = runs
            .iter()
            .zip(&gap_of_run)
            .filter_map(|(r, b)| (r.method == m).then_some((r, (*b)?)))
            .collect();
        let mut times: Vec<f64> = std::iter::once(0.0).chain(series.iter().flat_map(|(r, _)| r.trace.iter().map(|e| e.time))).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        for t in times {
            let total: f64 = series
                .iter()
                .map(|(r, b)| {
                    r.trace.iter().take_while(|e| e.time <= t).last().map_or(NO_SOLUTION_GAP, |e| gaps(e.objective, *b).1)
                })
                .sum();
            curves.push(CurvePoint { method: m, time: t, mean_gap_rel: total / series.len().max(1) as f64 });
        }
    }

    let bks = best
        .into_iter()
        .filter_map(|(name, b)| by_name.get(name.as_str()).map(|inst| (name, inst.to_original(b))))
        .collect();
    Ok(EvalReport { bks, records, summary, curves })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn write_records_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["instance", "method", "status", "obj", "bks", "gap_abs", "gap_rel", "time"]).map_err(csv_err)?;
        for r in &self.records {
            let status = serde_json::to_value(r.status)?.as_str().unwrap_or_default().to_string();
            w.write_record([
                r.instance.clone(),
                r.method.tag().to_string(),
                status,
                opt(r.obj),
                r.bks.to_string(),
                opt(r.gap_abs),
                r.gap_rel.to_string(),
                r.time.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "instances", "solved", "mean_obj", "mean_gap_abs", "mean_gap_rel", "gain_vs_solver_pct"])
            .map_err(csv_err)?;
        for s in &self.summary {
            w.write_record([
                s.method.tag().to_string(),
                s.instances.to_string(),
                s.solved.to_string(),
                opt(s.mean_obj),
                opt(s.mean_gap_abs),
                s.mean_gap_rel.to_string(),
                opt(s.gain_vs_solver),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_curves_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "time", "mean_gap_rel"]).map_err(csv_err)?;
        for c in &self.curves {
            w.write_record([c.method.tag().to_string(), c.time.to_string(), c.mean_gap_rel.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instgen::gen_independent_set;

    fn run(inst: &str, method: Method, objective: Option<f64>, trace: &[(f64, f64)]) -> EvalRun {
        EvalRun {
            instance: inst.into(),
            method,
            status: if objective.is_some() { Status::Optimal } else { Status::NoSolutionTimeLimit },
            objective,
            time: 1.0,
            trace: trace.iter().map(|&(time, objective)| IncumbentEvent { time, objective }).collect(),
        }
    }

    #[test]
    fn triangle_bks_in_original_sense() {
        let tri = gen_independent_set(3, 2, 0).unwrap();
        let bks = compute_bks(std::slice::from_ref(&tri), &SolveParams::default());
        assert_eq!(bks[&tri.name], -1.0);
        let report = score(&[tri.clone()], &[run(&tri.name, Method::Solver, Some(-1.0), &[(0.0, -1.0)])], &bks).unwrap();
        assert_eq!(report.bks[&tri.name], 1.0);
        assert_eq!(report.records[0].gap_rel, 0.0);
    }

    #[test]
    fn better_objective_updates_bks() {
        let inst = gen_independent_set(10, 2, 1).unwrap();
        let name = inst.name.clone();
        let stored = BTreeMap::from([(name.clone(), -4.0)]);
        let runs = [
            run(&name, Method::Solver, Some(-4.0), &[(0.5, -3.0), (2.0, -4.0)]),
            run(&name, Method::PsSearch, Some(-5.0), &[(1.0, -5.0)]),
            run(&name, Method::PsFix, None, &[]),
        ];
        let report = score(&[inst], &runs, &stored).unwrap();
        assert_eq!(report.bks[&name], 5.0);
        let solver = &report.records[0];
        assert_eq!(solver.gap_abs, Some(1.0));
        assert!((solver.gap_rel - 0.2).abs() < 1e-9);
        assert_eq!(report.records[2].gap_rel, NO_SOLUTION_GAP);
        let ps = report.summary_for(Method::PsSearch).unwrap();
        assert_eq!(ps.mean_gap_abs, Some(0.0));
        assert_eq!(ps.gain_vs_solver, Some(100.0));

        let solver_curve: Vec<f64> =
            report.curves.iter().filter(|c| c.method == Method::Solver).map(|c| c.mean_gap_rel).collect();
        assert!(solver_curve.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(solver_curve.first(), Some(&NO_SOLUTION_GAP));
    }

    #[test]
    fn equal_methods_have_zero_gain() {
        let inst = gen_independent_set(10, 2, 1).unwrap();
        let name = inst.name.clone();
        let runs = [
            run(&name, Method::Solver, Some(-3.0), &[(0.1, -3.0)]),
            run(&name, Method::PsSearch, Some(-3.0), &[(0.1, -3.0)]),
        ];
        let report = score(&[inst], &runs, &BTreeMap::from([(name, -4.0)])).unwrap();
        assert_eq!(report.summary_for(Method::PsSearch).unwrap().gain_vs_solver, Some(0.0));
        let mut csv = Vec::new();
        report.write_summary_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with(",0"));
    }

    #[test]
    fn collect_labels_small_instance() {
        let inst = gen_independent_set(12, 2, 4).unwrap();
        let (res, label) = collect(&inst, &SolveParams::default(), 1.0).unwrap();
        assert_eq!(label.marginals.len(), 12);
        assert_eq!(label.bks_objective, res.objective().unwrap());
        assert!((label.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
