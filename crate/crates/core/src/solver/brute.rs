//! Exhaustive enumeration over the binary variables; the test oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::MilpInstance;

pub const BRUTE_FORCE_LIMIT: usize = 24;

const ROW_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BruteForce {
    Optimal {
        x: Vec<f64>,
        objective: f64,
        /// Number of assignments attaining the optimum (within 1e-9).
        num_optimal: u64,
    },
    Infeasible,
}

/// Enumerates every assignment of the unfixed binaries of a pure binary
/// instance in Gray-code order, maintaining row activities incrementally.
/// The limit applies to the number of unfixed binaries.
pub fn brute_force(inst: &MilpInstance) -> Result<BruteForce> {
    let q = inst.num_binary();
    if q != inst.num_vars() {
        return Err(Error::Unsupported("brute force needs a pure binary instance".into()));
    }
    let mut x = vec![0.0; q];
    let mut free = Vec::new();
    for j in 0..q {
        let (lo, hi) = (inst.lower[j].max(0.0).ceil(), inst.upper[j].min(1.0).floor());
        if lo > hi {
            return Ok(BruteForce::Infeasible);
        }
        x[j] = lo;
        if lo < hi {
            free.push(j);
        }
    }
    if free.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { binaries: free.len(), limit: BRUTE_FORCE_LIMIT });
    }
    let cols = inst.columns();
    let mut activity: Vec<f64> = inst.rows.iter().map(|r| r.activity(&x)).collect();
    let mut running_obj = inst.objective_value(&x);
    let mut best: Option<(Vec<f64>, f64, u64)> = None;

    let feasible = |activity: &[f64]| {
        inst.rows.iter().zip(activity).all(|(row, &a)| row.violation(a) <= ROW_TOL * (1.0 + row.rhs.abs()))
    };
    let consider = |x: &[f64], running: f64, activity: &[f64], best: &mut Option<(Vec<f64>, f64, u64)>| {
        if let Some((_, b, _)) = best {
            if running > *b + 1e-6 * (1.0 + b.abs()) {
                return;
            }
        }
        if !feasible(activity) {
            return;
        }
        let exact = inst.objective_value(x);
        match best {
            Some((_, b, count)) if (exact - *b).abs() <= TIE_TOL => *count += 1,
            Some((_, b, _)) if exact > *b => {}
            _ => *best = Some((x.to_vec(), exact, 1)),
        }
    };

    consider(&x, running_obj, &activity, &mut best);
    for i in 1u64..(1u64 << free.len()) {
        let j = free[i.trailing_zeros() as usize];
        let delta = if x[j] == 0.0 { 1.0 } else { -1.0 };
        x[j] += delta;
        running_obj += delta * inst.objective[j];
        for &(r, a) in &cols[j] {
            activity[r] += delta * a;
        }
        consider(&x, running_obj, &activity, &mut best);
    }
    Ok(match best {
        Some((x, objective, num_optimal)) => BruteForce::Optimal { x, objective, num_optimal },
        None => BruteForce::Infeasible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instgen::gen_independent_set;
    use crate::milp::RowSense;

    #[test]
    fn triangle_has_three_optima() {
        let inst = gen_independent_set(3, 2, 5).unwrap();
        match brute_force(&inst).unwrap() {
            BruteForce::Optimal { objective, num_optimal, .. } => {
                assert_eq!(objective, -1.0);
                assert_eq!(num_optimal, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn contradictory_bounds_rows() {
        let mut inst = MilpInstance::new("toy");
        inst.add_binary("x1", 1.0).unwrap();
        inst.add_row("le", [(0, 1.0)], RowSense::Le, 0.0).unwrap();
        inst.add_row("ge", [(0, 1.0)], RowSense::Ge, 1.0).unwrap();
        assert_eq!(brute_force(&inst).unwrap(), BruteForce::Infeasible);
    }

    #[test]
    fn respects_fixed_bounds() {
        let mut inst = gen_independent_set(3, 2, 5).unwrap();
        inst.lower[1] = 1.0;
        match brute_force(&inst).unwrap() {
            BruteForce::Optimal { x, num_optimal, .. } => {
                assert_eq!(x, vec![0.0, 1.0, 0.0]);
                assert_eq!(num_optimal, 1);
            }
            other => panic!("{other:?}"),
        }
        inst.upper[1] = 0.0;
        assert_eq!(brute_force(&inst).unwrap(), BruteForce::Infeasible);
    }

    #[test]
    fn no_binaries() {
        let inst = MilpInstance::new("empty");
        assert_eq!(
            brute_force(&inst).unwrap(),
            BruteForce::Optimal { x: vec![], objective: 0.0, num_optimal: 1 }
        );
    }

    #[test]
    fn rejects_large_or_mixed() {
        let big = gen_independent_set(25, 2, 0).unwrap();
        assert!(matches!(brute_force(&big), Err(Error::TooLarge { binaries: 25, .. })));
        let mut mixed = MilpInstance::new("m");
        mixed.add_continuous("y", 1.0, 0.0, 1.0).unwrap();
        assert!(brute_force(&mixed).is_err());
    }
}
