//! Energy-weighted marginal labels from a solution pool.
//!
//! Each pool entry `x^j` with (minimization) objective `c·x^j` gets weight
//! `w_j ∝ exp(-c·x^j / τ)`; the label of binary `d` is the total weight of
//! the entries that set `x_d = 1`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::milp::{check_feasible, MilpInstance, FEAS_TOL};
use crate::solver::SolutionPool;

/// Training target for one instance. All objectives are in the internal
/// minimization form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub instance: String,
    pub temperature: f64,
    pub objectives: Vec<f64>,
    pub weights: Vec<f64>,
    pub marginals: Vec<f64>,
    pub bks_objective: f64,
    pub pool_digest: String,
}

/// Softmax of `-objective / temperature`, shifted by the maximum exponent.
pub fn weights_from_objectives(objectives: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if objectives.is_empty() {
        return Err(Error::invalid("empty solution pool"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let exps: Vec<f64> = objectives.iter().map(|o| -o / temperature).collect();
    let shift = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = exps.iter().map(|e| (e - shift).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// Weights with unit temperature.
pub fn solution_weights(pool: &SolutionPool) -> Result<Vec<f64>> {
    let objectives: Vec<f64> = pool.entries.iter().map(|e| e.objective).collect();
    weights_from_objectives(&objectives, 1.0)
}

/// `p_d = Σ_{j : x^j_d = 1} w_j` for the first `q` components.
pub fn marginals(pool: &SolutionPool, weights: &[f64], q: usize) -> Result<Vec<f64>> {
    if weights.len() != pool.len() {
        return Err(Error::Dimension { expected: pool.len(), got: weights.len() });
    }
    let mut p = vec![0.0; q];
    for (entry, w) in pool.entries.iter().zip(weights) {
        if entry.x.len() < q {
            return Err(Error::Dimension { expected: q, got: entry.x.len() });
        }
        for (pd, xd) in p.iter_mut().zip(&entry.x[..q]) {
            if *xd > 0.5 {
                *pd += w;
            }
        }
    }
    for pd in &mut p {
        *pd = pd.clamp(0.0, 1.0);
    }
    Ok(p)
}

pub fn pool_digest(pool: &SolutionPool, q: usize) -> String {
    let mut hasher = Sha256::new();
    for e in &pool.entries {
        let bits: Vec<u8> = e.x[..q.min(e.x.len())].iter().map(|v| u8::from(*v > 0.5)).collect();
        hasher.update(&bits);
        hasher.update(e.objective.to_le_bytes());
    }
    format!("{:x}", hasher.finalize())
}

/// Validates the pool against `inst` and builds its label.
pub fn label_pool(inst: &MilpInstance, pool: &SolutionPool, temperature: f64) -> Result<LabeledSample> {
    for e in &pool.entries {
        if !check_feasible(inst, &e.x, FEAS_TOL)? {
            return Err(Error::invalid("pool contains an infeasible solution"));
        }
    }
    let objectives: Vec<f64> = pool.entries.iter().map(|e| e.objective).collect();
    let weights = weights_from_objectives(&objectives, temperature)?;
    let q = inst.num_binary();
    Ok(LabeledSample {
        instance: inst.name.clone(),
        temperature,
        marginals: marginals(pool, &weights, q)?,
        bks_objective: objectives.iter().copied().fold(f64::INFINITY, f64::min),
        pool_digest: pool_digest(pool, q),
        objectives,
        weights,
    })
}

/// Binary entropy `H(p)` in nats, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |v: f64| if v <= 0.0 { 0.0 } else { -v * v.ln() };
    term(p) + term(1.0 - p)
}
