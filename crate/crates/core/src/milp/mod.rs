//! In-memory MILP model shared by every other module.
//!
//! Instances are stored in canonical minimization form. Binary variables
//! always occupy the leading indices `0..q`, continuous variables follow.

mod mps;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mps::{parse_mps, write_mps};

/// Default tolerance for row, bound and integrality checks.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjSense {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowSense {
    #[serde(rename = "LE")]
    Le,
    #[serde(rename = "GE")]
    Ge,
    #[serde(rename = "EQ")]
    Eq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Binary,
    Continuous,
}

/// One linear constraint `coeffs · x (sense) rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    /// Sorted by variable index, no duplicates, no zeros.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `activity` violates the row; zero when satisfied.
    pub fn violation(&self, activity: f64) -> f64 {
        match self.sense {
            RowSense::Le => (activity - self.rhs).max(0.0),
            RowSense::Ge => (self.rhs - activity).max(0.0),
            RowSense::Eq => (activity - self.rhs).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilpInstance {
    pub name: String,
    /// Sense as originally read; `objective` is always the minimization form.
    pub sense: ObjSense,
    pub var_names: Vec<String>,
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub kinds: Vec<VarKind>,
    pub rows: Vec<Row>,
    /// Free-form provenance (generator, seed, trust-region parameters, ...).
    pub metadata: BTreeMap<String, String>,
}

impl MilpInstance {
    pub fn new(name: impl Into<String>) -> Self {
        MilpInstance {
            name: name.into(),
            sense: ObjSense::Min,
            var_names: Vec::new(),
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            kinds: Vec::new(),
            rows: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// `q`, the number of leading binary variables.
    pub fn num_binary(&self) -> usize {
        self.kinds.iter().take_while(|k| **k == VarKind::Binary).count()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_nonzeros(&self) -> usize {
        self.rows.iter().map(|r| r.coeffs.len()).sum()
    }

    pub fn is_pure_binary(&self) -> bool {
        self.kinds.iter().all(|k| *k == VarKind::Binary)
    }

    /// Appends a binary variable. `cost` is in minimization form.
    ///
    /// Fails if a continuous variable already exists, since binaries must
    /// form a prefix.
    pub fn add_binary(&mut self, name: impl Into<String>, cost: f64) -> Result<usize> {
        if self.kinds.last() == Some(&VarKind::Continuous) {
            return Err(Error::invalid("binary variables must precede continuous ones"));
        }
        Ok(self.push_var(name.into(), VarKind::Binary, cost, 0.0, 1.0))
    }

    /// Inserts zero-cost binaries right after the existing ones, shifting
    /// continuous variables up. Returns the index of the first new binary.
    pub fn insert_binaries(&mut self, names: impl IntoIterator<Item = String>) -> usize {
        let q = self.num_binary();
        let names: Vec<String> = names.into_iter().collect();
        let k = names.len();
        for (i, name) in names.into_iter().enumerate() {
            self.var_names.insert(q + i, name);
            self.objective.insert(q + i, 0.0);
            self.lower.insert(q + i, 0.0);
            self.upper.insert(q + i, 1.0);
            self.kinds.insert(q + i, VarKind::Binary);
        }
        for row in &mut self.rows {
            for (j, _) in &mut row.coeffs {
                if *j >= q {
                    *j += k;
                }
            }
        }
        q
    }

    pub fn add_continuous(
        &mut self,
        name: impl Into<String>,
        cost: f64,
        lower: f64,
        upper: f64,
    ) -> Result<usize> {
        if lower > upper || lower.is_nan() || upper.is_nan() {
            return Err(Error::invalid(format!("empty bound interval [{lower}, {upper}]")));
        }
        Ok(self.push_var(name.into(), VarKind::Continuous, cost, lower, upper))
    }

    fn push_var(&mut self, name: String, kind: VarKind, cost: f64, lower: f64, upper: f64) -> usize {
        self.var_names.push(name);
        self.kinds.push(kind);
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    /// Adds a row; coefficients are merged by index and zeros dropped.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: impl IntoIterator<Item = (usize, f64)>,
        sense: RowSense,
        rhs: f64,
    ) -> Result<usize> {
        let n = self.num_vars();
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (j, a) in coeffs {
            if j >= n {
                return Err(Error::invalid(format!("row references variable {j} of {n}")));
            }
            if !a.is_finite() {
                return Err(Error::invalid("non-finite coefficient"));
            }
            *merged.entry(j).or_insert(0.0) += a;
        }
        if !rhs.is_finite() {
            return Err(Error::invalid("non-finite right-hand side"));
        }
        let coeffs = merged.into_iter().filter(|&(_, a)| a != 0.0).collect();
        self.rows.push(Row { name: name.into(), coeffs, sense, rhs });
        Ok(self.rows.len() - 1)
    }

    /// Checks the structural invariants of the canonical form.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        for len in [self.var_names.len(), self.lower.len(), self.upper.len(), self.kinds.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        let q = self.num_binary();
        if self.kinds[q..].contains(&VarKind::Binary) {
            return Err(Error::invalid("binary variables must form a prefix"));
        }
        for j in 0..n {
            if !self.objective[j].is_finite() {
                return Err(Error::invalid(format!("non-finite objective for {}", self.var_names[j])));
            }
            if !(self.lower[j] <= self.upper[j]) {
                return Err(Error::invalid(format!("empty bounds for {}", self.var_names[j])));
            }
            if j < q && (self.lower[j] != 0.0 || self.upper[j] != 1.0) {
                return Err(Error::invalid(format!("binary {} must have bounds [0,1]", self.var_names[j])));
            }
        }
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(Error::invalid(format!("row {} has non-finite rhs", row.name)));
            }
            let mut prev = None;
            for &(j, a) in &row.coeffs {
                if j >= n || a == 0.0 || !a.is_finite() || prev.is_some_and(|p| p >= j) {
                    return Err(Error::invalid(format!("row {} has an invalid coefficient", row.name)));
                }
                prev = Some(j);
            }
        }
        Ok(())
    }

    /// `c · x` in the internal minimization form.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Maps an internal (minimization) objective value to the sense the
    /// instance was read in.
    pub fn to_original(&self, internal: f64) -> f64 {
        match self.sense {
            ObjSense::Min => internal,
            ObjSense::Max => -internal,
        }
    }

    pub fn from_original(&self, original: f64) -> f64 {
        self.to_original(original)
    }

    /// Largest row or bound violation, and whether every binary is integral
    /// within `tol`.
    pub fn max_violation(&self, x: &[f64], tol: f64) -> Result<(f64, bool)> {
        let n = self.num_vars();
        if x.len() != n {
            return Err(Error::Dimension { expected: n, got: x.len() });
        }
        let mut worst = 0.0f64;
        for row in &self.rows {
            worst = worst.max(row.violation(row.activity(x)));
        }
        for j in 0..n {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        let integral = x[..self.num_binary()]
            .iter()
            .all(|v| (v - v.round()).abs() <= tol);
        Ok((worst, integral))
    }

    /// Column-wise view: for each variable the list of `(row, coeff)`.
    pub fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.num_vars()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                cols[j].push((i, a));
            }
        }
        cols
    }
}

/// True iff every row and bound holds within `tol` and every binary
/// component is within `tol` of {0, 1}.
pub fn check_feasible(inst: &MilpInstance, x: &[f64], tol: f64) -> Result<bool> {
    let (violation, integral) = inst.max_violation(x, tol)?;
    Ok(violation <= tol && integral)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub values: Vec<f64>,
    /// Internal (minimization) objective.
    pub objective: f64,
    pub feasible: bool,
    pub integral: bool,
}

impl Solution {
    pub fn evaluate(inst: &MilpInstance, values: Vec<f64>) -> Result<Self> {
        let (violation, integral) = inst.max_violation(&values, FEAS_TOL)?;
        Ok(Solution {
            objective: inst.objective_value(&values),
            feasible: violation <= FEAS_TOL && integral,
            integral,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packing() -> MilpInstance {
        let mut inst = MilpInstance::new("pack");
        inst.add_binary("x1", -1.0).unwrap();
        inst.add_binary("x2", -1.0).unwrap();
        inst.add_row("C1", [(0, 1.0), (1, 1.0)], RowSense::Le, 1.0).unwrap();
        inst
    }

    #[test]
    fn feasibility_by_substitution() {
        let inst = packing();
        assert!(check_feasible(&inst, &[1.0, 0.0], FEAS_TOL).unwrap());
        assert!(!check_feasible(&inst, &[1.0, 1.0], FEAS_TOL).unwrap());
        assert!(!check_feasible(&inst, &[0.5, 0.0], FEAS_TOL).unwrap());
    }

    #[test]
    fn feasibility_dimension_mismatch() {
        let inst = packing();
        assert!(matches!(
            check_feasible(&inst, &[1.0], FEAS_TOL),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn binaries_must_come_first() {
        let mut inst = MilpInstance::new("mixed");
        inst.add_continuous("y", 1.0, 0.0, 5.0).unwrap();
        assert!(inst.add_binary("x", 1.0).is_err());
    }

    #[test]
    fn add_row_merges_and_drops_zeros() {
        let mut inst = packing();
        inst.add_row("r", [(1, 2.0), (0, 1.0), (1, -2.0)], RowSense::Ge, 0.0).unwrap();
        assert_eq!(inst.rows[1].coeffs, vec![(0, 1.0)]);
        inst.validate().unwrap();
    }

    #[test]
    fn solution_objective_matches_dot_product() {
        let inst = packing();
        let sol = Solution::evaluate(&inst, vec![0.0, 1.0]).unwrap();
        assert_eq!(sol.objective, -1.0);
        assert!(sol.feasible && sol.integral);
    }
}
