//! Bipartite variable/constraint graph with per-node features.
//!
//! Variable features (18 columns):
//! `obj, v_coeff, Nv_coeff, max_coeff, min_coeff, int, pos_emb[12]`.
//! Constraint features (4 columns): `c_coeff, Nc_coeff, rhs, sense`.
//! One edge per nonzero coefficient, carrying the raw coefficient.

use serde::{Deserialize, Serialize};

use crate::milp::{MilpInstance, RowSense, VarKind};

pub const VAR_FEATURES: usize = 18;
pub const CON_FEATURES: usize = 4;
pub const POS_BITS: usize = 12;
const NORM_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMeta {
    pub var_feature_width: usize,
    pub con_feature_width: usize,
    pub obj_scale: f64,
    pub obj: String,
    pub rhs: String,
    pub pos_emb: String,
    pub sense: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub row: usize,
    pub col: usize,
    pub coeff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    /// Row-major `n × 18`.
    pub var_feats: Vec<f64>,
    /// Row-major `m × 4`.
    pub con_feats: Vec<f64>,
    pub edges: Vec<Edge>,
    pub normalization_meta: NormalizationMeta,
}

impl BipartiteGraph {
    pub fn var_row(&self, j: usize) -> &[f64] {
        &self.var_feats[j * VAR_FEATURES..(j + 1) * VAR_FEATURES]
    }

    pub fn con_row(&self, i: usize) -> &[f64] {
        &self.con_feats[i * CON_FEATURES..(i + 1) * CON_FEATURES]
    }
}

/// Little-endian bits of `index mod 4096`.
pub fn position_bits(index: usize) -> [f64; POS_BITS] {
    let v = index % (1 << POS_BITS);
    std::array::from_fn(|b| ((v >> b) & 1) as f64)
}

fn sense_code(sense: RowSense) -> f64 {
    match sense {
        RowSense::Le => 0.0,
        RowSense::Eq => 1.0,
        RowSense::Ge => 2.0,
    }
}

pub fn featurize(inst: &MilpInstance) -> BipartiteGraph {
    let (n, m) = (inst.num_vars(), inst.num_rows());
    let obj_scale = inst.objective.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let cols = inst.columns();

    let mut var_feats = Vec::with_capacity(n * VAR_FEATURES);
    for j in 0..n {
        let coeffs: Vec<f64> = cols[j].iter().map(|&(_, a)| a).collect();
        let (mean, max, min) = if coeffs.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (
                coeffs.iter().sum::<f64>() / coeffs.len() as f64,
                coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                coeffs.iter().copied().fold(f64::INFINITY, f64::min),
            )
        };
        var_feats.push(inst.objective[j] / (obj_scale + NORM_EPS));
        var_feats.push(mean);
        var_feats.push(coeffs.len() as f64);
        var_feats.push(max);
        var_feats.push(min);
        var_feats.push(if inst.kinds[j] == VarKind::Binary { 1.0 } else { 0.0 });
        var_feats.extend_from_slice(&position_bits(j));
    }

    let mut con_feats = Vec::with_capacity(m * CON_FEATURES);
    let mut edges = Vec::with_capacity(inst.num_nonzeros());
    for (i, row) in inst.rows.iter().enumerate() {
        let deg = row.coeffs.len();
        let mean = if deg == 0 { 0.0 } else { row.coeffs.iter().map(|c| c.1).sum::<f64>() / deg as f64 };
        let max_abs = row.coeffs.iter().fold(0.0f64, |acc, c| acc.max(c.1.abs()));
        con_feats.push(mean);
        con_feats.push(deg as f64);
        con_feats.push(row.rhs / (max_abs + row.rhs.abs() + NORM_EPS));
        con_feats.push(sense_code(row.sense));
        edges.extend(row.coeffs.iter().map(|&(j, a)| Edge { row: i, col: j, coeff: a }));
    }

    BipartiteGraph {
        n,
        m,
        q: inst.num_binary(),
        var_feats,
        con_feats,
        edges,
        normalization_meta: NormalizationMeta {
            var_feature_width: VAR_FEATURES,
            con_feature_width: CON_FEATURES,
            obj_scale,
            obj: "c_j / (max_k |c_k| + 1e-10)".into(),
            rhs: "b_i / (max_j |a_ij| + |b_i| + 1e-10)".into(),
            pos_emb: "12-bit little-endian binary of (j-1) mod 4096".into(),
            sense: "LE=0, EQ=1, GE=2".into(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packing() -> MilpInstance {
        let mut inst = MilpInstance::new("p");
        inst.add_binary("x1", -1.0).unwrap();
        inst.add_binary("x2", -1.0).unwrap();
        inst.add_row("c", [(0, 1.0), (1, 1.0)], RowSense::Le, 1.0).unwrap();
        inst
    }

    #[test]
    fn hand_computed_features() {
        let g = featurize(&packing());
        for j in 0..2 {
            let v = g.var_row(j);
            assert!((v[0] + 1.0).abs() < 1e-9);
            assert_eq!(&v[1..6], &[1.0, 1.0, 1.0, 1.0, 1.0]);
        }
        assert_eq!(g.con_row(0)[0], 1.0);
        assert_eq!(g.con_row(0)[1], 2.0);
        assert!((g.con_row(0)[2] - 0.5).abs() < 1e-9);
        assert_eq!(g.con_row(0)[3], 0.0);
        assert_eq!(g.edges.len(), 2);
    }

    #[test]
    fn isolated_variable_has_empty_aggregates() {
        let mut inst = packing();
        inst.add_binary("x3", 0.0).unwrap();
        let g = featurize(&inst);
        assert_eq!(&g.var_row(2)[1..5], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn position_embedding() {
        // sixth variable: value 5 = 0b101
        let bits = position_bits(5);
        assert_eq!(bits, [1., 0., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(position_bits(4096 + 5), bits);
    }

    #[test]
    fn sense_codes() {
        let mut inst = packing();
        inst.add_row("g", [(0, 2.0)], RowSense::Ge, -4.0).unwrap();
        inst.add_row("e", [(1, 3.0)], RowSense::Eq, 3.0).unwrap();
        let g = featurize(&inst);
        assert_eq!(g.con_row(1)[3], 2.0);
        assert_eq!(g.con_row(2)[3], 1.0);
        assert!((g.con_row(1)[2] + 4.0 / 6.0).abs() < 1e-9);
    }
}
