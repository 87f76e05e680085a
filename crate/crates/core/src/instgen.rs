//! Seeded generators for the independent-set and combinatorial-auction
//! benchmark families.
//!
//! Every instance is a pure function of `(family, params, seed, index)`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::milp::{write_mps, MilpInstance, ObjSense, RowSense};

pub const DEFAULT_AFFINITY: usize = 4;
pub const DEFAULT_IS_NODES: usize = 150;
pub const DEFAULT_CA_ITEMS: usize = 30;
pub const DEFAULT_CA_BIDS: usize = 80;

const RNG_NAME: &str = "ChaCha8Rng(splitmix64(seed, index))";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    IndependentSet { nodes: usize, affinity: usize },
    CombinatorialAuction { items: usize, bids: usize },
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::IndependentSet { .. } => "independent_set",
            Family::CombinatorialAuction { .. } => "combinatorial_auction",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    #[serde(flatten)]
    pub family: Family,
    pub seed: u64,
    pub count: usize,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        match self.family {
            Family::IndependentSet { nodes, affinity } => check_is_sizes(nodes, affinity)?,
            Family::CombinatorialAuction { items, bids } => check_ca_sizes(items, bids)?,
        }
        if self.count == 0 {
            return Err(Error::invalid("count must be at least 1"));
        }
        Ok(())
    }

    pub fn instance(&self, index: usize) -> Result<MilpInstance> {
        let seed = derive_seed(self.seed, index as u64);
        let mut inst = match self.family {
            Family::IndependentSet { nodes, affinity } => gen_independent_set(nodes, affinity, seed)?,
            Family::CombinatorialAuction { items, bids } => gen_combinatorial_auction(items, bids, seed)?,
        };
        inst.name = self.file_stem(index);
        inst.metadata.insert("index".into(), index.to_string());
        inst.metadata.insert("base_seed".into(), self.seed.to_string());
        Ok(inst)
    }

    pub fn file_stem(&self, index: usize) -> String {
        format!("{}_{index}", self.family.tag())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: GenSpec,
    pub rng: String,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

/// SplitMix64 finalizer applied to `seed + index`; gives independent
/// streams per instance index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_is_sizes(nodes: usize, affinity: usize) -> Result<()> {
    if nodes < 2 || affinity == 0 || affinity >= nodes {
        return Err(Error::invalid(format!(
            "independent set needs 1 <= affinity < nodes (got nodes={nodes}, affinity={affinity})"
        )));
    }
    Ok(())
}

fn check_ca_sizes(items: usize, bids: usize) -> Result<()> {
    if items == 0 || bids == 0 {
        return Err(Error::invalid("combinatorial auction needs items >= 1 and bids >= 1"));
    }
    Ok(())
}

/// Barabási–Albert edge list. The first `affinity + 1` nodes form a clique;
/// each later node attaches to `affinity` distinct earlier nodes chosen with
/// probability proportional to degree.
pub fn barabasi_albert(nodes: usize, affinity: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let core = (affinity + 1).min(nodes);
    let mut edges = Vec::new();
    let mut degree = vec![0usize; nodes];
    for u in 0..core {
        for v in u + 1..core {
            edges.push((u, v));
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    for new in core..nodes {
        let mut chosen: Vec<usize> = Vec::with_capacity(affinity);
        for _ in 0..affinity {
            let total: usize = (0..new).filter(|v| !chosen.contains(v)).map(|v| degree[v]).sum();
            let mut ticket = rng.gen_range(0..total);
            let pick = (0..new)
                .filter(|v| !chosen.contains(v))
                .find(|&v| {
                    if ticket < degree[v] {
                        true
                    } else {
                        ticket -= degree[v];
                        false
                    }
                })
                .expect("ticket within total degree");
            chosen.push(pick);
        }
        chosen.sort_unstable();
        for &v in &chosen {
            edges.push((v, new));
            degree[v] += 1;
            degree[new] += 1;
        }
    }
    edges
}

/// Maximum independent set on a Barabási–Albert graph, edge formulation.
pub fn gen_independent_set(nodes: usize, affinity: usize, seed: u64) -> Result<MilpInstance> {
    check_is_sizes(nodes, affinity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = barabasi_albert(nodes, affinity, &mut rng);

    let mut inst = MilpInstance::new(format!("independent_set_n{nodes}_s{seed}"));
    inst.sense = ObjSense::Max;
    for v in 0..nodes {
        inst.add_binary(format!("x{}", v + 1), -1.0)?;
    }
    for &(u, v) in &edges {
        inst.add_row(format!("e{}_{}", u + 1, v + 1), [(u, 1.0), (v, 1.0)], RowSense::Le, 1.0)?;
    }
    inst.metadata.insert("family".into(), "independent_set".into());
    inst.metadata.insert("params".into(), format!("nodes={nodes} affinity={affinity}"));
    inst.metadata.insert("seed".into(), seed.to_string());
    inst.metadata.insert("rng".into(), RNG_NAME.into());
    Ok(inst)
}

/// Set-packing auction: bid bundles include each item with probability
/// `3 / items` (at least one item), price = bundle size × U(0.9, 1.1).
pub fn gen_combinatorial_auction(items: usize, bids: usize, seed: u64) -> Result<MilpInstance> {
    check_ca_sizes(items, bids)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = (3.0 / items as f64).min(1.0);

    let mut inst = MilpInstance::new(format!("combinatorial_auction_i{items}_b{bids}_s{seed}"));
    inst.sense = ObjSense::Max;
    let mut bidders_of_item: Vec<Vec<usize>> = vec![Vec::new(); items];
    let all_items: Vec<usize> = (0..items).collect();
    for b in 0..bids {
        let mut bundle: Vec<usize> = (0..items).filter(|_| rng.gen_bool(p)).collect();
        if bundle.is_empty() {
            bundle.push(*all_items.choose(&mut rng).expect("items >= 1"));
        }
        let price = bundle.len() as f64 * (1.0 + rng.gen_range(-0.1..0.1));
        inst.add_binary(format!("b{}", b + 1), -price)?;
        for &it in &bundle {
            bidders_of_item[it].push(b);
        }
    }
    for (it, bidders) in bidders_of_item.iter().enumerate() {
        if bidders.is_empty() {
            continue;
        }
        inst.add_row(format!("item{}", it + 1), bidders.iter().map(|&b| (b, 1.0)), RowSense::Le, 1.0)?;
    }
    inst.metadata.insert("family".into(), "combinatorial_auction".into());
    inst.metadata.insert("params".into(), format!("items={items} bids={bids}"));
    inst.metadata.insert("seed".into(), seed.to_string());
    inst.metadata.insert("rng".into(), RNG_NAME.into());
    inst.metadata.insert("note".into(), "simplified bundle/price generator, not CATS".into());
    Ok(inst)
}

/// Writes `<family>_<index>.mps` for every index plus `manifest.json`.
pub fn write_dataset(spec: &GenSpec, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let inst = spec.instance(index)?;
        let file = format!("{}.mps", spec.file_stem(index));
        std::fs::write(dir.join(&file), write_mps(&inst))?;
        files.push(file);
    }
    let mut notes = Vec::new();
    if let Family::CombinatorialAuction { .. } = spec.family {
        notes.push("stand-in auction generator (bundle/price scheme), not the CATS procedure".to_string());
    }
    let manifest = Manifest { spec: spec.clone(), rng: RNG_NAME.to_string(), files, notes };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::check_feasible;

    #[test]
    fn small_graphs_are_cliques() {
        let tri = gen_independent_set(3, 2, 1).unwrap();
        assert_eq!(tri.rows.len(), 3);
        let pair = gen_independent_set(2, 1, 1).unwrap();
        assert_eq!(pair.rows.len(), 1);
        assert_eq!(pair.sense, ObjSense::Max);
        assert_eq!(pair.objective, vec![-1.0, -1.0]);
    }

    #[test]
    fn ba_graph_has_expected_edge_count() {
        let inst = gen_independent_set(150, 4, 9).unwrap();
        // clique on 5 nodes (10 edges) plus 4 per later node
        assert_eq!(inst.rows.len(), 10 + 4 * 145);
        let mut seen = std::collections::HashSet::new();
        for r in &inst.rows {
            assert_eq!(r.coeffs.len(), 2);
            assert!(seen.insert((r.coeffs[0].0, r.coeffs[1].0)));
        }
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(gen_independent_set(3, 3, 0).is_err());
        assert!(gen_independent_set(3, 0, 0).is_err());
        assert!(gen_combinatorial_auction(0, 3, 0).is_err());
        assert!(gen_combinatorial_auction(3, 0, 0).is_err());
    }

    #[test]
    fn deterministic_bytes() {
        let spec = GenSpec { family: Family::CombinatorialAuction { items: 5, bids: 8 }, seed: 7, count: 2 };
        let a = write_mps(&spec.instance(1).unwrap());
        let b = write_mps(&spec.instance(1).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, write_mps(&spec.instance(0).unwrap()));
    }

    #[test]
    fn all_zero_is_feasible() {
        for seed in 0..5 {
            let is = gen_independent_set(30, 3, seed).unwrap();
            assert!(check_feasible(&is, &vec![0.0; 30], 1e-9).unwrap());
            let ca = gen_combinatorial_auction(10, 20, seed).unwrap();
            assert!(check_feasible(&ca, &vec![0.0; 20], 1e-9).unwrap());
        }
    }

    #[test]
    fn auction_prices_within_band() {
        let inst = gen_combinatorial_auction(30, 80, 3).unwrap();
        let cols = inst.columns();
        for (j, col) in cols.iter().enumerate() {
            let size = col.len() as f64;
            assert!(size >= 1.0);
            let price = -inst.objective[j];
            assert!(price >= 0.9 * size && price <= 1.1 * size);
        }
    }
}
