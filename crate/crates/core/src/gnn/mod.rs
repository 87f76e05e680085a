//! Bipartite graph network predicting per-binary marginal probabilities.
//!
//! Architecture: affine embeddings of variable, constraint and edge
//! features (layer-normalized for nodes), then `rounds` pairs of
//! half-convolutions. Each pair first updates every constraint from the sum
//! of its neighbours' `h_v + e`, then every variable from the sum of the
//! fresh `h_c + e`. With [`Dims::aggregate_norm`] each sum is
//! layer-normalized before it enters the update. A two-layer head with a sigmoid maps the final variable
//! states of the binaries to probabilities. Everything is `f64`.

mod net;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{BipartiteGraph, CON_FEATURES, VAR_FEATURES};
use net::{concat_rows, sigmoid, split_rows, LayerNorm, Linear, LnCache, Mlp, MlpCache};

pub use train::{batch_gradient, train, EpochRecord, TrainConfig, TrainMeta, TrainOutcome};

/// Prediction clamp used inside the logarithms of the loss.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub var_features: usize,
    pub con_features: usize,
    pub hidden: usize,
    pub rounds: usize,
    /// Layer norm on every neighbour sum. Tames the activation growth at
    /// high-degree nodes.
    #[serde(default)]
    pub aggregate_norm: bool,
}

impl Default for Dims {
    fn default() -> Self {
        Dims { var_features: VAR_FEATURES, con_features: CON_FEATURES, hidden: 64, rounds: 2, aggregate_norm: false }
    }
}

#[derive(Clone, Debug)]
struct Round {
    con_agg: Option<LayerNorm>,
    con: Mlp,
    var_agg: Option<LayerNorm>,
    var: Mlp,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Clone, Debug)]
struct Layout {
    var_embed: Linear,
    var_norm: LayerNorm,
    con_embed: Linear,
    con_norm: LayerNorm,
    edge_embed: Linear,
    rounds: Vec<Round>,
    head: Mlp,
    tensors: Vec<TensorInfo>,
    size: usize,
}

#[derive(Clone, Debug)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    /// Fan-in and fan-out for Xavier init; `None` for biases and norms.
    fans: Option<(usize, usize)>,
    fill: f64,
}

struct Alloc {
    tensors: Vec<TensorInfo>,
    size: usize,
}

impl Alloc {
    fn push(&mut self, name: String, shape: Vec<usize>, fans: Option<(usize, usize)>, fill: f64) -> usize {
        let offset = self.size;
        self.size += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo { name, shape, offset, fans, fill });
        offset
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        let w = self.push(format!("{name}.weight"), vec![out, inp], Some((inp, out)), 0.0);
        self.push(format!("{name}.bias"), vec![out], None, 0.0);
        Linear { w, inp, out }
    }

    fn norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        let gamma = self.push(format!("{name}.gamma"), vec![dim], None, 1.0);
        self.push(format!("{name}.beta"), vec![dim], None, 0.0);
        LayerNorm { gamma, dim }
    }

    fn mlp(&mut self, name: &str, inp: usize, hidden: usize, out: usize) -> Mlp {
        Mlp { l1: self.linear(&format!("{name}.0"), inp, hidden), l2: self.linear(&format!("{name}.1"), hidden, out) }
    }
}

impl Layout {
    fn new(d: &Dims) -> Self {
        let h = d.hidden;
        let mut a = Alloc { tensors: Vec::new(), size: 0 };
        let var_embed = a.linear("var_embed", d.var_features, h);
        let var_norm = a.norm("var_norm", h);
        let con_embed = a.linear("con_embed", d.con_features, h);
        let con_norm = a.norm("con_norm", h);
        let edge_embed = a.linear("edge_embed", 1, h);
        let rounds = (0..d.rounds)
            .map(|k| Round {
                con_agg: d.aggregate_norm.then(|| a.norm(&format!("conv{k}.con_agg"), h)),
                con: a.mlp(&format!("conv{k}.con"), 2 * h, h, h),
                var_agg: d.aggregate_norm.then(|| a.norm(&format!("conv{k}.var_agg"), h)),
                var: a.mlp(&format!("conv{k}.var"), 2 * h, h, h),
            })
            .collect();
        let head = a.mlp("head", h, h, 1);
        Layout { var_embed, var_norm, con_embed, con_norm, edge_embed, rounds, head, tensors: a.tensors, size: a.size }
    }
}

#[derive(Clone, Debug)]
pub struct GnnModel {
    pub dims: Dims,
    pub seed: u64,
    /// Add the edge embedding to every message. Off gives plain neighbour sums.
    pub edge_features: bool,
    pub params: Vec<f64>,
    layout: Layout,
}

struct RoundCache {
    con_agg: Option<LnCache>,
    con: MlpCache,
    var_agg: Option<LnCache>,
    var: MlpCache,
}

fn norm_forward(norm: Option<LayerNorm>, p: &[f64], x: Vec<f64>) -> (Vec<f64>, Option<LnCache>) {
    match norm {
        Some(ln) => {
            let (y, cache) = ln.forward(p, &x);
            (y, Some(cache))
        }
        None => (x, None),
    }
}

fn norm_backward(norm: Option<LayerNorm>, p: &[f64], grad: &mut [f64], cache: &Option<LnCache>, dy: Vec<f64>) -> Vec<f64> {
    match (norm, cache) {
        (Some(ln), Some(c)) => ln.backward(p, grad, c, &dy),
        _ => dy,
    }
}

/// Everything the reverse pass needs from a forward pass.
pub struct Trace {
    var_ln: LnCache,
    con_ln: LnCache,
    rounds: Vec<RoundCache>,
    head: MlpCache,
    pub logits: Vec<f64>,
}

impl GnnModel {
    /// Xavier-uniform weights, zero biases, unit layer-norm scales.
    pub fn new(dims: Dims, seed: u64) -> Self {
        let layout = Layout::new(&dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.size];
        for t in &layout.tensors {
            let len: usize = t.shape.iter().product();
            let dst = &mut params[t.offset..t.offset + len];
            match t.fans {
                Some((fan_in, fan_out)) => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
                }
                None => dst.fill(t.fill),
            }
        }
        GnnModel { dims, seed, edge_features: true, params, layout }
    }

    pub fn zeros(dims: Dims) -> Self {
        let mut m = Self::new(dims, 0);
        m.params.fill(0.0);
        m
    }

    pub fn with_edge_features(mut self, on: bool) -> Self {
        self.edge_features = on;
        self
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_graph(&self, g: &BipartiteGraph) -> Result<()> {
        let d = &self.dims;
        if g.var_feats.len() != g.n * d.var_features {
            return Err(Error::Dimension { expected: g.n * d.var_features, got: g.var_feats.len() });
        }
        if g.con_feats.len() != g.m * d.con_features {
            return Err(Error::Dimension { expected: g.m * d.con_features, got: g.con_feats.len() });
        }
        if g.q > g.n {
            return Err(Error::invalid("more binaries than variables"));
        }
        if g.edges.iter().any(|e| e.row >= g.m || e.col >= g.n) {
            return Err(Error::invalid("edge endpoint out of range"));
        }
        Ok(())
    }

    /// Probabilities for the `q` binaries of `g`.
    pub fn predict(&self, g: &BipartiteGraph) -> Result<Vec<f64>> {
        Ok(self.forward(g)?.logits.iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn forward(&self, g: &BipartiteGraph) -> Result<Trace> {
        self.check_graph(g)?;
        let p = &self.params;
        let l = &self.layout;
        let h = self.dims.hidden;

        let (mut hv, var_ln) = l.var_norm.forward(p, &l.var_embed.forward(p, &g.var_feats, g.n));
        let (mut hc, con_ln) = l.con_norm.forward(p, &l.con_embed.forward(p, &g.con_feats, g.m));
        let coeffs: Vec<f64> = g.edges.iter().map(|e| e.coeff).collect();
        let e = self.edge_features.then(|| l.edge_embed.forward(p, &coeffs, coeffs.len()));

        let mut rounds = Vec::with_capacity(l.rounds.len());
        for round in &l.rounds {
            let mut agg = vec![0.0; g.m * h];
            for (k, ed) in g.edges.iter().enumerate() {
                let dst = &mut agg[ed.row * h..(ed.row + 1) * h];
                add(dst, &hv[ed.col * h..(ed.col + 1) * h]);
                if let Some(e) = &e {
                    add(dst, &e[k * h..(k + 1) * h]);
                }
            }
            let (agg, con_agg) = norm_forward(round.con_agg, p, agg);
            let (hc_new, con) = round.con.forward(p, concat_rows(&hc, &agg, h), g.m);
            hc = hc_new;

            let mut agg = vec![0.0; g.n * h];
            for (k, ed) in g.edges.iter().enumerate() {
                let dst = &mut agg[ed.col * h..(ed.col + 1) * h];
                add(dst, &hc[ed.row * h..(ed.row + 1) * h]);
                if let Some(e) = &e {
                    add(dst, &e[k * h..(k + 1) * h]);
                }
            }
            let (agg, var_agg) = norm_forward(round.var_agg, p, agg);
            let (hv_new, var) = round.var.forward(p, concat_rows(&hv, &agg, h), g.n);
            hv = hv_new;
            rounds.push(RoundCache { con_agg, con, var_agg, var });
        }

        hv.truncate(g.q * h);
        let (logits, head) = l.head.forward(p, hv, g.q);
        Ok(Trace { var_ln, con_ln, rounds, head, logits })
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d logits`.
    pub fn backward(&self, g: &BipartiteGraph, trace: &Trace, dlogits: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        let l = &self.layout;
        let h = self.dims.hidden;

        let mut dhv = l.head.backward(p, grad, &trace.head, dlogits);
        dhv.resize(g.n * h, 0.0);
        let mut dhc = vec![0.0; g.m * h];
        let mut de = self.edge_features.then(|| vec![0.0; g.edges.len() * h]);

        for (round, cache) in l.rounds.iter().zip(&trace.rounds).rev() {
            let (dhv_prev, dagg) = split_rows(&round.var.backward(p, grad, &cache.var, &dhv), h);
            let dagg = norm_backward(round.var_agg, p, grad, &cache.var_agg, dagg);
            for (k, ed) in g.edges.iter().enumerate() {
                let src = &dagg[ed.col * h..(ed.col + 1) * h];
                add(&mut dhc[ed.row * h..(ed.row + 1) * h], src);
                if let Some(de) = de.as_mut() {
                    add(&mut de[k * h..(k + 1) * h], src);
                }
            }
            dhv = dhv_prev;

            let (dhc_prev, dagg) = split_rows(&round.con.backward(p, grad, &cache.con, &dhc), h);
            let dagg = norm_backward(round.con_agg, p, grad, &cache.con_agg, dagg);
            for (k, ed) in g.edges.iter().enumerate() {
                let src = &dagg[ed.row * h..(ed.row + 1) * h];
                add(&mut dhv[ed.col * h..(ed.col + 1) * h], src);
                if let Some(de) = de.as_mut() {
                    add(&mut de[k * h..(k + 1) * h], src);
                }
            }
            dhc = dhc_prev;
        }

        if let Some(de) = de {
            let coeffs: Vec<f64> = g.edges.iter().map(|e| e.coeff).collect();
            l.edge_embed.backward(p, grad, &coeffs, &de, false);
        }
        let dv = l.var_norm.backward(p, grad, &trace.var_ln, &dhv);
        l.var_embed.backward(p, grad, &g.var_feats, &dv, false);
        let dc = l.con_norm.backward(p, grad, &trace.con_ln, &dhc);
        l.con_embed.backward(p, grad, &g.con_feats, &dc, false);
    }

    /// Loss of one instance and its parameter gradient.
    pub fn loss_and_gradient(&self, g: &BipartiteGraph, target: &[f64]) -> Result<(f64, Vec<f64>)> {
        let trace = self.forward(g)?;
        let probs: Vec<f64> = trace.logits.iter().map(|&z| sigmoid(z)).collect();
        let loss = bce_loss(&probs, target)?;
        // sigmoid and cross-entropy fused: d/dz = p_hat - p
        let dlogits: Vec<f64> = probs.iter().zip(target).map(|(ph, p)| ph - p).collect();
        let mut grad = vec![0.0; self.params.len()];
        self.backward(g, &trace, &dlogits, &mut grad);
        Ok((loss, grad))
    }

    pub fn loss(&self, g: &BipartiteGraph, target: &[f64]) -> Result<f64> {
        bce_loss(&self.predict(g)?, target)
    }

    /// Parameter tensors by name, in layout order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[usize], &[f64])> {
        self.layout.tensors.iter().map(|t| {
            let len: usize = t.shape.iter().product();
            (t.name.as_str(), t.shape.as_slice(), &self.params[t.offset..t.offset + len])
        })
    }

    pub fn to_checkpoint(&self, meta: Option<TrainMeta>) -> Checkpoint {
        Checkpoint {
            dims: self.dims,
            seed: self.seed,
            edge_features: self.edge_features,
            tensors: self
                .tensors()
                .map(|(name, shape, data)| Tensor { name: name.to_string(), shape: shape.to_vec(), data: data.to_vec() })
                .collect(),
            meta,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::zeros(ck.dims);
        model.seed = ck.seed;
        model.edge_features = ck.edge_features;
        let by_name: BTreeMap<&str, &Tensor> = ck.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        if by_name.len() != model.layout.tensors.len() {
            return Err(Error::Dimension { expected: model.layout.tensors.len(), got: by_name.len() });
        }
        for t in &model.layout.tensors {
            let src = by_name.get(t.name.as_str()).ok_or_else(|| Error::invalid(format!("missing tensor {}", t.name)))?;
            let len: usize = t.shape.iter().product();
            if src.shape != t.shape || src.data.len() != len {
                return Err(Error::invalid(format!("tensor {} has the wrong shape", t.name)));
            }
            if src.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("tensor {} is not finite", t.name)));
            }
            model.params[t.offset..t.offset + len].copy_from_slice(&src.data);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path, meta: Option<TrainMeta>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_checkpoint(meta))?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ck)
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dims: Dims,
    pub seed: u64,
    pub edge_features: bool,
    pub tensors: Vec<Tensor>,
    pub meta: Option<TrainMeta>,
}

/// Soft-target binary cross-entropy summed over components.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension { expected: target.len(), got: pred.len() });
    }
    if target.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("targets must lie in [0, 1]"));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&ph, &p)| {
            let ph = ph.clamp(LOG_EPS, 1.0 - LOG_EPS);
            -(p * ph.ln() + (1.0 - p) * (1.0 - ph).ln())
        })
        .sum())
}

/// `Σ_d H(p_d)`, the smallest value [`bce_loss`] can take for `target`.
pub fn entropy_bound(target: &[f64]) -> f64 {
    target.iter().map(|&p| crate::labels::binary_entropy(p)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::featurize;
    use crate::milp::{MilpInstance, RowSense};

    fn toy() -> BipartiteGraph {
        let mut inst = MilpInstance::new("toy");
        inst.add_binary("a", -1.0).unwrap();
        inst.add_binary("b", -2.0).unwrap();
        inst.add_continuous("y", 0.5, 0.0, 4.0).unwrap();
        inst.add_row("r1", [(0, 1.0), (1, 1.0)], RowSense::Le, 1.0).unwrap();
        inst.add_row("r2", [(1, 3.0), (2, -1.0)], RowSense::Ge, 0.5).unwrap();
        featurize(&inst)
    }

    fn small_dims() -> Dims {
        Dims { hidden: 5, ..Dims::default() }
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let m = GnnModel::zeros(Dims::default());
        assert_eq!(m.predict(&toy()).unwrap(), vec![0.5, 0.5]);
        let (_, grad) = m.loss_and_gradient(&toy(), &[0.5, 0.5]).unwrap();
        let head_bias = m.layout.head.l2.b();
        assert_eq!(grad[head_bias], 0.0);
    }

    #[test]
    fn loss_closed_forms() {
        assert!((bce_loss(&[0.5, 0.5], &[0.5, 0.5]).unwrap() - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[1.0 - LOG_EPS], &[1.0]).unwrap() < 1e-6);
        assert!(bce_loss(&[0.5], &[0.5, 0.5]).is_err());
        let p = 0.3;
        let at = |ph: f64| bce_loss(&[ph], &[p]).unwrap();
        assert!(at(p) < at(p - 0.01) && at(p) < at(p + 0.01));
        assert!((at(p) - entropy_bound(&[p])).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = toy();
        let target = [0.8, 0.1];
        for aggregate_norm in [false, true] {
            let mut m = GnnModel::new(Dims { aggregate_norm, ..small_dims() }, 7);
            let (_, grad) = m.loss_and_gradient(&g, &target).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for i in 0..m.params.len() {
                let keep = m.params[i];
                m.params[i] = keep + h;
                let up = m.loss(&g, &target).unwrap();
                m.params[i] = keep - h;
                let down = m.loss(&g, &target).unwrap();
                m.params[i] = keep;
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
            }
            assert!(worst < 1e-4, "aggregate_norm {aggregate_norm}: worst relative error {worst}");
        }
    }

    #[test]
    fn isolated_variable_ignores_constraints() {
        let mut inst = MilpInstance::new("iso");
        inst.add_binary("a", 1.0).unwrap();
        inst.add_binary("b", 1.0).unwrap();
        inst.add_row("r", [(1, 1.0)], RowSense::Le, 1.0).unwrap();
        let m = GnnModel::new(small_dims(), 3);
        let mut g = featurize(&inst);
        let before = m.predict(&g).unwrap()[0];
        g.con_feats.iter_mut().for_each(|v| *v += 3.0);
        let after = m.predict(&g).unwrap();
        assert_eq!(before, after[0]);
    }

    #[test]
    fn constraint_permutation_invariance() {
        let g = toy();
        let mut p = g.clone();
        p.con_feats = [g.con_row(1), g.con_row(0)].concat();
        for e in &mut p.edges {
            e.row = 1 - e.row;
        }
        let m = GnnModel::new(small_dims(), 11);
        let a = m.loss(&g, &[0.3, 0.6]).unwrap();
        let b = m.loss(&p, &[0.3, 0.6]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = GnnModel::new(small_dims(), 5).with_edge_features(false);
        let json = serde_json::to_string(&m.to_checkpoint(None)).unwrap();
        let back = GnnModel::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.params, m.params);
        assert!(!back.edge_features);
        let mut ck = m.to_checkpoint(None);
        ck.tensors.pop();
        assert!(GnnModel::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn edge_switch_changes_output() {
        let m = GnnModel::new(small_dims(), 2);
        let off = m.clone().with_edge_features(false);
        assert_ne!(m.predict(&toy()).unwrap(), off.predict(&toy()).unwrap());
    }
}
