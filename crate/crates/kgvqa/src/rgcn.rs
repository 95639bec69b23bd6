//! The differentiable relational graph network.
//!
//! Each layer transforms every node with a shared self weight plus, per
//! relation and per direction, the mean of its neighbors' states through
//! that (relation, direction)'s own weight matrix:
//!
//!   h'_i = relu( W_0 h_i + b + Σ_r [ mean_{j→i via r} W_r^fwd h_j
//!                                  + mean_{i→j via r} W_r^inv h_j ] )
//!
//! Empty neighbor sets contribute zero. A GCN variant ties all weights to
//! one matrix, erasing both edge types and directions. The summary layer
//! attaches a dummy node that every node feeds via a fresh relation and
//! returns the dummy's state.

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::numerics::store::{BoundParams, ParameterStore};
use crate::numerics::tape::{SparseMatrix, Tape, TensorId};
use crate::numerics::tensor::{Real, Tensor};
use rand::Rng;
use std::rc::Rc;

/// Graph network shape. Layer dims run input_dim → hidden_dim → hidden_dim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgcnConfig {
    pub num_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_relations: usize,
}

impl RgcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config("rgcn dims must be positive".into()));
        }
        Ok(())
    }

    fn layer_dims(&self, layer: usize) -> (usize, usize) {
        if layer == 0 {
            (self.input_dim, self.hidden_dim)
        } else {
            (self.hidden_dim, self.hidden_dim)
        }
    }
}

/// Message direction relative to the stored edge (head, relation, tail).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Along the edge: the tail receives the head's state.
    Forward,
    /// Against the edge: the head receives the tail's state.
    Inverse,
}

pub mod names {
    use super::Direction;

    pub fn relation(layer: usize, relation: usize, dir: Direction) -> String {
        let d = match dir {
            Direction::Forward => "fwd",
            Direction::Inverse => "inv",
        };
        format!("rgcn.layer{}.rel{}.{}", layer, relation, d)
    }

    pub fn self_weight(layer: usize) -> String {
        format!("rgcn.layer{}.self", layer)
    }

    /// The layer's single bias, folded into the self-loop term.
    pub fn bias(layer: usize) -> String {
        format!("rgcn.layer{}.bias", layer)
    }

    pub fn gcn_weight(layer: usize) -> String {
        format!("gcn.layer{}.w", layer)
    }

    pub fn gcn_bias(layer: usize) -> String {
        format!("gcn.layer{}.bias", layer)
    }

    pub const SUMMARY_W: &str = "rgcn.summary.w";
    pub const SUMMARY_BIAS: &str = "rgcn.summary.bias";
}

/// Register RGCN weights: per layer, 2R+1 matrices plus one bias.
pub fn init_rgcn_params<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    cfg: &RgcnConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    for l in 0..cfg.num_layers {
        let (din, dout) = cfg.layer_dims(l);
        store.insert_fan_in(&names::self_weight(l), vec![din, dout], rng)?;
        store.insert(&names::bias(l), Tensor::zeros(vec![1, dout]))?;
        for r in 0..cfg.num_relations {
            for dir in [Direction::Forward, Direction::Inverse] {
                store.insert_fan_in(&names::relation(l, r, dir), vec![din, dout], rng)?;
            }
        }
    }
    Ok(())
}

/// Register GCN-variant weights: one shared matrix plus bias per layer.
pub fn init_gcn_params<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    cfg: &RgcnConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    for l in 0..cfg.num_layers {
        let (din, dout) = cfg.layer_dims(l);
        store.insert_fan_in(&names::gcn_weight(l), vec![din, dout], rng)?;
        store.insert(&names::gcn_bias(l), Tensor::zeros(vec![1, dout]))?;
    }
    Ok(())
}

/// Register the dummy-node summary conv: hidden → summary_dim plus bias.
pub fn init_summary_params<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    hidden_dim: usize,
    summary_dim: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert_fan_in(names::SUMMARY_W, vec![hidden_dim, summary_dim], rng)?;
    store.insert(names::SUMMARY_BIAS, Tensor::zeros(vec![1, summary_dim]))?;
    Ok(())
}

/// Mean-normalized neighbor aggregation matrices, one per (relation,
/// direction). Row i of the Forward matrix averages the states of nodes j
/// with an edge j→i of that relation.
pub struct RelationAggregators<T: Real> {
    pub num_nodes: usize,
    pub num_relations: usize,
    /// Indexed [relation][direction as usize] with Forward = 0.
    mats: Vec<[Rc<SparseMatrix<T>>; 2]>,
}

impl<T: Real> RelationAggregators<T> {
    pub fn build(graph: &KnowledgeGraph) -> Result<RelationAggregators<T>> {
        let n = graph.num_nodes();
        let mut mats = Vec::with_capacity(graph.num_relations());
        for r in 0..graph.num_relations() {
            let edges = graph.relation_edges(r);
            let mut fwd_rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
            let mut inv_rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
            for &(h, t) in edges {
                if h >= n || t >= n {
                    return Err(Error::GraphFormat(format!(
                        "edge ({}, {}) references unknown node",
                        h, t
                    )));
                }
                fwd_rows[t].push((h, T::one()));
                inv_rows[h].push((t, T::one()));
            }
            for rows in [&mut fwd_rows, &mut inv_rows] {
                for row in rows.iter_mut() {
                    if !row.is_empty() {
                        let inv = T::one() / T::from_f64(row.len() as f64);
                        for (_, w) in row.iter_mut() {
                            *w = inv;
                        }
                    }
                }
            }
            mats.push([
                Rc::new(SparseMatrix::from_rows(n, n, &fwd_rows)?),
                Rc::new(SparseMatrix::from_rows(n, n, &inv_rows)?),
            ]);
        }
        Ok(RelationAggregators {
            num_nodes: n,
            num_relations: graph.num_relations(),
            mats,
        })
    }

    pub fn get(&self, relation: usize, dir: Direction) -> Rc<SparseMatrix<T>> {
        let d = match dir {
            Direction::Forward => 0,
            Direction::Inverse => 1,
        };
        Rc::clone(&self.mats[relation][d])
    }
}

/// One relational conv layer on the tape.
pub fn rgcn_layer<T: Real>(
    tape: &mut Tape<T>,
    h: TensorId,
    aggs: &RelationAggregators<T>,
    bound: &BoundParams,
    layer: usize,
) -> Result<TensorId> {
    if tape.value(h).rows() != aggs.num_nodes {
        return Err(Error::ShapeMismatch {
            op: "rgcn_layer",
            detail: format!(
                "H has {} rows, graph has {} nodes",
                tape.value(h).rows(),
                aggs.num_nodes
            ),
        });
    }
    let w_self = bound.id(&names::self_weight(layer))?;
    let bias = bound.id(&names::bias(layer))?;
    let self_term = tape.matmul(h, w_self)?;
    let mut acc = tape.add_row_broadcast(self_term, bias)?;
    for r in 0..aggs.num_relations {
        for dir in [Direction::Forward, Direction::Inverse] {
            let w = bound.id(&names::relation(layer, r, dir))?;
            let agg = tape.spmm(aggs.get(r, dir), h)?;
            let msg = tape.matmul(agg, w)?;
            acc = tape.add(acc, msg)?;
        }
    }
    tape.relu(acc)
}

/// Full graph-network forward: `num_layers` conv applications.
/// `num_layers == 0` returns the input unchanged.
pub fn rgcn_forward<T: Real>(
    tape: &mut Tape<T>,
    x: TensorId,
    aggs: &RelationAggregators<T>,
    bound: &BoundParams,
    cfg: &RgcnConfig,
) -> Result<TensorId> {
    if tape.value(x).cols() != cfg.input_dim {
        return Err(Error::ShapeMismatch {
            op: "rgcn_forward",
            detail: format!("input width {} != config {}", tape.value(x).cols(), cfg.input_dim),
        });
    }
    let mut h = x;
    for l in 0..cfg.num_layers {
        h = rgcn_layer(tape, h, aggs, bound, l)?;
    }
    Ok(h)
}

/// GCN ablation layer: one shared weight for self and every message, each
/// edge used in both directions. No edge types, no directionality.
pub fn gcn_layer<T: Real>(
    tape: &mut Tape<T>,
    h: TensorId,
    aggs: &RelationAggregators<T>,
    bound: &BoundParams,
    layer: usize,
) -> Result<TensorId> {
    if tape.value(h).rows() != aggs.num_nodes {
        return Err(Error::ShapeMismatch {
            op: "gcn_layer",
            detail: format!(
                "H has {} rows, graph has {} nodes",
                tape.value(h).rows(),
                aggs.num_nodes
            ),
        });
    }
    let w = bound.id(&names::gcn_weight(layer))?;
    let bias = bound.id(&names::gcn_bias(layer))?;
    let self_term = tape.matmul(h, w)?;
    let mut acc = tape.add_row_broadcast(self_term, bias)?;
    for r in 0..aggs.num_relations {
        for dir in [Direction::Forward, Direction::Inverse] {
            let agg = tape.spmm(aggs.get(r, dir), h)?;
            let msg = tape.matmul(agg, w)?;
            acc = tape.add(acc, msg)?;
        }
    }
    tape.relu(acc)
}

pub fn gcn_forward<T: Real>(
    tape: &mut Tape<T>,
    x: TensorId,
    aggs: &RelationAggregators<T>,
    bound: &BoundParams,
    cfg: &RgcnConfig,
) -> Result<TensorId> {
    let mut h = x;
    for l in 0..cfg.num_layers {
        h = gcn_layer(tape, h, aggs, bound, l)?;
    }
    Ok(h)
}

/// One extra relational conv over an augmented graph where every node feeds
/// a fresh dummy node via a fresh relation; returns the dummy's hidden
/// state. The dummy starts at zero, so its self term contributes only the
/// bias and the result is the mean of all node states through the summary
/// weight.
pub fn summary_layer<T: Real>(
    tape: &mut Tape<T>,
    g: TensorId,
    bound: &BoundParams,
) -> Result<TensorId> {
    let w = bound.id(names::SUMMARY_W)?;
    let bias = bound.id(names::SUMMARY_BIAS)?;
    let pooled = tape.mean_rows(g)?;
    let msg = tape.matmul(pooled, w)?;
    let msg = tape.add_row_broadcast(msg, bias)?;
    tape.relu(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Edge, TripleSource};
    use crate::seed::stream;

    fn line_graph(n: usize, edges: &[(usize, usize, usize)], num_rel: usize) -> KnowledgeGraph {
        KnowledgeGraph::from_parts(
            (0..n).map(|i| format!("c{}", i)).collect(),
            (0..num_rel).map(|r| format!("rel{}", r)).collect(),
            edges
                .iter()
                .map(|&(h, r, t)| Edge { head: h, relation: r, tail: t, source: TripleSource::Commonsense })
                .collect(),
        )
        .unwrap()
    }

    fn identity_store(layer_dims: usize, num_rel: usize) -> ParameterStore<f64> {
        // W_0 = I, bias 0, all relation weights 0
        let mut store = ParameterStore::new();
        let mut eye = Tensor::zeros(vec![layer_dims, layer_dims]);
        for i in 0..layer_dims {
            eye.set(i, i, 1.0);
        }
        store.insert(&names::self_weight(0), eye).unwrap();
        store.insert(&names::bias(0), Tensor::zeros(vec![1, layer_dims])).unwrap();
        for r in 0..num_rel {
            for dir in [Direction::Forward, Direction::Inverse] {
                store
                    .insert(&names::relation(0, r, dir), Tensor::zeros(vec![layer_dims, layer_dims]))
                    .unwrap();
            }
        }
        store
    }

    #[test]
    fn no_edges_identity_weights_is_relu() {
        // graph needs >= 1 edge; use a relation weight of zero so only the
        // self term remains, which with W_0 = I is relu(H)
        let g = line_graph(3, &[(0, 0, 1)], 1);
        let aggs = RelationAggregators::<f64>::build(&g).unwrap();
        let store = identity_store(2, 1);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let h = tape
            .leaf(Tensor::from_rows(&[vec![1.0, -2.0], vec![-0.5, 3.0], vec![0.0, 4.0]]).unwrap())
            .unwrap();
        let out = rgcn_layer(&mut tape, h, &aggs, &bound, 0).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 0.0, 0.0, 3.0, 0.0, 4.0]);
    }

    #[test]
    fn single_edge_contribution_is_fwd_weight_times_head() {
        // edge 0 -> 1; at node 1 the forward message is W_fwd h_0 over a
        // singleton neighborhood
        let g = line_graph(2, &[(0, 0, 1)], 1);
        let aggs = RelationAggregators::<f64>::build(&g).unwrap();
        let mut store = identity_store(2, 1);
        // overwrite: zero self, W_fwd = 2I
        store.set(&names::self_weight(0), Tensor::zeros(vec![2, 2])).unwrap();
        let mut two_eye = Tensor::zeros(vec![2, 2]);
        two_eye.set(0, 0, 2.0);
        two_eye.set(1, 1, 2.0);
        store.set(&names::relation(0, 0, Direction::Forward), two_eye).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let h = tape
            .leaf(Tensor::from_rows(&[vec![3.0, 5.0], vec![1.0, 1.0]]).unwrap())
            .unwrap();
        let out = rgcn_layer(&mut tape, h, &aggs, &bound, 0).unwrap();
        // node 0: no fwd in-edges, inv weight zero, self zero -> relu(0)
        assert_eq!(&tape.value(out).data()[0..2], &[0.0, 0.0]);
        // node 1: W_fwd h_0 = [6, 10]
        assert_eq!(&tape.value(out).data()[2..4], &[6.0, 10.0]);
    }

    #[test]
    fn zero_layers_is_identity_pipeline() {
        let g = line_graph(3, &[(0, 0, 1)], 1);
        let aggs = RelationAggregators::<f64>::build(&g).unwrap();
        let cfg = RgcnConfig { num_layers: 0, input_dim: 2, hidden_dim: 2, num_relations: 1 };
        let store = ParameterStore::<f64>::new();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let x = tape.leaf(Tensor::full(vec![3, 2], -1.5)).unwrap();
        let out = rgcn_forward(&mut tape, x, &aggs, &bound, &cfg).unwrap();
        assert_eq!(tape.value(out), tape.value(x));
    }

    #[test]
    fn gcn_equals_rgcn_with_tied_weights() {
        let g = line_graph(4, &[(0, 0, 1), (2, 1, 1), (3, 0, 2)], 2);
        let aggs = RelationAggregators::<f64>::build(&g).unwrap();
        let mut rng = stream(11, "tied");
        let mut gcn_store = ParameterStore::<f64>::new();
        let cfg = RgcnConfig { num_layers: 1, input_dim: 3, hidden_dim: 3, num_relations: 2 };
        init_gcn_params(&mut gcn_store, &cfg, &mut rng).unwrap();
        let w = gcn_store.get(&names::gcn_weight(0)).unwrap().clone();

        let mut rgcn_store = ParameterStore::<f64>::new();
        rgcn_store.insert(&names::self_weight(0), w.clone()).unwrap();
        rgcn_store.insert(&names::bias(0), Tensor::zeros(vec![1, 3])).unwrap();
        for r in 0..2 {
            for dir in [Direction::Forward, Direction::Inverse] {
                rgcn_store.insert(&names::relation(0, r, dir), w.clone()).unwrap();
            }
        }

        let x = Tensor::from_rows(&[
            vec![0.2, -0.4, 1.0],
            vec![0.9, 0.1, -0.2],
            vec![-0.6, 0.5, 0.3],
            vec![0.0, 1.2, -0.8],
        ])
        .unwrap();

        let mut t1 = Tape::new();
        let b1 = gcn_store.bind(&mut t1).unwrap();
        let x1 = t1.leaf(x.clone()).unwrap();
        let o1 = gcn_layer(&mut t1, x1, &aggs, &b1, 0).unwrap();

        let mut t2 = Tape::new();
        let b2 = rgcn_store.bind(&mut t2).unwrap();
        let x2 = t2.leaf(x.clone()).unwrap();
        let o2 = rgcn_layer(&mut t2, x2, &aggs, &b2, 0).unwrap();

        assert!(t1.value(o1).max_abs_diff(t2.value(o2)) < 1e-12);
    }

    #[test]
    fn gcn_invariant_to_direction_flip() {
        // integer-valued inputs and weights: sums are exact, so the check
        // can demand bitwise equality
        let g = line_graph(4, &[(0, 0, 1), (2, 0, 1), (3, 1, 0)], 2);
        let flipped = line_graph(4, &[(1, 0, 0), (1, 0, 2), (0, 1, 3)], 2);
        let mut store = ParameterStore::<f64>::new();
        let cfg = RgcnConfig { num_layers: 1, input_dim: 2, hidden_dim: 2, num_relations: 2 };
        init_gcn_params(&mut store, &cfg, &mut stream(5, "gcn"))
            .unwrap();
        store
            .set(&names::gcn_weight(0), Tensor::from_rows(&[vec![2.0, 1.0], vec![-1.0, 3.0]]).unwrap())
            .unwrap();
        let x = Tensor::from_rows(&[
            vec![1.0, 2.0],
            vec![-3.0, 4.0],
            vec![5.0, -6.0],
            vec![7.0, 8.0],
        ])
        .unwrap();
        let run = |graph: &KnowledgeGraph| {
            let aggs = RelationAggregators::<f64>::build(graph).unwrap();
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape).unwrap();
            let xid = tape.leaf(x.clone()).unwrap();
            let out = gcn_layer(&mut tape, xid, &aggs, &bound, 0).unwrap();
            tape.value(out).clone()
        };
        assert_eq!(run(&g).data(), run(&flipped).data());
    }

    #[test]
    fn summary_of_zero_states_is_zero_pre_bias() {
        let mut store = ParameterStore::<f64>::new();
        init_summary_params(&mut store, 3, 2, &mut stream(1, "sum")).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let g = tape.leaf(Tensor::zeros(vec![5, 3])).unwrap();
        let s = summary_layer(&mut tape, g, &bound).unwrap();
        // zero states, zero bias -> relu(0)
        assert_eq!(tape.value(s).data(), &[0.0, 0.0]);
    }

    #[test]
    fn summary_single_node_hand_expansion() {
        let mut store = ParameterStore::<f64>::new();
        store
            .insert(names::SUMMARY_W, Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 1.0]]).unwrap())
            .unwrap();
        store
            .insert(names::SUMMARY_BIAS, Tensor::new(vec![1, 2], vec![0.25, 0.25]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let g = tape.leaf(Tensor::from_rows(&[vec![2.0, 4.0]]).unwrap()).unwrap();
        let s = summary_layer(&mut tape, g, &bound).unwrap();
        // relu(W^T g + b): [2*1+4*0.5+0.25, 2*(-2)+4*1+0.25]
        assert_eq!(tape.value(s).data(), &[4.25, 0.25]);
    }

    #[test]
    fn summary_is_permutation_invariant() {
        let mut store = ParameterStore::<f64>::new();
        init_summary_params(&mut store, 3, 4, &mut stream(9, "sum")).unwrap();
        let rows =
            [vec![1.0, 2.0, 3.0], vec![-4.0, 5.0, 6.0], vec![7.0, -8.0, 9.0]];
        let perm = [rows[2].clone(), rows[0].clone(), rows[1].clone()];
        let run = |rs: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape).unwrap();
            let g = tape.leaf(Tensor::from_rows(rs).unwrap()).unwrap();
            let s = summary_layer(&mut tape, g, &bound).unwrap();
            tape.value(s).clone()
        };
        // integer-valued states keep the mean exact under reordering
        assert_eq!(run(&rows).data(), run(&perm).data());
    }
}
