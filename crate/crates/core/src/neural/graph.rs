use serde::{Deserialize, Serialize};

use super::NeuralError;
use crate::geometry::KernelKind;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Both endpoints belong to the same geometric entity.
    pub intra: bool,
}

/// Node encodings of one kernel instance, grouped into geometric entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct KernelGraph<T> {
    pub kind: KernelKind,
    pub nodes: Vec<Vec<T>>,
    /// Entity index of every node.
    pub grouping: Vec<usize>,
    pub edges: Vec<Edge>,
}

impl<T: Real> KernelGraph<T> {
    /// Fully connected directed graph over the members of `entities`; each
    /// entity is a list of node encodings.
    pub fn from_entities(kind: KernelKind, entities: Vec<Vec<Vec<T>>>) -> Result<Self, NeuralError> {
        let mut nodes = Vec::new();
        let mut grouping = Vec::new();
        for (g, members) in entities.into_iter().enumerate() {
            for enc in members {
                nodes.push(enc);
                grouping.push(g);
            }
        }
        Self::fully_connected(kind, nodes, grouping)
    }

    pub fn fully_connected(kind: KernelKind, nodes: Vec<Vec<T>>, grouping: Vec<usize>) -> Result<Self, NeuralError> {
        if nodes.is_empty() {
            return Err(NeuralError::EmptyGraph);
        }
        if grouping.len() != nodes.len() {
            return Err(NeuralError::Dimension(format!("{} group labels for {} nodes", grouping.len(), nodes.len())));
        }
        let dim = nodes[0].len();
        if nodes.iter().any(|n| n.len() != dim) {
            return Err(NeuralError::Dimension("node encodings differ in length".into()));
        }
        let n = nodes.len();
        let edges = (0..n)
            .flat_map(|src| (0..n).filter(move |&dst| dst != src).map(move |dst| (src, dst)))
            .map(|(src, dst)| Edge { src, dst, intra: grouping[src] == grouping[dst] })
            .collect();
        Ok(Self { kind, nodes, grouping, edges })
    }

    /// Node count a standard instance of `kind` has.
    pub fn standard_node_count(kind: KernelKind) -> usize {
        match kind {
            KernelKind::P2p => 2,
            KernelKind::P2l => 3,
            KernelKind::L2l => 4,
            KernelKind::P2c => 6,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn input_dim(&self) -> usize {
        self.nodes[0].len()
    }

    /// Relabels nodes: new node `i` is old node `order[i]`. Edges follow.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut inverse = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let mut edges: Vec<Edge> =
            self.edges.iter().map(|e| Edge { src: inverse[e.src], dst: inverse[e.dst], intra: e.intra }).collect();
        edges.sort_by_key(|e| (e.src, e.dst));
        Self {
            kind: self.kind,
            nodes: order.iter().map(|&o| self.nodes[o].clone()).collect(),
            grouping: order.iter().map(|&o| self.grouping[o]).collect(),
            edges,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_marks_entity_membership() {
        let g = KernelGraph::from_entities(KernelKind::P2l, vec![vec![vec![0.0; 3]], vec![vec![1.0; 3], vec![2.0; 3]]])
            .unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.edges.len(), 6);
        let intra: Vec<(usize, usize)> = g.edges.iter().filter(|e| e.intra).map(|e| (e.src, e.dst)).collect();
        assert_eq!(intra, vec![(1, 2), (2, 1)]);
    }

    #[test]
    fn permutation_relabels_edges() {
        let g = KernelGraph::from_entities(KernelKind::P2l, vec![vec![vec![0.0]], vec![vec![1.0], vec![2.0]]]).unwrap();
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.nodes, vec![vec![2.0], vec![0.0], vec![1.0]]);
        assert_eq!(p.grouping, vec![1, 0, 1]);
        let intra: Vec<(usize, usize)> = p.edges.iter().filter(|e| e.intra).map(|e| (e.src, e.dst)).collect();
        assert_eq!(intra, vec![(0, 2), (2, 0)]);
    }

    #[test]
    fn malformed_graphs() {
        assert_eq!(KernelGraph::<f64>::from_entities(KernelKind::P2p, vec![]), Err(NeuralError::EmptyGraph));
        assert!(KernelGraph::from_entities(KernelKind::P2p, vec![vec![vec![0.0, 1.0]], vec![vec![0.0]]]).is_err());
    }
}
