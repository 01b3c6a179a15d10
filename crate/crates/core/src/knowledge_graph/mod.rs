//! Directed labeled multigraph over triplets.
//!
//! Subjects and objects become nodes, predicates become edge labels. Node
//! labels are unique and edges are unique on (source, target, label), so the
//! graph and a de-duplicated triplet set carry the same information.

mod delta;
pub mod gml;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::triplet::{Origin, Triplet, TripletSet};

pub use delta::{apply, diff, diff_with_relabels, EdgeKey, GraphDelta};

/// `source_id` carried by triplets read back from a graph.
pub const GRAPH_SOURCE_ID: &str = "graph";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node label `{0}` already exists")]
    DuplicateLabel(String),
    #[error("no node labeled `{0}`")]
    UnknownLabel(String),
    #[error("node id {0} is not defined")]
    UnknownNodeId(u64),
    #[error("node id {0} is defined twice")]
    DuplicateNodeId(u64),
    #[error("edge ({0}, {1}, {2}) is defined twice")]
    DuplicateEdge(String, String, String),
    #[error("node {0} has an empty label")]
    EmptyLabel(u64),
    #[error("graph must be directed")]
    Undirected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub label: String,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    by_label: HashMap<String, usize>,
    edge_keys: HashSet<(usize, usize, String)>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_id(&self, label: &str) -> Option<usize> {
        self.by_label.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.nodes[id].label
    }

    /// Returns the id for `label`, creating the node if needed. Ids are dense
    /// and follow first appearance.
    pub fn ensure_node(&mut self, label: &str) -> usize {
        if let Some(&id) = self.by_label.get(label) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            label: label.to_string(),
        });
        self.by_label.insert(label.to_string(), id);
        id
    }

    /// Adds the edge unless an identical (source, predicate, target) exists.
    /// Returns whether the graph changed.
    pub fn add_edge(&mut self, source: &str, predicate: &str, target: &str) -> bool {
        let s = self.ensure_node(source);
        let t = self.ensure_node(target);
        self.add_edge_ids(s, t, predicate)
    }

    fn add_edge_ids(&mut self, source: usize, target: usize, predicate: &str) -> bool {
        if !self
            .edge_keys
            .insert((source, target, predicate.to_string()))
        {
            return false;
        }
        self.edges.push(Edge {
            source,
            target,
            label: predicate.to_string(),
        });
        true
    }

    pub fn has_edge(&self, source: &str, predicate: &str, target: &str) -> bool {
        match (self.node_id(source), self.node_id(target)) {
            (Some(s), Some(t)) => self.edge_keys.contains(&(s, t, predicate.to_string())),
            _ => false,
        }
    }

    pub fn remove_edge(&mut self, source: &str, predicate: &str, target: &str) -> bool {
        let (Some(s), Some(t)) = (self.node_id(source), self.node_id(target)) else {
            return false;
        };
        if !self.edge_keys.remove(&(s, t, predicate.to_string())) {
            return false;
        }
        self.edges
            .retain(|e| !(e.source == s && e.target == t && e.label == predicate));
        true
    }

    /// Renames a node in place, keeping its id and incident edges.
    pub fn relabel_node(&mut self, old: &str, new: &str) -> Result<(), GraphError> {
        if old == new {
            return Ok(());
        }
        if self.by_label.contains_key(new) {
            return Err(GraphError::DuplicateLabel(new.to_string()));
        }
        let id = self
            .by_label
            .remove(old)
            .ok_or_else(|| GraphError::UnknownLabel(old.to_string()))?;
        self.nodes[id].label = new.to_string();
        self.by_label.insert(new.to_string(), id);
        Ok(())
    }

    /// Removes a node and its incident edges; remaining ids are re-densified
    /// in their previous order.
    pub fn remove_node(&mut self, label: &str) -> bool {
        let Some(id) = self.node_id(label) else {
            return false;
        };
        let mut rebuilt = KnowledgeGraph::new();
        for n in self.nodes.iter().filter(|n| n.id != id) {
            rebuilt.ensure_node(&n.label);
        }
        for e in self.edges.iter().filter(|e| e.source != id && e.target != id) {
            rebuilt.add_edge(self.label(e.source), &e.label, self.label(e.target));
        }
        *self = rebuilt;
        true
    }

    /// Edges as (source label, predicate, target label), in edge order.
    pub fn edge_triples(&self) -> Vec<(String, String, String)> {
        self.edges
            .iter()
            .map(|e| {
                (
                    self.label(e.source).to_string(),
                    e.label.clone(),
                    self.label(e.target).to_string(),
                )
            })
            .collect()
    }

    pub fn label_set(&self) -> BTreeSet<String> {
        self.nodes.iter().map(|n| n.label.clone()).collect()
    }

    pub fn edge_set(&self) -> BTreeSet<EdgeKey> {
        self.edge_triples().into_iter().map(EdgeKey::from).collect()
    }

    /// Equality on node labels and labeled edges, ignoring ids and order.
    pub fn same_content(&self, other: &KnowledgeGraph) -> bool {
        self.label_set() == other.label_set() && self.edge_set() == other.edge_set()
    }

    pub fn to_node_link(&self) -> NodeLinkGraph {
        NodeLinkGraph {
            directed: true,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeLinkNode {
                    id: n.id as u64,
                    label: n.label.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| NodeLinkEdge {
                    source: e.source as u64,
                    target: e.target as u64,
                    label: e.label.clone(),
                })
                .collect(),
        }
    }

    /// Builds a graph from externally numbered nodes and edges. Ids are
    /// remapped densely in the given node order.
    pub fn from_parts(
        nodes: impl IntoIterator<Item = (u64, String)>,
        edges: impl IntoIterator<Item = (u64, u64, String)>,
    ) -> Result<Self, GraphError> {
        let mut g = KnowledgeGraph::new();
        let mut ids: HashMap<u64, usize> = HashMap::new();
        for (ext, label) in nodes {
            if ids.contains_key(&ext) {
                return Err(GraphError::DuplicateNodeId(ext));
            }
            if label.is_empty() {
                return Err(GraphError::EmptyLabel(ext));
            }
            if g.by_label.contains_key(&label) {
                return Err(GraphError::DuplicateLabel(label));
            }
            ids.insert(ext, g.ensure_node(&label));
        }
        for (s, t, label) in edges {
            let source = *ids.get(&s).ok_or(GraphError::UnknownNodeId(s))?;
            let target = *ids.get(&t).ok_or(GraphError::UnknownNodeId(t))?;
            if !g.add_edge_ids(source, target, &label) {
                return Err(GraphError::DuplicateEdge(
                    g.label(source).to_string(),
                    label,
                    g.label(target).to_string(),
                ));
            }
        }
        Ok(g)
    }

    pub fn from_node_link(doc: &NodeLinkGraph) -> Result<Self, GraphError> {
        if !doc.directed {
            return Err(GraphError::Undirected);
        }
        Self::from_parts(
            doc.nodes.iter().map(|n| (n.id, n.label.clone())),
            doc.edges
                .iter()
                .map(|e| (e.source, e.target, e.label.clone())),
        )
    }
}

/// JSON shape exchanged with the review UI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLinkGraph {
    pub directed: bool,
    pub nodes: Vec<NodeLinkNode>,
    pub edges: Vec<NodeLinkEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLinkNode {
    pub id: u64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLinkEdge {
    pub source: u64,
    pub target: u64,
    pub label: String,
}

/// One node per distinct subject/object, one edge per triplet.
pub fn build_graph(set: &TripletSet) -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    for t in set {
        g.add_edge(&t.subject, &t.predicate, &t.object);
    }
    g
}

/// One knowledge-base triplet per edge, in edge order.
pub fn graph_to_triplets(g: &KnowledgeGraph) -> TripletSet {
    let triplets = g
        .edge_triples()
        .into_iter()
        .map(|(subject, predicate, object)| Triplet {
            subject,
            predicate,
            object,
            origin: Origin::KnowledgeBase,
            source_id: GRAPH_SOURCE_ID.to_string(),
        })
        .collect();
    // edges are unique by construction
    TripletSet::from_raw(triplets).dedup()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str, p: &str, o: &str) -> Triplet {
        Triplet {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
            origin: Origin::KnowledgeBase,
            source_id: "x".into(),
        }
    }

    #[test]
    fn single_triplet_gives_two_nodes_one_edge() {
        let set = TripletSet::from_raw(vec![t("supply chain", "includes", "sourcing")]).dedup();
        let g = build_graph(&set);
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
        assert_eq!(g.nodes()[0].label, "supply chain");
        assert_eq!(g.nodes()[1].label, "sourcing");
        assert!(g.has_edge("supply chain", "includes", "sourcing"));
    }

    #[test]
    fn empty_set_gives_empty_graph() {
        let g = build_graph(&TripletSet::new());
        assert!(g.is_empty());
        assert!(graph_to_triplets(&g).is_empty());
    }

    #[test]
    fn parallel_and_reverse_edges() {
        let set =
            TripletSet::from_raw(vec![t("a", "r1", "b"), t("a", "r2", "b"), t("b", "r1", "a")])
                .dedup();
        let g = build_graph(&set);
        assert_eq!((g.node_count(), g.edge_count()), (2, 3));
    }

    #[test]
    fn self_loops_are_allowed() {
        let mut g = KnowledgeGraph::new();
        assert!(g.add_edge("a", "relates to", "a"));
        assert!(!g.add_edge("a", "relates to", "a"));
        assert_eq!((g.node_count(), g.edge_count()), (1, 1));
    }

    #[test]
    fn graph_back_to_triplets() {
        let set = TripletSet::from_raw(vec![t("a", "r", "b"), t("b", "s", "c")]).dedup();
        let mut g = build_graph(&set);
        assert_eq!(graph_to_triplets(&g).spo_set(), set.spo_set());
        g.add_edge("x", "relates to", "y");
        let back = graph_to_triplets(&g);
        assert!(back.contains("x", "relates to", "y"));
        assert!(back.iter().all(|t| t.origin == Origin::KnowledgeBase));
    }

    #[test]
    fn relabel_and_remove() {
        let mut g = KnowledgeGraph::new();
        g.add_edge("a", "r", "b");
        g.add_edge("b", "r", "c");
        assert_eq!(
            g.relabel_node("a", "c"),
            Err(GraphError::DuplicateLabel("c".into()))
        );
        g.relabel_node("a", "z").unwrap();
        assert!(g.has_edge("z", "r", "b"));
        assert!(g.remove_node("b"));
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.label_set(), ["c", "z"].iter().map(|s| s.to_string()).collect());
        assert_eq!(g.node_id("c"), Some(1));
    }

    #[test]
    fn node_link_json_field_names() {
        let mut g = KnowledgeGraph::new();
        g.add_edge("supply chain", "includes", "sourcing");
        let json = serde_json::to_string(&g.to_node_link()).unwrap();
        assert_eq!(
            json,
            r#"{"directed":true,"nodes":[{"id":0,"label":"supply chain"},{"id":1,"label":"sourcing"}],"edges":[{"source":0,"target":1,"label":"includes"}]}"#
        );
        let doc: NodeLinkGraph = serde_json::from_str(&json).unwrap();
        assert!(KnowledgeGraph::from_node_link(&doc).unwrap().same_content(&g));
    }

    #[test]
    fn node_link_validation() {
        let doc = |directed, edges: Vec<NodeLinkEdge>| NodeLinkGraph {
            directed,
            nodes: vec![
                NodeLinkNode {
                    id: 0,
                    label: "a".into(),
                },
                NodeLinkNode {
                    id: 5,
                    label: "b".into(),
                },
            ],
            edges,
        };
        let edge = |s, t| NodeLinkEdge {
            source: s,
            target: t,
            label: "r".into(),
        };
        assert_eq!(
            KnowledgeGraph::from_node_link(&doc(false, vec![])).unwrap_err(),
            GraphError::Undirected
        );
        assert_eq!(
            KnowledgeGraph::from_node_link(&doc(true, vec![edge(0, 9)])).unwrap_err(),
            GraphError::UnknownNodeId(9)
        );
        assert!(matches!(
            KnowledgeGraph::from_node_link(&doc(true, vec![edge(0, 5), edge(0, 5)])),
            Err(GraphError::DuplicateEdge(..))
        ));
        let g = KnowledgeGraph::from_node_link(&doc(true, vec![edge(5, 0)])).unwrap();
        assert!(g.has_edge("b", "r", "a"));
        assert_eq!(g.node_id("b"), Some(1));
    }
}
