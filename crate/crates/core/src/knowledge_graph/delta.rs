use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{GraphError, KnowledgeGraph};

/// Label-level identity of an edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub source: String,
    pub predicate: String,
    pub target: String,
}

impl From<(String, String, String)> for EdgeKey {
    fn from((source, predicate, target): (String, String, String)) -> Self {
        Self {
            source,
            predicate,
            target,
        }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.source, self.predicate, self.target)
    }
}

/// Edits turning one graph into another.
///
/// Applied in field order: relabels first, then edge removals, node
/// removals, node additions and edge additions. Edge and node keys after the
/// relabel step use the new labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub relabeled_nodes: Vec<(String, String)>,
    pub removed_edges: Vec<EdgeKey>,
    pub removed_nodes: Vec<String>,
    pub added_nodes: Vec<String>,
    pub added_edges: Vec<EdgeKey>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.relabeled_nodes.is_empty()
            && self.removed_edges.is_empty()
            && self.removed_nodes.is_empty()
            && self.added_nodes.is_empty()
            && self.added_edges.is_empty()
    }

    /// e.g. `2 added, 1 removed` (edge counts), with relabels appended when
    /// present.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} added, {} removed",
            self.added_edges.len(),
            self.removed_edges.len()
        );
        if !self.relabeled_nodes.is_empty() {
            s.push_str(&format!(", {} relabeled", self.relabeled_nodes.len()));
        }
        s
    }
}

/// Minimal label-keyed delta. Renames cannot be inferred here and show up
/// as a removed plus an added node.
pub fn diff(original: &KnowledgeGraph, edited: &KnowledgeGraph) -> GraphDelta {
    diff_after(Vec::new(), original, edited)
}

/// Delta given renames recorded at edit time. Fails when a rename targets a
/// label that is already in use at that point.
pub fn diff_with_relabels(
    original: &KnowledgeGraph,
    edited: &KnowledgeGraph,
    relabels: &[(String, String)],
) -> Result<GraphDelta, GraphError> {
    let mut renamed = original.clone();
    for (old, new) in relabels {
        renamed.relabel_node(old, new)?;
    }
    Ok(diff_after(relabels.to_vec(), &renamed, edited))
}

fn diff_after(
    relabeled_nodes: Vec<(String, String)>,
    base: &KnowledgeGraph,
    edited: &KnowledgeGraph,
) -> GraphDelta {
    let (base_labels, edited_labels) = (base.label_set(), edited.label_set());
    let (base_edges, edited_edges) = (base.edge_set(), edited.edge_set());
    let minus = |a: &BTreeSet<EdgeKey>, b: &BTreeSet<EdgeKey>| a.difference(b).cloned().collect();
    GraphDelta {
        relabeled_nodes,
        removed_edges: minus(&base_edges, &edited_edges),
        removed_nodes: base_labels.difference(&edited_labels).cloned().collect(),
        added_nodes: edited_labels.difference(&base_labels).cloned().collect(),
        added_edges: minus(&edited_edges, &base_edges),
    }
}

pub fn apply(original: &KnowledgeGraph, delta: &GraphDelta) -> Result<KnowledgeGraph, GraphError> {
    let mut g = original.clone();
    for (old, new) in &delta.relabeled_nodes {
        g.relabel_node(old, new)?;
    }
    for e in &delta.removed_edges {
        if !g.remove_edge(&e.source, &e.predicate, &e.target) {
            return Err(GraphError::UnknownLabel(e.to_string()));
        }
    }
    for label in &delta.removed_nodes {
        if !g.remove_node(label) {
            return Err(GraphError::UnknownLabel(label.clone()));
        }
    }
    for label in &delta.added_nodes {
        g.ensure_node(label);
    }
    for e in &delta.added_edges {
        g.add_edge(&e.source, &e.predicate, &e.target);
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(edges: &[(&str, &str, &str)]) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for (s, p, o) in edges {
            g.add_edge(s, p, o);
        }
        g
    }

    #[test]
    fn identical_graphs_have_empty_delta() {
        let g = graph(&[("a", "r", "b")]);
        let d = diff(&g, &g.clone());
        assert!(d.is_empty());
        assert_eq!(d.summary(), "0 added, 0 removed");
    }

    #[test]
    fn one_missing_edge() {
        let g = graph(&[("a", "r", "b"), ("b", "r", "c")]);
        let mut edited = g.clone();
        edited.remove_edge("b", "r", "c");
        let d = diff(&g, &edited);
        assert_eq!(d.removed_edges.len(), 1);
        assert!(d.added_edges.is_empty());
        assert!(d.removed_nodes.is_empty());
        assert_eq!(d.summary(), "0 added, 1 removed");
    }

    #[test]
    fn two_added_one_removed() {
        let g = graph(&[("a", "r", "b"), ("b", "r", "c")]);
        let mut edited = g.clone();
        edited.remove_edge("a", "r", "b");
        edited.add_edge("c", "s", "a");
        edited.add_edge("c", "t", "d");
        let d = diff(&g, &edited);
        assert_eq!((d.added_edges.len(), d.removed_edges.len()), (2, 1));
        assert_eq!(d.added_nodes, vec!["d".to_string()]);
        assert!(apply(&g, &d).unwrap().same_content(&edited));
    }

    #[test]
    fn recorded_relabel() {
        let g = graph(&[("suppliers", "deliver", "raw materials")]);
        let mut edited = g.clone();
        edited.relabel_node("suppliers", "vendors").unwrap();
        let plain = diff(&g, &edited);
        assert_eq!(plain.removed_nodes, vec!["suppliers".to_string()]);
        let recorded =
            diff_with_relabels(&g, &edited, &[("suppliers".into(), "vendors".into())]).unwrap();
        assert!(recorded.removed_edges.is_empty() && recorded.added_edges.is_empty());
        assert_eq!(recorded.summary(), "0 added, 0 removed, 1 relabeled");
        assert!(apply(&g, &recorded).unwrap().same_content(&edited));
        assert!(apply(&g, &plain).unwrap().same_content(&edited));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn edges() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
            prop::collection::vec((0u8..8, 0u8..3, 0u8..8), 0..20)
        }

        fn to_graph(es: &[(u8, u8, u8)], extra_nodes: &[u8]) -> KnowledgeGraph {
            let mut g = KnowledgeGraph::new();
            for n in extra_nodes {
                g.ensure_node(&format!("n{n}"));
            }
            for (s, p, o) in es {
                g.add_edge(&format!("n{s}"), &format!("p{p}"), &format!("n{o}"));
            }
            g
        }

        proptest! {
            #[test]
            fn diff_then_apply_reconstructs(
                a in edges(), b in edges(),
                na in prop::collection::vec(0u8..10, 0..3),
                nb in prop::collection::vec(0u8..10, 0..3),
            ) {
                let original = to_graph(&a, &na);
                let edited = to_graph(&b, &nb);
                let d = diff(&original, &edited);
                prop_assert!(apply(&original, &d).unwrap().same_content(&edited));
                let ea = original.edge_set();
                let eb = edited.edge_set();
                prop_assert_eq!(d.added_edges.len(), eb.difference(&ea).count());
                prop_assert_eq!(d.removed_edges.len(), ea.difference(&eb).count());
            }
        }
    }
}
