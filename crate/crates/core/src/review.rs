//! State behind the review API: the graph as extracted, the graph as the
//! reviewer last saved it, and the delta between them.

use crate::knowledge_graph::{
    diff, diff_with_relabels, GraphDelta, GraphError, KnowledgeGraph, NodeLinkGraph,
};

#[derive(Debug, Clone)]
pub struct ReviewSession {
    original: KnowledgeGraph,
    current: KnowledgeGraph,
    relabels: Vec<(String, String)>,
    delta: GraphDelta,
}

impl ReviewSession {
    pub fn new(original: KnowledgeGraph) -> Self {
        Self {
            current: original.clone(),
            original,
            relabels: Vec::new(),
            delta: GraphDelta::default(),
        }
    }

    pub fn original(&self) -> &KnowledgeGraph {
        &self.original
    }

    pub fn current(&self) -> &KnowledgeGraph {
        &self.current
    }

    pub fn delta(&self) -> &GraphDelta {
        &self.delta
    }

    pub fn graph(&self) -> NodeLinkGraph {
        self.current.to_node_link()
    }

    /// Replaces the working graph. A node whose id was served with one label
    /// and comes back with another is recorded as a relabel.
    pub fn put(&mut self, doc: &NodeLinkGraph) -> Result<&GraphDelta, GraphError> {
        let edited = KnowledgeGraph::from_node_link(doc)?;
        let mut relabels = self.relabels.clone();
        for node in &doc.nodes {
            let Ok(id) = usize::try_from(node.id) else {
                continue;
            };
            if id >= self.current.node_count() {
                continue;
            }
            let old = self.current.label(id);
            if old != node.label {
                compose(&mut relabels, old, &node.label);
            }
        }
        relabels.retain(|(from, to)| from != to);
        let delta = match diff_with_relabels(&self.original, &edited, &relabels) {
            Ok(d) => d,
            Err(_) => {
                // swaps and other order-dependent renames: fall back to plain set differences
                relabels.clear();
                diff(&self.original, &edited)
            }
        };
        self.current = edited;
        self.relabels = relabels;
        self.delta = delta;
        Ok(&self.delta)
    }
}

/// Folds `old -> new` into renames expressed against the original labels.
fn compose(relabels: &mut Vec<(String, String)>, old: &str, new: &str) {
    match relabels.iter_mut().find(|(_, to)| to == old) {
        Some(entry) => entry.1 = new.to_string(),
        None => relabels.push((old.to_string(), new.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poc() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        g.add_edge("supply chain", "includes", "sourcing");
        g.add_edge("supply chain", "consists of", "suppliers");
        g.add_edge("suppliers", "deliver", "raw materials");
        g
    }

    #[test]
    fn unchanged_put_gives_empty_delta() {
        let mut s = ReviewSession::new(poc());
        let doc = s.graph();
        assert!(s.put(&doc).unwrap().is_empty());
    }

    #[test]
    fn relabel_detected_by_id_and_composed() {
        let mut s = ReviewSession::new(poc());
        let mut doc = s.graph();
        let n = doc.nodes.iter_mut().find(|n| n.label == "suppliers").unwrap();
        n.label = "vendors".into();
        let d = s.put(&doc).unwrap().clone();
        assert_eq!(d.relabeled_nodes, vec![("suppliers".into(), "vendors".into())]);
        assert_eq!(d.summary(), "0 added, 0 removed, 1 relabeled");

        let mut doc = s.graph();
        let n = doc.nodes.iter_mut().find(|n| n.label == "vendors").unwrap();
        n.label = "supplier firms".into();
        let d = s.put(&doc).unwrap().clone();
        assert_eq!(d.relabeled_nodes, vec![("suppliers".into(), "supplier firms".into())]);

        let mut doc = s.graph();
        let n = doc.nodes.iter_mut().find(|n| n.label == "supplier firms").unwrap();
        n.label = "suppliers".into();
        assert!(s.put(&doc).unwrap().is_empty());
    }

    #[test]
    fn edge_removal_and_swap() {
        let mut s = ReviewSession::new(poc());
        let mut doc = s.graph();
        doc.edges.retain(|e| e.label != "includes");
        assert_eq!(s.put(&doc).unwrap().summary(), "0 added, 1 removed");
        assert!(s.current().has_edge("suppliers", "deliver", "raw materials"));

        let mut s = ReviewSession::new(poc());
        let mut doc = s.graph();
        for n in &mut doc.nodes {
            n.label = match n.label.as_str() {
                "sourcing" => "suppliers".into(),
                "suppliers" => "sourcing".into(),
                other => other.into(),
            };
        }
        let d = s.put(&doc).unwrap().clone();
        assert!(d.relabeled_nodes.is_empty());
        assert!(crate::knowledge_graph::apply(s.original(), &d)
            .unwrap()
            .same_content(s.current()));
    }

    #[test]
    fn invalid_put_leaves_session_unchanged() {
        let mut s = ReviewSession::new(poc());
        let mut doc = s.graph();
        doc.edges[0].target = 99;
        assert!(s.put(&doc).is_err());
        assert!(s.current().same_content(&poc()));
    }
}
