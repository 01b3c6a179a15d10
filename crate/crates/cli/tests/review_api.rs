use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde_json::{json, Value};
use truster_cli::server::{self, ReviewState};
use truster_core::config::Config;
use truster_core::knowledge_graph::gml::from_gml;
use truster_core::knowledge_graph::{diff, NodeLinkGraph};
use truster_core::pipeline::{State, Workspace, DELTA_LOG, PRE_GML, VALIDATED_GML};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn built(root: &Path) -> Workspace {
    let config = Config::load(&repo().join("fixtures/truster.toml")).unwrap();
    let mut ws = Workspace::create(root, config, false).unwrap();
    ws.build(&repo().join("fixtures/corpus")).unwrap();
    ws
}

/// Starts the server on an ephemeral port; the handle resolves once the
/// graph is approved.
async fn start(
    root: &Path,
) -> (String, tokio::task::JoinHandle<std::io::Result<truster_core::knowledge_graph::GraphDelta>>) {
    let ws = Workspace::open(root).unwrap();
    let session = ws.review_session(false).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let handle = tokio::spawn(server::serve(listener, ReviewState::new(ws, session), None));
    (base, handle)
}

#[tokio::test]
async fn edit_then_approve_writes_validated_graph() {
    let dir = tempfile::tempdir().unwrap();
    built(dir.path());
    let (base, handle) = start(dir.path()).await;
    let http = reqwest::Client::new();

    let mut doc: NodeLinkGraph = http
        .get(format!("{base}/api/graph"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(doc.directed);
    assert_eq!(doc.edges.len(), 25);
    let id_of = |doc: &NodeLinkGraph, label: &str| doc.nodes.iter().find(|n| n.label == label).unwrap().id;
    let (sc, sourcing) = (id_of(&doc, "supply chain"), id_of(&doc, "sourcing"));
    doc.edges
        .retain(|e| !(e.source == sc && e.target == sourcing && e.label == "includes"));
    let suppliers = id_of(&doc, "suppliers");
    doc.nodes
        .iter_mut()
        .find(|n| n.id == suppliers)
        .unwrap()
        .label = "vendors".into();

    let put: Value = http
        .put(format!("{base}/api/graph"))
        .json(&doc)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(put["summary"], "0 added, 1 removed, 1 relabeled");
    assert_eq!(put["delta"]["relabeled_nodes"], json!([["suppliers", "vendors"]]));

    let approve = http.post(format!("{base}/api/approve")).send().await.unwrap();
    assert_eq!(approve.status(), 200);
    let body: Value = approve.json().await.unwrap();
    assert_eq!(body["state"], "validated");
    assert_eq!(body["summary"], "0 added, 1 removed, 1 relabeled");

    let delta = handle.await.unwrap().unwrap();
    assert_eq!(delta.summary(), "0 added, 1 removed, 1 relabeled");

    let ws = Workspace::open(dir.path()).unwrap();
    assert_eq!(ws.state().state, State::Validated);
    let pre = from_gml(&fs::read_to_string(ws.path(PRE_GML)).unwrap()).unwrap();
    let validated = from_gml(&fs::read_to_string(ws.path(VALIDATED_GML)).unwrap()).unwrap();
    assert!(!validated.has_edge("supply chain", "includes", "sourcing"));
    assert!(validated.has_edge("vendors", "deliver", "raw materials"));
    assert!(validated.has_edge("supply chain", "consists of", "vendors"));
    assert_eq!(validated.edge_count(), 24);
    // plain diff sees the rename as edges moving between nodes
    let plain = diff(&pre, &validated);
    assert_eq!(plain.removed_edges.len() - plain.added_edges.len(), 1);
    let log: Value = serde_json::from_str(&fs::read_to_string(ws.path(DELTA_LOG)).unwrap()).unwrap();
    assert_eq!(log["summary"], "0 added, 1 removed, 1 relabeled");
}

#[tokio::test]
async fn identity_approve_matches_identity_import() {
    let served = tempfile::tempdir().unwrap();
    let imported = tempfile::tempdir().unwrap();
    built(served.path());
    let mut other = built(imported.path());
    let pre = other.path(PRE_GML);
    other.review_import(&pre, false).unwrap();

    let (base, handle) = start(served.path()).await;
    let body: Value = reqwest::Client::new()
        .post(format!("{base}/api/approve"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(body["summary"], "0 added, 0 removed");
    assert!(handle.await.unwrap().unwrap().is_empty());
    assert_eq!(
        fs::read(served.path().join(VALIDATED_GML)).unwrap(),
        fs::read(imported.path().join(VALIDATED_GML)).unwrap()
    );
}

#[tokio::test]
async fn invalid_puts_are_json_errors_and_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    built(dir.path());
    let (base, handle) = start(dir.path()).await;
    let http = reqwest::Client::new();

    let resp = http
        .put(format!("{base}/api/graph"))
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    let body: Value = resp.json().await.unwrap();
    assert!(body["error"].as_str().unwrap().starts_with("invalid graph JSON"));

    let dangling = json!({
        "directed": true,
        "nodes": [{"id": 0, "label": "a"}],
        "edges": [{"source": 0, "target": 5, "label": "r"}]
    });
    let resp = http.put(format!("{base}/api/graph")).json(&dangling).send().await.unwrap();
    assert_eq!(resp.status(), 422);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["error"], "node id 5 is not defined");

    let duplicate = json!({
        "directed": true,
        "nodes": [{"id": 0, "label": "a"}, {"id": 1, "label": "a"}],
        "edges": []
    });
    let resp = http.put(format!("{base}/api/graph")).json(&duplicate).send().await.unwrap();
    assert_eq!(resp.status(), 422);

    let doc: NodeLinkGraph = http.get(format!("{base}/api/graph")).send().await.unwrap().json().await.unwrap();
    assert_eq!(doc.edges.len(), 25);
    let body: Value = http.post(format!("{base}/api/approve")).send().await.unwrap().json().await.unwrap();
    assert_eq!(body["summary"], "0 added, 0 removed");
    handle.await.unwrap().unwrap();
}

#[test]
fn binary_serves_until_approved() {
    let dir = tempfile::tempdir().unwrap();
    built(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_truster"))
        .arg("--workspace")
        .arg(dir.path())
        .args(["review", "serve", "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let base = first
        .strip_prefix("review server listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {first}"))
        .to_string();
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let http = reqwest::Client::new();
        let doc: Value = http.get(format!("{base}/api/graph")).send().await.unwrap().json().await.unwrap();
        assert_eq!(doc["edges"].as_array().unwrap().len(), 25);
        assert_eq!(doc["edges"][0], json!({"source": 0, "target": 1, "label": "includes"}));
        let resp = http.post(format!("{base}/api/approve")).send().await.unwrap();
        assert_eq!(resp.status(), 200);
    });
    let last = lines.next().unwrap().unwrap();
    assert_eq!(last, "validated graph: 0 added, 0 removed");
    assert!(child.wait().unwrap().success());
}
