//! Writes the hand-authored chat fixtures under `fixtures/llm`.
//!
//! The responses below were written by hand to stand in for recorded model
//! output, so the pipeline can run end to end offline. Run from the
//! repository root after changing a prompt or the bundled corpus:
//!
//! ```text
//! cargo run -p truster-core --example author_fixtures
//! ```

use std::path::Path;

use truster_core::corpus::{chunk, collect_corpus_files, ingest, DEFAULT_MAX_CHUNK_CHARS};
use truster_core::llm_gateway::store_exchange;
use truster_core::prompts::Prompts;

const MODEL: &str = "gpt-4";

const CORPUS_TRIPLETS: &str = r#"[
  ["supply chain", "includes", "sourcing"],
  ["supply chain", "includes", "procurement"],
  ["supply chain", "consists of", "suppliers"],
  ["supply chain", "includes", "manufacturing"],
  ["supply chain", "includes", "distribution"],
  ["supply chain", "includes", "logistics"],
  ["suppliers", "deliver", "raw materials"],
  ["manufacturers", "transform", "raw materials"],
  ["manufacturers", "produce", "finished goods"],
  ["distributors", "move", "finished goods"],
  ["retailers", "sell", "products"],
  ["customers", "purchase", "products"],
  ["logistics", "covers", "transportation"],
  ["logistics", "covers", "warehousing"],
  ["Inventory management", "balances", "stock"],
  ["demand forecasting", "predicts", "customer demand"],
  ["procurement", "negotiates", "contracts"],
  ["information", "flows between", "partners"],
  ["financial flows", "include", "payments"],
  ["supply chain management", "coordinates", "activities"],
  ["disruptions", "affect", "supply chain"],
  ["resilience", "requires", "diversified suppliers"],
  ["Supply chain", "includes", "sourcing."],
  ["lean practices", "reduce", "waste"],
  ["warehouses", "store", "inventory"],
  ["technology", "improves", "visibility"]
]"#;

const ANSWERS: &[(&str, &str)] = &[
    (
        "Suppliers provide materials.",
        r#"[["suppliers", "provide", "materials"]]"#,
    ),
    (
        "Suppliers provide money.",
        r#"[["suppliers", "provide", "money"]]"#,
    ),
    (
        "The supply chain plays football.",
        r#"[["supply chain", "plays", "football"]]"#,
    ),
    (
        "Suppliers provide materials. The supply chain plays football.",
        r#"[["suppliers", "provide", "materials"], ["supply chain", "plays", "football"]]"#,
    ),
    ("It depends on many things.", "[]"),
];

const QUESTIONS: &[(&str, &str)] = &[("What do suppliers provide?", "Suppliers provide materials.")];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let out = root.join("fixtures/llm");
    let prompts = Prompts::default();

    let docs = ingest(&collect_corpus_files(&root.join("fixtures/corpus"))?)?;
    for doc in &docs {
        for c in chunk(doc, DEFAULT_MAX_CHUNK_CHARS) {
            let user = prompts.extraction_user_content(&c.text);
            let path = store_exchange(&out, MODEL, &prompts.extract_assistant, &user, CORPUS_TRIPLETS)?;
            println!("{}  {}", path.display(), c.source_id());
        }
    }
    for (answer, triplets) in ANSWERS {
        let user = prompts.extraction_user_content(answer);
        let path = store_exchange(&out, MODEL, &prompts.extract_assistant, &user, triplets)?;
        println!("{}  {answer}", path.display());
    }
    for (question, answer) in QUESTIONS {
        let path = store_exchange(&out, MODEL, &prompts.answer_assistant, question, answer)?;
        println!("{}  {question}", path.display());
    }
    Ok(())
}
