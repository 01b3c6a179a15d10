//! On-disk workspace and the commands that move it through its states.
//!
//! ```text
//! build     -> ingested -> extracted -> graphed
//! review    -> validated
//! finalize  -> finalized
//! ask/score    (finalized only)
//! ```
//!
//! Every stage records the state it reached, so a failure leaves the
//! artifacts of the previous stages in place. Artifacts are only overwritten
//! with `force`.

use std::error::Error as StdError;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compatibility::{AnswerReport, ThresholdConfig, Validator};
use crate::config::{Config, CONFIG_FILE};
use crate::corpus::{chunk, collect_corpus_files, ingest};
use crate::embedding::{embed_batch, triplet_to_sentence, EmbeddingProvider, SentenceText};
use crate::knowledge_graph::gml::{from_gml, to_gml};
use crate::knowledge_graph::{build_graph, diff, graph_to_triplets, GraphDelta, KnowledgeGraph};
use crate::llm_gateway::LlmGateway;
use crate::prompts::Prompts;
use crate::review::ReviewSession;
use crate::triplet::{extract_triplets, write_csv, Origin, TripletSet};
use crate::vector_index::{IndexEntry, VectorIndex};

pub const STATE_FILE: &str = "state.json";
pub const CORPUS_MANIFEST: &str = "corpus.json";
pub const TRIPLETS_CSV: &str = "triplets.csv";
pub const PRE_GML: &str = "graph.pre.gml";
pub const VALIDATED_GML: &str = "graph.validated.gml";
pub const DELTA_LOG: &str = "review.delta.json";
pub const INDEX_FILE: &str = "truster.idx";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum State {
    Ingested,
    Extracted,
    Graphed,
    Validated,
    Finalized,
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            State::Ingested => "ingested",
            State::Extracted => "extracted",
            State::Graphed => "graphed",
            State::Validated => "validated",
            State::Finalized => "finalized",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Extract,
    Graph,
    Review,
    Finalize,
    Ask,
    Score,
    Workspace,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ingest => "ingest",
            Stage::Extract => "extract",
            Stage::Graph => "graph",
            Stage::Review => "review",
            Stage::Finalize => "finalize",
            Stage::Ask => "ask",
            Stage::Score => "score",
            Stage::Workspace => "workspace",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0} is not a workspace (missing {STATE_FILE}); run `truster build` first")]
    NotAWorkspace(PathBuf),
    #[error("`{command}` needs a {required} workspace, but it is {actual}")]
    WrongState {
        command: &'static str,
        required: State,
        actual: State,
    },
    #[error("{0} already exists; pass --force to overwrite")]
    WouldOverwrite(PathBuf),
    #[error("the validated graph has no edges, so there is no knowledge base to index")]
    EmptyKnowledgeBase,
    #[error("the knowledge base was extracted with model {built}, but {configured} is configured")]
    ModelMismatch { built: String, configured: String },
    #[error("{stage}: {error}")]
    Stage {
        stage: Stage,
        error: Box<dyn StdError + Send + Sync>,
    },
}

fn at<E: Into<Box<dyn StdError + Send + Sync>>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        error: e.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspaceState {
    pub state: State,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extraction_model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_provider: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub word_count: usize,
    pub chunks: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildSummary {
    pub documents: usize,
    pub chunks: usize,
    pub triplets: usize,
    pub nodes: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalizeSummary {
    pub sentences: usize,
    pub provider_id: String,
    pub thresholds: ThresholdConfig,
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    config: Config,
    state: WorkspaceState,
}

impl Workspace {
    /// Starts a workspace at `root` with `config`. An existing workspace is
    /// only replaced with `force`.
    pub fn create(root: &Path, config: Config, force: bool) -> Result<Self, PipelineError> {
        let state_path = root.join(STATE_FILE);
        if state_path.exists() && !force {
            return Err(PipelineError::WouldOverwrite(state_path));
        }
        fs::create_dir_all(root).map_err(at(Stage::Workspace))?;
        for stale in [
            STATE_FILE,
            CORPUS_MANIFEST,
            TRIPLETS_CSV,
            PRE_GML,
            VALIDATED_GML,
            DELTA_LOG,
            INDEX_FILE,
        ] {
            match fs::remove_file(root.join(stale)) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                    return Err(at(Stage::Workspace)(e))
                }
                _ => {}
            }
        }
        let config = Config { b: None, ..config };
        config
            .save(&root.join(CONFIG_FILE))
            .map_err(at(Stage::Workspace))?;
        Ok(Self {
            root: root.to_path_buf(),
            config,
            state: WorkspaceState {
                state: State::Ingested,
                extraction_model: None,
                embedding_provider: None,
            },
        })
    }

    pub fn open(root: &Path) -> Result<Self, PipelineError> {
        let state_path = root.join(STATE_FILE);
        if !state_path.exists() {
            return Err(PipelineError::NotAWorkspace(root.to_path_buf()));
        }
        let text = fs::read_to_string(&state_path).map_err(at(Stage::Workspace))?;
        let state = serde_json::from_str(&text).map_err(at(Stage::Workspace))?;
        let config = Config::load(&root.join(CONFIG_FILE)).map_err(at(Stage::Workspace))?;
        Ok(Self {
            root: root.to_path_buf(),
            config,
            state,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.root.join(artifact)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// In-memory overrides such as `--mode`; never written back.
    pub fn config_mut(&mut self) -> &mut Config {
        &mut self.config
    }

    pub fn state(&self) -> &WorkspaceState {
        &self.state
    }

    fn set_state(&mut self, state: State) -> Result<(), PipelineError> {
        self.state.state = state;
        let text = serde_json::to_string_pretty(&self.state).expect("state serializes");
        fs::write(&self.path(STATE_FILE), &format!("{text}\n")).map_err(at(Stage::Workspace))
    }

    fn require(&self, command: &'static str, required: State) -> Result<(), PipelineError> {
        if self.state.state < required {
            return Err(PipelineError::WrongState {
                command,
                required,
                actual: self.state.state,
            });
        }
        Ok(())
    }

    /// Ingests, chunks and extracts the corpus, then writes the triplet CSV
    /// and the graph awaiting review.
    pub fn build(&mut self, corpus_dir: &Path) -> Result<BuildSummary, PipelineError> {
        let files = collect_corpus_files(corpus_dir).map_err(at(Stage::Ingest))?;
        let docs = ingest(&files).map_err(at(Stage::Ingest))?;
        let chunks: Vec<_> = docs
            .iter()
            .flat_map(|d| chunk(d, self.config.max_chunk_chars))
            .collect();
        let manifest: Vec<ManifestEntry> = docs
            .iter()
            .map(|d| ManifestEntry {
                doc_id: d.doc_id.clone(),
                word_count: d.word_count,
                chunks: chunks.iter().filter(|c| c.doc_id == d.doc_id).count(),
                sha256: hex::encode(Sha256::digest(d.text.as_bytes())),
            })
            .collect();
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&self.path(CORPUS_MANIFEST), &format!("{text}\n")).map_err(at(Stage::Ingest))?;
        self.set_state(State::Ingested)?;

        let gateway = self.config.extraction_gateway().map_err(at(Stage::Extract))?;
        let prompts = self.config.prompts().map_err(at(Stage::Extract))?;
        let per_chunk = chunks
            .par_iter()
            .map(|c| extract_triplets(&c.text, &c.source_id(), Origin::KnowledgeBase, &gateway, &prompts))
            .collect::<Result<Vec<_>, _>>()
            .map_err(at(Stage::Extract))?;
        let mut triplets = TripletSet::new();
        for set in per_chunk {
            triplets.extend(set);
        }
        let triplets = triplets.dedup();
        write_csv(&triplets, &self.path(TRIPLETS_CSV)).map_err(at(Stage::Extract))?;
        self.state.extraction_model = Some(gateway.model_name().to_string());
        self.set_state(State::Extracted)?;

        let graph = build_graph(&triplets);
        fs::write(&self.path(PRE_GML), &to_gml(&graph)).map_err(at(Stage::Graph))?;
        self.set_state(State::Graphed)?;
        Ok(BuildSummary {
            documents: docs.len(),
            chunks: chunks.len(),
            triplets: triplets.len(),
            nodes: graph.node_count(),
            edges: graph.edge_count(),
        })
    }

    pub fn pre_review_graph(&self) -> Result<KnowledgeGraph, PipelineError> {
        self.require("review", State::Graphed)?;
        read_gml(&self.path(PRE_GML)).map_err(at(Stage::Review))
    }

    /// Copies the extracted graph to `dest` for editing in an external tool.
    pub fn review_export(&self, dest: &Path, force: bool) -> Result<(), PipelineError> {
        self.require("review export", State::Graphed)?;
        if dest.exists() && !force {
            return Err(PipelineError::WouldOverwrite(dest.to_path_buf()));
        }
        fs::copy(self.path(PRE_GML), dest).map_err(at(Stage::Review))?;
        Ok(())
    }

    fn check_review_allowed(&self, force: bool) -> Result<(), PipelineError> {
        self.require("review", State::Graphed)?;
        if self.state.state >= State::Validated && !force {
            return Err(PipelineError::WouldOverwrite(self.path(VALIDATED_GML)));
        }
        Ok(())
    }

    /// Validates the edited GML at `file` against the extracted graph.
    pub fn review_import(&mut self, file: &Path, force: bool) -> Result<GraphDelta, PipelineError> {
        self.check_review_allowed(force)?;
        let original = self.pre_review_graph()?;
        let edited = read_gml(file).map_err(at(Stage::Review))?;
        let delta = diff(&original, &edited);
        self.commit_review(&edited, &delta)?;
        Ok(delta)
    }

    /// A session for the review server, seeded with the extracted graph.
    pub fn review_session(&self, force: bool) -> Result<ReviewSession, PipelineError> {
        self.check_review_allowed(force)?;
        Ok(ReviewSession::new(self.pre_review_graph()?))
    }

    pub fn approve_review(&mut self, session: &ReviewSession) -> Result<GraphDelta, PipelineError> {
        self.commit_review(session.current(), session.delta())?;
        Ok(session.delta().clone())
    }

    fn commit_review(&mut self, graph: &KnowledgeGraph, delta: &GraphDelta) -> Result<(), PipelineError> {
        fs::write(&self.path(VALIDATED_GML), &to_gml(graph)).map_err(at(Stage::Review))?;
        let log = serde_json::json!({ "summary": delta.summary(), "delta": delta });
        let text = serde_json::to_string_pretty(&log).expect("delta serializes");
        fs::write(&self.path(DELTA_LOG), &format!("{text}\n")).map_err(at(Stage::Review))?;
        match fs::remove_file(self.path(INDEX_FILE)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(at(Stage::Review)(e)),
            _ => {}
        }
        self.state.embedding_provider = None;
        self.set_state(State::Validated)
    }

    /// Embeds one sentence per validated edge into the index and records
    /// the sentence count as `b`.
    pub fn finalize(&mut self, force: bool) -> Result<FinalizeSummary, PipelineError> {
        self.require("finalize", State::Validated)?;
        if self.state.state == State::Finalized && !force {
            return Err(PipelineError::WouldOverwrite(self.path(INDEX_FILE)));
        }
        let graph = read_gml(&self.path(VALIDATED_GML)).map_err(at(Stage::Finalize))?;
        let triplets = graph_to_triplets(&graph);
        if triplets.is_empty() {
            return Err(PipelineError::EmptyKnowledgeBase);
        }
        let sentences: Vec<SentenceText> = triplets.iter().map(triplet_to_sentence).collect();
        let provider = self.config.embedding_provider().map_err(at(Stage::Finalize))?;
        let embedded = embed_batch(&sentences, provider.as_ref()).map_err(at(Stage::Finalize))?;
        let mut index = VectorIndex::new(provider.provider_id(), provider.dimension());
        index
            .upsert(embedded.into_iter().enumerate().map(|(i, e)| IndexEntry {
                entry_id: entry_id(i),
                vector: e.vector,
                sentence_text: e.sentence.text,
            }))
            .map_err(at(Stage::Finalize))?;
        let b = index.len();
        let thresholds = self.config.thresholds(b).map_err(at(Stage::Finalize))?;
        index
            .persist(&self.path(INDEX_FILE))
            .map_err(at(Stage::Finalize))?;

        let config_path = self.path(CONFIG_FILE);
        let mut stored = Config::load(&config_path).map_err(at(Stage::Finalize))?;
        stored.b = Some(b);
        stored.save(&config_path).map_err(at(Stage::Finalize))?;
        self.config.b = Some(b);
        self.state.embedding_provider = Some(index.provider_id().to_string());
        self.set_state(State::Finalized)?;
        Ok(FinalizeSummary {
            sentences: b,
            provider_id: index.provider_id().to_string(),
            thresholds,
        })
    }

    /// Loads what scoring needs, refusing a model or provider that differs
    /// from the ones the knowledge base was built with.
    pub fn scoring_context(&self, stage: Stage) -> Result<ScoringContext, PipelineError> {
        self.require(if stage == Stage::Ask { "ask" } else { "score" }, State::Finalized)?;
        let built = self.state.extraction_model.clone().unwrap_or_default();
        if built != self.config.llm_model {
            return Err(PipelineError::ModelMismatch {
                built,
                configured: self.config.llm_model.clone(),
            });
        }
        let provider = self.config.embedding_provider().map_err(at(stage))?;
        let index = VectorIndex::load_for_provider(&self.path(INDEX_FILE), &provider.provider_id())
            .map_err(at(stage))?;
        let thresholds = self.config.thresholds(index.len()).map_err(at(stage))?;
        Ok(ScoringContext {
            index,
            thresholds,
            extractor: self.config.extraction_gateway().map_err(at(stage))?,
            prompts: self.config.prompts().map_err(at(stage))?,
            provider,
        })
    }

    /// Scores `answer` without asking any model.
    pub fn score(&self, answer: &str) -> Result<AnswerReport, PipelineError> {
        let ctx = self.scoring_context(Stage::Score)?;
        ctx.validator()
            .score_answer("", answer)
            .map_err(at(Stage::Score))
    }

    /// Sends `question` to the answer model and scores its reply.
    pub fn ask(&self, question: &str) -> Result<AnswerReport, PipelineError> {
        let ctx = self.scoring_context(Stage::Ask)?;
        let gateway = self.config.answer_gateway().map_err(at(Stage::Ask))?;
        let answer = gateway
            .chat_complete(&ctx.prompts.answer_assistant, question)
            .map_err(at(Stage::Ask))?;
        ctx.validator()
            .score_answer(question, &answer)
            .map_err(at(Stage::Ask))
    }
}

pub struct ScoringContext {
    pub index: VectorIndex,
    pub thresholds: ThresholdConfig,
    pub extractor: LlmGateway,
    pub prompts: Prompts,
    pub provider: Box<dyn EmbeddingProvider>,
}

impl ScoringContext {
    pub fn validator(&self) -> Validator<'_> {
        Validator {
            index: &self.index,
            thresholds: self.thresholds,
            extractor: &self.extractor,
            prompts: &self.prompts,
            provider: self.provider.as_ref(),
        }
    }
}

/// Index entry id for the `i`th knowledge-base sentence.
pub fn entry_id(i: usize) -> String {
    format!("kb-{i:05}")
}

fn read_gml(path: &Path) -> Result<KnowledgeGraph, Box<dyn StdError + Send + Sync>> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(from_gml(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}
