//! Thresholds, per-sentence proximity, verdicts and the printed report.
//!
//! A query sentence's *proximity* is the sum of the scores of every
//! knowledge-base sentence it matches at or above `t1`. The sentence is
//! compatible when its proximity reaches `t2 = t1 * a * b`, where `b` is the
//! number of knowledge-base sentences and `a` the fraction of them that
//! should match. An answer is judged on the sum of its sentence proximities
//! against `t2` per answer sentence.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    embed_batch, triplet_to_sentence, EmbeddedSentence, EmbeddingError, EmbeddingProvider,
    SentenceText,
};
use crate::llm_gateway::LlmGateway;
use crate::prompts::Prompts;
use crate::triplet::{extract_triplets, Origin, TripletError};
use crate::vector_index::{IndexError, Match, VectorIndex};

pub const DEFAULT_T1: f64 = 0.6;
pub const DEFAULT_A: f64 = 0.12;
pub const ANSWER_SOURCE_ID: &str = "answer";

#[derive(Debug, Error)]
pub enum ThresholdError {
    #[error("t1 must lie strictly between 0 and 1, got {0}")]
    T1(f64),
    #[error("a must lie in (0, 1], got {0}")]
    A(f64),
    #[error("b must be at least 1, got {0}")]
    B(usize),
}

pub fn compute_t2(t1: f64, a: f64, b: usize) -> Result<f64, ThresholdError> {
    if !(t1 > 0.0 && t1 < 1.0) {
        return Err(ThresholdError::T1(t1));
    }
    if !(a > 0.0 && a <= 1.0) {
        return Err(ThresholdError::A(a));
    }
    if b < 1 {
        return Err(ThresholdError::B(b));
    }
    Ok(t1 * a * b as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub t1: f64,
    pub a: f64,
    pub b: usize,
    pub t2: f64,
}

impl ThresholdConfig {
    pub fn new(t1: f64, a: f64, b: usize) -> Result<Self, ThresholdError> {
        Ok(Self {
            t1,
            a,
            b,
            t2: compute_t2(t1, a, b)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Compatible,
    Minimal,
    #[serde(rename = "none")]
    NotCompatible,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Compatible => "compatible",
            Verdict::Minimal => "minimal",
            Verdict::NotCompatible => "none",
        }
    }

    /// `none` without matches, otherwise by comparing against the threshold.
    pub fn classify(has_matches: bool, proximity: f64, threshold: f64) -> Self {
        if !has_matches {
            Verdict::NotCompatible
        } else if proximity >= threshold {
            Verdict::Compatible
        } else {
            Verdict::Minimal
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub query_sentence: SentenceText,
    pub matches: Vec<Match>,
    pub proximity: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerReport {
    pub question: String,
    pub answer_text: String,
    pub thresholds: ThresholdConfig,
    pub sentence_scores: Vec<SentenceScore>,
    pub answer_proximity: f64,
    pub answer_threshold: f64,
    pub answer_verdict: Verdict,
    pub no_extractable_statements: bool,
}

impl AnswerReport {
    /// Aggregates sentence scores in order.
    pub fn aggregate(
        question: &str,
        answer_text: &str,
        thresholds: ThresholdConfig,
        sentence_scores: Vec<SentenceScore>,
    ) -> Self {
        let answer_proximity: f64 = sentence_scores.iter().map(|s| s.proximity).sum();
        let answer_threshold = thresholds.t2 * sentence_scores.len().max(1) as f64;
        let any_match = sentence_scores
            .iter()
            .any(|s| s.verdict != Verdict::NotCompatible);
        Self {
            question: question.to_string(),
            answer_text: answer_text.to_string(),
            thresholds,
            answer_verdict: Verdict::classify(any_match, answer_proximity, answer_threshold),
            no_extractable_statements: sentence_scores.is_empty(),
            sentence_scores,
            answer_proximity,
            answer_threshold,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("query embedded by {query} cannot be compared with an index built by {index}")]
    ProviderMismatch { query: String, index: String },
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub fn score_sentence(
    q: &EmbeddedSentence,
    index: &VectorIndex,
    cfg: &ThresholdConfig,
) -> Result<SentenceScore, ScoreError> {
    if q.provider_id != index.provider_id() {
        return Err(ScoreError::ProviderMismatch {
            query: q.provider_id.clone(),
            index: index.provider_id().to_string(),
        });
    }
    let matches = index.query(&q.vector, cfg.t1)?;
    let proximity: f64 = matches.iter().map(|m| m.score).sum();
    Ok(SentenceScore {
        query_sentence: q.sentence.clone(),
        verdict: Verdict::classify(!matches.is_empty(), proximity, cfg.t2),
        matches,
        proximity,
    })
}

/// Errors from scoring an answer, tagged by the stage that failed.
#[derive(Debug, Error)]
pub enum ValidatorError {
    #[error("answer extraction: {0}")]
    Extraction(TripletError),
    #[error("answer embedding: {0}")]
    Embedding(EmbeddingError),
    #[error("scoring: {0}")]
    Scoring(ScoreError),
}

/// Everything needed to score answers against a finalized knowledge base.
pub struct Validator<'a> {
    pub index: &'a VectorIndex,
    pub thresholds: ThresholdConfig,
    pub extractor: &'a LlmGateway,
    pub prompts: &'a Prompts,
    pub provider: &'a dyn EmbeddingProvider,
}

impl Validator<'_> {
    /// Scores the trimmed `answer`; surrounding whitespace never reaches the
    /// extraction request.
    pub fn score_answer(&self, question: &str, answer: &str) -> Result<AnswerReport, ValidatorError> {
        let answer = answer.trim();
        if answer.is_empty() {
            return Ok(AnswerReport::aggregate(question, answer, self.thresholds, Vec::new()));
        }
        let triplets = extract_triplets(
            answer,
            ANSWER_SOURCE_ID,
            Origin::Answer,
            self.extractor,
            self.prompts,
        )
        .map_err(ValidatorError::Extraction)?;
        if triplets.is_empty() {
            return Ok(AnswerReport::aggregate(question, answer, self.thresholds, Vec::new()));
        }
        let sentences: Vec<SentenceText> = triplets.iter().map(triplet_to_sentence).collect();
        let embedded = embed_batch(&sentences, self.provider).map_err(ValidatorError::Embedding)?;
        let scores = embedded
            .par_iter()
            .map(|q| score_sentence(q, self.index, &self.thresholds))
            .collect::<Result<Vec<_>, _>>()
            .map_err(ValidatorError::Scoring)?;
        Ok(AnswerReport::aggregate(question, answer, self.thresholds, scores))
    }
}

/// Two-decimal rounding printed in shortest form, so `0.60` shows as `0.6`
/// and `1.00` as `1.0`.
pub fn format_score(x: f64) -> String {
    let r = (x * 100.0).round() / 100.0;
    let r = if r == 0.0 { 0.0 } else { r };
    if r.fract() == 0.0 {
        format!("{r:.1}")
    } else {
        format!("{r}")
    }
}

pub fn render_sentence(score: &SentenceScore) -> String {
    let mut out = String::new();
    writeln!(out, "---Query: {}", score.query_sentence.text).unwrap();
    if score.verdict == Verdict::NotCompatible {
        out.push_str("-- No match: the phrase is not compatible with the knowledge base\n");
        return out;
    }
    for m in &score.matches {
        writeln!(out, "  Matched sentence: {}", m.sentence_text).unwrap();
        writeln!(out, "    - score: {}", format_score(m.score)).unwrap();
    }
    writeln!(
        out,
        "---> The semantic proximity of this phrase to the knowledge base is: {}",
        format_score(score.proximity)
    )
    .unwrap();
    out.push_str(verdict_lines("phrase", score.verdict));
    out
}

fn verdict_lines(subject: &str, verdict: Verdict) -> &'static str {
    match (subject, verdict) {
        ("phrase", Verdict::Compatible) => {
            "      That means the phrase is compatible with the knowledge base\n"
        }
        ("phrase", _) => {
            "      That means the phrase is not compatible with the knowledge base\n      but there is some minimal compatibility\n"
        }
        (_, Verdict::Compatible) => {
            "      That means the answer is compatible with the knowledge base\n"
        }
        (_, Verdict::Minimal) => {
            "      That means the answer is not compatible with the knowledge base\n      but there is some minimal compatibility\n"
        }
        (_, Verdict::NotCompatible) => {
            "      That means the answer is not compatible with the knowledge base\n"
        }
    }
}

/// Sentence blocks in answer order. A question header is printed when a
/// question is present, and an answer summary when the answer has no
/// statements or more than one.
pub fn render_report(report: &AnswerReport) -> String {
    let mut out = String::new();
    if !report.question.trim().is_empty() {
        writeln!(out, "Question: {}", report.question.trim()).unwrap();
        writeln!(out, "Answer: {}", report.answer_text.trim()).unwrap();
    }
    if report.no_extractable_statements {
        out.push_str("-- No extractable statements: the answer is not compatible with the knowledge base\n");
        return out;
    }
    for s in &report.sentence_scores {
        out.push_str(&render_sentence(s));
    }
    if report.sentence_scores.len() > 1 {
        writeln!(
            out,
            "===> The semantic proximity of the answer to the knowledge base is: {} (threshold {})",
            format_score(report.answer_proximity),
            format_score(report.answer_threshold)
        )
        .unwrap();
        out.push_str(verdict_lines("answer", report.answer_verdict));
    }
    out
}
