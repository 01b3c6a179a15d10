//! Triplet sentences and their unit-norm embeddings.
//!
//! Two providers are available. [`HashEmbedder`] is a deterministic
//! bag-of-tokens hash used for offline plumbing; it carries no semantics.
//! [`RemoteEmbedder`] speaks the common `POST {base_url}/embeddings`
//! convention and, like the chat gateway, records and replays its responses
//! as JSON fixtures.

use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::llm_gateway::{
    content_hash, read_api_key, FixtureStore, HttpPoster, InFlight, LlmError, Mode, RetryPolicy,
};
use crate::triplet::Triplet;

pub const HASH_DIMENSION: usize = 256;
pub const HASH_PROVIDER_ID: &str = "hash:fnv1a64:256";
pub const DEFAULT_EMBED_API_KEY_ENV: &str = "TRUSTER_EMBED_API_KEY";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed an empty sentence")]
    EmptySentence,
    #[error("nothing to embed")]
    EmptyBatch,
    #[error("provider {provider_id} returned a vector of length {actual}, expected {expected}")]
    DimensionMismatch {
        provider_id: String,
        expected: usize,
        actual: usize,
    },
    #[error("provider {provider_id} returned a zero vector for `{sentence}`")]
    ZeroVector {
        provider_id: String,
        sentence: String,
    },
    #[error("provider returned {actual} vectors for {expected} inputs")]
    CountMismatch { expected: usize, actual: usize },
    #[error("no recorded embedding for `{sentence}` under {provider_id} (key {key})")]
    FixtureMissing {
        provider_id: String,
        sentence: String,
        key: String,
    },
    #[error(transparent)]
    Transport(#[from] LlmError),
}

/// `subject predicate object`, space-joined, with the triplet it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceText {
    pub text: String,
    pub source: Triplet,
}

pub fn triplet_to_sentence(t: &Triplet) -> SentenceText {
    SentenceText {
        text: format!("{} {} {}", t.subject, t.predicate, t.object),
        source: t.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedSentence {
    pub sentence: SentenceText,
    pub vector: Vec<f64>,
    pub provider_id: String,
}

pub trait EmbeddingProvider: Send + Sync {
    /// Names provider, model and dimension; vectors from different ids must
    /// never be compared.
    fn provider_id(&self) -> String;

    fn dimension(&self) -> usize;

    /// Raw vectors, one per input and in input order. Need not be
    /// normalized.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError>;
}

/// Scales `v` to unit L2 norm, or `None` for a zero or non-finite vector.
pub fn l2_normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

/// Embeds sentences in order and normalizes every vector, whatever the
/// provider returned.
pub fn embed_batch(
    sentences: &[SentenceText],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<EmbeddedSentence>, EmbeddingError> {
    if sentences.is_empty() {
        return Err(EmbeddingError::EmptyBatch);
    }
    let provider_id = provider.provider_id();
    let dimension = provider.dimension();
    let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
    let raw = provider.embed_texts(&texts)?;
    if raw.len() != sentences.len() {
        return Err(EmbeddingError::CountMismatch {
            expected: sentences.len(),
            actual: raw.len(),
        });
    }
    sentences
        .iter()
        .zip(raw)
        .map(|(sentence, v)| {
            if v.len() != dimension {
                return Err(EmbeddingError::DimensionMismatch {
                    provider_id: provider_id.clone(),
                    expected: dimension,
                    actual: v.len(),
                });
            }
            let vector = l2_normalize(&v).ok_or_else(|| EmbeddingError::ZeroVector {
                provider_id: provider_id.clone(),
                sentence: sentence.text.clone(),
            })?;
            Ok(EmbeddedSentence {
                sentence: sentence.clone(),
                vector,
                provider_id: provider_id.clone(),
            })
        })
        .collect()
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Counts whitespace tokens into `FNV-1a(token) mod 256` buckets and
/// normalizes the counts.
pub fn hash_embed(sentence: &str) -> Result<Vec<f64>, EmbeddingError> {
    let mut v = vec![0.0; HASH_DIMENSION];
    let mut tokens = 0;
    for token in sentence.split_whitespace() {
        v[(fnv1a64(token.as_bytes()) % HASH_DIMENSION as u64) as usize] += 1.0;
        tokens += 1;
    }
    if tokens == 0 {
        return Err(EmbeddingError::EmptySentence);
    }
    l2_normalize(&v).ok_or(EmbeddingError::EmptySentence)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

impl EmbeddingProvider for HashEmbedder {
    fn provider_id(&self) -> String {
        HASH_PROVIDER_ID.to_string()
    }

    fn dimension(&self) -> usize {
        HASH_DIMENSION
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        texts.iter().map(|t| hash_embed(t)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub model: String,
    pub dimension: usize,
    pub api_key_env: String,
    pub mode: Mode,
    pub fixture_dir: PathBuf,
    pub timeout_seconds: u64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8765/v1".into(),
            model: "glove-6b-100d-mean-abtt3".into(),
            dimension: 100,
            api_key_env: DEFAULT_EMBED_API_KEY_ENV.into(),
            mode: Mode::Live,
            fixture_dir: PathBuf::from("fixtures/embeddings"),
            timeout_seconds: 60,
            batch_size: 64,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// One stored embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub provider_id: String,
    pub sentence: String,
    pub vector: Vec<f64>,
}

pub fn embedding_fixture_key(provider_id: &str, sentence: &str) -> String {
    content_hash(&[provider_id, sentence])
}

#[derive(Debug)]
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    store: FixtureStore,
    poster: Option<HttpPoster>,
    in_flight: InFlight,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EmbeddingError> {
        let poster = if config.mode.uses_network() {
            let key = read_api_key(&config.api_key_env)?;
            Some(HttpPoster::new(
                key,
                Duration::from_secs(config.timeout_seconds.max(1)),
                config.retry,
            )?)
        } else {
            None
        };
        Ok(Self {
            store: FixtureStore::new(config.fixture_dir.clone()),
            in_flight: InFlight::new(config.max_in_flight),
            poster,
            config,
        })
    }

    fn replay(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let provider_id = self.provider_id();
        texts
            .iter()
            .map(|text| {
                let key = embedding_fixture_key(&provider_id, text);
                let record: Option<EmbeddingRecord> = self.store.load(&key)?;
                match record {
                    Some(r) if r.provider_id == provider_id && r.sentence == *text => Ok(r.vector),
                    _ => Err(EmbeddingError::FixtureMissing {
                        provider_id: provider_id.clone(),
                        sentence: text.to_string(),
                        key,
                    }),
                }
            })
            .collect()
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let poster = self
            .poster
            .as_ref()
            .expect("network modes always construct a poster");
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let body = json!({ "model": self.config.model, "input": texts });
        let response = {
            let _permit = self.in_flight.acquire();
            poster.post_json(&url, &body)?
        };
        let data = response
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::BadResponse("missing `data` array".into()))?;
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for (position, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map(|i| i as usize)
                .unwrap_or(position);
            let vector: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| LlmError::BadResponse("missing `embedding`".into()))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| LlmError::BadResponse("non-numeric embedding".into()))
                })
                .collect::<Result<_, _>>()?;
            let slot = slots.get_mut(index).ok_or(EmbeddingError::CountMismatch {
                expected: texts.len(),
                actual: data.len(),
            })?;
            *slot = Some(vector);
        }
        slots
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or(EmbeddingError::CountMismatch {
                expected: texts.len(),
                actual: data.len(),
            })
    }

    fn record(&self, texts: &[&str], vectors: &[Vec<f64>]) -> Result<(), EmbeddingError> {
        let provider_id = self.provider_id();
        for (text, vector) in texts.iter().zip(vectors) {
            let record = EmbeddingRecord {
                provider_id: provider_id.clone(),
                sentence: text.to_string(),
                vector: vector.clone(),
            };
            self.store
                .save(&embedding_fixture_key(&provider_id, text), &record)?;
        }
        Ok(())
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn provider_id(&self) -> String {
        format!("remote:{}:{}", self.config.model, self.config.dimension)
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        if self.config.mode == Mode::Replay {
            return self.replay(texts);
        }
        let batches: Vec<&[&str]> = texts.chunks(self.config.batch_size.max(1)).collect();
        let run = |batch: &&[&str]| {
            let vectors = self.fetch(batch)?;
            if self.config.mode == Mode::Record {
                self.record(batch, &vectors)?;
            }
            Ok(vectors)
        };
        let results: Vec<Vec<Vec<f64>>> = if self.config.max_in_flight <= 1 {
            batches.iter().map(run).collect::<Result<_, EmbeddingError>>()?
        } else {
            batches.par_iter().map(run).collect::<Result<_, EmbeddingError>>()?
        };
        Ok(results.into_iter().flatten().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::mock;
    use crate::triplet::Origin;

    fn sentence(text: &str) -> SentenceText {
        SentenceText {
            text: text.into(),
            source: Triplet {
                subject: text.into(),
                predicate: "p".into(),
                object: "o".into(),
                origin: Origin::KnowledgeBase,
                source_id: "s".into(),
            },
        }
    }

    fn dot(u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn triplet_sentences() {
        let t = |s: &str, p: &str, o: &str| Triplet {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
            origin: Origin::KnowledgeBase,
            source_id: "x".into(),
        };
        assert_eq!(
            triplet_to_sentence(&t("supply chain", "includes", "sourcing")).text,
            "supply chain includes sourcing"
        );
        assert_eq!(triplet_to_sentence(&t("a", "b", "c")).text, "a b c");
        assert_eq!(
            triplet_to_sentence(&t("supply chain", "consists of", "suppliers")).text,
            "supply chain consists of suppliers"
        );
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn hash_embedding_properties() {
        let a = hash_embed("a a").unwrap();
        let b = hash_embed("a").unwrap();
        assert!((dot(&a, &b) - 1.0).abs() < 1e-12);
        let s = hash_embed("supply chain includes sourcing").unwrap();
        assert!((dot(&s, &s) - 1.0).abs() < 1e-12);
        assert!(matches!(hash_embed(" \t"), Err(EmbeddingError::EmptySentence)));
    }

    /// Independent re-derivation of the bucket recipe for two sentences.
    #[test]
    fn hash_embedding_matches_hand_computed_buckets() {
        let bucket = |tok: &str| {
            let mut h: u64 = 14695981039346656037;
            for b in tok.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(1099511628211);
            }
            (h % 256) as usize
        };
        let (ba, bb, bg, bd) = (bucket("alpha"), bucket("beta"), bucket("gamma"), bucket("delta"));
        let u = hash_embed("alpha beta").unwrap();
        let v = hash_embed("gamma delta").unwrap();
        let mut expected_u = vec![0.0; 256];
        expected_u[ba] += 1.0;
        expected_u[bb] += 1.0;
        let n = expected_u.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        for (got, want) in u.iter().zip(expected_u.iter().map(|x| x / n)) {
            assert_eq!(*got, want);
        }
        let shared = [ba, bb]
            .iter()
            .map(|i| [bg, bd].iter().filter(|j| *j == i).count())
            .sum::<usize>();
        let expected_cos = shared as f64 / 2.0;
        assert!((dot(&u, &v) - expected_cos).abs() < 1e-12);
    }

    struct Unnormalized;
    impl EmbeddingProvider for Unnormalized {
        fn provider_id(&self) -> String {
            "test:raw:3".into()
        }
        fn dimension(&self) -> usize {
            3
        }
        fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
            Ok(texts
                .iter()
                .map(|t| vec![t.len() as f64, 2.0, if t.is_empty() { 0.0 } else { 7.5 }])
                .collect())
        }
    }

    struct WrongDim;
    impl EmbeddingProvider for WrongDim {
        fn provider_id(&self) -> String {
            "test:wrong:4".into()
        }
        fn dimension(&self) -> usize {
            4
        }
        fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
            Ok(texts.iter().map(|_| vec![1.0; 3]).collect())
        }
    }

    #[test]
    fn batch_output_is_unit_norm_and_ordered() {
        let out = embed_batch(&[sentence("s1"), sentence("longer s2")], &Unnormalized).unwrap();
        assert_eq!(out[0].sentence.text, "s1");
        assert_eq!(out[1].sentence.text, "longer s2");
        for e in &out {
            assert!((dot(&e.vector, &e.vector).sqrt() - 1.0).abs() < 1e-6);
            assert_eq!(e.provider_id, "test:raw:3");
        }
    }

    #[test]
    fn batch_errors() {
        assert!(matches!(
            embed_batch(&[], &HashEmbedder),
            Err(EmbeddingError::EmptyBatch)
        ));
        assert!(matches!(
            embed_batch(&[sentence("x")], &WrongDim),
            Err(EmbeddingError::DimensionMismatch { expected: 4, actual: 3, .. })
        ));
    }

    #[test]
    fn hash_provider_is_deterministic() {
        let a = embed_batch(&[sentence("same text"), sentence("same text")], &HashEmbedder).unwrap();
        assert_eq!(a[0].vector, a[1].vector);
    }

    fn remote_config(mode: Mode, base_url: &str, dir: &std::path::Path, key_env: &str) -> RemoteEmbedderConfig {
        RemoteEmbedderConfig {
            base_url: base_url.into(),
            model: "test-model".into(),
            dimension: 2,
            api_key_env: key_env.into(),
            mode,
            fixture_dir: dir.to_path_buf(),
            batch_size: 2,
            max_in_flight: 1,
            retry: RetryPolicy {
                max_retries: 1,
                base_delay: Duration::from_millis(1),
            },
            ..RemoteEmbedderConfig::default()
        }
    }

    #[test]
    fn remote_record_then_replay() {
        std::env::set_var("TRUSTER_TEST_EMBED_KEY", "ek");
        // data deliberately out of order; `index` decides placement
        let server = mock::serve(vec![
            (
                200,
                r#"{"data":[{"index":1,"embedding":[0.0,2.0]},{"index":0,"embedding":[3.0,4.0]}]}"#
                    .into(),
            ),
            (200, r#"{"data":[{"index":0,"embedding":[1.0,1.0]}]}"#.into()),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let rec = RemoteEmbedder::new(remote_config(
            Mode::Record,
            &server.base_url,
            dir.path(),
            "TRUSTER_TEST_EMBED_KEY",
        ))
        .unwrap();
        assert_eq!(rec.provider_id(), "remote:test-model:2");
        let out = embed_batch(&[sentence("a"), sentence("b"), sentence("c")], &rec).unwrap();
        assert!((out[0].vector[0] - 0.6).abs() < 1e-12);
        assert_eq!(out[1].vector, vec![0.0, 1.0]);
        let reqs = server.requests.lock().unwrap().clone();
        assert_eq!(reqs.len(), 2);
        assert!(reqs.iter().all(|r| r.path == "/embeddings"));
        assert_eq!(reqs[0].authorization.as_deref(), Some("Bearer ek"));

        let replay = RemoteEmbedder::new(remote_config(
            Mode::Replay,
            "http://unused",
            dir.path(),
            "UNSET_VARIABLE_FOR_TEST",
        ))
        .unwrap();
        let again = embed_batch(&[sentence("a"), sentence("b"), sentence("c")], &replay).unwrap();
        assert_eq!(again, out);
        assert!(matches!(
            embed_batch(&[sentence("never seen")], &replay),
            Err(EmbeddingError::FixtureMissing { .. })
        ));
    }

    #[test]
    fn remote_dimension_mismatch_is_hard_error() {
        std::env::set_var("TRUSTER_TEST_EMBED_KEY2", "ek");
        let server = mock::serve(vec![(200, r#"{"data":[{"index":0,"embedding":[1.0,2.0,3.0]}]}"#.into())]);
        let dir = tempfile::tempdir().unwrap();
        let live = RemoteEmbedder::new(remote_config(
            Mode::Live,
            &server.base_url,
            dir.path(),
            "TRUSTER_TEST_EMBED_KEY2",
        ))
        .unwrap();
        assert!(matches!(
            embed_batch(&[sentence("a")], &live),
            Err(EmbeddingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn shipped_fixtures_match_declared_provider() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/embeddings");
        let replay = RemoteEmbedder::new(RemoteEmbedderConfig {
            mode: Mode::Replay,
            fixture_dir: dir,
            ..RemoteEmbedderConfig::default()
        })
        .unwrap();
        let out = embed_batch(&[sentence("supply chain includes sourcing")], &replay).unwrap();
        assert_eq!(out[0].vector.len(), 100);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn hash_cosine_is_one_for_repeated_token_multisets(
                tokens in prop::collection::vec("[a-z]{1,6}", 1..6),
                k in 2usize..4,
            ) {
                let once = tokens.join(" ");
                let repeated = tokens.iter().flat_map(|t| std::iter::repeat(t.as_str()).take(k)).collect::<Vec<_>>().join(" ");
                let c = dot(&hash_embed(&once).unwrap(), &hash_embed(&repeated).unwrap());
                prop_assert!((c - 1.0).abs() < 1e-12);
            }

            #[test]
            fn normalized_vectors_have_unit_norm(v in prop::collection::vec(-1e3f64..1e3, 1..64)) {
                if let Some(n) = l2_normalize(&v) {
                    prop_assert!((dot(&n, &n).sqrt() - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
