//! Prompt texts sent through the gateway.
//!
//! The defaults are compiled in from the repository's `prompts/` directory.
//! Editing a prompt changes every fixture key that depends on it.

use std::fs;
use std::path::Path;

pub const EXTRACT_ASSISTANT_FILE: &str = "extract_assistant.txt";
pub const EXTRACT_USER_PREAMBLE_FILE: &str = "extract_user_preamble.txt";
pub const ANSWER_ASSISTANT_FILE: &str = "answer_assistant.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    /// Instructions for triplet extraction.
    pub extract_assistant: String,
    /// Prepended to the text whose triplets are requested.
    pub extract_user_preamble: String,
    /// Instructions given to the model under evaluation by `ask`.
    pub answer_assistant: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            extract_assistant: include_str!("../../../prompts/extract_assistant.txt").to_string(),
            extract_user_preamble: include_str!("../../../prompts/extract_user_preamble.txt")
                .to_string(),
            answer_assistant: include_str!("../../../prompts/answer_assistant.txt").to_string(),
        }
    }
}

impl Prompts {
    /// Loads prompts from `dir`, falling back to the built-in text for any
    /// file that is absent.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let defaults = Self::default();
        let read = |name: &str, fallback: String| -> std::io::Result<String> {
            match fs::read_to_string(dir.join(name)) {
                Ok(s) => Ok(s),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fallback),
                Err(e) => Err(e),
            }
        };
        Ok(Self {
            extract_assistant: read(EXTRACT_ASSISTANT_FILE, defaults.extract_assistant)?,
            extract_user_preamble: read(EXTRACT_USER_PREAMBLE_FILE, defaults.extract_user_preamble)?,
            answer_assistant: read(ANSWER_ASSISTANT_FILE, defaults.answer_assistant)?,
        })
    }

    /// User message for an extraction request over `text`.
    pub fn extraction_user_content(&self, text: &str) -> String {
        format!("{}\n\n{}", self.extract_user_preamble.trim_end(), text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_ask_for_bracketed_json_triplets() {
        let p = Prompts::default();
        assert!(p.extract_assistant.contains("[ENTITY 1, RELATIONSHIP, ENTITY 2]"));
        assert!(p.extract_assistant.contains("JSON"));
    }

    #[test]
    fn missing_files_fall_back_to_defaults() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(ANSWER_ASSISTANT_FILE), "custom").unwrap();
        let p = Prompts::from_dir(dir.path()).unwrap();
        assert_eq!(p.answer_assistant, "custom");
        assert_eq!(p.extract_assistant, Prompts::default().extract_assistant);
    }

    #[test]
    fn user_content_layout() {
        let p = Prompts {
            extract_user_preamble: "Preamble.\n".into(),
            ..Prompts::default()
        };
        assert_eq!(p.extraction_user_content("Body"), "Preamble.\n\nBody");
    }
}
