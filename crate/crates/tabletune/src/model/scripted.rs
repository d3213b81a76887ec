//! Deterministic scripted model backend.
//!
//! A script file is a JSON map from prompt-fingerprint digests to answer
//! strings:
//!
//! ```json
//! {
//!   "key_mode": "permutation_invariant",
//!   "entries": { "<digest>": "<answer>" },
//!   "exact_overrides": { "<exact digest>": "<answer>" },
//!   "default": "<answer>",
//!   "generation_scripts": { "1": "better.json" }
//! }
//! ```
//!
//! Lookup order: `exact_overrides[exact]`, then `entries` keyed by the
//! digest `key_mode` selects, then `default`. A miss is a hard error — a
//! scripted model with no answer means the test is wrong. Answers may embed
//! `{{exact}}` or `{{invariant}}`, replaced with the prompt's digests,
//! which is how a permutation-sensitive model is scripted without
//! enumerating permutations. `generation_scripts` maps fine-tune
//! generation indices to replacement script paths (relative to this file),
//! letting tests simulate improvement across iterations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PromptFingerprint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    Exact,
    PermutationInvariant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptFile {
    pub key_mode: KeyMode,
    #[serde(default)]
    pub entries: BTreeMap<String, String>,
    /// Checked before `entries`, always against the exact digest.
    #[serde(default)]
    pub exact_overrides: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub generation_scripts: BTreeMap<u32, String>,
}

impl ScriptFile {
    pub fn new(key_mode: KeyMode) -> ScriptFile {
        ScriptFile {
            key_mode,
            entries: BTreeMap::new(),
            exact_overrides: BTreeMap::new(),
            default: None,
            generation_scripts: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

/// A script file loaded and bound to its location (for resolving relative
/// generation-script paths).
#[derive(Debug)]
pub struct Script {
    file: ScriptFile,
    dir: PathBuf,
}

impl Script {
    pub fn load(path: &Path) -> Result<Script> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read script {}: {e}", path.display()))
        })?;
        let file: ScriptFile = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("bad script file {}: {e}", path.display()))
        })?;
        Ok(Script {
            file,
            dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        })
    }

    pub fn answer(&self, fp: &PromptFingerprint) -> Result<String> {
        if let Some(a) = self.file.exact_overrides.get(&fp.exact) {
            return Ok(substitute(a, fp));
        }
        let key = match self.file.key_mode {
            KeyMode::Exact => &fp.exact,
            KeyMode::PermutationInvariant => &fp.invariant,
        };
        if let Some(a) = self.file.entries.get(key) {
            return Ok(substitute(a, fp));
        }
        if let Some(a) = &self.file.default {
            return Ok(substitute(a, fp));
        }
        Err(Error::ScriptMiss(format!(
            "no answer for kind={} exact={} invariant={}",
            fp.kind, fp.exact, fp.invariant
        )))
    }

    pub fn generation_script(&self, generation: u32) -> Option<PathBuf> {
        self.file.generation_scripts.get(&generation).map(|p| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                self.dir.join(p)
            }
        })
    }
}

fn substitute(answer: &str, fp: &PromptFingerprint) -> String {
    answer
        .replace("{{exact}}", &fp.exact)
        .replace("{{invariant}}", &fp.invariant)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(exact: &str, invariant: &str) -> PromptFingerprint {
        PromptFingerprint {
            kind: "k".to_string(),
            exact: exact.to_string(),
            invariant: invariant.to_string(),
        }
    }

    #[test]
    fn lookup_precedence() {
        let mut file = ScriptFile::new(KeyMode::PermutationInvariant);
        file.entries.insert("inv".to_string(), "by-entries".to_string());
        file.exact_overrides
            .insert("special".to_string(), "by-override".to_string());
        file.default = Some("by-default".to_string());
        let script = Script {
            file,
            dir: PathBuf::from("."),
        };
        assert_eq!(script.answer(&fp("special", "inv")).unwrap(), "by-override");
        assert_eq!(script.answer(&fp("other", "inv")).unwrap(), "by-entries");
        assert_eq!(script.answer(&fp("other", "none")).unwrap(), "by-default");
    }

    #[test]
    fn placeholder_substitution() {
        let mut file = ScriptFile::new(KeyMode::Exact);
        file.default = Some("got {{exact}} / {{invariant}}".to_string());
        let script = Script {
            file,
            dir: PathBuf::from("."),
        };
        assert_eq!(script.answer(&fp("E", "I")).unwrap(), "got E / I");
    }

    #[test]
    fn relative_generation_paths_resolve_against_script_dir() {
        let mut file = ScriptFile::new(KeyMode::Exact);
        file.generation_scripts.insert(1, "next.json".to_string());
        let script = Script {
            file,
            dir: PathBuf::from("/scripts"),
        };
        assert_eq!(
            script.generation_script(1).unwrap(),
            PathBuf::from("/scripts/next.json")
        );
        assert!(script.generation_script(2).is_none());
    }
}
