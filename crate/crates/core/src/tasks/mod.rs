//! Synthetic tasks: star-graph planning, zebra puzzles and toy stories.

pub mod records;
pub mod star;
pub mod stories;
pub mod zebra;

use serde::{Deserialize, Serialize};

pub use records::{read_records, write_records, RecordManifest};
pub use star::{StarInstance, StarLayout, StarSpec, Verdict};
pub use stories::StoriesSpec;
pub use zebra::{Clue, Relation, ZebraInstance, ZebraSpec, ZebraVerdict};

use crate::corpus::{CleanSequence, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskSpec {
    Star(StarSpec),
    Zebra(ZebraSpec),
    Stories(StoriesSpec),
}

impl TaskSpec {
    pub const NAMES: [&'static str; 7] =
        ["star-easy", "star-medium", "star-hard", "star-desk", "star-desk-fixed", "zebra", "stories"];

    pub fn by_name(name: &str) -> Result<Self> {
        if let Some(s) = StarSpec::by_name(name) {
            return Ok(TaskSpec::Star(s));
        }
        match name {
            "zebra" => Ok(TaskSpec::Zebra(ZebraSpec::desk())),
            "stories" => Ok(TaskSpec::Stories(StoriesSpec::desk())),
            _ => Err(Error::Config(format!("unknown task `{name}`; expected one of {}", Self::NAMES.join(", ")))),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            TaskSpec::Star(s) => s.seed,
            TaskSpec::Zebra(s) => s.seed,
            TaskSpec::Stories(s) => s.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            TaskSpec::Star(s) => s.seed = seed,
            TaskSpec::Zebra(s) => s.seed = seed,
            TaskSpec::Stories(s) => s.seed = seed,
        }
    }

    pub fn set_sizes(&mut self, n_train: Option<usize>, n_test: Option<usize>) {
        let (tr, te) = match self {
            TaskSpec::Star(s) => (&mut s.n_train, &mut s.n_test),
            TaskSpec::Zebra(s) => (&mut s.n_train, &mut s.n_test),
            TaskSpec::Stories(s) => (&mut s.n_train, &mut s.n_test),
        };
        if let Some(n) = n_train {
            *tr = n;
        }
        if let Some(n) = n_test {
            *te = n;
        }
    }

    pub fn vocab(&self) -> Vocab {
        match self {
            TaskSpec::Star(s) => s.vocab(),
            TaskSpec::Zebra(_) => zebra::vocab(),
            TaskSpec::Stories(_) => stories::vocab(),
        }
    }

    /// Serialized record lines for one split.
    pub fn lines(&self, test_split: bool) -> Result<Vec<String>> {
        Ok(match self {
            TaskSpec::Star(s) => star::gen_star(s, test_split)?.iter().map(star::serialize_star).collect(),
            TaskSpec::Zebra(s) => zebra::gen_zebra(s, test_split)?.iter().map(zebra::serialize_zebra).collect(),
            TaskSpec::Stories(s) => stories::gen_stories(s, test_split).iter().map(|w| w.join(" ")).collect(),
        })
    }

    pub fn is_conditioned(&self) -> bool {
        !matches!(self, TaskSpec::Stories(_))
    }
}

/// Encodes record lines: conditioned tasks split at `<s>`, stories are plain text.
pub fn encode_lines(lines: &[String], vocab: &Vocab, conditioned: bool) -> Result<Vec<CleanSequence>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let ids = vocab.encode_line(l, i + 1)?;
            if conditioned {
                let bos = ids.iter().position(|&t| t == vocab.bos).ok_or(Error::Parse {
                    line: i + 1,
                    offset: ids.len(),
                    message: "missing <s>".into(),
                })?;
                Ok(CleanSequence::conditioned(&ids[..bos], &ids[bos + 1..], vocab))
            } else {
                Ok(CleanSequence::unconditioned(&ids, vocab))
            }
        })
        .collect()
}
