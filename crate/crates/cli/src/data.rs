//! Generated data directories: record files, vocabulary and task spec.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ilm::corpus::{CleanSequence, Vocab};
use ilm::tasks::records::manifest_path;
use ilm::tasks::star::{self, score_tokens, Verdict};
use ilm::tasks::zebra;
use ilm::tasks::{encode_lines, read_records, RecordManifest, TaskSpec};
use serde::{Deserialize, Serialize};

pub const TASK_FILE: &str = "task.json";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskFile {
    pub name: String,
    pub spec: TaskSpec,
}

pub struct DataDir {
    pub path: PathBuf,
    pub task: TaskFile,
    pub vocab: Vocab,
}

impl DataDir {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.is_dir() {
            return Err(ilm::Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found")).into());
        }
        let task_path = path.join(TASK_FILE);
        let raw = fs::read_to_string(&task_path).map_err(|e| ilm::Error::io(&task_path, e))?;
        let task: TaskFile = serde_json::from_str(&raw).with_context(|| format!("parsing {}", task_path.display()))?;
        let vocab = Vocab::load(&path.join(VOCAB_FILE))?;
        if vocab != task.spec.vocab() {
            return Err(ilm::Error::Config(format!("{} does not match the task vocabulary", VOCAB_FILE)).into());
        }
        let path = path.canonicalize().map_err(|e| ilm::Error::io(path, e))?;
        Ok(DataDir { path, task, vocab })
    }

    pub fn split_path(&self, split: &str) -> PathBuf {
        self.path.join(format!("{split}.txt"))
    }

    pub fn lines(&self, split: &str) -> Result<Vec<String>> {
        Ok(read_records(&self.split_path(split))?)
    }

    pub fn manifest(&self, split: &str) -> Result<RecordManifest> {
        let p = manifest_path(&self.split_path(split));
        let raw = fs::read_to_string(&p).map_err(|e| ilm::Error::io(&p, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Encoded sequences of a split; `reversed` flips each solution region.
    pub fn sequences(&self, split: &str, reversed: bool) -> Result<Vec<CleanSequence>> {
        let seqs = encode_lines(&self.lines(split)?, &self.vocab, self.task.spec.is_conditioned())?;
        Ok(if reversed { seqs.iter().map(|s| reverse_content(s, &self.vocab)).collect() } else { seqs })
    }
}

pub fn reverse_content(s: &CleanSequence, vocab: &Vocab) -> CleanSequence {
    let mut c = s.content().to_vec();
    c.reverse();
    if s.condition_len > 0 {
        CleanSequence::conditioned(s.prompt(), &c, vocab)
    } else {
        CleanSequence::unconditioned(&c, vocab)
    }
}

/// Task-aware scoring of one decoded solution against a test record.
pub struct Verifier {
    kind: VerifierKind,
}

enum VerifierKind {
    Star(Vec<star::StarInstance>),
    Zebra(Vec<zebra::ZebraInstance>),
    Plain(Vec<Vec<u32>>),
}

impl Verifier {
    pub fn new(spec: &TaskSpec, lines: &[String], seqs: &[CleanSequence]) -> Result<Self> {
        let kind = match spec {
            TaskSpec::Star(_) => VerifierKind::Star(
                lines.iter().enumerate().map(|(i, l)| star::parse_star(l, i + 1)).collect::<ilm::Result<_>>()?,
            ),
            TaskSpec::Zebra(_) => VerifierKind::Zebra(
                lines.iter().enumerate().map(|(i, l)| zebra::parse_zebra(l, i + 1)).collect::<ilm::Result<_>>()?,
            ),
            TaskSpec::Stories(_) => VerifierKind::Plain(seqs.iter().map(|s| s.content().to_vec()).collect()),
        };
        Ok(Verifier { kind })
    }

    pub fn verify(&self, i: usize, pred: &[u32], vocab: &Vocab) -> Verdict {
        let toks: Vec<&str> = pred.iter().map(|&t| vocab.token(t)).collect();
        match &self.kind {
            VerifierKind::Star(insts) => {
                let labels: Vec<usize> = toks.iter().map(|t| t.parse().unwrap_or(usize::MAX)).collect();
                star::verify_star(&insts[i], &labels)
            }
            VerifierKind::Zebra(insts) => {
                let gold = zebra::serialize_solution(&insts[i].solution);
                let v = zebra::verify_zebra(&insts[i], &toks);
                Verdict { exact: v.exact, token_acc: score_tokens(&gold.iter().map(String::as_str).collect::<Vec<_>>(), &toks).token_acc }
            }
            VerifierKind::Plain(gold) => score_tokens(&gold[i], pred),
        }
    }
}
