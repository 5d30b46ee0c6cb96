use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CleanSequence, Vocab, BOS};
use crate::error::{Error, Result};

/// On-disk corpus layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// One example per line, whitespace-separated tokens, no prompt.
    Lines,
    /// Task records: `prompt tokens <s> solution tokens` per line.
    TaskRecords,
}

/// Parses one line. For task records the line must contain exactly one `<s>`.
pub fn parse_line(line: &str, line_no: usize, vocab: &Vocab, format: CorpusFormat) -> Result<CleanSequence> {
    match format {
        CorpusFormat::Lines => {
            let ids = vocab.encode_line(line, line_no)?;
            if let Some(pos) = ids.iter().position(|&i| vocab.is_sentinel(i)) {
                return Err(Error::Parse {
                    line: line_no,
                    offset: pos,
                    message: format!("sentinel `{}` inside plain text", vocab.token(ids[pos])),
                });
            }
            Ok(CleanSequence::unconditioned(&ids, vocab))
        }
        CorpusFormat::TaskRecords => {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let split = toks.iter().position(|&t| t == BOS).ok_or(Error::Parse {
                line: line_no,
                offset: toks.len(),
                message: "task record has no `<s>`".into(),
            })?;
            let encode = |slice: &[&str]| vocab.encode_line(&slice.join(" "), line_no);
            let prompt = encode(&toks[..split])?;
            let solution = encode(&toks[split + 1..])?;
            if let Some(pos) = solution.iter().position(|&i| vocab.is_sentinel(i)) {
                return Err(Error::Parse {
                    line: line_no,
                    offset: split + 1 + pos,
                    message: "sentinel inside the solution region".into(),
                });
            }
            Ok(CleanSequence::conditioned(&prompt, &solution, vocab))
        }
    }
}

/// Reads and validates a whole corpus file. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn load_corpus(path: &Path, vocab: &Vocab, format: CorpusFormat) -> Result<Vec<CleanSequence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1, vocab, format))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_line_maps_directly() {
        let v = Vocab::new(["A", "B", "C"]).unwrap();
        let x = parse_line("A B C", 1, &v, CorpusFormat::Lines).unwrap();
        let ids = ["A", "B", "C"].map(|t| v.id(t).unwrap());
        assert_eq!(x.ids, vec![v.bos, ids[0], ids[1], ids[2], v.eos]);
        assert_eq!(x.condition_len, 0);
    }

    #[test]
    fn unknown_token_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "A B\n\nA ZZZ\n").unwrap();
        let v = Vocab::new(["A", "B"]).unwrap();
        let err = load_corpus(&p, &v, CorpusFormat::Lines).unwrap_err();
        assert!(matches!(err, Error::UnknownToken { ref token, line: 3 } if token == "ZZZ"), "{err}");
    }

    #[test]
    fn task_record_condition_len_is_bos_index() {
        let v = Vocab::new(["1", "2", "3"]).unwrap();
        let x = parse_line("1 2 2 3 1 3 <s> 1 2 3", 1, &v, CorpusFormat::TaskRecords).unwrap();
        assert_eq!(x.condition_len, 6);
        assert_eq!(x.ids[6], v.bos);
        assert_eq!(x.content().len(), 3);
        assert!(parse_line("1 2 3", 1, &v, CorpusFormat::TaskRecords).is_err());
    }
}
