//! Star-graph path planning.
//!
//! A graph has one junction. In the symmetric layout the start node is the
//! junction and every arm leaves it with the same length. In the asymmetric
//! layout an incoming arm runs from the start to the junction and `degree`
//! arms leave it; the target sits at the end of one of them.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CleanSequence, Vocab, BOS};
use crate::error::{Error, Result};
use crate::seeding::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StarLayout {
    Symmetric,
    Asymmetric,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarSpec {
    pub layout: StarLayout,
    pub degree: usize,
    pub min_arm: usize,
    /// Path length bounds in edges.
    pub min_path: usize,
    pub max_path: usize,
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl StarSpec {
    pub fn easy() -> Self {
        StarSpec { layout: StarLayout::Symmetric, degree: 3, min_arm: 1, min_path: 5, max_path: 5, vocab_size: 20, n_train: 50_000, n_test: 5_000, seed: 0 }
    }

    pub fn medium() -> Self {
        StarSpec { layout: StarLayout::Asymmetric, degree: 2, min_arm: 2, min_path: 3, max_path: 6, vocab_size: 20, n_train: 50_000, n_test: 5_000, seed: 0 }
    }

    pub fn hard() -> Self {
        StarSpec { layout: StarLayout::Asymmetric, degree: 5, min_arm: 5, min_path: 6, max_path: 12, vocab_size: 56, n_train: 50_000, n_test: 5_000, seed: 0 }
    }

    /// Small variable-length tier for CPU-scale runs.
    pub fn desk() -> Self {
        StarSpec { layout: StarLayout::Asymmetric, degree: 2, min_arm: 1, min_path: 3, max_path: 5, vocab_size: 20, n_train: 10_000, n_test: 1_000, seed: 0 }
    }

    /// Same as [`StarSpec::desk`] with every path of length 4.
    pub fn desk_fixed() -> Self {
        StarSpec { min_path: 4, max_path: 4, ..Self::desk() }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "star-easy" => Self::easy(),
            "star-medium" => Self::medium(),
            "star-hard" => Self::hard(),
            "star-desk" => Self::desk(),
            "star-desk-fixed" => Self::desk_fixed(),
            _ => return None,
        })
    }

    /// Feasible `(incoming, outgoing)` arm lengths of the target path.
    pub fn path_splits(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for total in self.min_path..=self.max_path {
            for a_in in self.min_arm..=total {
                let a_out = total - a_in;
                if a_out >= self.min_arm {
                    out.push((a_in, a_out));
                }
            }
        }
        out
    }

    /// Largest node count any instance can need.
    pub fn max_nodes(&self) -> usize {
        match self.layout {
            StarLayout::Symmetric => 1 + self.degree * self.max_path,
            StarLayout::Asymmetric => {
                let best_path = self.path_splits().iter().map(|(a, b)| a + b).max().unwrap_or(0);
                let distractor = self.max_path.saturating_sub(self.min_arm);
                1 + best_path + (self.degree - 1) * distractor
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 2 {
            return Err(Error::Infeasible("star degree must be at least 2".into()));
        }
        if self.min_path > self.max_path || self.min_arm == 0 {
            return Err(Error::Infeasible("need 1 <= min_arm and min_path <= max_path".into()));
        }
        if self.layout == StarLayout::Asymmetric {
            if self.path_splits().is_empty() {
                return Err(Error::Infeasible("no arm split satisfies the path and arm bounds".into()));
            }
            if self.max_path < 2 * self.min_arm {
                return Err(Error::Infeasible("distractor arms cannot satisfy min_arm".into()));
            }
        } else if self.min_path != self.max_path {
            return Err(Error::Infeasible("symmetric stars have a single arm length".into()));
        }
        if self.max_nodes() > self.vocab_size {
            return Err(Error::Infeasible(format!(
                "graphs need up to {} node labels but vocab_size is {}",
                self.max_nodes(),
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Node label tokens `"0" .. vocab_size-1` after the sentinels.
    pub fn vocab(&self) -> Vocab {
        Vocab::new((0..self.vocab_size).map(|i| i.to_string())).expect("distinct numeric labels")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StarInstance {
    pub edges: Vec<(usize, usize)>,
    pub start: usize,
    pub target: usize,
    /// Nodes from start to target.
    pub path: Vec<usize>,
}

/// Builds one instance; labels are drawn without replacement.
pub fn gen_star_instance<R: Rng + ?Sized>(spec: &StarSpec, rng: &mut R) -> Result<StarInstance> {
    spec.validate()?;
    let mut labels: Vec<usize> = (0..spec.vocab_size).collect();
    labels.shuffle(rng);
    let mut next = labels.into_iter();
    let mut take = || next.next().expect("vocab size validated");
    let mut edges = Vec::new();
    let junction = take();
    let arm = |from: usize, len: usize, edges: &mut Vec<(usize, usize)>, take: &mut dyn FnMut() -> usize| {
        let mut nodes = vec![from];
        for _ in 0..len {
            let n = take();
            edges.push((*nodes.last().unwrap(), n));
            nodes.push(n);
        }
        nodes
    };
    let (start, path) = match spec.layout {
        StarLayout::Symmetric => {
            let target_arm = rng.random_range(0..spec.degree);
            let mut path = Vec::new();
            for i in 0..spec.degree {
                let nodes = arm(junction, spec.max_path, &mut edges, &mut take);
                if i == target_arm {
                    path = nodes;
                }
            }
            (junction, path)
        }
        StarLayout::Asymmetric => {
            let splits = spec.path_splits();
            let (a_in, a_out) = splits[rng.random_range(0..splits.len())];
            let start = take();
            // incoming arm built from the start towards the junction
            let mut path = vec![start];
            for i in 0..a_in {
                let n = if i + 1 == a_in { junction } else { take() };
                edges.push((*path.last().unwrap(), n));
                path.push(n);
            }
            let target_arm = rng.random_range(0..spec.degree);
            for i in 0..spec.degree {
                if i == target_arm {
                    let nodes = arm(junction, a_out, &mut edges, &mut take);
                    path.extend_from_slice(&nodes[1..]);
                } else {
                    let len = rng.random_range(spec.min_arm..=spec.max_path - spec.min_arm);
                    arm(junction, len, &mut edges, &mut take);
                }
            }
            (start, path)
        }
    };
    edges.shuffle(rng);
    Ok(StarInstance { edges, start, target: *path.last().unwrap(), path })
}

/// Deterministic split: instance `i` depends only on (spec, split, i).
pub fn gen_star(spec: &StarSpec, test_split: bool) -> Result<Vec<StarInstance>> {
    spec.validate()?;
    let (label, n) = if test_split { (stream::TEST_SPLIT, spec.n_test) } else { (stream::TRAIN_SPLIT, spec.n_train) };
    (0..n).map(|i| gen_star_instance(spec, &mut rng_for(spec.seed, &[label, i as u64]))).collect()
}

pub fn serialize_star(inst: &StarInstance) -> String {
    let mut toks: Vec<String> = Vec::with_capacity(2 * inst.edges.len() + inst.path.len() + 3);
    for &(a, b) in &inst.edges {
        toks.push(a.to_string());
        toks.push(b.to_string());
    }
    toks.push(inst.start.to_string());
    toks.push(inst.target.to_string());
    toks.push(BOS.to_string());
    toks.extend(inst.path.iter().map(|n| n.to_string()));
    toks.join(" ")
}

fn parse_node(tok: &str, offset: usize, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| Error::Parse { line, offset, message: format!("`{tok}` is not a node label") })
}

/// Inverse of [`serialize_star`]. `offset` in errors is the token index.
pub fn parse_star(line_text: &str, line: usize) -> Result<StarInstance> {
    let toks: Vec<&str> = line_text.split_whitespace().collect();
    let bos = toks.iter().position(|&t| t == BOS).ok_or(Error::Parse {
        line,
        offset: toks.len(),
        message: "missing <s>".into(),
    })?;
    if bos < 2 || bos % 2 != 0 {
        return Err(Error::Parse { line, offset: bos, message: "prefix must be edge pairs then start and target".into() });
    }
    let mut nums = Vec::with_capacity(toks.len());
    for (i, t) in toks.iter().enumerate() {
        if i != bos {
            nums.push(parse_node(t, i, line)?);
        }
    }
    let edges = nums[..bos - 2].chunks_exact(2).map(|c| (c[0], c[1])).collect();
    Ok(StarInstance { edges, start: nums[bos - 2], target: nums[bos - 1], path: nums[bos..].to_vec() })
}

/// Exact match and positionwise accuracy; the denominator is the longer of
/// gold and prediction, so an empty prediction scores 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub exact: bool,
    pub token_acc: f64,
}

pub fn score_tokens<T: PartialEq>(gold: &[T], pred: &[T]) -> Verdict {
    let denom = gold.len().max(pred.len());
    let hits = gold.iter().zip(pred).filter(|(a, b)| a == b).count();
    Verdict { exact: gold == pred, token_acc: if denom == 0 { 1.0 } else { hits as f64 / denom as f64 } }
}

pub fn verify_star(inst: &StarInstance, predicted: &[usize]) -> Verdict {
    score_tokens(&inst.path, predicted)
}

/// Whether `path` is a walk from start to target over the listed edges.
pub fn is_valid_walk(inst: &StarInstance, path: &[usize]) -> bool {
    let edges: HashSet<(usize, usize)> = inst.edges.iter().copied().collect();
    path.first() == Some(&inst.start)
        && path.last() == Some(&inst.target)
        && path.windows(2).all(|w| edges.contains(&(w[0], w[1])))
}

/// Same instances with the path emitted target first.
pub fn reverse_path_corpus(insts: &[StarInstance]) -> Vec<StarInstance> {
    insts
        .iter()
        .map(|i| {
            let mut r = i.clone();
            r.path.reverse();
            r
        })
        .collect()
}

/// Encodes an instance as a conditioned sequence (prompt = edges, start, target).
pub fn star_sequence(inst: &StarInstance, vocab: &Vocab) -> Result<CleanSequence> {
    let ids = vocab.encode_line(&serialize_star(inst), 0)?;
    let bos = ids.iter().position(|&t| t == vocab.bos).expect("serialized star has <s>");
    Ok(CleanSequence::conditioned(&ids[..bos], &ids[bos + 1..], vocab))
}

/// Node labels of a decoded solution; tokens that are not labels fail the parse.
pub fn decode_path(tokens: &[u32], vocab: &Vocab) -> Option<Vec<usize>> {
    tokens.iter().map(|&t| vocab.token(t).parse().ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_shapes() {
        let mut rng = rng_for(1, &[]);
        for _ in 0..200 {
            let e = gen_star_instance(&StarSpec::easy(), &mut rng).unwrap();
            assert_eq!(e.edges.len(), 15);
            assert_eq!(e.path.len(), 6);
            assert!(is_valid_walk(&e, &e.path));
        }
        assert!(StarSpec::medium().path_splits().iter().all(|(a, b)| a + b >= 4));
    }

    #[test]
    fn infeasible_vocab_rejected() {
        let spec = StarSpec { vocab_size: 10, ..StarSpec::hard() };
        assert!(matches!(spec.validate(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn verdicts() {
        let inst = StarInstance { edges: vec![], start: 1, target: 6, path: vec![1, 2, 3, 4, 6] };
        assert_eq!(verify_star(&inst, &[1, 2, 3, 4, 6]), Verdict { exact: true, token_acc: 1.0 });
        let v = verify_star(&inst, &[1, 2, 9, 4, 6]);
        assert!(!v.exact && (v.token_acc - 0.8).abs() < 1e-12);
        assert_eq!(verify_star(&inst, &[]), Verdict { exact: false, token_acc: 0.0 });
    }

    #[test]
    fn parse_errors_carry_offset() {
        match parse_star("1 2 3 x <s> 1", 7) {
            Err(Error::Parse { line: 7, offset: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_star("1 2 3", 1).is_err());
    }
}
