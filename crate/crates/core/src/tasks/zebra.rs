//! Zebra puzzles.
//!
//! A puzzle has `m` houses and `n` entities. Each entity has `m` attribute
//! values, one per house, so a solution is `n` permutations. An operand
//! `c e a` names attribute value `a` of entity `e`; clues constrain the
//! houses of their operands.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CleanSequence, Vocab, BOS};
use crate::error::{Error, Result};
use crate::seeding::{rng_for, stream};

pub const MAX_DIGIT: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZebraSpec {
    /// Houses, and attribute values per entity.
    pub m: usize,
    /// Entities.
    pub n: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl ZebraSpec {
    pub fn desk() -> Self {
        ZebraSpec { m: 3, n: 3, n_train: 20_000, n_test: 1_000, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n < 2 {
            return Err(Error::Infeasible("zebra puzzles need m >= 2 and n >= 2".into()));
        }
        if self.m > MAX_DIGIT || self.n > MAX_DIGIT + 1 {
            return Err(Error::Infeasible(format!("zebra supports m <= {MAX_DIGIT} and n <= {}", MAX_DIGIT + 1)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "=")]
    Same,
    #[serde(rename = "!=")]
    Different,
    #[serde(rename = "l")]
    LeftOf,
    #[serde(rename = "L")]
    ImmediateLeft,
    #[serde(rename = "N")]
    Neighbor,
    #[serde(rename = "e")]
    Ends,
    #[serde(rename = "b")]
    Between,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::Same,
        Relation::Different,
        Relation::LeftOf,
        Relation::ImmediateLeft,
        Relation::Neighbor,
        Relation::Ends,
        Relation::Between,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Relation::Same => "=",
            Relation::Different => "!=",
            Relation::LeftOf => "left-of",
            Relation::ImmediateLeft => "immediate-left",
            Relation::Neighbor => "nbr",
            Relation::Ends => "ends",
            Relation::Between => "inbetween",
        }
    }

    pub fn from_token(tok: &str) -> Option<Self> {
        Some(match tok {
            "=" => Relation::Same,
            "!=" => Relation::Different,
            "left-of" => Relation::LeftOf,
            "immediate-left" => Relation::ImmediateLeft,
            "nbr" => Relation::Neighbor,
            "ends" | "end" => Relation::Ends,
            "inbetween" => Relation::Between,
            _ => return None,
        })
    }

    /// Operands on the left and right of the `RHS` marker.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Relation::Ends => (1, 0),
            Relation::Between => (1, 2),
            _ => (1, 1),
        }
    }

    /// Truth of the relation over operand houses. For `Between` the second
    /// operand lies strictly between the other two, on either side.
    pub fn holds(self, h: &[usize], m: usize) -> bool {
        match self {
            Relation::Same => h[0] == h[1],
            Relation::Different => h[0] != h[1],
            Relation::LeftOf => h[0] < h[1],
            Relation::ImmediateLeft => h[0] + 1 == h[1],
            Relation::Neighbor => h[0].abs_diff(h[1]) == 1,
            Relation::Ends => h[0] == 0 || h[0] + 1 == m,
            Relation::Between => (h[0] < h[1] && h[1] < h[2]) || (h[2] < h[1] && h[1] < h[0]),
        }
    }
}

/// Entity and attribute value.
pub type Operand = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clue {
    pub rel: Relation,
    pub args: Vec<Operand>,
}

/// `house[e][a]`: the house holding value `a` of entity `e`.
pub type Assignment = Vec<Vec<usize>>;

impl Clue {
    pub fn holds(&self, sol: &Assignment, m: usize) -> bool {
        let mut h = [0usize; 3];
        for (slot, &(e, a)) in h.iter_mut().zip(&self.args) {
            *slot = sol[e][a];
        }
        self.rel.holds(&h[..self.args.len()], m)
    }

    fn max_entity(&self) -> usize {
        self.args.iter().map(|a| a.0).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ZebraInstance {
    pub m: usize,
    pub n: usize,
    pub clues: Vec<Clue>,
    pub solution: Assignment,
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

/// Exhaustive backtracking solver over per-entity permutations.
pub struct Solver {
    m: usize,
    n: usize,
    perms: Vec<Vec<usize>>,
}

impl Solver {
    pub fn new(m: usize, n: usize) -> Self {
        Solver { m, n, perms: permutations(m) }
    }

    /// Number of satisfying assignments, stopping once `limit` are found.
    pub fn count(&self, clues: &[&Clue], limit: usize) -> usize {
        // clues are checked as soon as every entity they mention is placed
        let mut by_depth: Vec<Vec<&Clue>> = vec![Vec::new(); self.n];
        for c in clues {
            by_depth[c.max_entity()].push(c);
        }
        let mut sol: Assignment = vec![vec![0; self.m]; self.n];
        let mut found = 0;
        self.search(0, &by_depth, &mut sol, limit, &mut found);
        found
    }

    fn search(&self, e: usize, by_depth: &[Vec<&Clue>], sol: &mut Assignment, limit: usize, found: &mut usize) {
        if e == self.n {
            *found += 1;
            return;
        }
        for p in &self.perms {
            sol[e].copy_from_slice(p);
            if by_depth[e].iter().all(|c| c.holds(sol, self.m)) {
                self.search(e + 1, by_depth, sol, limit, found);
                if *found >= limit {
                    return;
                }
            }
        }
    }

    pub fn solutions(&self, clues: &[Clue]) -> Vec<Assignment> {
        let mut out = Vec::new();
        let mut sol: Assignment = vec![vec![0; self.m]; self.n];
        self.collect(0, clues, &mut sol, &mut out);
        out
    }

    fn collect(&self, e: usize, clues: &[Clue], sol: &mut Assignment, out: &mut Vec<Assignment>) {
        if e == self.n {
            if clues.iter().all(|c| c.holds(sol, self.m)) {
                out.push(sol.clone());
            }
            return;
        }
        for p in &self.perms {
            sol[e].copy_from_slice(p);
            self.collect(e + 1, clues, sol, out);
        }
    }
}

fn applicable(m: usize) -> Vec<Relation> {
    Relation::ALL.into_iter().filter(|&r| r != Relation::Between || m >= 3).collect()
}

/// A random clue that is true of `sol`.
fn propose<R: Rng + ?Sized>(sol: &Assignment, m: usize, rels: &[Relation], rng: &mut R) -> Clue {
    let n = sol.len();
    // value of entity e found in house h
    let at = |e: usize, h: usize| sol[e].iter().position(|&x| x == h).unwrap();
    let any = |h: usize, rng: &mut R| {
        let e = rng.random_range(0..n);
        (e, at(e, h))
    };
    let two_entities = |rng: &mut R| {
        let e1 = rng.random_range(0..n);
        let e2 = (e1 + rng.random_range(1..n)) % n;
        (e1, e2)
    };
    let rel = rels[rng.random_range(0..rels.len())];
    let args = match rel {
        Relation::Same => {
            let h = rng.random_range(0..m);
            let (e1, e2) = two_entities(rng);
            vec![(e1, at(e1, h)), (e2, at(e2, h))]
        }
        Relation::Different => {
            let h1 = rng.random_range(0..m);
            let h2 = (h1 + rng.random_range(1..m)) % m;
            let (e1, e2) = two_entities(rng);
            vec![(e1, at(e1, h1)), (e2, at(e2, h2))]
        }
        Relation::LeftOf => {
            let mut hs = [rng.random_range(0..m), 0];
            hs[1] = (hs[0] + rng.random_range(1..m)) % m;
            hs.sort_unstable();
            vec![any(hs[0], rng), any(hs[1], rng)]
        }
        Relation::ImmediateLeft => {
            let h = rng.random_range(0..m - 1);
            vec![any(h, rng), any(h + 1, rng)]
        }
        Relation::Neighbor => {
            let h = rng.random_range(0..m - 1);
            let (a, b) = if rng.random::<bool>() { (h, h + 1) } else { (h + 1, h) };
            vec![any(a, rng), any(b, rng)]
        }
        Relation::Ends => {
            let h = if rng.random::<bool>() { 0 } else { m - 1 };
            vec![any(h, rng)]
        }
        Relation::Between => {
            let mut hs: Vec<usize> = (0..m).collect();
            hs.shuffle(rng);
            hs.truncate(3);
            hs.sort_unstable();
            if rng.random::<bool>() {
                hs.reverse();
            }
            vec![any(hs[0], rng), any(hs[1], rng), any(hs[2], rng)]
        }
    };
    Clue { rel, args }
}

/// Samples a solution, adds true clues until it is the only one, then drops
/// clues in random order while uniqueness holds. Every remaining clue is
/// needed.
pub fn gen_zebra_instance<R: Rng + ?Sized>(spec: &ZebraSpec, rng: &mut R) -> Result<ZebraInstance> {
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let solver = Solver::new(m, n);
    let rels = applicable(m);
    let mut solution: Assignment = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p: Vec<usize> = (0..m).collect();
        p.shuffle(rng);
        solution.push(p);
    }
    let mut clues: Vec<Clue> = Vec::new();
    loop {
        let refs: Vec<&Clue> = clues.iter().collect();
        if solver.count(&refs, 2) == 1 {
            break;
        }
        let c = propose(&solution, m, &rels, rng);
        if !clues.contains(&c) {
            clues.push(c);
        }
    }
    let mut order: Vec<usize> = (0..clues.len()).collect();
    order.shuffle(rng);
    let mut keep = vec![true; clues.len()];
    for i in order {
        keep[i] = false;
        let refs: Vec<&Clue> = clues.iter().zip(&keep).filter(|(_, &k)| k).map(|(c, _)| c).collect();
        if solver.count(&refs, 2) != 1 {
            keep[i] = true;
        }
    }
    let mut clues: Vec<Clue> = clues.into_iter().zip(keep).filter(|(_, k)| *k).map(|(c, _)| c).collect();
    clues.shuffle(rng);
    Ok(ZebraInstance { m, n, clues, solution })
}

pub fn gen_zebra(spec: &ZebraSpec, test_split: bool) -> Result<Vec<ZebraInstance>> {
    spec.validate()?;
    let (label, count) = if test_split { (stream::TEST_SPLIT, spec.n_test) } else { (stream::TRAIN_SPLIT, spec.n_train) };
    (0..count).map(|i| gen_zebra_instance(spec, &mut rng_for(spec.seed, &[label, i as u64]))).collect()
}

pub fn vocab() -> Vocab {
    let words = ["c", "=", "!=", "left-of", "immediate-left", "nbr", "ends", "end", "inbetween", "CLUE_END", "LHS", "RHS"];
    Vocab::new((0..=MAX_DIGIT).map(|d| d.to_string()).chain(words.iter().map(|w| w.to_string())))
        .expect("distinct zebra tokens")
}

fn push_operand(out: &mut Vec<String>, (e, a): Operand) {
    out.push("c".into());
    out.push(e.to_string());
    out.push(a.to_string());
}

pub fn serialize_clues(clues: &[Clue]) -> Vec<String> {
    let mut out = Vec::new();
    for c in clues {
        let (left, _) = c.rel.arity();
        out.push(c.rel.token().into());
        out.push("LHS".into());
        for &op in &c.args[..left] {
            push_operand(&mut out, op);
        }
        out.push("RHS".into());
        for &op in &c.args[left..] {
            push_operand(&mut out, op);
        }
        out.push("CLUE_END".into());
    }
    out
}

/// Triples `entity house value`, sorted by house then entity.
pub fn serialize_solution(sol: &Assignment) -> Vec<String> {
    let m = sol.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(3 * m * sol.len());
    for h in 0..m {
        for (e, row) in sol.iter().enumerate() {
            let a = row.iter().position(|&x| x == h).expect("solution rows are permutations");
            out.extend([e.to_string(), h.to_string(), a.to_string()]);
        }
    }
    out
}

pub fn serialize_zebra(inst: &ZebraInstance) -> String {
    let mut toks = serialize_clues(&inst.clues);
    toks.push(BOS.into());
    toks.extend(serialize_solution(&inst.solution));
    toks.join(" ")
}

fn perr(line: usize, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, offset, message: message.into() }
}

fn digit(toks: &[&str], i: usize, line: usize) -> Result<usize> {
    match toks.get(i) {
        Some(t) => t.parse().map_err(|_| perr(line, i, format!("expected a digit, found `{t}`"))),
        None => Err(perr(line, i, "line ended inside a clue")),
    }
}

pub fn parse_clues(toks: &[&str], line: usize) -> Result<Vec<Clue>> {
    let mut clues = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let rel = Relation::from_token(toks[i]).ok_or_else(|| perr(line, i, format!("unknown relation `{}`", toks[i])))?;
        i += 1;
        if toks.get(i) != Some(&"LHS") {
            return Err(perr(line, i, "expected LHS"));
        }
        i += 1;
        let mut args = Vec::new();
        let mut left = 0;
        loop {
            match toks.get(i).copied() {
                Some("c") => {
                    args.push((digit(toks, i + 1, line)?, digit(toks, i + 2, line)?));
                    i += 3;
                }
                Some("RHS") if left == 0 && !args.is_empty() => {
                    left = args.len();
                    i += 1;
                }
                Some("CLUE_END") if left > 0 => {
                    i += 1;
                    break;
                }
                Some(t) => return Err(perr(line, i, format!("unexpected `{t}` in clue"))),
                None => return Err(perr(line, i, "line ended inside a clue")),
            }
        }
        if (left, args.len() - left) != rel.arity() {
            return Err(perr(line, i - 1, format!("wrong operand count for `{}`", rel.token())));
        }
        clues.push(Clue { rel, args });
    }
    Ok(clues)
}

/// Reads solution triples back into an assignment for an `m x n` puzzle.
pub fn parse_solution(toks: &[&str], m: usize, n: usize, line: usize) -> Result<Assignment> {
    if toks.len() != 3 * m * n {
        return Err(perr(line, toks.len(), format!("expected {} solution tokens, found {}", 3 * m * n, toks.len())));
    }
    let mut sol = vec![vec![usize::MAX; m]; n];
    let mut taken = vec![vec![false; m]; n];
    for (k, t) in toks.chunks_exact(3).enumerate() {
        let (e, h, a) = (digit(t, 0, line)?, digit(t, 1, line)?, digit(t, 2, line)?);
        if e >= n || h >= m || a >= m || sol[e][a] != usize::MAX || taken[e][h] {
            return Err(perr(line, 3 * k, "triple out of range or repeated"));
        }
        sol[e][a] = h;
        taken[e][h] = true;
    }
    Ok(sol)
}

/// Inverse of [`serialize_zebra`]; the puzzle size is read off the solution.
pub fn parse_zebra(line_text: &str, line: usize) -> Result<ZebraInstance> {
    let toks: Vec<&str> = line_text.split_whitespace().collect();
    let bos = toks.iter().position(|&t| t == BOS).ok_or_else(|| perr(line, toks.len(), "missing <s>"))?;
    let clues = parse_clues(&toks[..bos], line)?;
    let out = &toks[bos + 1..];
    if out.is_empty() || out.len() % 3 != 0 {
        return Err(perr(line, bos + 1, "solution must be whole triples"));
    }
    let m = out.chunks_exact(3).filter_map(|t| t[1].parse::<usize>().ok()).max().map_or(0, |h| h + 1);
    if m == 0 || (out.len() / 3) % m != 0 {
        return Err(perr(line, bos + 1, "solution does not cover every house"));
    }
    let n = out.len() / 3 / m;
    let solution = parse_solution(out, m, n, line).map_err(|e| match e {
        Error::Parse { line, offset, message } => Error::Parse { line, offset: offset + bos + 1, message },
        e => e,
    })?;
    for (k, c) in clues.iter().enumerate() {
        if c.args.iter().any(|&(e, a)| e >= n || a >= m) {
            return Err(perr(line, k, "clue operand outside the puzzle"));
        }
    }
    Ok(ZebraInstance { m, n, clues, solution })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZebraVerdict {
    pub exact: bool,
    pub satisfies_all_clues: bool,
}

pub fn verify_zebra<S: AsRef<str>>(inst: &ZebraInstance, predicted: &[S]) -> ZebraVerdict {
    let toks: Vec<&str> = predicted.iter().map(AsRef::as_ref).collect();
    match parse_solution(&toks, inst.m, inst.n, 0) {
        Ok(sol) => ZebraVerdict {
            exact: sol == inst.solution,
            satisfies_all_clues: inst.clues.iter().all(|c| c.holds(&sol, inst.m)),
        },
        Err(_) => ZebraVerdict { exact: false, satisfies_all_clues: false },
    }
}

pub fn zebra_sequence(inst: &ZebraInstance, vocab: &Vocab) -> Result<CleanSequence> {
    let ids = vocab.encode_line(&serialize_zebra(inst), 0)?;
    let bos = ids.iter().position(|&t| t == vocab.bos).expect("serialized zebra has <s>");
    Ok(CleanSequence::conditioned(&ids[..bos], &ids[bos + 1..], vocab))
}
