//! Grammar-generated short stories for toy language modeling.
//!
//! Each story introduces a character and an object, then strings together a
//! few sentences that refer back to them, so there are long-range
//! dependencies for a model to pick up.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CleanSequence, Vocab};
use crate::error::Result;
use crate::seeding::{rng_for, stream};

const NAMES: [(&str, &str); 8] = [
    ("tom", "he"),
    ("sam", "he"),
    ("ben", "he"),
    ("max", "he"),
    ("lily", "she"),
    ("mia", "she"),
    ("anna", "she"),
    ("sue", "she"),
];
const ANIMALS: [&str; 6] = ["cat", "dog", "bird", "fox", "bear", "frog"];
const ADJECTIVES: [&str; 8] = ["little", "big", "happy", "sad", "red", "blue", "old", "shiny"];
const OBJECTS: [&str; 8] = ["ball", "box", "kite", "hat", "cake", "book", "toy", "boat"];
const PLACES: [&str; 6] = ["park", "garden", "house", "forest", "lake", "school"];
const FEELINGS: [&str; 4] = ["happy", "sad", "tired", "scared"];
const VERBS: [&str; 4] = ["found", "lost", "wanted", "saw"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoriesSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl StoriesSpec {
    pub fn desk() -> Self {
        StoriesSpec { n_train: 20_000, n_test: 500, max_len: 64, seed: 0 }
    }
}

pub fn vocab() -> Vocab {
    let mut words: Vec<&str> = Vec::new();
    words.extend(NAMES.iter().flat_map(|(n, p)| [*n, *p]));
    words.extend(ANIMALS);
    words.extend(ADJECTIVES);
    words.extend(OBJECTS);
    words.extend(PLACES);
    words.extend(FEELINGS);
    words.extend(VERBS);
    words.extend([
        "once", "there", "was", "a", "the", "in", "to", "and", "with", "it", "his", "her", "went", "played",
        "felt", "then", "gave", "said", "hello", "friend", "they", "were", "home", "day", "one", ".",
    ]);
    let mut seen = std::collections::HashSet::new();
    words.retain(|w| seen.insert(*w));
    Vocab::new(words).expect("story words have no whitespace")
}

/// One story as words, cut to `max_len` tokens at a sentence boundary when possible.
pub fn gen_story<R: Rng + ?Sized>(max_len: usize, rng: &mut R) -> Vec<&'static str> {
    let &(name, pron) = NAMES.choose(rng).unwrap();
    let poss = if pron == "he" { "his" } else { "her" };
    let animal = *ANIMALS.choose(rng).unwrap();
    let adj = *ADJECTIVES.choose(rng).unwrap();
    let object = *OBJECTS.choose(rng).unwrap();
    let place = *PLACES.choose(rng).unwrap();
    let mut s: Vec<&'static str> = vec!["once", "there", "was", "a", adj, animal, "in", "the", place, "."];
    s.extend([name, "was", "a", adj, animal, "."]);
    let n_events = rng.random_range(2..=5);
    for _ in 0..n_events {
        let sentence: Vec<&'static str> = match rng.random_range(0..5) {
            0 => vec![pron, *VERBS.choose(rng).unwrap(), "a", *ADJECTIVES.choose(rng).unwrap(), object, "."],
            1 => vec![pron, "went", "to", "the", *PLACES.choose(rng).unwrap(), "with", poss, object, "."],
            2 => vec![pron, "felt", *FEELINGS.choose(rng).unwrap(), "."],
            3 => {
                let friend = *ANIMALS.choose(rng).unwrap();
                vec!["then", name, "saw", "a", friend, "and", "said", "hello", "friend", "."]
            }
            _ => vec!["one", "day", "they", "played", "with", "the", object, "in", "the", place, "."],
        };
        if s.len() + sentence.len() > max_len {
            break;
        }
        s.extend(sentence);
    }
    if s.len() + 4 <= max_len {
        s.extend([pron, "went", "home", "."]);
    }
    s.truncate(max_len);
    s
}

pub fn gen_stories(spec: &StoriesSpec, test_split: bool) -> Vec<Vec<&'static str>> {
    let (label, n) = if test_split { (stream::TEST_SPLIT, spec.n_test) } else { (stream::TRAIN_SPLIT, spec.n_train) };
    (0..n).map(|i| gen_story(spec.max_len, &mut rng_for(spec.seed, &[label, i as u64]))).collect()
}

pub fn story_sequence(words: &[&str], vocab: &Vocab) -> Result<CleanSequence> {
    let ids = vocab.encode_line(&words.join(" "), 0)?;
    Ok(CleanSequence::unconditioned(&ids, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stories_fit_and_encode() {
        let v = vocab();
        let spec = StoriesSpec { n_train: 300, ..StoriesSpec::desk() };
        for s in gen_stories(&spec, false) {
            assert!(s.len() <= 64 && s.len() >= 15);
            story_sequence(&s, &v).unwrap();
        }
    }
}
