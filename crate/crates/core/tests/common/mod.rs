#![allow(dead_code)]

pub mod oracles;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sst::corpus::{DatasetSplit, SplitName, StyleId, StyleSet, StyledSentence};

pub const POSITIVE: [&str; 8] = ["great", "delicious", "friendly", "amazing", "excellent", "perfect", "tasty", "wonderful"];
pub const NEGATIVE: [&str; 8] = ["awful", "bland", "rude", "terrible", "horrible", "dirty", "stale", "disgusting"];
const NOUNS: [&str; 12] = [
    "food", "staff", "pizza", "service", "room", "menu", "coffee", "salad", "steak", "bread", "soup", "waiter",
];
const PLACES: [&str; 4] = ["place", "restaurant", "hotel", "bar"];

pub fn is_marker(word: &str) -> bool {
    POSITIVE.contains(&word) || NEGATIVE.contains(&word)
}

/// Template sentences whose sentiment is carried only by marker adjectives.
pub fn synthetic(n_per_style: usize, seed: u64) -> Vec<StyledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n_per_style);
    for _ in 0..n_per_style {
        for style in 0..2 {
            let adjs = if style == 0 { &NEGATIVE } else { &POSITIVE };
            let a = *adjs.choose(&mut rng).unwrap();
            let b = *adjs.choose(&mut rng).unwrap();
            let n = *NOUNS.choose(&mut rng).unwrap();
            let m = *NOUNS.choose(&mut rng).unwrap();
            let p = *PLACES.choose(&mut rng).unwrap();
            let line = match (out.len() / 2) % 4 {
                0 => format!("the {n} was {a}"),
                1 => format!("the {n} was {a} and the {m} was {b}"),
                2 => format!("this {p} has {a} {n}"),
                _ => format!("we ordered the {n} and it was {a}"),
            };
            out.push(StyledSentence::parse(&line, StyleId(style)).unwrap());
        }
    }
    out
}

pub fn split(name: SplitName, sentences: Vec<StyledSentence>) -> DatasetSplit {
    DatasetSplit::from_sentences(name, &StyleSet::sentiment(), sentences).unwrap()
}
