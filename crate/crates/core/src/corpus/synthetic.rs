//! Small generated tasks for offline runs and tests.
//!
//! Each item is a short bag of filler words with two cue words that decide the
//! label: `CUES[0]` for answer A, `CUES[1]` for answer B.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TaskItem, TaskSet};

pub const CUES: [[&str; 2]; 2] = [["zorp", "quix"], ["blen", "frub"]];

pub const FILLER: [&str; 24] = [
    "the", "a", "stone", "river", "lamp", "quiet", "green", "under", "over", "seven", "table", "cloud", "paper",
    "winter", "bright", "small", "road", "music", "glass", "north", "apple", "slow", "window", "field",
];

#[derive(Clone, Copy, Debug)]
pub struct CueTask {
    pub n_items: usize,
    /// Filler words per question; cues are inserted at random positions.
    pub filler_len: usize,
    pub seed: u64,
}

impl Default for CueTask {
    fn default() -> Self {
        Self { n_items: 40, filler_len: 4, seed: 0 }
    }
}

impl CueTask {
    pub fn generate(&self) -> TaskSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let items = (0..self.n_items)
            .map(|i| {
                let class = rng.random_range(0..2usize);
                let mut words: Vec<&str> = (0..self.filler_len).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
                for cue in CUES[class] {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, cue);
                }
                let gold = if class == 0 { "A" } else { "B" };
                TaskItem::new(
                    format!("syn-{i:03}"),
                    words.join(" "),
                    vec![("A".into(), "yes".into()), ("B".into(), "no".into())],
                    gold,
                )
                .expect("generated items are valid")
            })
            .collect();
        TaskSet::new(format!("cue-{}", self.seed), items).expect("generated ids are unique")
    }
}

/// Random word soup of a given length drawn from the filler list.
pub fn filler_text(rng: &mut impl Rng, len: usize) -> String {
    let mut words: Vec<&str> = FILLER.to_vec();
    words.shuffle(rng);
    (0..len).map(|i| words[i % words.len()]).collect::<Vec<_>>().join(" ")
}
