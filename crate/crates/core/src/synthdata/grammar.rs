use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A whitespace-tokenized sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sentence(pub Vec<String>);

impl Sentence {
    pub fn parse(text: &str) -> Self {
        Sentence(text.split_whitespace().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn text(&self) -> String {
        self.0.join(" ")
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

const DETERMINERS: &[&str] = &["the", "a", "this", "that", "every", "some", "my", "your", "his", "her", "our", "their"];

const ADJECTIVES: &[&str] = &[
    "old", "young", "big", "small", "red", "green", "blue", "happy", "sad", "tall", "short", "quiet", "loud", "bright",
    "dark", "heavy", "light", "strong", "weak", "clever", "lazy", "brave", "gentle", "angry", "hungry", "tired",
    "busy", "rich", "poor", "warm", "cold", "wet", "dry", "clean", "dirty", "fresh", "sweet", "bitter", "new",
    "ancient", "golden", "silver", "wooden", "narrow", "wide", "lonely", "proud", "kind", "strange", "famous",
];

const AGENTS: &[&str] = &[
    "farmer",
    "teacher",
    "child",
    "doctor",
    "king",
    "queen",
    "soldier",
    "fisherman",
    "baker",
    "merchant",
    "dog",
    "cat",
    "horse",
    "bird",
    "wolf",
    "fox",
    "girl",
    "boy",
    "woman",
    "man",
    "sailor",
    "hunter",
    "priest",
    "student",
    "painter",
    "singer",
    "judge",
    "thief",
    "traveler",
    "shepherd",
    "tailor",
    "miller",
    "weaver",
    "potter",
    "blacksmith",
    "poet",
    "monkey",
    "bear",
    "goat",
    "lion",
];

const OBJECTS: &[&str] = &[
    "book", "basket", "letter", "bread", "apple", "stone", "sword", "coin", "ring", "cup", "lamp", "key", "map",
    "rope", "box", "hat", "coat", "boat", "cart", "flower", "tree", "fish", "egg", "knife", "bell", "drum", "flag",
    "candle", "mirror", "blanket", "bottle", "chair", "table", "door", "window", "wheel", "shoe", "song", "story",
    "gift", "bag", "net", "pot", "horn", "feather",
];

const PLACES: &[&str] = &[
    "market", "river", "village", "forest", "mountain", "castle", "garden", "bridge", "church", "harbor", "field",
    "road", "city", "school", "kitchen", "tower", "valley", "island", "lake", "square", "well", "mill", "farm", "shop",
    "camp",
];

const TRANSITIVE: &[&str] = &[
    "saw",
    "carried",
    "found",
    "lost",
    "took",
    "gave",
    "bought",
    "sold",
    "made",
    "broke",
    "opened",
    "closed",
    "painted",
    "cleaned",
    "washed",
    "built",
    "stole",
    "hid",
    "threw",
    "caught",
    "dropped",
    "lifted",
    "pulled",
    "pushed",
    "kicked",
    "held",
    "watched",
    "followed",
    "helped",
    "called",
    "loved",
    "hated",
    "chose",
    "needed",
    "wanted",
    "kept",
    "brought",
    "sent",
    "counted",
    "fixed",
    "burned",
    "cut",
    "filled",
    "touched",
    "guarded",
    "visited",
    "remembered",
    "forgot",
    "ate",
    "drew",
];

const INTRANSITIVE: &[&str] = &[
    "slept", "ran", "walked", "laughed", "cried", "waited", "danced", "sang", "worked", "rested", "arrived", "left",
    "smiled", "shouted", "prayed",
];

const ADVERBS: &[&str] = &[
    "quickly",
    "slowly",
    "quietly",
    "loudly",
    "carefully",
    "happily",
    "sadly",
    "suddenly",
    "gently",
    "proudly",
    "bravely",
    "angrily",
    "secretly",
    "easily",
    "often",
    "never",
    "always",
    "again",
    "today",
    "yesterday",
    "soon",
    "finally",
    "nearly",
    "eagerly",
    "calmly",
];

const PREPOSITIONS: &[&str] =
    &["to", "from", "near", "behind", "under", "over", "inside", "across", "beside", "into", "through", "toward"];

const FUNCTION_WORDS: &[&str] = &["and", "with", "."];

/// The closed English-like vocabulary, sorted.
pub fn english_vocabulary() -> Vec<String> {
    let mut words: Vec<String> = [
        DETERMINERS,
        ADJECTIVES,
        AGENTS,
        OBJECTS,
        PLACES,
        TRANSITIVE,
        INTRANSITIVE,
        ADVERBS,
        PREPOSITIONS,
        FUNCTION_WORDS,
    ]
    .iter()
    .flat_map(|list| list.iter().map(|w| w.to_string()))
    .collect();
    words.sort();
    words.dedup();
    words
}

struct Generator {
    rng: ChaCha8Rng,
}

impl Generator {
    fn pick(&mut self, list: &[&str]) -> String {
        list.choose(&mut self.rng).expect("word lists are non-empty").to_string()
    }

    fn noun_phrase(&mut self, nouns: &[&str], out: &mut Vec<String>) {
        out.push(self.pick(DETERMINERS));
        if self.rng.gen_bool(0.4) {
            out.push(self.pick(ADJECTIVES));
        }
        out.push(self.pick(nouns));
    }

    fn sentence(&mut self) -> Sentence {
        let mut w = Vec::with_capacity(12);
        match self.rng.gen_range(0..7) {
            0 => {
                self.noun_phrase(AGENTS, &mut w);
                w.push(self.pick(TRANSITIVE));
                self.noun_phrase(OBJECTS, &mut w);
            }
            1 => {
                self.noun_phrase(AGENTS, &mut w);
                w.push(self.pick(TRANSITIVE));
                self.noun_phrase(OBJECTS, &mut w);
                w.push(self.pick(PREPOSITIONS));
                self.noun_phrase(PLACES, &mut w);
            }
            2 => {
                self.noun_phrase(AGENTS, &mut w);
                w.push(self.pick(ADVERBS));
                w.push(self.pick(TRANSITIVE));
                self.noun_phrase(OBJECTS, &mut w);
            }
            3 => {
                self.noun_phrase(AGENTS, &mut w);
                w.push(self.pick(INTRANSITIVE));
                w.push(self.pick(PREPOSITIONS));
                self.noun_phrase(PLACES, &mut w);
            }
            4 => {
                self.noun_phrase(AGENTS, &mut w);
                w.push(self.pick(INTRANSITIVE));
                w.push(self.pick(ADVERBS));
            }
            5 => {
                self.noun_phrase(AGENTS, &mut w);
                w.push("and".into());
                self.noun_phrase(AGENTS, &mut w);
                w.push(self.pick(TRANSITIVE));
                self.noun_phrase(OBJECTS, &mut w);
            }
            _ => {
                self.noun_phrase(AGENTS, &mut w);
                w.push(self.pick(TRANSITIVE));
                self.noun_phrase(OBJECTS, &mut w);
                w.push("with".into());
                self.noun_phrase(OBJECTS, &mut w);
            }
        }
        w.push(".".into());
        Sentence(w)
    }
}

/// `n` sentences from the template grammar; deterministic in `grammar_seed`.
/// Duplicates are possible; see [`generate_unique`].
pub fn generate_corpus(grammar_seed: u64, n: usize) -> Vec<Sentence> {
    let mut g = Generator { rng: ChaCha8Rng::seed_from_u64(grammar_seed) };
    (0..n).map(|_| g.sentence()).collect()
}

/// Up to `n` distinct sentences in first-seen order, drawing at most
/// `max_draws` candidates.
pub(crate) fn generate_unique(grammar_seed: u64, n: usize, max_draws: usize) -> Vec<Sentence> {
    let mut g = Generator { rng: ChaCha8Rng::seed_from_u64(grammar_seed) };
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for _ in 0..max_draws {
        if out.len() == n {
            break;
        }
        let s = g.sentence();
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}
