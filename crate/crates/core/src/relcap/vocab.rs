use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SOS: &str = "<s>";
pub const EOS: &str = "</s>";

const ADJECTIVES: [&str; 12] = [
    "red", "blue", "green", "white", "black", "small", "large", "wooden", "metal", "old", "new", "bright",
];

const PREDICATES: [&str; 10] = [
    "on", "near", "behind", "holding", "wearing", "under", "beside", "above", "in", "with",
];

/// Concepts and their interchangeable nouns.
const CONCEPTS: [&[&str]; 20] = [
    &["table", "desk"],
    &["man", "person", "guy"],
    &["car", "vehicle", "auto"],
    &["dog", "puppy"],
    &["cup", "mug"],
    &["shirt", "top", "tee"],
    &["road", "street"],
    &["tree", "plant"],
    &["building", "house"],
    &["window", "pane"],
    &["chair", "seat"],
    &["bag", "purse", "sack"],
    &["hat", "cap"],
    &["sign", "board"],
    &["plate", "dish"],
    &["bike", "bicycle", "cycle"],
    &["phone", "cellphone"],
    &["lamp", "light"],
    &["couch", "sofa"],
    &["boat", "ship"],
];

/// Part-of-speech classes of caption words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Subj,
    Pred,
    Obj,
}

impl PosTag {
    pub const ALL: [PosTag; 3] = [PosTag::Subj, PosTag::Pred, PosTag::Obj];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosTag::Subj => "SUBJ",
            PosTag::Pred => "PRED",
            PosTag::Obj => "OBJ",
        })
    }
}

/// The closed toy vocabulary.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Noun token ids per concept.
    concepts: Vec<Vec<usize>>,
    adjectives: Vec<usize>,
    predicates: Vec<usize>,
}

impl Vocabulary {
    pub fn toy() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            concepts: Vec::new(),
            adjectives: Vec::new(),
            predicates: Vec::new(),
        };
        v.push(SOS);
        v.push(EOS);
        v.adjectives = ADJECTIVES.iter().map(|w| v.push(w)).collect();
        v.predicates = PREDICATES.iter().map(|w| v.push(w)).collect();
        v.concepts = CONCEPTS
            .iter()
            .map(|group| group.iter().map(|w| v.push(w)).collect())
            .collect();
        v
    }

    fn push(&mut self, word: &str) -> usize {
        let id = self.tokens.len();
        self.tokens.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        1
    }

    pub fn word(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::Domain(format!("word {word:?} is not in the vocabulary")))
    }

    pub fn ids(&self, words: &[String]) -> Result<Vec<usize>> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn synonyms(&self, concept: usize) -> &[usize] {
        &self.concepts[concept]
    }

    /// Largest synonym group size.
    pub fn max_synonyms(&self) -> usize {
        self.concepts.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn adjectives(&self) -> &[usize] {
        &self.adjectives
    }

    pub fn predicates(&self) -> &[usize] {
        &self.predicates
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::toy()
    }
}
