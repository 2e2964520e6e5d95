use std::collections::HashMap;

/// Words known to the text-embedding table. Index 0 is the shared
/// unknown-word entry.
const WORDS: &[&str] = &[
    "<unk>",
    "add",
    "remove",
    "background",
    "sound",
    "as",
    "with",
    "snr",
    "db",
    "noise",
    "reverberation",
    "room",
    "size",
    "small",
    "medium",
    "large",
    "rain",
    "dog",
    "barking",
    "traffic",
    "babble",
];

/// Lowercase, whitespace-split tokens of a prompt.
pub fn tokenize(prompt: &str) -> Vec<String> {
    prompt.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Fixed word list mapping tokens to embedding-table rows.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    index: HashMap<&'static str, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self { index: WORDS.iter().enumerate().map(|(i, w)| (*w, i)).collect() }
    }
}

impl Vocabulary {
    pub const UNK: usize = 0;

    pub fn len(&self) -> usize {
        WORDS.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn encode(&self, prompt: &str) -> Vec<usize> {
        tokenize(prompt).iter().map(|t| self.id(t)).collect()
    }
}

/// Looks up each prompt token in a row-major embedding table of the given
/// width. An empty prompt yields an empty sequence.
pub fn embed_text(prompt: &str, vocab: &Vocabulary, table: &[f64], width: usize) -> Vec<Vec<f64>> {
    vocab
        .encode(prompt)
        .into_iter()
        .map(|id| table[id * width..(id + 1) * width].to_vec())
        .collect()
}
