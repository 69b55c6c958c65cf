use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::binio::canonical_json;
use crate::embedlink::TokenSequence;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Words that instructions are built from; always at ids 2.. when the
/// vocabulary is large enough to hold them.
pub const INSTRUCTION_WORDS: [&str; 7] = ["repeat", "the", "following", "words", "transcribe", "audio", "please"];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Dense token/id map with `<pad>` = 0 and `<unk>` = 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyVocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl ToyVocab {
    /// Specials first, then `words` in order.
    pub fn new<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(words.iter().map(|w| w.as_ref().to_string()));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Input("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if i >= 2 && (t.is_empty() || normalize_words(t).ne(std::iter::once(t.clone()))) {
                return Err(Error::Input(format!("vocabulary word {t:?} is not a normalized token")));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary word {t:?}")));
            }
        }
        Ok(ToyVocab { tokens, ids })
    }

    /// Instruction words followed by pronounceable CV-syllable words,
    /// `vocab_size` entries in total.
    pub fn synthetic(vocab_size: usize) -> Result<Self> {
        if vocab_size < 3 {
            return Err(Error::Config(format!("vocab_size must be at least 3, got {vocab_size}")));
        }
        let content = vocab_size - 2;
        let mut words: Vec<String> = INSTRUCTION_WORDS.iter().take(content).map(|w| w.to_string()).collect();
        let mut j = 0;
        while words.len() < content {
            let w = syllable_word(j);
            if !INSTRUCTION_WORDS.contains(&w.as_str()) {
                words.push(w);
            }
            j += 1;
        }
        Self::new(&words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Ids of ordinary words, excluding the two specials.
    pub fn content_ids(&self) -> std::ops::Range<u32> {
        2..self.tokens.len() as u32
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        TokenSequence::new(normalize_words(text).map(|w| self.id(&w)).collect())
    }

    /// Space-joined tokens; unknown ids render as `<unk>`.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Canonical JSON object `{token: id}`.
    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<&str, u32> = self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
        canonical_json(&map)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, u32> = serde_json::from_str(text)?;
        let mut tokens = vec![None; map.len()];
        for (t, id) in map {
            let slot = tokens.get_mut(id as usize).ok_or_else(|| {
                Error::Input(format!("vocabulary ids must be dense; {t:?} has id {id}"))
            })?;
            if slot.replace(t).is_some() {
                return Err(Error::Input(format!("vocabulary id {id} assigned twice")));
            }
        }
        Self::from_tokens(tokens.into_iter().map(|t| t.expect("dense ids")).collect())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Lowercased maximal alphanumeric runs.
pub fn normalize_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

fn syllable_word(mut j: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut w = String::new();
    // At least two syllables; more once the two-syllable space runs out.
    let mut syllables = 0;
    while syllables < 2 || j > 0 {
        let s = j % base;
        j /= base;
        w.push(CONSONANTS[s / VOWELS.len()] as char);
        w.push(VOWELS[s % VOWELS.len()] as char);
        syllables += 1;
    }
    w
}

pub fn tokenize(text: &str, vocab: &ToyVocab) -> TokenSequence {
    vocab.tokenize(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        let v = ToyVocab::new(&["x", "the", "cat"]).unwrap();
        assert_eq!(v.id("the"), 3);
        let mut v2 = ToyVocab::new(&["the", "cat"]).unwrap();
        assert_eq!(v2.tokenize("The cat.").ids(), &[2, 3]);
        assert!(v2.tokenize("").is_empty());
        assert_eq!(v2.tokenize("zzz").ids(), &[UNK_ID]);
        v2 = ToyVocab::new(&["a", "b"]).unwrap();
        assert_eq!(v2.tokenize("A,b;  a!b").ids(), &[2, 3, 2, 3]);
    }

    #[test]
    fn synthetic_vocab_is_dense_and_distinct() {
        let v = ToyVocab::synthetic(200).unwrap();
        assert_eq!(v.len(), 200);
        assert_eq!(v.token(2), Some("repeat"));
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), i as u32);
        }
        assert_eq!(ToyVocab::synthetic(4).unwrap().tokens(), &["<pad>", "<unk>", "repeat", "the"]);
        assert!(ToyVocab::synthetic(2).is_err());
    }

    #[test]
    fn detokenize_then_tokenize_is_stable() {
        let v = ToyVocab::synthetic(40).unwrap();
        let ids = v.tokenize("please repeat the following words");
        let again = v.tokenize(&v.detokenize(ids.ids()));
        assert_eq!(again, ids);
    }

    #[test]
    fn json_roundtrip() {
        let v = ToyVocab::synthetic(12).unwrap();
        let json = v.to_json().unwrap();
        assert!(json.starts_with(r#"{"<pad>":0,"<unk>":1,"#));
        assert_eq!(ToyVocab::from_json(&json).unwrap(), v);
        assert!(ToyVocab::from_json(r#"{"<pad>":0,"<unk>":2}"#).is_err());
    }

    #[test]
    fn rejects_bad_words() {
        assert!(ToyVocab::new(&["Cat"]).is_err());
        assert!(ToyVocab::new(&["a b"]).is_err());
        assert!(ToyVocab::new(&["a", "a"]).is_err());
    }
}
