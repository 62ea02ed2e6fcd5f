use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
/// End of a model response.
pub const EOS: TokenId = 2;
/// Separates a context from the input that follows it.
pub const SEP: TokenId = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<sep>"];
pub const UNK_SYMBOL: &str = "<unk>";
pub const MAX_VOCAB: usize = 512;

/// Literal prefix of an experience item; tokenized as a single symbol.
pub const ITEM_PREFIX: &str = "- EXPERIENCE ITEM:";

pub const ACTIONS: [&str; 4] = ["up", "down", "left", "right"];
/// Rounds covered by the round-tagged move symbols (`3:down`, `3:down!`).
pub const TAGGED_ROUNDS: usize = 8;

/// Bijective symbol ↔ id table shared by teacher and student.
///
/// Ids 0–3 are the reserved symbols in [`RESERVED`]. Symbols may contain
/// spaces; those are matched as whole-word phrases during encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    symbols: Vec<String>,
    ids: HashMap<String, TokenId>,
    /// multi-word symbols, longest first
    phrases: Vec<(Vec<String>, TokenId)>,
    unk: Option<TokenId>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(symbols: Vec<String>) -> Result<Self> {
        Self::new(symbols)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.symbols
    }
}

impl Vocabulary {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() > MAX_VOCAB {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {} symbols exceeds {MAX_VOCAB}",
                symbols.len()
            )));
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if symbols.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::InvalidArgument(format!("id {i} must be the reserved symbol {r}")));
            }
        }
        let mut ids = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.contains('\n') {
                return Err(Error::InvalidArgument(format!("bad symbol {s:?}")));
            }
            if ids.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate symbol {s:?}")));
            }
        }
        let mut phrases: Vec<(Vec<String>, TokenId)> = symbols
            .iter()
            .enumerate()
            .filter(|(_, s)| s.contains(' '))
            .map(|(i, s)| (s.split_whitespace().map(str::to_owned).collect(), i as TokenId))
            .collect();
        phrases.sort_by_key(|p| std::cmp::Reverse(p.0.len()));
        let unk = ids.get(UNK_SYMBOL).copied();
        Ok(Self { symbols, ids, phrases, unk })
    }

    /// Reserved symbols, `<unk>`, then `t5 … t{size-1}`. Used for tests that
    /// need a specific vocabulary size.
    pub fn synthetic(size: usize) -> Result<Self> {
        if size < RESERVED.len() + 1 {
            return Err(Error::InvalidArgument(format!("synthetic vocabulary needs ≥ 5 symbols, got {size}")));
        }
        let mut symbols: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        symbols.push(UNK_SYMBOL.into());
        symbols.extend((symbols.len()..size).map(|i| format!("t{i}")));
        Self::new(symbols)
    }

    /// The desk-scale vocabulary covering every built-in task.
    pub fn standard() -> Self {
        let mut s: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        s.push(UNK_SYMBOL.into());
        s.extend((0..10).map(|d| d.to_string()));
        s.extend(('A'..='J').map(|c| c.to_string()));
        for from in 0..10 {
            for to in 0..10 {
                s.push(format!("{from}→{to}"));
            }
        }
        for w in ["KEY:", "→", "+", "-", "="] {
            s.push(w.into());
        }
        // board glyphs not already present
        for g in [".", "P", "H", "G", "#", "O", "T", "B", "*", "p", "b", "@"] {
            if !s.iter().any(|x| x == g) {
                s.push(g.into());
            }
        }
        for w in [
            "status:", "running", "won", "lost", "WON", "LOST", "round", "error:", "no", "action", "recognized",
        ] {
            s.push(w.into());
        }
        s.extend(ACTIONS.iter().map(|a| a.to_string()));
        for r in 1..=TAGGED_ROUNDS {
            for a in ACTIONS {
                s.push(format!("{r}:{a}"));
            }
        }
        for r in 1..=TAGGED_ROUNDS {
            for a in ACTIONS {
                s.push(format!("{r}:{a}!"));
            }
        }
        s.push(ITEM_PREFIX.into());
        for w in ["win", "avoid", "hole", "wall", "deadlock"] {
            s.push(w.into());
        }
        Self::new(s).expect("standard vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn unk(&self) -> Option<TokenId> {
        self.unk
    }

    /// Whitespace-separated words; multi-word symbols first, then whole
    /// words, then single characters, then `<unk>`. Characters with no symbol
    /// and no `<unk>` in the vocabulary are dropped.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut out = Vec::with_capacity(words.len());
        let mut i = 0;
        'outer: while i < words.len() {
            for (phrase, id) in &self.phrases {
                let n = phrase.len();
                if i + n <= words.len() && words[i..i + n].iter().zip(phrase).all(|(w, p)| *w == p) {
                    out.push(*id);
                    i += n;
                    continue 'outer;
                }
            }
            let w = words[i];
            if let Some(id) = self.id(w) {
                out.push(id);
            } else {
                let mut buf = [0u8; 4];
                for ch in w.chars() {
                    match self.id(ch.encode_utf8(&mut buf)) {
                        Some(id) => out.push(id),
                        None => out.extend(self.unk),
                    }
                }
            }
            i += 1;
        }
        out
    }

    /// Space-joined symbols.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.symbol(id).unwrap_or(UNK_SYMBOL))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Token count of `text` under this vocabulary.
    pub fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id as usize >= self.len()) {
            Some(&id) => Err(Error::TokenOutOfRange { id, size: self.len() }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::standard();
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<bos>"), Some(BOS));
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert_eq!(v.id("<sep>"), Some(SEP));
        assert!(v.len() <= MAX_VOCAB);
    }

    #[test]
    fn bijective_map() {
        let v = Vocabulary::standard();
        for (i, s) in v.symbols().iter().enumerate() {
            assert_eq!(v.id(s), Some(i as TokenId));
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_reserved() {
        let mut s: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        s.push("a".into());
        s.push("a".into());
        assert!(Vocabulary::new(s).is_err());
        assert!(Vocabulary::new(vec!["x".into()]).is_err());
    }

    #[test]
    fn encodes_phrases_words_and_chars() {
        let v = Vocabulary::standard();
        let ids = v.encode("- EXPERIENCE ITEM: win 1:right 2:down");
        assert_eq!(v.decode(&ids), "- EXPERIENCE ITEM: win 1:right 2:down");
        assert_eq!(ids.len(), 4);
        let grid = v.encode("P.H\nstatus: running");
        assert_eq!(v.decode(&grid), "P . H status: running");
        assert_eq!(v.encode("KEY: 0→3 1→9").len(), 3);
        assert_eq!(v.encode("zz"), vec![v.unk().unwrap(); 2]);
    }

    #[test]
    fn serde_roundtrip() {
        let v = Vocabulary::standard();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }
}
