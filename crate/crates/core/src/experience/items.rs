use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{TokenId, Vocabulary, ITEM_PREFIX};

/// Where an item came from: the problem it was extracted from and the
/// accumulation step (1-based) at which it was appended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub problem: usize,
    pub step: usize,
}

/// One line of experience, prefix included.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperienceItem {
    text: String,
    origin: Option<Origin>,
}

impl ExperienceItem {
    pub fn new(text: impl Into<String>, origin: Option<Origin>) -> Result<Self> {
        let text = text.into();
        if text.contains('\n') || text.contains('\r') {
            return Err(Error::Experience(format!("item spans several lines: {text:?}")));
        }
        if !text.starts_with(ITEM_PREFIX) {
            return Err(Error::Experience(format!("item lacks the {ITEM_PREFIX:?} prefix: {text:?}")));
        }
        Ok(Self { text, origin })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn origin(&self) -> Option<Origin> {
        self.origin
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = Some(origin);
        self
    }
}

/// Lines whose trimmed form starts with the item prefix, trimmed, in order.
pub fn parse_experience_items(text: &str) -> Vec<ExperienceItem> {
    text.lines()
        .map(str::trim)
        .filter(|l| l.starts_with(ITEM_PREFIX))
        .map(|l| ExperienceItem { text: l.to_owned(), origin: None })
        .collect()
}

/// Ordered experience items under a token budget.
///
/// Overflow drops the newest items. Once an item has been dropped the
/// context is closed and every later item is dropped too, so the kept items
/// are always the longest prefix of everything offered whose running token
/// count fits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperienceContext {
    items: Vec<ExperienceItem>,
    budget: usize,
    token_count: usize,
    dropped: usize,
}

impl ExperienceContext {
    pub fn empty(budget: usize) -> Self {
        Self { items: Vec::new(), budget, token_count: 0, dropped: 0 }
    }

    pub fn items(&self) -> &[ExperienceItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    /// Items refused because of the budget so far.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn is_closed(&self) -> bool {
        self.dropped > 0
    }

    /// A new context with `new_items` appended. Errors, leaving nothing
    /// changed, when any single item is larger than the whole budget.
    pub fn accumulate(&self, new_items: &[ExperienceItem], vocab: &Vocabulary) -> Result<Self> {
        let counts: Vec<usize> = new_items.iter().map(|i| vocab.count(&i.text)).collect();
        if let Some((item, &n)) = new_items.iter().zip(&counts).find(|(_, &n)| n > self.budget) {
            return Err(Error::Experience(format!(
                "item of {n} tokens exceeds the budget of {}: {:?}",
                self.budget, item.text
            )));
        }
        let mut next = self.clone();
        for (item, n) in new_items.iter().zip(counts) {
            if next.is_closed() || next.token_count + n > next.budget {
                next.dropped += 1;
            } else {
                next.token_count += n;
                next.items.push(item.clone());
            }
        }
        Ok(next)
    }

    pub fn contains_text(&self, text: &str) -> bool {
        self.items.iter().any(|i| i.text == text)
    }

    /// Items joined by newlines; empty for an empty context.
    pub fn render(&self) -> String {
        self.items.iter().map(|i| i.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    /// The rendered block under `vocab`; its length equals
    /// [`token_count`](Self::token_count).
    pub fn tokens(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        vocab.encode(&self.render())
    }

    /// The newest items dropped until the rendered block fits in
    /// `max_tokens`. Used to respect a model's sequence limit, which is
    /// usually far below the budget.
    pub fn truncated(&self, max_tokens: usize, vocab: &Vocabulary) -> Self {
        let mut out = Self { items: Vec::new(), token_count: 0, ..self.clone() };
        for item in &self.items {
            let n = vocab.count(&item.text);
            if out.token_count + n > max_tokens {
                break;
            }
            out.token_count += n;
            out.items.push(item.clone());
        }
        out.dropped += self.items.len() - out.items.len();
        out
    }
}
