//! Undoing over-eager corrections.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::segment::sentence_split;
use crate::text::is_emoji;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RevertRules {
    /// Revert wholesale when the sentence count changed.
    pub sentence_count: bool,
    /// Restore `#hashtag` and `@mention` tokens.
    pub tags: bool,
    /// Restore emoji the corrector dropped.
    pub emoji: bool,
}

impl Default for RevertRules {
    fn default() -> Self {
        RevertRules { sentence_count: true, tags: true, emoji: true }
    }
}

fn is_tag(token: &str) -> bool {
    token.starts_with(['#', '@'])
}

fn restore_tags(corrected: &str, parent: &str) -> Option<String> {
    let parent_tokens: Vec<&str> = parent.split_whitespace().collect();
    let mut tokens: Vec<&str> = corrected.split_whitespace().collect();
    let mut changed = false;
    if tokens.len() == parent_tokens.len() {
        for (tok, &orig) in tokens.iter_mut().zip(&parent_tokens) {
            if (is_tag(orig) || is_tag(tok)) && *tok != orig {
                *tok = orig;
                changed = true;
            }
        }
    } else {
        let originals = parent_tokens.iter().filter(|t| is_tag(t));
        let slots = tokens.iter_mut().filter(|t| is_tag(t));
        for (tok, &orig) in slots.zip(originals) {
            if *tok != orig {
                *tok = orig;
                changed = true;
            }
        }
    }
    changed.then(|| tokens.join(" "))
}

fn emoji_counts(text: &str) -> HashMap<char, usize> {
    let mut counts = HashMap::new();
    for c in text.chars().filter(|&c| is_emoji(c)) {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
}

/// Puts back emoji present in the parent but missing from the correction:
/// a standalone emoji token is reinserted at its parent index, an attached
/// one is re-attached to the same base word when that word survives.
fn restore_emoji(corrected: &str, parent: &str) -> Option<String> {
    let mut deficit = emoji_counts(parent);
    for (c, n) in emoji_counts(corrected) {
        if let Some(d) = deficit.get_mut(&c) {
            *d = d.saturating_sub(n);
        }
    }
    if deficit.values().all(|&d| d == 0) {
        return None;
    }
    let mut tokens: Vec<String> = corrected.split_whitespace().map(str::to_string).collect();
    let mut reattached = vec![false; tokens.len()];
    for (i, orig) in parent.split_whitespace().enumerate() {
        let mut needed = String::new();
        for c in orig.chars().filter(|&c| is_emoji(c)) {
            if let Some(d) = deficit.get_mut(&c).filter(|d| **d > 0) {
                *d -= 1;
                needed.push(c);
            }
        }
        if needed.is_empty() {
            continue;
        }
        let base: String = orig.chars().filter(|&c| !is_emoji(c)).collect();
        let target =
            (!base.is_empty()).then(|| (0..tokens.len()).find(|&j| !reattached[j] && tokens[j] == base)).flatten();
        match target {
            Some(j) => {
                let leading = orig.chars().next().is_some_and(is_emoji);
                tokens[j] = if leading { format!("{needed}{}", tokens[j]) } else { format!("{}{needed}", tokens[j]) };
                reattached[j] = true;
            }
            None => {
                let at = i.min(tokens.len());
                tokens.insert(at, needed);
                reattached.insert(at, true);
            }
        }
    }
    Some(tokens.join(" "))
}

const MAX_ROUNDS: usize = 4;

fn round(text: &str, parent: &str, parent_sentences: usize, rules: &RevertRules) -> String {
    if rules.sentence_count && sentence_split(text).len() != parent_sentences {
        return parent.to_string();
    }
    let mut text = text.to_string();
    if rules.tags {
        if let Some(t) = restore_tags(&text, parent) {
            text = t;
        }
    }
    if rules.emoji {
        if let Some(t) = restore_emoji(&text, parent) {
            text = t;
        }
    }
    text
}

/// Applies the enabled rules to a corrected text until none of them fires.
/// The result is a fixpoint, so applying this twice equals applying it once;
/// a correction that does not settle falls back to the parent.
pub fn apply_reverts(corrected: &str, parent: &str, rules: &RevertRules) -> String {
    let parent_sentences = sentence_split(parent).len();
    let mut text = corrected.to_string();
    for _ in 0..MAX_ROUNDS {
        let next = round(&text, parent, parent_sentences, rules);
        if next == text {
            return text;
        }
        text = next;
    }
    parent.to_string()
}
