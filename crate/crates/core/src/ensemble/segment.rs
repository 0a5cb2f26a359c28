//! Rule-based sentence splitting.

use crate::text::normalize_space;

/// Tokens that end in a period without ending a sentence. Matched
/// case-sensitively after leading brackets and quotes are stripped.
pub const ABBREVIATIONS: &[&str] = &[
    "Hr.", "Dr.", "Mr.", "Mrs.", "Ms.", "St.", "Prof.", "t.d.", "o.s.frv.", "þ.e.", "sbr.", "nr.", "kl.", "e.g.",
    "i.e.", "etc.",
];

const OPENING: &[char] = &['"', '„', '“', '«', '‘', '\'', '(', '['];
const CLOSING: &[char] = &['"', '“', '”', '»', '’', '\'', ')', ']'];

fn ends_sentence(token: &str) -> bool {
    let core = token.trim_end_matches(CLOSING);
    if !core.ends_with(['.', '!', '?']) {
        return false;
    }
    let bare = token.trim_start_matches(OPENING).trim_end_matches(CLOSING);
    !ABBREVIATIONS.contains(&bare)
}

fn opens_sentence(token: &str) -> bool {
    match token.chars().next() {
        Some(c) if OPENING.contains(&c) && c != '(' && c != '[' => true,
        Some(c) => c.is_uppercase(),
        None => false,
    }
}

/// Splits after `.`, `!` or `?` (optionally followed by closing quotes) when
/// the next token starts with an uppercase letter or an opening quote.
/// Joining the result with single spaces gives the whitespace-normalized
/// input; an empty or blank text has no sentences.
pub fn sentence_split(text: &str) -> Vec<String> {
    let normalized = normalize_space(text);
    if normalized.is_empty() {
        return Vec::new();
    }
    let tokens: Vec<&str> = normalized.split(' ').collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..tokens.len() - 1 {
        if ends_sentence(tokens[i]) && opens_sentence(tokens[i + 1]) {
            sentences.push(tokens[start..=i].join(" "));
            start = i + 1;
        }
    }
    sentences.push(tokens[start..].join(" "));
    sentences
}
