//! Quotation-mark normalization for the target language.

/// Opening and closing glyphs for one language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuoteStyle {
    pub open: char,
    pub close: char,
}

/// `is` uses low-high „…“, `en` uses “…”; other languages are left alone.
pub fn quote_style(lang: &str) -> Option<QuoteStyle> {
    match lang {
        "is" => Some(QuoteStyle { open: '„', close: '“' }),
        "en" => Some(QuoteStyle { open: '“', close: '”' }),
        _ => None,
    }
}

fn can_open(c: char) -> bool {
    matches!(c, '"' | '“' | '„')
}

fn can_close(c: char) -> bool {
    matches!(c, '"' | '”' | '“')
}

/// Rewrites each paired quotation in `style`. With no quote open, `"`, `“`
/// or `„` opens one; with one open, `"`, `”` or `“` closes it. Unpaired
/// marks and apostrophes are untouched. Idempotent.
pub fn fix_quotes(text: &str, style: QuoteStyle) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    let mut open: Option<usize> = None;
    for i in 0..chars.len() {
        let c = chars[i];
        match open {
            None if can_open(c) => open = Some(i),
            Some(at) if can_close(c) => {
                chars[at] = style.open;
                chars[i] = style.close;
                open = None;
            }
            _ => {}
        }
    }
    chars.into_iter().collect()
}

pub fn fix_punctuation(text: &str, target_lang: &str) -> String {
    match quote_style(target_lang) {
        Some(style) => fix_quotes(text, style),
        None => text.to_string(),
    }
}
