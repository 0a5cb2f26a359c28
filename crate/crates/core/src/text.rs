//! Character classes and tokenization shared across stages.

/// Icelandic letters outside ASCII, lowercase and uppercase.
pub const ICELANDIC_LETTERS: &str = "áðéíóúýþæöÁÐÉÍÓÚÝÞÆÖ";

/// Maximal runs of non-whitespace, original case.
pub fn raw_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

/// Word tokens: maximal runs of non-whitespace codepoints, lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn codepoints(text: &str) -> usize {
    text.chars().count()
}

/// Emoji and pictographic codepoints, including the joiners and selectors
/// that glue emoji sequences together.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2B05..=0x2B07
        | 0x2B1B..=0x2B1C
        | 0x2B50
        | 0x2B55
        | 0x231A..=0x231B
        | 0x23E9..=0x23FA
        | 0x200D
        | 0xFE0F
        | 0xE0020..=0xE007F)
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_space(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercases and strips the accents of Latin letters used in Icelandic, and
/// maps every quotation glyph to `"`. Used by the stub scorers so that a
/// pseudo-translation that only re-accents letters still looks similar.
pub fn fold_char(c: char) -> char {
    match c {
        'á' | 'Á' | 'à' | 'â' | 'ä' => 'a',
        'é' | 'É' | 'è' | 'ê' | 'ë' => 'e',
        'í' | 'Í' | 'ì' | 'î' | 'ï' => 'i',
        'ó' | 'Ó' | 'ö' | 'Ö' | 'ò' | 'ô' => 'o',
        'ú' | 'Ú' | 'ù' | 'û' | 'ü' => 'u',
        'ý' | 'Ý' | 'ÿ' => 'y',
        'ð' | 'Ð' => 'd',
        'þ' | 'Þ' => 't',
        'æ' | 'Æ' => 'a',
        '„' | '“' | '”' | '«' | '»' => '"',
        other => other.to_lowercase().next().unwrap_or(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat sat."), ["the", "cat", "sat."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a  b\tc"), ["a", "b", "c"]);
    }

    #[test]
    fn emoji_detection() {
        assert!(is_emoji('😀'));
        assert!(is_emoji('🎉'));
        assert!(is_emoji('☀'));
        assert!(!is_emoji('a'));
        assert!(!is_emoji('þ'));
        assert!(!is_emoji('„'));
    }

    #[test]
    fn fold_maps_icelandic_to_base() {
        let folded: String = "Þórður „Hæ“".chars().map(fold_char).collect();
        assert_eq!(folded, "tordur \"ha\"");
    }
}
