use crate::error::{invalid, Result};
use crate::syndata::LanguageInventory;

/// Character classes per language: each string lists the lowercase
/// characters mapped to the inventory entry at that position + 1 (entry 0 is
/// silence). Anything not listed, spaces and punctuation included, is silence.
///
/// | tag | a | e | i | o | u | 6 | 7 | 8 | 9 | 10 | 11 |
/// |-----|---|---|---|---|---|---|---|---|---|----|----|
/// | en  | a | e | i y | o | u w | m n | b p f v | s z c x | t d | k g q h j | l r |
/// | zh  | a | o | e | i y | u w | v ü | n m l r | s c | z j d t | x h f | q k g b p |
/// | es  | a á | e é | i í y | o ó | u ú ü w | r | l | ñ n | j g h k q c x | s z t d | p b m v f |
const CLASSES: &[(&str, [&str; 11])] = &[
    ("en", ["a", "e", "iy", "o", "uw", "mn", "bpfv", "szcx", "td", "kgqhj", "lr"]),
    ("zh", ["a", "o", "e", "iy", "uw", "vü", "nmlr", "sc", "zjdt", "xhf", "qkgbp"]),
    ("es", ["aá", "eé", "iíy", "oó", "uúüw", "r", "l", "ñn", "jghkqcx", "sztd", "pbmvf"]),
];

/// Deterministic text-to-phoneme stub: one phoneme per character through the
/// language's class table.
pub fn text_to_phonemes(text: &str, inventory: &LanguageInventory) -> Result<Vec<usize>> {
    if text.trim().is_empty() {
        return Err(invalid("text is empty"));
    }
    let classes = CLASSES
        .iter()
        .find(|(tag, _)| *tag == inventory.language_tag)
        .map(|(_, c)| c)
        .ok_or_else(|| invalid(format!("no character table for language `{}`", inventory.language_tag)))?;
    Ok(text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|ch| match classes.iter().position(|set| set.contains(ch)) {
            Some(k) if k + 1 < inventory.len() => inventory.id_of(k + 1),
            _ => inventory.silence_id(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_language_has_a_table() {
        for tag in crate::syndata::language_tags() {
            let inv = LanguageInventory::lookup(tag).unwrap();
            let ids = text_to_phonemes("hola mundo", &inv).unwrap();
            assert!(ids.iter().all(|&i| inv.contains(i)));
        }
    }

    #[test]
    fn case_and_punctuation() {
        let inv = LanguageInventory::lookup("en").unwrap();
        assert_eq!(text_to_phonemes("A", &inv).unwrap(), text_to_phonemes("a", &inv).unwrap());
        assert_eq!(text_to_phonemes("!", &inv).unwrap(), vec![inv.silence_id()]);
        assert!(text_to_phonemes("  ", &inv).is_err());
    }
}
