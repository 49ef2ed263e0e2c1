use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global id of the CTC blank, shared by every language.
pub const BLANK_ID: usize = 0;

/// Articulatory facts the generators need about one phoneme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhonemeInfo {
    pub symbol: &'static str,
    /// Target mouth opening in `[0, 1]`.
    pub aperture: f64,
    pub voiced: bool,
}

const fn ph(symbol: &'static str, aperture: f64, voiced: bool) -> PhonemeInfo {
    PhonemeInfo { symbol, aperture, voiced }
}

/// Per-language phoneme tables. The first entry of each is that language's
/// silence.
const TABLES: &[(&str, &[PhonemeInfo])] = &[
    (
        "en",
        &[
            ph("sil", 0.0, false),
            ph("a", 1.0, true),
            ph("e", 0.7, true),
            ph("i", 0.4, true),
            ph("o", 0.85, true),
            ph("u", 0.5, true),
            ph("m", 0.02, true),
            ph("b", 0.04, true),
            ph("s", 0.25, false),
            ph("t", 0.3, false),
            ph("k", 0.35, false),
            ph("l", 0.3, true),
        ],
    ),
    (
        "zh",
        &[
            ph("sil", 0.0, false),
            ph("a", 1.0, true),
            ph("o", 0.8, true),
            ph("e", 0.65, true),
            ph("i", 0.35, true),
            ph("u", 0.45, true),
            ph("v", 0.4, true),
            ph("n", 0.25, true),
            ph("sh", 0.3, false),
            ph("zh", 0.3, false),
            ph("x", 0.2, false),
            ph("q", 0.28, false),
        ],
    ),
    (
        "es",
        &[
            ph("sil", 0.0, false),
            ph("a", 0.95, true),
            ph("e", 0.7, true),
            ph("i", 0.4, true),
            ph("o", 0.8, true),
            ph("u", 0.5, true),
            ph("r", 0.35, true),
            ph("rr", 0.4, true),
            ph("ny", 0.3, true),
            ph("j", 0.35, false),
            ph("ch", 0.3, false),
            ph("p", 0.03, false),
        ],
    ),
];

/// Phoneme inventory of one language. Its symbols occupy the contiguous global
/// id range `first_id .. first_id + phonemes.len()`; id `blank_id` is the CTC
/// blank shared across languages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageInventory {
    pub language_tag: String,
    pub phonemes: Vec<String>,
    pub blank_id: usize,
    pub first_id: usize,
}

impl LanguageInventory {
    pub fn lookup(tag: &str) -> Result<Self> {
        let mut first_id = BLANK_ID + 1;
        for (lang, table) in TABLES {
            if *lang == tag {
                return Ok(Self {
                    language_tag: tag.to_string(),
                    phonemes: table.iter().map(|p| p.symbol.to_string()).collect(),
                    blank_id: BLANK_ID,
                    first_id,
                });
            }
            first_id += table.len();
        }
        Err(Error::Lookup(format!("language tag `{tag}` is not registered (known: {})", language_tags().join(", "))))
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn silence_id(&self) -> usize {
        self.first_id
    }

    pub fn id_of(&self, local: usize) -> usize {
        assert!(local < self.phonemes.len());
        self.first_id + local
    }

    pub fn ids(&self) -> std::ops::Range<usize> {
        self.first_id..self.first_id + self.phonemes.len()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids().contains(&id)
    }
}

/// Tags of every registered language, in id order.
pub fn language_tags() -> Vec<&'static str> {
    TABLES.iter().map(|(t, _)| *t).collect()
}

/// Size of the global vocabulary including the blank.
pub fn vocab_size() -> usize {
    1 + TABLES.iter().map(|(_, t)| t.len()).sum::<usize>()
}

/// Articulation of a global phoneme id. The blank behaves like silence.
pub fn phoneme_info(id: usize) -> Result<PhonemeInfo> {
    if id == BLANK_ID {
        return Ok(TABLES[0].1[0]);
    }
    let mut base = BLANK_ID + 1;
    for (_, table) in TABLES {
        if id < base + table.len() {
            return Ok(table[id - base]);
        }
        base += table.len();
    }
    Err(Error::Validation(format!("phoneme id {id} outside vocabulary of {}", vocab_size())))
}

pub fn is_silence(id: usize) -> bool {
    phoneme_info(id).map(|p| p.symbol == "sil").unwrap_or(false)
}

/// Human-readable symbol for logs, e.g. `en:a`.
pub fn describe(id: usize) -> String {
    if id == BLANK_ID {
        return "<blank>".into();
    }
    let mut base = BLANK_ID + 1;
    for (lang, table) in TABLES {
        if id < base + table.len() {
            return format!("{lang}:{}", table[id - base].symbol);
        }
        base += table.len();
    }
    format!("<{id}?>")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inventories_are_disjoint_and_valid() {
        let invs: Vec<_> = language_tags().iter().map(|t| LanguageInventory::lookup(t).unwrap()).collect();
        for (i, a) in invs.iter().enumerate() {
            assert!(a.len() >= 3);
            assert!(a.blank_id < vocab_size());
            let mut syms = a.phonemes.clone();
            syms.sort();
            syms.dedup();
            assert_eq!(syms.len(), a.len(), "symbols unique");
            for b in &invs[i + 1..] {
                assert!(a.ids().all(|id| !b.contains(id)));
            }
            assert!(!a.contains(BLANK_ID));
        }
        assert_eq!(invs.last().unwrap().ids().end, vocab_size());
    }

    #[test]
    fn unknown_language_is_lookup_error() {
        assert!(matches!(LanguageInventory::lookup("xx"), Err(Error::Lookup(_))));
    }

    #[test]
    fn silence_has_zero_aperture() {
        for t in language_tags() {
            let inv = LanguageInventory::lookup(t).unwrap();
            let info = phoneme_info(inv.silence_id()).unwrap();
            assert_eq!(info.aperture, 0.0);
            assert!(is_silence(inv.silence_id()));
        }
        assert!(phoneme_info(vocab_size()).is_err());
    }
}
