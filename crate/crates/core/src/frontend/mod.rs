//! Text to phoneme ids through a CMU-format pronouncing dictionary.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::PhonemeSequence;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

const VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];
const CONSONANTS: [&str; 24] = [
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH", "T", "TH", "V", "W", "Y", "Z", "ZH",
];

/// Phoneme symbol <-> id bijection; ids 0 and 1 are PAD and UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
}

impl SymbolTable {
    /// Sorted, deduplicated `symbols` numbered from 2.
    pub fn new<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = symbols.into_iter().map(Into::into).collect();
        let mut all = vec![PAD.to_string(), UNK.to_string()];
        all.extend(sorted.into_iter().filter(|s| s != PAD && s != UNK));
        let ids = all.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        SymbolTable { symbols: all, ids }
    }

    /// The 69 stress-marked ARPAbet symbols: 15 vowels x 3 stress levels
    /// and 24 consonants.
    pub fn arpabet() -> Self {
        let vowels = VOWELS.iter().flat_map(|v| (0..3).map(move |s| format!("{v}{s}")));
        SymbolTable::new(vowels.chain(CONSONANTS.iter().map(|c| c.to_string())))
    }

    /// Number of ids, reserved ones included.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, symbol: &str) -> usize {
        self.ids.get(symbol).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.ids.contains_key(symbol)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
    symbols: SymbolTable,
}

/// Result of [`text_to_phonemes`]: the phoneme strings and the words that
/// were not in the lexicon.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phonemized {
    pub phonemes: Vec<String>,
    pub oov: Vec<String>,
}

impl Lexicon {
    /// Parses CMU dictionary text. `(n)` variant suffixes are folded into
    /// the base word; the first pronunciation of a word wins.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with(";;;") {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            let phonemes: Vec<String> = parts.map(str::to_string).collect();
            if phonemes.is_empty() {
                return Err(err(format!("word `{head}` has no pronunciation")));
            }
            if let Some(bad) = phonemes.iter().find(|p| !p.chars().all(|c| c.is_ascii_alphanumeric())) {
                return Err(err(format!("invalid phoneme `{bad}`")));
            }
            let word = strip_variant(head).to_lowercase();
            if word.is_empty() {
                return Err(err(format!("invalid word `{head}`")));
            }
            entries.entry(word).or_insert(phonemes);
        }
        let symbols = SymbolTable::new(entries.values().flatten().cloned());
        Ok(Lexicon { entries, symbols })
    }

    /// Replaces the lexicon-derived symbol table, e.g. with
    /// [`SymbolTable::arpabet`] to match a model's vocabulary.
    pub fn with_symbols(mut self, symbols: SymbolTable) -> Result<Self> {
        for (word, phonemes) in &self.entries {
            if let Some(p) = phonemes.iter().find(|p| !symbols.contains(p)) {
                return Err(Error::Config(format!("phoneme `{p}` of `{word}` is not in the symbol table")));
            }
        }
        self.symbols = symbols;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }
}

fn strip_variant(word: &str) -> &str {
    match word.find('(') {
        Some(i) if word.ends_with(')') && word[i + 1..word.len() - 1].chars().all(|c| c.is_ascii_digit()) => &word[..i],
        _ => word,
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path: PathBuf = path.as_ref().to_path_buf();
    let text = std::fs::read_to_string(&path)?;
    Lexicon::parse(&text, &path)
}

/// Lowercased words: runs of alphanumerics, with apostrophes kept inside a
/// word ("don't"). Everything else separates words and is dropped.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Looks up every word; an out-of-vocabulary word becomes a single
/// [`UNK`] and is reported in [`Phonemized::oov`] and the log.
pub fn text_to_phonemes(text: &str, lexicon: &Lexicon) -> Phonemized {
    let mut out = Phonemized {
        phonemes: Vec::new(),
        oov: Vec::new(),
    };
    for word in words(text) {
        match lexicon.get(&word) {
            Some(p) => out.phonemes.extend(p.iter().cloned()),
            None => {
                log::warn!("`{word}` is not in the lexicon; using {UNK}");
                out.phonemes.push(UNK.to_string());
                out.oov.push(word);
            }
        }
    }
    out
}

pub fn phonemes_to_ids<S: AsRef<str>>(phonemes: &[S], symbols: &SymbolTable) -> Result<PhonemeSequence> {
    PhonemeSequence::new(phonemes.iter().map(|p| symbols.id(p.as_ref())).collect())
}

pub fn ids_to_phonemes(ids: &[usize], symbols: &SymbolTable) -> Vec<String> {
    ids.iter().map(|&i| symbols.symbol(i).unwrap_or(UNK).to_string()).collect()
}

/// Whitespace-separated phoneme string, as given on a command line.
pub fn parse_phonemes(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_uppercase).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(text: &str) -> Lexicon {
        Lexicon::parse(text, Path::new("test.dict")).unwrap()
    }

    #[test]
    fn parses_cmu_lines() {
        let l = lex(";;; comment\nFOX  F AA1 K S\nTHE  DH AH0\nTHE(1)  DH AH1\n");
        assert_eq!(l.get("fox").unwrap(), &["F", "AA1", "K", "S"]);
        assert_eq!(l.get("The").unwrap(), &["DH", "AH0"]);
        assert_eq!(l.symbols().symbols()[..3], [PAD, UNK, "AA1"]);
        assert_eq!(l.symbols().len(), 2 + 6);
    }

    #[test]
    fn empty_file_and_malformed_line() {
        let l = lex("");
        assert!(l.is_empty());
        assert_eq!(l.symbols().len(), 2);
        let err = Lexicon::parse("FOX  F AA1\nDOG\n", Path::new("x.dict")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn text_lookup_with_oov() {
        let l = lex("THE  DH AH0\nQUICK  K W IH1 K\n");
        let p = text_to_phonemes("The, quick!", &l);
        assert_eq!(p.phonemes, ["DH", "AH0", "K", "W", "IH1", "K"]);
        assert!(p.oov.is_empty());
        assert!(text_to_phonemes("", &l).phonemes.is_empty());
        let p = text_to_phonemes("zzxqk", &l);
        assert_eq!(p.phonemes, [UNK]);
        assert_eq!(p.oov, ["zzxqk"]);
    }

    #[test]
    fn ids_round_trip() {
        let t = SymbolTable::arpabet();
        assert_eq!(t.len(), 71);
        let p = ["DH", "AH0", "ZH", "AA2"];
        let ids = phonemes_to_ids(&p, &t).unwrap();
        assert_eq!(ids_to_phonemes(ids.ids(), &t), p);
        assert_eq!(phonemes_to_ids(&["XX9"], &t).unwrap().ids(), &[UNK_ID]);
        assert!(phonemes_to_ids::<&str>(&[], &t).is_err());
    }

    #[test]
    fn words_split_on_punctuation() {
        assert_eq!(words("Hello,world -- don't 'quote'"), ["hello", "world", "don't", "quote"]);
    }
}
