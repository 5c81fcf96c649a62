use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coarse word class assigned during tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Determiner,
    Conjunction,
    Copula,
    Preposition,
    Adjective,
    Noun,
    VerbGerund,
    VerbOther,
    Unknown,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Determiner => "determiner",
            TokenKind::Conjunction => "conjunction",
            TokenKind::Copula => "copula",
            TokenKind::Preposition => "preposition",
            TokenKind::Adjective => "adjective",
            TokenKind::Noun => "noun",
            TokenKind::VerbGerund => "verb_gerund",
            TokenKind::VerbOther => "verb_other",
            TokenKind::Unknown => "unknown",
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "determiner" => TokenKind::Determiner,
            "conjunction" => TokenKind::Conjunction,
            "copula" => TokenKind::Copula,
            "preposition" => TokenKind::Preposition,
            "adjective" => TokenKind::Adjective,
            "noun" => TokenKind::Noun,
            "verb_gerund" => TokenKind::VerbGerund,
            "verb_other" => TokenKind::VerbOther,
            "unknown" => TokenKind::Unknown,
            other => return Err(format!("unknown token kind `{other}`")),
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("lexicon line {line}: {message}")]
    Line { line: usize, message: String },
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "his",
    "her", "its", "their", "my", "your", "our", "another", "one", "two", "three", "four", "five",
    "several", "many", "few", "both",
];

const CONJUNCTIONS: &[&str] = &["and", "or", "but", "nor", "while"];

const COPULAS: &[&str] = &["is", "are", "was", "were", "be", "been", "am", "being"];

const PREPOSITIONS: &[&str] = &[
    "on", "in", "at", "with", "under", "over", "near", "beside", "behind", "by", "of", "to",
    "from", "into", "onto", "through", "across", "around", "inside", "outside", "above", "below",
    "between", "along", "toward", "towards", "against", "for", "among", "next", "beneath",
    "upon", "within", "without", "past", "up", "down", "off", "out", "like", "about", "after",
    "before", "during",
];

const ADJECTIVES: &[&str] = &[
    // colours
    "red", "pink", "blue", "green", "yellow", "purple", "white", "black", "brown", "orange",
    "gray", "grey", "golden", "silver", "violet", "beige", "teal", "turquoise", "crimson", "blond",
    "blonde", "auburn", "dark", "light", "bright", "pale",
    // shape and size
    "big", "small", "little", "large", "tiny", "huge", "round", "tall", "short", "long", "wide",
    "thin", "fat", "chubby", "plump", "slim", "oval", "pointed", "square", "flat",
    // other appearance words
    "female", "male", "young", "old", "cute", "happy", "sad", "polar", "striped", "spotted",
    "fluffy", "soft", "warm", "cold", "snowy", "icy", "wooden", "shiny",
    "cartoon", "royal", "braided", "orange-red", "light-blue", "dark-blue", "curly", "straight",
    "wavy", "brave", "kind", "friendly", "gentle", "clever", "green-skinned", "pink-cheeked",
];

const NOUNS: &[&str] = &[
    // -ing / -y / -ed / -ish lookalikes that are nouns
    "king", "ring", "wing", "wings", "thing", "string", "ceiling", "building", "morning", "evening",
    "clothing", "icing", "painting", "swing", "sling", "earring", "earrings", "stocking",
    "stockings", "pudding", "spring", "sibling", "pony", "body", "baby", "boy", "toy", "sky",
    "city", "party", "puppy", "bunny", "kitty", "lady", "family", "story", "candy", "berry",
    "cherry", "jelly", "honey", "key", "monkey", "turkey", "day", "way", "valley", "belly", "fish",
    "dish", "bed", "sled", "shed", "bread", "sleigh", "jersey", "trolley", "bakery", "library",
    "countryside", "energy", "eye", "play",
];

const VERBS_OTHER: &[&str] = &[
    "has", "have", "had", "holds", "hold", "wears", "wear", "sits", "sit", "stands", "stand",
    "looks", "look", "plays", "hugs", "hug", "kisses", "kiss", "bakes", "bake", "runs", "run",
    "walks", "walk", "skis", "ski", "eats", "eat", "does", "do", "did", "can", "will", "gets",
    "get", "appears", "seems", "features", "shows", "depicts",
];

const COMPOUNDS: &[&str] = &[
    "polar bear",
    "ice cream",
    "snow globe",
    "teddy bear",
    "reindeer antlers",
    "hair band",
];

/// Word-class lexicon plus multiword head table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: HashMap<String, TokenKind>,
    compounds: BTreeSet<Vec<String>>,
    max_compound_len: usize,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Lexicon {
    /// An empty lexicon: every word goes through the morphology fallback.
    pub fn empty() -> Self {
        Self { words: HashMap::new(), compounds: BTreeSet::new(), max_compound_len: 0 }
    }

    pub fn builtin() -> Self {
        let mut lex = Self::empty();
        let lists: [(&[&str], TokenKind); 7] = [
            (NOUNS, TokenKind::Noun),
            (VERBS_OTHER, TokenKind::VerbOther),
            (ADJECTIVES, TokenKind::Adjective),
            (PREPOSITIONS, TokenKind::Preposition),
            (COPULAS, TokenKind::Copula),
            (CONJUNCTIONS, TokenKind::Conjunction),
            (DETERMINERS, TokenKind::Determiner),
        ];
        for (words, kind) in lists {
            for w in words {
                lex.insert(w, kind);
            }
        }
        for c in COMPOUNDS {
            lex.add_compound(c);
        }
        lex
    }

    pub fn insert(&mut self, word: &str, kind: TokenKind) {
        self.words.insert(word.to_lowercase(), kind);
    }

    /// Registers a multiword head such as `"polar bear"`. Single words are ignored.
    pub fn add_compound(&mut self, phrase: &str) {
        let parts: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
        if parts.len() < 2 {
            return;
        }
        self.max_compound_len = self.max_compound_len.max(parts.len());
        self.compounds.insert(parts);
    }

    pub fn lookup(&self, word: &str) -> Option<TokenKind> {
        self.words.get(word).copied()
    }

    /// Length of the longest compound starting at `words[0]`, if any.
    pub fn compound_prefix_len<S: AsRef<str>>(&self, words: &[S]) -> Option<usize> {
        let upper = self.max_compound_len.min(words.len());
        (2..=upper).rev().find(|&len| {
            let candidate: Vec<String> =
                words[..len].iter().map(|w| w.as_ref().to_string()).collect();
            self.compounds.contains(&candidate)
        })
    }

    pub fn is_compound(&self, phrase: &str) -> bool {
        let parts: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
        self.compounds.contains(&parts)
    }

    /// Merges `word<TAB>kind` lines. Blank lines and `#` comments are skipped.
    pub fn extend_from_str(&mut self, text: &str) -> Result<(), LexiconError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (word, kind) = line.split_once('\t').ok_or_else(|| LexiconError::Line {
                line: idx + 1,
                message: "expected `word<TAB>kind`".into(),
            })?;
            let word = word.trim();
            if word.is_empty() {
                return Err(LexiconError::Line { line: idx + 1, message: "empty word".into() });
            }
            let kind = kind
                .parse::<TokenKind>()
                .map_err(|message| LexiconError::Line { line: idx + 1, message })?;
            self.insert(word, kind);
        }
        Ok(())
    }

    /// Merges one multiword head per line.
    pub fn extend_compounds_from_str(&mut self, text: &str) {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.add_compound(line);
        }
    }

    /// Lexicon-then-morphology classification. `capitalized` is whether the
    /// surface form started with an uppercase letter.
    pub fn classify(&self, word: &str, capitalized: bool) -> TokenKind {
        if let Some(kind) = self.lookup(word) {
            return kind;
        }
        if !word.chars().any(char::is_alphabetic) {
            return TokenKind::Unknown;
        }
        let len = word.chars().count();
        if word.ends_with("ing") && len >= 5 {
            return TokenKind::VerbGerund;
        }
        // Capitalized unknown words are names ("Poby", "Eddy"), never adjectives.
        if capitalized {
            return TokenKind::Noun;
        }
        if (word.ends_with("ish") && len >= 5)
            || (word.ends_with("ed") && len >= 5)
            || (word.ends_with('y') && len >= 4)
        {
            return TokenKind::Adjective;
        }
        TokenKind::Noun
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn morphology_fallback() {
        let lex = Lexicon::empty();
        assert_eq!(lex.classify("skiing", false), TokenKind::VerbGerund);
        assert_eq!(lex.classify("reddish", false), TokenKind::Adjective);
        assert_eq!(lex.classify("snowy", false), TokenKind::Adjective);
        assert_eq!(lex.classify("stuffed", false), TokenKind::Adjective);
        assert_eq!(lex.classify("mountain", false), TokenKind::Noun);
        assert_eq!(lex.classify("poby", true), TokenKind::Noun);
        assert_eq!(lex.classify("42", false), TokenKind::Unknown);
    }

    #[test]
    fn lexicon_wins_over_morphology() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.classify("king", false), TokenKind::Noun);
        assert_eq!(lex.classify("polar", false), TokenKind::Adjective);
        assert_eq!(lex.classify("the", true), TokenKind::Determiner);
    }

    #[test]
    fn lexicon_file_extends() {
        let mut lex = Lexicon::builtin();
        lex.extend_from_str("# custom\nmagenta\tadjective\n\ncrong\tnoun\n").unwrap();
        assert_eq!(lex.lookup("magenta"), Some(TokenKind::Adjective));
        let err = lex.extend_from_str("ok\tnoun\nbroken line\n").unwrap_err();
        assert_eq!(err, LexiconError::Line { line: 2, message: "expected `word<TAB>kind`".into() });
        assert!(lex.extend_from_str("x\tverbish").is_err());
    }

    #[test]
    fn compounds_longest_prefix() {
        let mut lex = Lexicon::builtin();
        lex.extend_compounds_from_str("big polar bear\n");
        assert_eq!(lex.compound_prefix_len(&["polar", "bear", "x"]), Some(2));
        assert_eq!(lex.compound_prefix_len(&["big", "polar", "bear"]), Some(3));
        assert_eq!(lex.compound_prefix_len(&["bear"]), None);
    }
}
