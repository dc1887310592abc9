//! Social-media tokenization, sentence/word/syllable counting and the
//! stopword-count language filter.
//!
//! Tokens are lowercased except for emoticons. Punctuation runs become their
//! own tokens, censored or contracted words (`f*ck`, `don't`) stay whole,
//! `/u/<name>` becomes `ref_user` and `/r/<sub>` becomes
//! `ref_subreddit_<sub>`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_EMOTICONS: &str = include_str!("../data/emoticons.txt");

const BUNDLED_STOPWORDS: &[(&str, &str)] = &[
    ("english", include_str!("../data/stopwords/english.txt")),
    ("danish", include_str!("../data/stopwords/danish.txt")),
    ("dutch", include_str!("../data/stopwords/dutch.txt")),
    ("finnish", include_str!("../data/stopwords/finnish.txt")),
    ("french", include_str!("../data/stopwords/french.txt")),
    ("german", include_str!("../data/stopwords/german.txt")),
    ("italian", include_str!("../data/stopwords/italian.txt")),
    ("norwegian", include_str!("../data/stopwords/norwegian.txt")),
    (
        "portuguese",
        include_str!("../data/stopwords/portuguese.txt"),
    ),
    ("spanish", include_str!("../data/stopwords/spanish.txt")),
    ("swedish", include_str!("../data/stopwords/swedish.txt")),
];

/// Parses a one-entry-per-line list. Blank lines and `#` comments are skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Number,
    Punct,
    Emoticon,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TokenizedDocument {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    /// Sentence index of every token.
    sentence_ids: Vec<usize>,
    sentence_count: usize,
    word_count: usize,
    syllable_count: usize,
}

impl TokenizedDocument {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn kinds(&self) -> &[TokenKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_count
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub fn syllable_count(&self) -> usize {
        self.syllable_count
    }

    /// Alphabetic word tokens with the index of the sentence they belong to.
    pub fn words(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.tokens
            .iter()
            .zip(&self.kinds)
            .zip(&self.sentence_ids)
            .filter(|((_, k), _)| **k == TokenKind::Word)
            .map(|((t, _), s)| (t.as_str(), *s))
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    /// Sorted longest first so the longest pattern wins.
    emoticons: Vec<Vec<char>>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer::with_emoticons(parse_word_list(DEFAULT_EMOTICONS))
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Characters that stay inside a word when another word character follows.
fn is_joiner(c: char) -> bool {
    matches!(c, '*' | '\'' | '’' | '-' | '@' | '#' | '$' | '&' | '+')
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

impl Tokenizer {
    pub fn with_emoticons(patterns: Vec<String>) -> Self {
        let mut emoticons: Vec<Vec<char>> = patterns
            .into_iter()
            .map(|p| p.chars().collect::<Vec<_>>())
            .filter(|p| !p.is_empty() && !p.iter().any(|c| c.is_whitespace()))
            .collect();
        emoticons.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        emoticons.dedup();
        Tokenizer { emoticons }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Tokenizer::with_emoticons(load_word_list(path)?))
    }

    fn match_emoticon(&self, chars: &[char], pos: usize) -> Option<usize> {
        let prev_word = pos > 0 && is_word_char(chars[pos - 1]);
        self.emoticons.iter().find_map(|e| {
            let end = pos + e.len();
            if end > chars.len() || chars[pos..end] != e[..] {
                return None;
            }
            // Emoticons that begin or end with a letter must not touch a word.
            if is_word_char(e[0]) && prev_word {
                return None;
            }
            if is_word_char(e[e.len() - 1]) && end < chars.len() && is_word_char(chars[end]) {
                return None;
            }
            Some(e.len())
        })
    }

    /// Returns the rewritten reference token and the number of chars consumed.
    fn match_reference(chars: &[char], pos: usize) -> Option<(String, usize)> {
        if pos > 0 && is_word_char(chars[pos - 1]) {
            return None;
        }
        if chars.len() < pos + 4 || chars[pos] != '/' || chars[pos + 2] != '/' {
            return None;
        }
        let kind = chars[pos + 1].to_ascii_lowercase();
        if kind != 'u' && kind != 'r' {
            return None;
        }
        let name_start = pos + 3;
        let mut end = name_start;
        while end < chars.len() && (is_word_char(chars[end]) || chars[end] == '-') {
            end += 1;
        }
        if end == name_start {
            return None;
        }
        let token = if kind == 'u' {
            "ref_user".to_string()
        } else {
            let name: String = chars[name_start..end].iter().collect();
            format!("ref_subreddit_{}", name.to_lowercase())
        };
        Some((token, end - pos))
    }

    fn scan_word(chars: &[char], start: usize) -> usize {
        let mut end = start;
        loop {
            while end < chars.len() && is_word_char(chars[end]) {
                end += 1;
            }
            if end >= chars.len() {
                return end;
            }
            let c = chars[end];
            // digits around a decimal point or thousands separator
            if (c == '.' || c == ',')
                && chars[end - 1].is_ascii_digit()
                && end + 1 < chars.len()
                && chars[end + 1].is_ascii_digit()
            {
                end += 1;
                continue;
            }
            if is_joiner(c) {
                let mut j = end;
                while j < chars.len() && is_joiner(chars[j]) {
                    j += 1;
                }
                if j < chars.len() && is_word_char(chars[j]) {
                    end = j;
                    continue;
                }
            }
            return end;
        }
    }

    pub fn tokenize(&self, text: &str) -> TokenizedDocument {
        let chars: Vec<char> = text.chars().collect();
        let mut doc = TokenizedDocument::default();
        let mut sentence = 0usize;
        let mut words_in_sentence = 0usize;
        fn close_sentence(doc: &mut TokenizedDocument, words: &mut usize, sentence: &mut usize) {
            if *words > 0 {
                doc.sentence_count += 1;
                *sentence += 1;
                *words = 0;
            }
        }

        let mut pos = 0;
        while pos < chars.len() {
            let c = chars[pos];
            if c.is_whitespace() {
                if c == '\n' {
                    close_sentence(&mut doc, &mut words_in_sentence, &mut sentence);
                }
                pos += 1;
                continue;
            }
            if let Some((token, used)) = Self::match_reference(&chars, pos) {
                doc.push(token, TokenKind::Reference, sentence);
                pos += used;
                continue;
            }
            if let Some(len) = self.match_emoticon(&chars, pos) {
                doc.push(
                    chars[pos..pos + len].iter().collect(),
                    TokenKind::Emoticon,
                    sentence,
                );
                pos += len;
                continue;
            }
            if is_word_char(c) {
                let end = Self::scan_word(&chars, pos);
                let raw: String = chars[pos..end].iter().collect();
                let token = raw.to_lowercase();
                let kind = if token.chars().any(char::is_alphabetic) {
                    TokenKind::Word
                } else {
                    TokenKind::Number
                };
                if kind == TokenKind::Word {
                    doc.word_count += 1;
                    doc.syllable_count += count_syllables(&token);
                    words_in_sentence += 1;
                }
                doc.push(token, kind, sentence);
                pos = end;
                continue;
            }
            // punctuation run, stopping before anything that starts another token
            let start = pos;
            pos += 1;
            while pos < chars.len() {
                let c = chars[pos];
                if c.is_whitespace()
                    || is_word_char(c)
                    || self.match_emoticon(&chars, pos).is_some()
                    || Self::match_reference(&chars, pos).is_some()
                {
                    break;
                }
                pos += 1;
            }
            let run: String = chars[start..pos].iter().collect::<String>().to_lowercase();
            let ends_sentence = run.chars().any(is_terminator);
            doc.push(run, TokenKind::Punct, sentence);
            if ends_sentence {
                close_sentence(&mut doc, &mut words_in_sentence, &mut sentence);
            }
        }
        close_sentence(&mut doc, &mut words_in_sentence, &mut sentence);
        doc
    }
}

impl TokenizedDocument {
    fn push(&mut self, token: String, kind: TokenKind, sentence: usize) {
        self.tokens.push(token);
        self.kinds.push(kind);
        self.sentence_ids.push(sentence);
    }
}

/// Tokenizes with the default emoticon list.
pub fn tokenize(text: &str) -> TokenizedDocument {
    Tokenizer::default().tokenize(text)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Vowel-group syllable estimate: count maximal runs of `aeiouy`, drop a
/// silent final `e` (but keep consonant + `le`), never below one.
pub fn count_syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if letters.is_empty() {
        return 0;
    }
    let mut groups = 0usize;
    let mut in_group = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    let n = letters.len();
    if letters[n - 1] == 'e' {
        let consonant_le = n >= 3 && letters[n - 2] == 'l' && !is_vowel(letters[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    groups.max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopwordTable {
    languages: BTreeMap<String, HashSet<String>>,
}

impl Default for StopwordTable {
    fn default() -> Self {
        let languages = BUNDLED_STOPWORDS
            .iter()
            .map(|(lang, text)| {
                (
                    lang.to_string(),
                    parse_word_list(text).into_iter().collect(),
                )
            })
            .collect();
        StopwordTable { languages }
    }
}

impl StopwordTable {
    pub fn new(languages: BTreeMap<String, HashSet<String>>) -> Result<Self> {
        match languages.get("english") {
            Some(words) if !words.is_empty() => Ok(StopwordTable { languages }),
            _ => Err(Error::Validation(
                "stopword table needs a non-empty english list".into(),
            )),
        }
    }

    /// Reads every `<language>.txt` file of a directory.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut languages = BTreeMap::new();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(lang) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let words = load_word_list(&path)?
                .into_iter()
                .map(|w| w.to_lowercase())
                .collect();
            languages.insert(lang.to_string(), words);
        }
        StopwordTable::new(languages)
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.languages.keys().map(String::as_str)
    }

    pub fn counts<'a, I>(&self, tokens: I) -> BTreeMap<&str, usize>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> =
            self.languages.keys().map(|k| (k.as_str(), 0)).collect();
        for t in tokens {
            for (lang, words) in &self.languages {
                if words.contains(t) {
                    *counts.get_mut(lang.as_str()).unwrap() += 1;
                }
            }
        }
        counts
    }
}

/// True iff the document has at least one English stopword and strictly
/// more English stopwords than any other single language.
pub fn is_english(doc: &TokenizedDocument, table: &StopwordTable) -> bool {
    is_english_tokens(doc.tokens().iter().map(String::as_str), table)
}

pub fn is_english_tokens<'a, I>(tokens: I, table: &StopwordTable) -> bool
where
    I: IntoIterator<Item = &'a str>,
{
    let counts = table.counts(tokens);
    let english = counts.get("english").copied().unwrap_or(0);
    english >= 1
        && counts
            .iter()
            .filter(|(lang, _)| **lang != "english")
            .all(|(_, &n)| english > n)
}
