//! User-level linguistic metadata: the 27-dimensional feature vector,
//! readability scores, phrase flags, category-lexicon counts and the
//! standardizer used before classification.
//!
//! Per-document features are averaged over a user's non-empty documents.
//! The five phrase counts are summed over all documents and encoded as
//! `+1` (present at least once) or `-1` (absent).

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Datelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Message, UserRecord};
use crate::error::{Error, Result};
use crate::textproc::{count_syllables, parse_word_list, TokenizedDocument, Tokenizer};

pub const N_FEATURES: usize = 27;
pub const N_CATEGORIES: usize = 10;
/// Dimensions holding the ±1 phrase flags.
pub const FLAG_DIMS: std::ops::Range<usize> = 12..17;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "i_body",
    "i_title",
    "possessive_pronouns",
    "personal_pronouns",
    "past_tense_verbs",
    "fog",
    "fre",
    "lwf",
    "dcr",
    "month",
    "body_length",
    "title_length",
    "flag_my_depression",
    "flag_my_anxiety",
    "flag_my_therapist",
    "flag_diagnosis",
    "flag_antidepressant",
    "cat_function",
    "cat_i",
    "cat_pronoun",
    "cat_ppron",
    "cat_verb",
    "cat_cogproc",
    "cat_focuspresent",
    "cat_dictionary",
    "cat_analytic",
    "cat_authentic",
];

const EASY_WORDS: &str = include_str!("../data/easy_words.txt");
const IRREGULAR_PAST: &str = include_str!("../data/irregular_past.txt");

const PERSONAL_PRONOUNS: &[&str] = &[
    "i", "me", "you", "he", "him", "she", "her", "it", "we", "us", "they", "them",
];
const POSSESSIVE_PRONOUNS: &[&str] = &[
    "my", "your", "his", "her", "its", "our", "their", "mine", "yours", "hers", "ours", "theirs",
];
/// "-ed" words that are not past-tense verbs.
const ED_EXCEPTIONS: &[&str] = &[
    "need", "feed", "seed", "speed", "weed", "breed", "bleed", "greed", "steed", "tweed", "shed",
    "indeed", "hundred", "naked", "sacred", "wicked", "wretched", "rugged", "ragged", "crooked",
    "beloved", "kindred", "embed", "proceed", "succeed", "exceed", "sled", "bred", "fled",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetadataVector(pub [f64; N_FEATURES]);

impl Default for MetadataVector {
    fn default() -> Self {
        let mut v = [0.0; N_FEATURES];
        for d in FLAG_DIMS {
            v[d] = -1.0;
        }
        MetadataVector(v)
    }
}

impl MetadataVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

fn owned(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Hand-picked phrases whose presence anywhere in a user's history is a
/// strong positive signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseLexicon {
    pub depression: Vec<String>,
    pub anxiety: Vec<String>,
    pub therapist: Vec<String>,
    /// First-person diagnosis statements, e.g. "i was diagnosed with".
    pub diagnosis_patterns: Vec<String>,
    /// At least one of these must follow a diagnosis pattern within
    /// `diagnosis_window` tokens.
    pub diagnosis_targets: Vec<String>,
    pub diagnosis_window: usize,
    pub antidepressants: Vec<String>,
}

impl Default for PhraseLexicon {
    fn default() -> Self {
        PhraseLexicon {
            depression: owned(&["my depression"]),
            anxiety: owned(&["my anxiety"]),
            therapist: owned(&["my therapist"]),
            diagnosis_patterns: owned(&[
                "i was diagnosed with",
                "i was diagnosed",
                "i've been diagnosed with",
                "i have been diagnosed with",
                "i had been diagnosed with",
                "i got diagnosed with",
                "i am diagnosed with",
                "i'm diagnosed with",
                "i was officially diagnosed with",
                "i was recently diagnosed with",
                "i've recently been diagnosed with",
                "i was finally diagnosed with",
            ]),
            diagnosis_targets: owned(&[
                "depression",
                "depressive",
                "depressed",
                "mdd",
                "dysthymia",
            ]),
            diagnosis_window: 6,
            antidepressants: owned(&[
                "zoloft",
                "sertraline",
                "paxil",
                "paroxetine",
                "prozac",
                "fluoxetine",
                "celexa",
                "citalopram",
                "lexapro",
                "escitalopram",
                "wellbutrin",
                "bupropion",
                "effexor",
                "venlafaxine",
                "cymbalta",
                "duloxetine",
                "pristiq",
                "desvenlafaxine",
                "remeron",
                "mirtazapine",
                "trazodone",
                "viibryd",
                "vilazodone",
                "trintellix",
                "vortioxetine",
                "elavil",
                "amitriptyline",
                "pamelor",
                "nortriptyline",
                "nardil",
                "parnate",
            ]),
        }
    }
}

impl PhraseLexicon {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .depression
            .iter()
            .chain(&self.anxiety)
            .chain(&self.therapist)
            .chain(&self.diagnosis_patterns)
            .chain(&self.diagnosis_targets)
            .chain(&self.antidepressants);
        for entry in all {
            if entry.trim().is_empty() {
                return Err(Error::Validation(
                    "phrase lexicon contains an empty entry".into(),
                ));
            }
            if entry.to_lowercase() != *entry {
                return Err(Error::Validation(format!(
                    "phrase lexicon entry {entry:?} is not lowercase"
                )));
            }
        }
        for p in &self.diagnosis_patterns {
            let words: Vec<&str> = p.split_whitespace().collect();
            let has_i = words.iter().any(|w| *w == "i" || w.starts_with("i'"));
            if !has_i || !words.contains(&"diagnosed") {
                return Err(Error::Validation(format!(
                    "diagnosis pattern {p:?} must contain \"i\" and \"diagnosed\""
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lex: PhraseLexicon = serde_json::from_str(&text)?;
        lex.validate()?;
        Ok(lex)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    /// Exact words, or prefixes ending in `*`.
    pub entries: Vec<String>,
}

impl Category {
    fn compile(&self) -> CompiledCategory {
        let mut exact = HashSet::new();
        let mut prefixes = Vec::new();
        for e in &self.entries {
            match e.strip_suffix('*') {
                Some(p) => prefixes.push(p.to_string()),
                None => {
                    exact.insert(e.clone());
                }
            }
        }
        CompiledCategory { exact, prefixes }
    }
}

#[derive(Debug, Clone)]
struct CompiledCategory {
    exact: HashSet<String>,
    prefixes: Vec<String>,
}

impl CompiledCategory {
    fn matches(&self, token: &str) -> bool {
        self.exact.contains(token) || self.prefixes.iter().any(|p| token.starts_with(p.as_str()))
    }
}

/// Open word-category lexicon. Exactly ten categories are selected, in a
/// fixed order, as features 17..27.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLexicon {
    pub categories: Vec<Category>,
    pub selected: Vec<String>,
}

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "and", "but", "or", "nor", "so", "yet", "if", "because", "as", "of", "in",
    "on", "at", "to", "for", "with", "by", "from", "about", "into", "through", "over", "under",
    "after", "before", "between", "is", "am", "are", "was", "were", "be", "been", "being", "have",
    "has", "had", "do", "does", "did", "will", "would", "can", "could", "should", "may", "might",
    "must", "not", "no", "never", "i", "me", "my", "you", "your", "he", "him", "his", "she", "her",
    "it", "its", "we", "us", "our", "they", "them", "their", "this", "that", "these", "those",
    "there", "here", "what", "which", "who", "when", "where", "how", "very", "just", "too", "than",
    "then", "all", "some", "any",
];
const I_WORDS: &[&str] = &[
    "i", "me", "my", "mine", "myself", "i'm", "i've", "i'd", "i'll", "im", "ive",
];
const PPRON_WORDS: &[&str] = &[
    "i",
    "me",
    "my",
    "mine",
    "myself",
    "i'm",
    "i've",
    "i'd",
    "i'll",
    "we",
    "us",
    "our",
    "ours",
    "ourselves",
    "you",
    "your",
    "yours",
    "yourself",
    "he",
    "him",
    "his",
    "himself",
    "she",
    "her",
    "hers",
    "herself",
    "they",
    "them",
    "their",
    "theirs",
    "themselves",
];
const IMPERSONAL_PRONOUNS: &[&str] = &[
    "it",
    "its",
    "itself",
    "this",
    "that",
    "these",
    "those",
    "something",
    "anything",
    "nothing",
    "everything",
    "someone",
    "anyone",
    "everyone",
    "nobody",
    "somebody",
    "anybody",
    "everybody",
    "what",
    "which",
    "who",
    "whom",
];
const VERB_WORDS: &[&str] = &[
    "is", "am", "are", "was", "were", "be", "been", "being", "have", "has", "had", "do", "does",
    "did", "will", "would", "can", "could", "should", "may", "might", "must", "go", "goes", "went",
    "going", "get", "gets", "got", "make", "made", "feel", "feels", "felt", "feeling", "think",
    "thinks", "thought", "know", "knows", "knew", "want", "wants", "wanted", "need", "needs",
    "needed", "try", "tried", "trying", "say", "said", "see", "saw", "take", "took", "come",
    "came", "love", "hate", "keep", "kept", "stay", "stayed", "cry", "cried", "sleep", "slept",
    "talk", "talked", "tell", "told", "start", "started", "stop", "stopped", "work", "worked",
];
const COGPROC_WORDS: &[&str] = &[
    "think*",
    "thought*",
    "know*",
    "knew",
    "consider*",
    "because",
    "cause*",
    "realiz*",
    "understand*",
    "understood",
    "maybe",
    "perhaps",
    "should",
    "would",
    "could",
    "wonder*",
    "reason*",
    "believ*",
    "question*",
    "if",
    "or",
    "but",
    "though",
    "although",
    "unless",
    "decid*",
    "decision*",
    "guess*",
    "probabl*",
    "sure",
    "never",
    "always",
    "why",
    "how",
];
const FOCUSPRESENT_WORDS: &[&str] = &[
    "am",
    "is",
    "are",
    "be",
    "now",
    "today",
    "currently",
    "present",
    "have",
    "has",
    "do",
    "does",
    "feel",
    "feels",
    "think",
    "thinks",
    "know",
    "knows",
    "want",
    "wants",
    "need",
    "needs",
    "i'm",
    "can",
    "can't",
    "don't",
    "doesn't",
    "isn't",
    "keep",
    "keeps",
];
const ANALYTIC_WORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "for", "with", "by", "from", "about", "into",
    "through", "over", "under", "between", "after", "before", "during", "against", "among",
    "within", "without", "across", "toward", "towards", "upon",
];
const AUTHENTIC_WORDS: &[&str] = &[
    "i", "me", "my", "myself", "i'm", "i've", "i'd", "but", "except", "without", "really",
    "honestly", "actually", "feel", "felt", "feeling",
];

fn category(name: &str, entries: &[&str]) -> Category {
    Category {
        name: name.into(),
        entries: entries.iter().map(|s| s.to_string()).collect(),
    }
}

impl Default for CategoryLexicon {
    fn default() -> Self {
        let mut pronouns: Vec<&str> = PPRON_WORDS.to_vec();
        pronouns.extend_from_slice(IMPERSONAL_PRONOUNS);
        let mut categories = vec![
            category("function", FUNCTION_WORDS),
            category("i", I_WORDS),
            category("pronoun", &pronouns),
            category("ppron", PPRON_WORDS),
            category("verb", VERB_WORDS),
            category("cogproc", COGPROC_WORDS),
            category("focuspresent", FOCUSPRESENT_WORDS),
            category("analytic", ANALYTIC_WORDS),
            category("authentic", AUTHENTIC_WORDS),
        ];
        let mut union: Vec<String> = categories.iter().flat_map(|c| c.entries.clone()).collect();
        union.sort();
        union.dedup();
        categories.push(Category {
            name: "dictionary".into(),
            entries: union,
        });
        let selected = [
            "function",
            "i",
            "pronoun",
            "ppron",
            "verb",
            "cogproc",
            "focuspresent",
            "dictionary",
            "analytic",
            "authentic",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        CategoryLexicon {
            categories,
            selected,
        }
    }
}

impl CategoryLexicon {
    pub fn validate(&self) -> Result<()> {
        if self.selected.len() != N_CATEGORIES {
            return Err(Error::Validation(format!(
                "category lexicon must select exactly {N_CATEGORIES} categories, got {}",
                self.selected.len()
            )));
        }
        for name in &self.selected {
            if !self.categories.iter().any(|c| &c.name == name) {
                return Err(Error::Validation(format!(
                    "selected category {name:?} is not defined"
                )));
            }
        }
        if self.categories.iter().any(|c| c.name.trim().is_empty()) {
            return Err(Error::Validation("category without a name".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lex: CategoryLexicon = serde_json::from_str(&text)?;
        lex.validate()?;
        Ok(lex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readability {
    pub fog: f64,
    pub fre: f64,
    pub lwf: f64,
    pub dcr: f64,
}

/// Words known to most readers, with a light inflection fallback
/// (`cats` → `cat`, `walked` → `walk`).
#[derive(Debug, Clone)]
pub struct EasyWords(HashSet<String>);

impl Default for EasyWords {
    fn default() -> Self {
        EasyWords::new(parse_word_list(EASY_WORDS))
    }
}

impl EasyWords {
    pub fn new<I: IntoIterator<Item = String>>(words: I) -> Self {
        EasyWords(words.into_iter().map(|w| w.to_lowercase()).collect())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(EasyWords::new(crate::textproc::load_word_list(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        if self.0.contains(word) {
            return true;
        }
        ["s", "es", "ed", "d", "ing"]
            .iter()
            .filter_map(|suffix| word.strip_suffix(suffix))
            .any(|stem| stem.len() >= 2 && self.0.contains(stem))
    }
}

/// FOG, FRE, LWF and DCR for one tokenized document. Documents without
/// words score zero on all four.
pub fn readability(doc: &TokenizedDocument, easy: &EasyWords) -> Readability {
    let words: Vec<(&str, usize)> = doc.words().collect();
    let w = words.len();
    if w == 0 {
        return Readability {
            fog: 0.0,
            fre: 0.0,
            lwf: 0.0,
            dcr: 0.0,
        };
    }
    let s = doc.sentence_count().max(1) as f64;
    let wf = w as f64;
    let syllables: Vec<usize> = words.iter().map(|(t, _)| count_syllables(t)).collect();
    let complex = syllables.iter().filter(|&&n| n >= 3).count() as f64;
    let total_syllables: usize = syllables.iter().sum();
    let difficult = words.iter().filter(|(t, _)| !easy.contains(t)).count() as f64;

    let fog = 0.4 * (wf / s + 100.0 * complex / wf);
    let fre = 206.835 - 1.015 * (wf / s) - 84.6 * (total_syllables as f64 / wf);

    let window = w.min(100);
    let (mut easy_n, mut hard_n) = (0usize, 0usize);
    let mut window_sentences = HashSet::new();
    for (i, (_, sent)) in words.iter().take(window).enumerate() {
        if syllables[i] >= 3 {
            hard_n += 1;
        } else {
            easy_n += 1;
        }
        window_sentences.insert(*sent);
    }
    let raw = (easy_n + 3 * hard_n) as f64 / window_sentences.len().max(1) as f64;
    let lwf = if raw > 20.0 {
        raw / 2.0
    } else {
        (raw - 2.0) / 2.0
    };

    let pct_difficult = 100.0 * difficult / wf;
    let mut dcr = 0.1579 * pct_difficult + 0.0496 * (wf / s);
    if difficult / wf > 0.05 {
        dcr += 3.6365;
    }
    Readability { fog, fre, lwf, dcr }
}

/// Feature-extraction switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetadataConfig {
    /// When false the month column is held at zero.
    pub include_month: bool,
}

impl Default for MetadataConfig {
    fn default() -> Self {
        MetadataConfig {
            include_month: true,
        }
    }
}

/// Everything needed to turn messages into a [`MetadataVector`].
#[derive(Debug, Clone)]
pub struct MetadataExtractor {
    tokenizer: Tokenizer,
    phrases: PhraseLexicon,
    phrase_tokens: PhraseTokens,
    categories: Vec<CompiledCategory>,
    easy: EasyWords,
    irregular_past: HashSet<String>,
    config: MetadataConfig,
}

#[derive(Debug, Clone)]
struct PhraseTokens {
    depression: Vec<Vec<String>>,
    anxiety: Vec<Vec<String>>,
    therapist: Vec<Vec<String>>,
    diagnosis: Vec<Vec<String>>,
    targets: HashSet<String>,
    antidepressants: HashSet<String>,
}

fn split_phrases(v: &[String]) -> Vec<Vec<String>> {
    v.iter()
        .map(|p| p.split_whitespace().map(str::to_string).collect())
        .collect()
}

fn count_phrase(tokens: &[String], phrase: &[String]) -> usize {
    if phrase.is_empty() || tokens.len() < phrase.len() {
        return 0;
    }
    tokens
        .windows(phrase.len())
        .filter(|w| *w == phrase)
        .count()
}

impl Default for MetadataExtractor {
    fn default() -> Self {
        MetadataExtractor::new(
            Tokenizer::default(),
            PhraseLexicon::default(),
            CategoryLexicon::default(),
            EasyWords::default(),
            MetadataConfig::default(),
        )
        .expect("bundled lexicons are valid")
    }
}

impl MetadataExtractor {
    pub fn new(
        tokenizer: Tokenizer,
        phrases: PhraseLexicon,
        categories: CategoryLexicon,
        easy: EasyWords,
        config: MetadataConfig,
    ) -> Result<Self> {
        phrases.validate()?;
        categories.validate()?;
        let compiled = categories
            .selected
            .iter()
            .map(|name| {
                categories
                    .categories
                    .iter()
                    .find(|c| &c.name == name)
                    .expect("validated")
                    .compile()
            })
            .collect();
        let phrase_tokens = PhraseTokens {
            depression: split_phrases(&phrases.depression),
            anxiety: split_phrases(&phrases.anxiety),
            therapist: split_phrases(&phrases.therapist),
            diagnosis: split_phrases(&phrases.diagnosis_patterns),
            targets: phrases.diagnosis_targets.iter().cloned().collect(),
            antidepressants: phrases.antidepressants.iter().cloned().collect(),
        };
        Ok(MetadataExtractor {
            tokenizer,
            phrases,
            phrase_tokens,
            categories: compiled,
            easy,
            irregular_past: parse_word_list(IRREGULAR_PAST).into_iter().collect(),
            config,
        })
    }

    pub fn with_config(mut self, config: MetadataConfig) -> Self {
        self.config = config;
        self
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn config(&self) -> MetadataConfig {
        self.config
    }

    fn is_past_tense(&self, token: &str) -> bool {
        if self.irregular_past.contains(token) {
            return true;
        }
        token.len() >= 4
            && token.ends_with("ed")
            && token.chars().all(|c| c.is_ascii_alphabetic())
            && !ED_EXCEPTIONS.contains(&token)
    }

    fn count_diagnosis(&self, tokens: &[String]) -> usize {
        let pt = &self.phrase_tokens;
        let window = self.phrases.diagnosis_window;
        let mut count = 0;
        let mut i = 0;
        'outer: while i < tokens.len() {
            for pattern in &pt.diagnosis {
                let end = i + pattern.len();
                if end <= tokens.len() && tokens[i..end] == pattern[..] {
                    let tail = &tokens[end..(end + window).min(tokens.len())];
                    if tail.iter().any(|t| pt.targets.contains(t)) {
                        count += 1;
                        i = end;
                        continue 'outer;
                    }
                }
            }
            i += 1;
        }
        count
    }

    /// Raw per-document values. Flag slots hold counts, not ±1.
    /// Returns `None` for empty messages.
    pub fn document_features(&self, message: &Message) -> Option<[f64; N_FEATURES]> {
        if message.is_empty() {
            return None;
        }
        let title = self.tokenizer.tokenize(&message.title);
        let body = self.tokenizer.tokenize(&message.body);
        let joined = self
            .tokenizer
            .tokenize(&format!("{}\n{}", message.title, message.body));
        let tokens = joined.tokens();
        let count_in = |doc: &TokenizedDocument, word: &str| {
            doc.tokens().iter().filter(|t| *t == word).count()
        };
        let count_list =
            |list: &[&str]| tokens.iter().filter(|t| list.contains(&t.as_str())).count();

        let mut f = [0.0; N_FEATURES];
        f[0] = count_in(&body, "i") as f64;
        f[1] = count_in(&title, "i") as f64;
        f[2] = count_list(POSSESSIVE_PRONOUNS) as f64;
        f[3] = count_list(PERSONAL_PRONOUNS) as f64;
        f[4] = tokens.iter().filter(|t| self.is_past_tense(t)).count() as f64;
        let r = readability(&joined, &self.easy);
        f[5] = r.fog;
        f[6] = r.fre;
        f[7] = r.lwf;
        f[8] = r.dcr;
        if self.config.include_month {
            let dt = DateTime::from_timestamp(message.timestamp as i64, 0).unwrap_or_default();
            f[9] = dt.month() as f64;
        }
        f[10] = body.len() as f64;
        f[11] = title.len() as f64;

        let pt = &self.phrase_tokens;
        let sum_phrases = |phrases: &[Vec<String>]| {
            phrases
                .iter()
                .map(|p| count_phrase(tokens, p))
                .sum::<usize>() as f64
        };
        f[12] = sum_phrases(&pt.depression);
        f[13] = sum_phrases(&pt.anxiety);
        f[14] = sum_phrases(&pt.therapist);
        f[15] = self.count_diagnosis(tokens) as f64;
        f[16] = tokens
            .iter()
            .filter(|t| pt.antidepressants.contains(*t))
            .count() as f64;

        for (i, cat) in self.categories.iter().enumerate() {
            f[17 + i] = tokens.iter().filter(|t| cat.matches(t)).count() as f64;
        }
        Some(f)
    }

    /// Averages per-document rows and turns the summed phrase counts into flags.
    pub fn aggregate<'a, I>(docs: I) -> MetadataVector
    where
        I: IntoIterator<Item = &'a [f64; N_FEATURES]>,
    {
        let mut sum = [0.0; N_FEATURES];
        let mut n = 0usize;
        for d in docs {
            for (s, x) in sum.iter_mut().zip(d.iter()) {
                *s += x;
            }
            n += 1;
        }
        let mut out = [0.0; N_FEATURES];
        for (i, o) in out.iter_mut().enumerate() {
            *o = if FLAG_DIMS.contains(&i) {
                if sum[i] > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            } else if n > 0 {
                sum[i] / n as f64
            } else {
                0.0
            };
        }
        MetadataVector(out)
    }

    pub fn extract_messages(&self, messages: &[Message]) -> MetadataVector {
        let docs: Vec<[f64; N_FEATURES]> = messages
            .iter()
            .filter_map(|m| self.document_features(m))
            .collect();
        Self::aggregate(docs.iter())
    }

    pub fn extract(&self, user: &UserRecord) -> MetadataVector {
        self.extract_messages(&user.messages)
    }

    /// Extracts every user in parallel; output order follows `users`.
    pub fn extract_all(&self, users: &[UserRecord]) -> Vec<MetadataVector> {
        users.par_iter().map(|u| self.extract(u)).collect()
    }
}

/// Extracts with the bundled tokenizer and easy-word list.
pub fn extract_metadata(
    user: &UserRecord,
    phrases: &PhraseLexicon,
    categories: &CategoryLexicon,
) -> Result<MetadataVector> {
    let ex = MetadataExtractor::new(
        Tokenizer::default(),
        phrases.clone(),
        categories.clone(),
        EasyWords::default(),
        MetadataConfig::default(),
    )?;
    Ok(ex.extract(user))
}

/// Column-wise z-scoring fitted on training rows. Bypassed dimensions pass
/// through unchanged; constant columns get scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub bypass: Vec<bool>,
}

impl Standardizer {
    pub fn fit_with_mask(rows: &[Vec<f64>], bypass: Vec<bool>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Validation(format!(
                "standardizer needs at least 2 training vectors, got {}",
                rows.len()
            )));
        }
        let dim = bypass.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Shape(format!(
                "expected {dim} columns, got {}",
                bad.len()
            )));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        for j in 0..dim {
            if bypass[j] {
                mean[j] = 0.0;
                continue;
            }
            let mu = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / n;
            mean[j] = mu;
            let sd = var.sqrt();
            scale[j] = if sd > 1e-12 && sd.is_finite() {
                sd
            } else {
                1.0
            };
        }
        Ok(Standardizer {
            mean,
            scale,
            bypass,
        })
    }

    /// Fits on metadata vectors, bypassing the ±1 flag dimensions.
    pub fn fit(train: &[MetadataVector]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = train.iter().map(MetadataVector::to_vec).collect();
        let bypass = (0..N_FEATURES).map(|i| FLAG_DIMS.contains(&i)).collect();
        Standardizer::fit_with_mask(&rows, bypass)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} columns, got {}",
                self.mean.len(),
                x.len()
            )));
        }
        Ok(x.iter()
            .enumerate()
            .map(|(j, &v)| {
                if self.bypass[j] {
                    v
                } else {
                    (v - self.mean[j]) / self.scale[j]
                }
            })
            .collect())
    }
}

/// Writes `user_id` followed by the 27 named feature columns.
pub fn write_features_csv<W: Write>(writer: W, rows: &[(&str, MetadataVector)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id"];
    header.extend_from_slice(&FEATURE_NAMES);
    w.write_record(&header)?;
    for (id, v) in rows {
        let mut rec = vec![id.to_string()];
        rec.extend(v.0.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}
