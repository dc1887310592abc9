//! Users, messages, corpus ingestion, chronological chunking, the synthetic
//! corpus generator and the timestamp-leakage audit.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::classifiers::{predict_logistic, train_logistic, LogisticConfig};
use crate::error::{Error, Result};
use crate::metadata::Standardizer;
use crate::metrics::{prf, DecisionLog, DecisionRecord};

/// Binary class of a user. Serialized as `0` (negative) or `1` (positive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

/// One post or comment. Either field may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    #[serde(default)]
    pub title: String,
    #[serde(rename = "text", default)]
    pub body: String,
    /// Seconds since the Unix epoch, UTC.
    #[serde(rename = "date")]
    pub timestamp: u64,
}

impl Message {
    pub fn new(title: impl Into<String>, body: impl Into<String>, timestamp: u64) -> Self {
        Message {
            title: title.into(),
            body: body.into(),
            timestamp,
        }
    }

    /// Messages with neither title nor body text are kept for chunk counts
    /// but ignored by every feature extractor.
    pub fn is_empty(&self) -> bool {
        self.title.trim().is_empty() && self.body.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub messages: Vec<Message>,
}

impl UserRecord {
    pub fn new(
        user_id: impl Into<String>,
        label: Option<Label>,
        mut messages: Vec<Message>,
    ) -> Self {
        messages.sort_by_key(|m| m.timestamp);
        UserRecord {
            user_id: user_id.into(),
            label,
            messages,
        }
    }

    pub fn empty_count(&self) -> usize {
        self.messages.iter().filter(|m| m.is_empty()).count()
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.messages.last().map(|m| m.timestamp)
    }

    pub fn require_label(&self) -> Result<Label> {
        self.label
            .ok_or_else(|| Error::Validation(format!("user {} has no label", self.user_id)))
    }
}

/// Parses a JSON-lines corpus where every user must carry a label.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<UserRecord>> {
    parse_corpus_with(reader, true)
}

/// Parses a JSON-lines corpus. With `require_labels = false` the `label`
/// field may be omitted, as in inference-only corpora.
pub fn parse_corpus_with<R: BufRead>(reader: R, require_labels: bool) -> Result<Vec<UserRecord>> {
    let mut users = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let user: UserRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if require_labels && user.label.is_none() {
            return Err(Error::Parse {
                line: line_no,
                message: "missing field `label`".into(),
            });
        }
        if user.messages.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("user {} has no messages", user.user_id),
            });
        }
        if !seen.insert(user.user_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate user_id {} at line {line_no}",
                user.user_id
            )));
        }
        users.push(UserRecord::new(user.user_id, user.label, user.messages));
    }
    Ok(users)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<UserRecord>> {
    load_corpus_with(path, true)
}

pub fn load_corpus_with(path: impl AsRef<Path>, require_labels: bool) -> Result<Vec<UserRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_with(BufReader::new(file), require_labels)
}

pub fn write_corpus<W: Write>(mut writer: W, users: &[UserRecord]) -> Result<()> {
    for user in users {
        serde_json::to_writer(&mut writer, user)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, users: &[UserRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_corpus(&mut w, users)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Sequential-release view of one user: chunk `i` (1-based) covers message
/// indices `[floor((i-1)·n/c), floor(i·n/c))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkStream<'a> {
    pub user_id: &'a str,
    pub chunks: Vec<&'a [Message]>,
    pub cumulative_counts: Vec<usize>,
    pub total_messages: usize,
}

impl<'a> ChunkStream<'a> {
    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }

    /// Messages readable after releasing chunk `chunk` (1-based).
    pub fn prefix(&self, messages: &'a [Message], chunk: usize) -> &'a [Message] {
        &messages[..self.cumulative_counts[chunk - 1]]
    }
}

pub fn chunk_boundaries(n_messages: usize, n_chunks: usize) -> Result<Vec<usize>> {
    if n_chunks < 1 {
        return Err(Error::Argument("n_chunks must be at least 1".into()));
    }
    Ok((1..=n_chunks).map(|i| i * n_messages / n_chunks).collect())
}

pub fn chunk_user(user: &UserRecord, n_chunks: usize) -> Result<ChunkStream<'_>> {
    if user.messages.is_empty() {
        return Err(Error::Argument(format!(
            "user {} has no messages",
            user.user_id
        )));
    }
    let cumulative_counts = chunk_boundaries(user.messages.len(), n_chunks)?;
    let mut start = 0;
    let chunks = cumulative_counts
        .iter()
        .map(|&end| {
            let c = &user.messages[start..end];
            start = end;
            c
        })
        .collect();
    Ok(ChunkStream {
        user_id: &user.user_id,
        chunks,
        cumulative_counts,
        total_messages: user.messages.len(),
    })
}

/// Knobs for [`generate_synthetic_corpus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorProfile {
    pub min_messages: usize,
    pub max_messages: usize,
    /// Message counts are rounded up to a multiple of this value.
    pub message_count_step: usize,
    /// Negative users' final posts cluster right before the collection date.
    pub timestamp_leak: bool,
    pub empty_message_rate: f64,
    /// Probability that a positive user's message carries an explicit signal phrase.
    pub signal_rate: f64,
    /// Probability that a positive user's message is written in the first person.
    pub first_person_rate: f64,
    /// Probability that a negative user's message is written in the first person.
    pub control_first_person_rate: f64,
    pub id_prefix: String,
    /// Collection date (seconds since epoch); all timestamps fall before it.
    pub collection_time: u64,
}

impl Default for GeneratorProfile {
    fn default() -> Self {
        GeneratorProfile {
            min_messages: 10,
            max_messages: 200,
            message_count_step: 1,
            timestamp_leak: false,
            empty_message_rate: 0.002,
            signal_rate: 0.2,
            first_person_rate: 0.6,
            control_first_person_rate: 0.1,
            id_prefix: "subject".into(),
            // 2017-01-01T00:00:00Z
            collection_time: 1_483_228_800,
        }
    }
}

const DAY: u64 = 86_400;
const YEAR: u64 = 365 * DAY;

const SIGNAL_TEXTS: &[&str] = &[
    "I was diagnosed with depression {when} and I am still trying to process it.",
    "I've been diagnosed with anxiety and depression, and some days I can't get out of bed.",
    "I was diagnosed with major depressive disorder {when}.",
    "My depression has been really bad {when} and I feel so alone.",
    "My depression makes it hard for me to talk to anyone about {thing}.",
    "My therapist says I should write down how I feel every day.",
    "I talked to my therapist about {thing} and I cried the whole session.",
    "My anxiety was so bad {when} that I stayed home again.",
    "I started taking {drug} {when} and I feel numb.",
    "I switched from {drug} to {drug2} because I kept having panic attacks.",
    "I have been on {drug} for a while and my doctor wants to raise the dose.",
];

const FIRST_PERSON_TEXTS: &[&str] = &[
    "I feel so tired all the time and I don't know why.",
    "I tried to go out {when} but I stayed in bed instead.",
    "I can't stop thinking about {thing} and it keeps me awake.",
    "I hate how I always ruin everything for myself.",
    "I wish I could just disappear for a while.",
    "I don't think anyone would notice if I was gone.",
    "I used to love {thing} but now I feel nothing.",
    "I cried again {when} and I couldn't explain why to my friends.",
    "I keep telling myself it will get better but I don't believe it.",
    "I am exhausted and I feel like a failure.",
    "Does anyone else feel empty all the time? I do, and I'm scared.",
    "I slept for fourteen hours and I still feel drained.",
];

const NEUTRAL_TITLES: &[&str] = &[
    "Scientists discover new species of frog in the Amazon",
    "City council approves new budget for road repairs",
    "Stock markets close higher after strong earnings reports",
    "New study links coffee consumption to longer life",
    "Local team wins championship after dramatic overtime",
    "Government announces plan to expand rail network",
    "Tech company unveils new smartphone lineup",
    "Heavy snowfall expected across the region this weekend",
    "Museum opens exhibition on ancient Roman engineering",
    "Researchers develop cheaper method for solar panels",
    "Best budget laptops for students this year",
    "Photo of the mountains near the lake at sunset",
];

const NEUTRAL_TEXTS: &[&str] = &[
    "The game {when} was amazing, that defense was incredible.",
    "This recipe works better with fresh basil and a little lemon.",
    "The update fixed most of the lag issues on older hardware.",
    "That is a great point about {thing}, the article misses it.",
    "The new patch notes are out and the changes look solid.",
    "Source? The numbers in the chart do not add up.",
    "Great photo, the colors are really nice.",
    "The trailer looks good but the release date keeps moving.",
    "This thread is hilarious.",
    "The bridge was closed for repairs most of {when}.",
    "Prices went up again, the shop on the corner is cheaper.",
    "Check the sidebar, the answer is in the wiki.",
];

const CONTROL_FIRST_PERSON_TEXTS: &[&str] = &[
    "I think the new update fixed the lag.",
    "I bought the same model {when} and it works great.",
    "I went hiking {when} and the view was worth it.",
];

const WHEN: &[&str] = &[
    "last year",
    "last week",
    "yesterday",
    "two months ago",
    "this morning",
    "over the summer",
];

const THINGS: &[&str] = &[
    "work",
    "school",
    "my family",
    "music",
    "the future",
    "my old friends",
    "painting",
    "games",
];

const DRUGS: &[&str] = &[
    "zoloft",
    "paxil",
    "prozac",
    "lexapro",
    "wellbutrin",
    "effexor",
    "cymbalta",
    "sertraline",
];

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn fill_template<R: Rng>(rng: &mut R, template: &str) -> String {
    let drug = pick(rng, DRUGS);
    let mut drug2 = pick(rng, DRUGS);
    while drug2 == drug {
        drug2 = pick(rng, DRUGS);
    }
    template
        .replace("{when}", pick(rng, WHEN))
        .replace("{thing}", pick(rng, THINGS))
        .replace("{drug2}", drug2)
        .replace("{drug}", drug)
}

/// Places `text` as a title-only post, a comment, or a titled text post.
fn shape_message<R: Rng>(rng: &mut R, text: String, as_title: bool) -> (String, String) {
    if as_title {
        return (text, String::new());
    }
    match rng.gen_range(0..10) {
        0 => (pick(rng, NEUTRAL_TITLES).to_string(), text),
        _ => (String::new(), text),
    }
}

fn synth_message_text<R: Rng>(
    rng: &mut R,
    positive: bool,
    profile: &GeneratorProfile,
) -> (String, String) {
    if positive {
        let r: f64 = rng.gen();
        if r < profile.signal_rate {
            let t = {
                let tpl = pick(rng, SIGNAL_TEXTS);
                fill_template(rng, tpl)
            };
            return shape_message(rng, t, false);
        }
        if r < profile.signal_rate + profile.first_person_rate {
            let t = {
                let tpl = pick(rng, FIRST_PERSON_TEXTS);
                fill_template(rng, tpl)
            };
            return shape_message(rng, t, false);
        }
    } else if rng.gen_bool(profile.control_first_person_rate.clamp(0.0, 1.0)) {
        let t = {
            let tpl = pick(rng, CONTROL_FIRST_PERSON_TEXTS);
            fill_template(rng, tpl)
        };
        return shape_message(rng, t, false);
    }
    if rng.gen_bool(0.5) {
        let t = pick(rng, NEUTRAL_TITLES).to_string();
        shape_message(rng, t, true)
    } else {
        let t = {
            let tpl = pick(rng, NEUTRAL_TEXTS);
            fill_template(rng, tpl)
        };
        shape_message(rng, t, false)
    }
}

fn synth_user<R: Rng>(
    rng: &mut R,
    user_id: String,
    label: Label,
    profile: &GeneratorProfile,
) -> UserRecord {
    let step = profile.message_count_step.max(1);
    let drawn = rng.gen_range(profile.min_messages..=profile.max_messages);
    let n = drawn.div_ceil(step) * step;

    // Gaps between consecutive posts, then shift the series so it ends at `end`.
    let gaps: Vec<u64> = (1..n).map(|_| rng.gen_range(3_600..5 * DAY)).collect();
    let span: u64 = gaps.iter().sum();
    let collect = profile.collection_time;
    let end = if profile.timestamp_leak {
        match label {
            Label::Negative => collect - rng.gen_range(0..30 * DAY),
            Label::Positive => collect - rng.gen_range(YEAR..2 * YEAR),
        }
    } else {
        collect - rng.gen_range(0..2 * YEAR)
    };
    let start = end.saturating_sub(span);

    let mut ts = start;
    let mut messages = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            ts += gaps[i - 1];
        }
        let (title, body) = if rng.gen_bool(profile.empty_message_rate.clamp(0.0, 1.0)) {
            (String::new(), String::new())
        } else {
            synth_message_text(rng, label.is_positive(), profile)
        };
        messages.push(Message::new(title, body, ts));
    }
    UserRecord::new(user_id, Some(label), messages)
}

/// Builds a labeled corpus whose positive users carry first-person and
/// explicit self-disclosure language while negative users post neutral,
/// news-like content. Deterministic for a fixed seed.
pub fn generate_synthetic_corpus(
    n_positive: usize,
    n_negative: usize,
    seed: u64,
    profile: &GeneratorProfile,
) -> Result<Vec<UserRecord>> {
    if profile.min_messages < 1 || profile.min_messages > profile.max_messages {
        return Err(Error::Argument(format!(
            "message range {}..={} is invalid",
            profile.min_messages, profile.max_messages
        )));
    }
    for (name, p) in [
        ("empty_message_rate", profile.empty_message_rate),
        ("signal_rate", profile.signal_rate),
        ("first_person_rate", profile.first_person_rate),
        (
            "control_first_person_rate",
            profile.control_first_person_rate,
        ),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Argument(format!(
                "{name} must lie in [0, 1], got {p}"
            )));
        }
    }
    if profile.collection_time < 3 * YEAR + 200 * 5 * DAY {
        return Err(Error::Argument("collection_time is too early".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Positive, n_positive)
        .chain(std::iter::repeat_n(Label::Negative, n_negative))
        .collect();
    labels.shuffle(&mut rng);

    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let id = format!("{}_{}", profile.id_prefix, i + 1);
            synth_user(&mut rng, id, label, profile)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Raw latest-post timestamp above which a user is predicted positive,
    /// or `None` when the fitted rule predicts the same class everywhere.
    pub decision_boundary: Option<f64>,
    /// True when the boundary points at later timestamps being positive.
    pub later_is_positive: bool,
    pub warn_threshold: f64,
    pub warning: Option<String>,
}

/// Fits a logistic regression on the single feature "timestamp of the
/// latest post" and reports how well it separates the test users.
pub fn audit_timestamp_leak(
    train: &[UserRecord],
    test: &[UserRecord],
    warn_threshold: f64,
) -> Result<LeakReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Validation(
            "leak audit needs non-empty train and test sets".into(),
        ));
    }
    let feature = |u: &UserRecord| -> Result<Vec<f64>> {
        let ts = u
            .last_timestamp()
            .ok_or_else(|| Error::Validation(format!("user {} has no messages", u.user_id)))?;
        Ok(vec![ts as f64])
    };
    let train_x = train.iter().map(feature).collect::<Result<Vec<_>>>()?;
    let train_y = train
        .iter()
        .map(|u| u.require_label().map(Label::is_positive))
        .collect::<Result<Vec<_>>>()?;
    if !train_y.iter().any(|&y| y) || train_y.iter().all(|&y| y) {
        return Err(Error::Validation(
            "leak audit training set lacks one of the classes".into(),
        ));
    }

    let std = Standardizer::fit_with_mask(&train_x, vec![false])?;
    let scaled: Vec<Vec<f64>> = train_x
        .iter()
        .map(|x| std.apply(x))
        .collect::<Result<_>>()?;
    let cfg = LogisticConfig {
        learning_rate: 0.5,
        epochs: 2000,
        l2_weight: 0.0,
    };
    let model = train_logistic(&scaled, &train_y, &cfg)?;

    let mut records = Vec::with_capacity(test.len());
    for u in test {
        let x = std.apply(&feature(u)?)?;
        let p = predict_logistic(&model, &x)?;
        records.push(DecisionRecord {
            user_id: u.user_id.clone(),
            truth: u.require_label()?,
            verdict: Label::from_bool(p > 0.5),
            k: u.messages.len(),
            n_d: u.messages.len(),
        });
    }
    let scores = prf(&DecisionLog::new(records)?);

    let w = model.weights[0];
    let decision_boundary = (w != 0.0).then(|| std.mean[0] - model.bias / w * std.scale[0]);
    let warning = (scores.f1 > warn_threshold).then(|| {
        format!(
            "latest-post timestamp alone reaches F1 = {:.2} (> {warn_threshold}); the corpus leaks the label through collection time",
            scores.f1
        )
    });
    Ok(LeakReport {
        f1: scores.f1,
        precision: scores.precision,
        recall: scores.recall,
        decision_boundary,
        later_is_positive: w > 0.0,
        warn_threshold,
        warning,
    })
}
