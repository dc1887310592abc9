//! Word-vector tables in the plain-text `token v1 v2 ... vD` format,
//! cosine nearest neighbours and the word-analogy benchmark.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    index: HashMap<String, usize>,
    words: Vec<String>,
    /// Row-major |V| × dim.
    data: Vec<f64>,
    norms: Vec<f64>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument(
                "embedding dimension must be positive".into(),
            ));
        }
        let mut table = EmbeddingTable {
            index: HashMap::new(),
            words: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
            dim,
        };
        for (i, (word, v)) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "row {i} has {} values, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("row {i} ({word})")));
            }
            table.push(word, &v);
        }
        Ok(table)
    }

    fn push(&mut self, word: String, v: &[f64]) -> bool {
        if self.index.contains_key(&word) {
            return false;
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.data.extend_from_slice(v);
        self.norms.push(v.iter().map(|x| x * x).sum::<f64>().sqrt());
        true
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact-match lookup; out-of-vocabulary tokens are `None`.
    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.row(i))
    }

    /// Cosine similarity of `v` (with norm `v_norm`) to every non-zero row.
    fn cosines<'a>(&'a self, v: &'a [f64], v_norm: f64) -> impl Iterator<Item = (usize, f64)> + 'a {
        (0..self.len())
            .filter(|&i| self.norms[i] > 0.0)
            .map(move |i| {
                let dot: f64 = self.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
                (i, dot / (self.norms[i] * v_norm))
            })
    }

    /// The `k` most cosine-similar tokens, most similar first. Ties go to
    /// the lower vocabulary index. The query itself and zero rows are skipped.
    pub fn nearest_neighbors(&self, token: &str, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        let q = self
            .index_of(token)
            .ok_or_else(|| Error::Query(format!("token {token:?} is not in the vocabulary")))?;
        let qn = self.norms[q];
        if qn == 0.0 {
            return Err(Error::Query(format!("token {token:?} has a zero vector")));
        }
        let mut scored: Vec<(usize, f64)> = self
            .cosines(self.row(q), qn)
            .filter(|&(i, _)| i != q)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, c)| (self.words[i].clone(), c))
            .collect())
    }
}

/// Reads a text vector file. An optional first line `count dim` is
/// honoured; duplicate tokens keep their first row; `limit` caps the
/// vocabulary size.
pub fn parse_embeddings<R: BufRead>(reader: R, limit: Option<usize>) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    let mut declared_dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if line_no == 1 && rest.len() == 1 {
            if let (Ok(_), Ok(d)) = (token.parse::<usize>(), rest[0].parse::<usize>()) {
                declared_dim = Some(d);
                continue;
            }
        }
        if let Some(lim) = limit {
            if table.as_ref().map_or(0, |t| t.len()) >= lim {
                break;
            }
        }
        let values = rest
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("bad value {s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("non-finite value {bad}"),
            });
        }
        let expected = table
            .as_ref()
            .map(|t| t.dim)
            .or(declared_dim)
            .unwrap_or(values.len());
        if values.len() != expected || expected == 0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {expected} values, found {}", values.len()),
            });
        }
        let t = table.get_or_insert_with(|| EmbeddingTable {
            index: HashMap::new(),
            words: Vec::new(),
            data: Vec::new(),
            norms: Vec::new(),
            dim: expected,
        });
        t.push(token.to_string(), &values);
    }
    table.ok_or_else(|| Error::Parse {
        line: 0,
        message: "no vectors found".into(),
    })
}

pub fn load_embeddings(path: impl AsRef<Path>, limit: Option<usize>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), limit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogySection {
    pub name: String,
    pub syntactic: bool,
    pub questions: Vec<[String; 4]>,
}

/// Questions grouped in `: section` blocks; sections whose name starts
/// with `gram` are syntactic, the rest semantic.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalogyDataset {
    pub sections: Vec<AnalogySection>,
}

impl AnalogyDataset {
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut sections: Vec<AnalogySection> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix(':') {
                let name = name.trim().to_string();
                sections.push(AnalogySection {
                    syntactic: name.starts_with("gram"),
                    name,
                    questions: Vec::new(),
                });
                continue;
            }
            let words: Vec<String> = trimmed.split_whitespace().map(str::to_lowercase).collect();
            let Ok(q) = <[String; 4]>::try_from(words) else {
                return Err(Error::Parse {
                    line: line_no,
                    message: "analogy question needs exactly four words".into(),
                });
            };
            if sections.is_empty() {
                sections.push(AnalogySection {
                    name: "default".into(),
                    syntactic: false,
                    questions: Vec::new(),
                });
            }
            sections.last_mut().unwrap().questions.push(q);
        }
        Ok(AnalogyDataset { sections })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        AnalogyDataset::parse(BufReader::new(file))
    }

    pub fn n_questions(&self) -> usize {
        self.sections.iter().map(|s| s.questions.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnalogyTally {
    pub correct: usize,
    pub attempted: usize,
    pub skipped: usize,
}

impl AnalogyTally {
    /// Accuracy rounded to an integer percent; 0 when nothing was attempted.
    pub fn percent(&self) -> u32 {
        if self.attempted == 0 {
            0
        } else {
            (100.0 * self.correct as f64 / self.attempted as f64).round() as u32
        }
    }

    fn add(&mut self, other: AnalogyTally) {
        self.correct += other.correct;
        self.attempted += other.attempted;
        self.skipped += other.skipped;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyReport {
    pub semantic: AnalogyTally,
    pub syntactic: AnalogyTally,
    pub total: AnalogyTally,
    pub semantic_pct: u32,
    pub syntactic_pct: u32,
    pub total_pct: u32,
}

/// Predicted answer for `a : b :: c : ?`, i.e. the word whose vector is
/// most cosine-similar to `b − a + c`, excluding the three query words.
pub fn solve_analogy(table: &EmbeddingTable, a: usize, b: usize, c: usize) -> Option<usize> {
    let dim = table.dim();
    let target: Vec<f64> = (0..dim)
        .map(|j| table.row(b)[j] - table.row(a)[j] + table.row(c)[j])
        .collect();
    let tn = target.iter().map(|x| x * x).sum::<f64>().sqrt();
    if tn == 0.0 {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, cos) in table.cosines(&target, tn) {
        if i == a || i == b || i == c {
            continue;
        }
        if best.is_none_or(|(_, bc)| cos > bc) {
            best = Some((i, cos));
        }
    }
    best.map(|(i, _)| i)
}

pub fn evaluate_analogies(
    table: &EmbeddingTable,
    dataset: &AnalogyDataset,
) -> Result<AnalogyReport> {
    if dataset.n_questions() == 0 {
        return Err(Error::Argument("analogy dataset is empty".into()));
    }
    let mut semantic = AnalogyTally::default();
    let mut syntactic = AnalogyTally::default();
    for section in &dataset.sections {
        let mut tally = AnalogyTally::default();
        for q in &section.questions {
            let ids: Option<Vec<usize>> = q.iter().map(|w| table.index_of(w)).collect();
            let Some(ids) = ids else {
                tally.skipped += 1;
                continue;
            };
            tally.attempted += 1;
            if solve_analogy(table, ids[0], ids[1], ids[2]) == Some(ids[3]) {
                tally.correct += 1;
            }
        }
        if section.syntactic {
            syntactic.add(tally);
        } else {
            semantic.add(tally);
        }
    }
    let mut total = semantic;
    total.add(syntactic);
    Ok(AnalogyReport {
        semantic_pct: semantic.percent(),
        syntactic_pct: syntactic.percent(),
        total_pct: total.percent(),
        semantic,
        syntactic,
        total,
    })
}
