use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use earlyrisk::classifiers::LogisticConfig;
use earlyrisk::corpus::GeneratorProfile;
use earlyrisk::metadata::{
    CategoryLexicon, EasyWords, MetadataConfig, MetadataExtractor, PhraseLexicon,
};
use earlyrisk::metrics::ReportConfig;
use earlyrisk::neuralnet::TrainConfig;
use earlyrisk::simulator::PolicyMode;
use earlyrisk::textproc::Tokenizer;
use earlyrisk::{Error, Result};
use serde::{Deserialize, Serialize};

pub const LEXICON_ENV: &str = "EARLYRISK_LEXICON_DIR";

/// Network shape settings; the embedding width always comes from the
/// vector file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSection {
    pub seq_len: Option<usize>,
    pub n_filters: Option<usize>,
    pub filter_height: Option<usize>,
    pub fc_sizes: Option<[usize; 3]>,
    pub dropout_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub threshold: Option<f64>,
    pub mode: Option<PolicyMode>,
    pub n_chunks: Option<usize>,
}

/// Settings read from `--config`. Command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub lexicon_dir: Option<PathBuf>,
    pub generator: Option<GeneratorProfile>,
    pub metadata: Option<MetadataConfig>,
    pub logistic: Option<LogisticConfig>,
    pub cnn: CnnSection,
    pub train: Option<TrainConfig>,
    pub policy: PolicySection,
    pub report: Option<ReportConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Lexicon directory from the flag, the config file or the environment,
/// in that order.
pub fn lexicon_dir(flag: Option<&Path>, file: &FileConfig) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| file.lexicon_dir.clone())
        .or_else(|| {
            env::var_os(LEXICON_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
}

/// Tokenizer using `emoticons.txt` from the lexicon directory when present.
pub fn tokenizer(dir: Option<&Path>) -> Result<Tokenizer> {
    match dir.map(|d| d.join("emoticons.txt")).filter(|p| p.is_file()) {
        Some(p) => Tokenizer::from_file(p),
        None => Ok(Tokenizer::default()),
    }
}

/// Builds the extractor. Files missing from the lexicon directory fall back
/// to the bundled lists: `phrases.json`, `categories.json`,
/// `easy_words.txt` and `emoticons.txt`.
pub fn extractor(dir: Option<&Path>, metadata: MetadataConfig) -> Result<MetadataExtractor> {
    if let Some(d) = dir {
        if !d.is_dir() {
            return Err(Error::io(
                d,
                std::io::Error::new(std::io::ErrorKind::NotFound, "lexicon directory not found"),
            ));
        }
    }
    let file = |name: &str| dir.map(|d| d.join(name)).filter(|p| p.is_file());
    let phrases = match file("phrases.json") {
        Some(p) => PhraseLexicon::from_json_file(p)?,
        None => PhraseLexicon::default(),
    };
    let categories = match file("categories.json") {
        Some(p) => CategoryLexicon::from_json_file(p)?,
        None => CategoryLexicon::default(),
    };
    let easy = match file("easy_words.txt") {
        Some(p) => EasyWords::from_file(p)?,
        None => EasyWords::default(),
    };
    MetadataExtractor::new(tokenizer(dir)?, phrases, categories, easy, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file() {
        let file = FileConfig {
            lexicon_dir: Some("from-file".into()),
            ..FileConfig::default()
        };
        assert_eq!(
            lexicon_dir(Some(Path::new("flag")), &file),
            Some(PathBuf::from("flag"))
        );
        assert_eq!(lexicon_dir(None, &file), Some(PathBuf::from("from-file")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"sed": 1}"#).is_err());
        let c: FileConfig = serde_json::from_str(r#"{"seed": 4, "cnn": {"seq_len": 9}}"#).unwrap();
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.cnn.seq_len, Some(9));
    }

    #[test]
    fn missing_lexicon_dir_is_io() {
        let err =
            extractor(Some(Path::new("/no/such/dir")), MetadataConfig::default()).unwrap_err();
        assert!(err.is_io());
    }
}
