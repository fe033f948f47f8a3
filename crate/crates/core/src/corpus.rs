//! Labeled-data and raw-corpus loading, validation, filtering, and splits.
//!
//! Labeled data is CSV (UTF-8, header required, RFC-style quoting, embedded
//! newlines allowed). Raw unlabeled corpora are one tweet per line with `\\`
//! and `\n` escapes so records stay line-oriented.

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing column `{0}` in labeled data header")]
    MissingColumn(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("input is not valid UTF-8 (line {0})")]
    NonUtf8Input(u64),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("validation fraction must be in (0,1), got {0}")]
    BadFraction(f64),
}

/// One labeled tweet: binary humor label, star-vote counts, and an optional
/// funniness average (absent when no score was assigned).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub is_humor: bool,
    pub votes_no: u32,
    pub votes_star: [u32; 5],
    pub funniness: Option<f64>,
}

impl LabeledExample {
    pub fn total_star_votes(&self) -> u32 {
        self.votes_star.iter().sum()
    }

    /// Vote-weighted mean of the 1..5 star ratings, if any were cast.
    pub fn vote_mean(&self) -> Option<f64> {
        let total = self.total_star_votes();
        if total == 0 {
            return None;
        }
        let weighted: f64 = self
            .votes_star
            .iter()
            .enumerate()
            .map(|(i, &n)| (i as f64 + 1.0) * f64::from(n))
            .sum();
        Some(weighted / f64::from(total))
    }
}

/// Column-name mapping for labeled CSV files. Defaults mirror the
/// competition-style schema; override via `csv.*` config keys when a file
/// uses different header names.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub id: String,
    pub text: String,
    pub is_humor: String,
    pub votes_no: String,
    pub votes_star: [String; 5],
    pub funniness: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            text: "text".into(),
            is_humor: "is_humor".into(),
            votes_no: "votes_no".into(),
            votes_star: [
                "votes_1".into(),
                "votes_2".into(),
                "votes_3".into(),
                "votes_4".into(),
                "votes_5".into(),
            ],
            funniness: "funniness_average".into(),
        }
    }
}

struct ColumnIndex {
    id: usize,
    text: usize,
    is_humor: usize,
    votes_no: Option<usize>,
    votes_star: [Option<usize>; 5],
    funniness: Option<usize>,
}

impl ColumnIndex {
    fn from_header(header: &[String], schema: &CsvSchema) -> Result<Self, CorpusError> {
        let find = |name: &str| header.iter().position(|h| h == name);
        let require = |name: &str| {
            find(name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
        };
        Ok(Self {
            id: require(&schema.id)?,
            text: require(&schema.text)?,
            is_humor: require(&schema.is_humor)?,
            votes_no: find(&schema.votes_no),
            votes_star: [
                find(&schema.votes_star[0]),
                find(&schema.votes_star[1]),
                find(&schema.votes_star[2]),
                find(&schema.votes_star[3]),
                find(&schema.votes_star[4]),
            ],
            funniness: find(&schema.funniness),
        })
    }
}

fn parse_bool(raw: &str, line: u64) -> Result<bool, CorpusError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(CorpusError::MalformedRow {
            line,
            reason: format!("cannot parse `{other}` as a boolean label"),
        }),
    }
}

fn parse_count(raw: &str, line: u64) -> Result<u32, CorpusError> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(0);
    }
    t.parse().map_err(|_| CorpusError::MalformedRow {
        line,
        reason: format!("cannot parse `{t}` as a non-negative count"),
    })
}

fn parse_funniness(raw: &str, line: u64) -> Result<Option<f64>, CorpusError> {
    let t = raw.trim();
    if t.is_empty() || t == "#N/A" {
        return Ok(None);
    }
    t.parse().map(Some).map_err(|_| CorpusError::MalformedRow {
        line,
        reason: format!("cannot parse `{t}` as a funniness score"),
    })
}

/// Load labeled examples from a CSV file using the default schema.
pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>, CorpusError> {
    load_labeled_with(path, &CsvSchema::default())
}

/// Load labeled examples with an explicit header mapping.
pub fn load_labeled_with(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<Vec<LabeledExample>, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);

    let line_of = |pos: Option<&csv::Position>| pos.map_or(0, csv::Position::line);

    let header: Vec<String> = {
        let raw = reader
            .byte_headers()
            .map_err(|e| csv_error(e, path))?
            .clone();
        raw.iter()
            .map(|f| {
                std::str::from_utf8(f)
                    .map(str::to_string)
                    .map_err(|_| CorpusError::NonUtf8Input(1))
            })
            .collect::<Result<_, _>>()?
    };
    let cols = ColumnIndex::from_header(&header, schema)?;

    let mut out = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(e, path)),
        }
        let line = line_of(record.position());
        let field = |i: usize| -> Result<&str, CorpusError> {
            let raw = record.get(i).ok_or_else(|| CorpusError::MalformedRow {
                line,
                reason: format!("missing field {i}"),
            })?;
            std::str::from_utf8(raw).map_err(|_| CorpusError::NonUtf8Input(line))
        };
        let mut votes_star = [0u32; 5];
        for (slot, idx) in votes_star.iter_mut().zip(cols.votes_star.iter()) {
            if let Some(i) = idx {
                *slot = parse_count(field(*i)?, line)?;
            }
        }
        out.push(LabeledExample {
            id: field(cols.id)?.to_string(),
            text: field(cols.text)?.to_string(),
            is_humor: parse_bool(field(cols.is_humor)?, line)?,
            votes_no: match cols.votes_no {
                Some(i) => parse_count(field(i)?, line)?,
                None => 0,
            },
            votes_star,
            funniness: match cols.funniness {
                Some(i) => parse_funniness(field(i)?, line)?,
                None => None,
            },
        });
    }
    Ok(out)
}

fn csv_error(e: csv::Error, path: &Path) -> CorpusError {
    let line = e.position().map_or(0, csv::Position::line);
    match e.kind() {
        csv::ErrorKind::Utf8 { .. } => CorpusError::NonUtf8Input(line),
        csv::ErrorKind::Io(_) => CorpusError::MalformedRow {
            line,
            reason: format!("I/O error reading {}", path.display()),
        },
        other => CorpusError::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Replace every absent funniness score with 0.0; present values unchanged.
pub fn fill_missing_scores(examples: &[LabeledExample]) -> Vec<LabeledExample> {
    examples
        .iter()
        .map(|e| LabeledExample {
            funniness: Some(e.funniness.unwrap_or(0.0)),
            ..e.clone()
        })
        .collect()
}

/// Consistency warning produced by [`validate_examples`]; never an error.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationWarning {
    pub id: String,
    pub message: String,
}

/// Check each example's funniness against the vote-weighted star mean.
pub fn validate_examples(examples: &[LabeledExample]) -> Vec<ValidationWarning> {
    let mut warnings = Vec::new();
    for e in examples {
        if let (Some(score), Some(mean)) = (e.funniness, e.vote_mean()) {
            if (score - mean).abs() > 5e-3 {
                warnings.push(ValidationWarning {
                    id: e.id.clone(),
                    message: format!(
                        "funniness {score} differs from vote mean {mean:.4} by more than 5e-3"
                    ),
                });
            }
        }
    }
    warnings
}

/// Counters reported by the raw-corpus loader.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub loaded: usize,
    pub retweets_dropped: usize,
    pub duplicates_dropped: usize,
}

/// Ordered, retweet-free, exactly-deduplicated raw tweets.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCorpus {
    pub tweets: Vec<String>,
    pub source_stats: SourceStats,
}

impl RawCorpus {
    /// Wrap an in-memory tweet list without applying loader filters.
    pub fn from_tweets(tweets: Vec<String>) -> Self {
        let stats = SourceStats {
            loaded: tweets.len(),
            ..SourceStats::default()
        };
        Self {
            tweets,
            source_stats: stats,
        }
    }

    pub fn len(&self) -> usize {
        self.tweets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tweets.is_empty()
    }
}

const RETWEET_PREFIX: &str = "RT @";

/// Decode one stored line: `\n` → newline, `\\` → backslash. Unknown escape
/// sequences pass through unchanged.
pub fn unescape_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Encode one tweet for storage: backslash then newline escaping.
pub fn escape_line(tweet: &str) -> String {
    let mut out = String::with_capacity(tweet.len());
    for c in tweet.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            other => out.push(other),
        }
    }
    out
}

/// Load a raw corpus: one escaped tweet per line; retweets (`RT @` prefix)
/// and exact byte-duplicates are dropped and counted.
pub fn load_raw_corpus(path: impl AsRef<Path>) -> Result<RawCorpus, CorpusError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }

    let mut tweets = Vec::new();
    let mut stats = SourceStats::default();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, raw) in lines.iter().enumerate() {
        let line = std::str::from_utf8(raw)
            .map_err(|_| CorpusError::NonUtf8Input(i as u64 + 1))?;
        stats.loaded += 1;
        let tweet = unescape_line(line);
        if tweet.starts_with(RETWEET_PREFIX) {
            stats.retweets_dropped += 1;
            continue;
        }
        if !seen.insert(tweet.clone()) {
            stats.duplicates_dropped += 1;
            continue;
        }
        tweets.push(tweet);
    }
    Ok(RawCorpus {
        tweets,
        source_stats: stats,
    })
}

/// Write a corpus in the same escaped line format the loader reads.
pub fn write_raw_corpus(
    corpus: &RawCorpus,
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = String::new();
    for tweet in &corpus.tweets {
        out.push_str(&escape_line(tweet));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Deterministic train/validation split parameters.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub valid_fraction: f64,
    pub seed: u64,
}

/// Partition a corpus into (train, valid) with `|valid|` equal to the
/// round-half-up share of the corpus. Order within each part is preserved.
pub fn split_train_valid(
    corpus: &RawCorpus,
    spec: &SplitSpec,
) -> Result<(RawCorpus, RawCorpus), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if !(spec.valid_fraction > 0.0 && spec.valid_fraction < 1.0) {
        return Err(CorpusError::BadFraction(spec.valid_fraction));
    }
    let n = corpus.len();
    let n_valid = ((spec.valid_fraction * n as f64) + 0.5).floor() as usize;
    let n_valid = n_valid.clamp(1, n - 1);

    let mut indices: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut indices, &mut rng::stream(spec.seed, "train-valid-split", 0));
    let mut is_valid = vec![false; n];
    for &i in indices.iter().take(n_valid) {
        is_valid[i] = true;
    }

    let mut train = Vec::with_capacity(n - n_valid);
    let mut valid = Vec::with_capacity(n_valid);
    for (i, tweet) in corpus.tweets.iter().enumerate() {
        if is_valid[i] {
            valid.push(tweet.clone());
        } else {
            train.push(tweet.clone());
        }
    }
    Ok((RawCorpus::from_tweets(train), RawCorpus::from_tweets(valid)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f.flush().unwrap();
        f
    }

    const HEADER: &str =
        "id,text,is_humor,votes_no,votes_1,votes_2,votes_3,votes_4,votes_5,funniness_average\n";

    #[test]
    fn loads_basic_row() {
        let f = write_temp(format!("{HEADER}1,\"hola\",1,0,0,0,1,0,0,3.0\n").as_bytes());
        let rows = load_labeled(f.path()).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!(r.is_humor);
        assert_eq!(r.funniness, Some(3.0));
        assert_eq!(r.votes_star, [0, 0, 1, 0, 0]);
        assert!(validate_examples(&rows).is_empty());
    }

    #[test]
    fn na_and_empty_cells_are_absent() {
        let f = write_temp(
            format!("{HEADER}1,a,0,0,0,0,0,0,0,#N/A\n2,b,0,0,0,0,0,0,0,\n").as_bytes(),
        );
        let rows = load_labeled(f.path()).unwrap();
        assert_eq!(rows[0].funniness, None);
        assert_eq!(rows[1].funniness, None);
    }

    #[test]
    fn quoted_text_with_embedded_newline() {
        let f = write_temp(format!("{HEADER}1,\"hola\nchau\",1,0,0,0,0,0,0,\n").as_bytes());
        let rows = load_labeled(f.path()).unwrap();
        assert_eq!(rows[0].text, "hola\nchau");
    }

    #[test]
    fn missing_text_column() {
        let f = write_temp(b"id,is_humor\n1,1\n");
        match load_labeled(f.path()) {
            Err(CorpusError::MissingColumn(c)) => assert_eq!(c, "text"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write_temp(format!("{HEADER}1,a,maybe,0,0,0,0,0,0,\n").as_bytes());
        match load_labeled(f.path()) {
            Err(CorpusError::MalformedRow { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn vote_mean_mismatch_warns_but_loads() {
        let f = write_temp(format!("{HEADER}1,a,1,0,5,0,0,0,0,4.9\n").as_bytes());
        let rows = load_labeled(f.path()).unwrap();
        let warnings = validate_examples(&rows);
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].id, "1");
    }

    #[test]
    fn custom_schema_maps_headers() {
        let f = write_temp(b"tweet_id,body,funny\n7,jeje,1\n");
        let schema = CsvSchema {
            id: "tweet_id".into(),
            text: "body".into(),
            is_humor: "funny".into(),
            ..CsvSchema::default()
        };
        let rows = load_labeled_with(f.path(), &schema).unwrap();
        assert_eq!(rows[0].id, "7");
        assert_eq!(rows[0].text, "jeje");
        assert_eq!(rows[0].funniness, None);
    }

    #[test]
    fn fill_missing_scores_examples() {
        let f = write_temp(format!("{HEADER}1,a,0,0,0,0,0,0,0,\n2,b,1,0,0,0,0,0,0,2.5\n").as_bytes());
        let rows = load_labeled(f.path()).unwrap();
        let filled = fill_missing_scores(&rows);
        assert_eq!(filled[0].funniness, Some(0.0));
        assert_eq!(filled[1].funniness, Some(2.5));
        assert!(fill_missing_scores(&[]).is_empty());
    }

    #[test]
    fn raw_corpus_filters() {
        let f = write_temp(b"hola\nRT @x: hola\nhola\n");
        let corpus = load_raw_corpus(f.path()).unwrap();
        assert_eq!(corpus.tweets, vec!["hola"]);
        assert_eq!(
            corpus.source_stats,
            SourceStats {
                loaded: 3,
                retweets_dropped: 1,
                duplicates_dropped: 1
            }
        );
    }

    #[test]
    fn raw_corpus_no_drops() {
        let f = write_temp(b"uno\ndos\ntres\n");
        let corpus = load_raw_corpus(f.path()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.source_stats.retweets_dropped, 0);
        assert_eq!(corpus.source_stats.duplicates_dropped, 0);
    }

    #[test]
    fn escaped_newline_round_trips() {
        let f = write_temp("adiós\\nchau\n".as_bytes());
        let corpus = load_raw_corpus(f.path()).unwrap();
        assert_eq!(corpus.tweets, vec!["adiós\nchau"]);

        let out = tempfile::NamedTempFile::new().unwrap();
        write_raw_corpus(&corpus, out.path()).unwrap();
        let reloaded = load_raw_corpus(out.path()).unwrap();
        assert_eq!(reloaded.tweets, corpus.tweets);
        let bytes = std::fs::read(out.path()).unwrap();
        assert_eq!(bytes, "adiós\\nchau\n".as_bytes());
    }

    #[test]
    fn non_utf8_reports_line() {
        let f = write_temp(b"bien\n\xff\xfe\n");
        match load_raw_corpus(f.path()) {
            Err(CorpusError::NonUtf8Input(line)) => assert_eq!(line, 2),
            other => panic!("expected NonUtf8Input, got {other:?}"),
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let corpus = RawCorpus::from_tweets((0..10).map(|i| format!("t{i}")).collect());
        let spec = SplitSpec {
            valid_fraction: 0.1,
            seed: 42,
        };
        let (train, valid) = split_train_valid(&corpus, &spec).unwrap();
        assert_eq!((train.len(), valid.len()), (9, 1));

        let (train2, valid2) = split_train_valid(&corpus, &spec).unwrap();
        assert_eq!(train.tweets, train2.tweets);
        assert_eq!(valid.tweets, valid2.tweets);
    }

    #[test]
    fn split_partitions() {
        let corpus = RawCorpus::from_tweets((0..37).map(|i| format!("t{i}")).collect());
        let spec = SplitSpec {
            valid_fraction: 0.25,
            seed: 3,
        };
        let (train, valid) = split_train_valid(&corpus, &spec).unwrap();
        let mut all: Vec<&String> = train.tweets.iter().chain(valid.tweets.iter()).collect();
        all.sort();
        let mut orig: Vec<&String> = corpus.tweets.iter().collect();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_errors() {
        let empty = RawCorpus::from_tweets(vec![]);
        assert!(matches!(
            split_train_valid(&empty, &SplitSpec { valid_fraction: 0.1, seed: 0 }),
            Err(CorpusError::EmptyCorpus)
        ));
        let one = RawCorpus::from_tweets(vec!["a".into(), "b".into()]);
        assert!(matches!(
            split_train_valid(&one, &SplitSpec { valid_fraction: 1.5, seed: 0 }),
            Err(CorpusError::BadFraction(_))
        ));
    }
}
