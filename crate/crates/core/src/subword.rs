//! Byte-pair-encoding subword model with reserved-token protection.
//!
//! Words are marked with a leading `▁` (U+2581) and split to characters;
//! training greedily merges the most frequent adjacent symbol pair until the
//! vocabulary is full or no pair occurs twice. Reserved tokens (`xxbos` and
//! friends, plus `<unk>`/`<pad>`) are atomic: they map to a single id and
//! never participate in merges. Decoding inverts encoding exactly on text
//! whose characters were all seen in training.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("vocab size {requested} too small: need more than {minimum} (reserved + base symbols)")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("token stream too small: need at least batch_size*(bptt+1) = {needed}, have {have}")]
    CorpusTooSmall { needed: usize, have: usize },
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("model file {path}: {reason}")]
    ModelFormat { path: String, reason: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Word-boundary marker prepended to every non-reserved word.
pub const SPACE_MARKER: char = '\u{2581}';
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_ID: u32 = 0;
pub const PAD_ID: u32 = 1;

const MERGES_TAG: &str = "bpe-v1";
const MIN_PAIR_FREQ: usize = 2;

fn default_reserved() -> Vec<String> {
    // <unk> and <pad> first so their ids are fixed at 0 and 1.
    [UNK_TOKEN, PAD_TOKEN, "xxbos", "xxrep", "xxwrep", "xxup", "xxnl"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Ordered merge rules plus a token↔id vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    token_ids: HashMap<String, u32>,
    reserved: Vec<String>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn reserved(&self) -> &[String] {
        &self.reserved
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    fn is_reserved(&self, word: &str) -> bool {
        self.reserved.iter().any(|r| r == word)
    }
}

/// Greedy pair-merge training over a cleaned corpus.
///
/// Deterministic: pair selection is by (frequency desc, merged symbol asc,
/// left symbol asc); base symbols are every character in the corpus, sorted.
pub fn bpe_train(
    corpus: &[impl AsRef<str>],
    vocab_size: usize,
) -> Result<BpeModel, SubwordError> {
    let reserved = default_reserved();
    if corpus.is_empty() {
        return Err(SubwordError::EmptyCorpus);
    }

    // Aggregate word frequencies, reserved tokens excluded.
    let mut word_freq: HashMap<&str, usize> = HashMap::new();
    for text in corpus {
        for word in text.as_ref().split_whitespace() {
            if !reserved.iter().any(|r| r == word) {
                *word_freq.entry(word).or_insert(0) += 1;
            }
        }
    }
    let mut words: Vec<(&str, usize)> = word_freq.into_iter().collect();
    words.sort_unstable();
    if words.is_empty() && corpus.iter().all(|t| t.as_ref().split_whitespace().next().is_none()) {
        return Err(SubwordError::EmptyCorpus);
    }

    let mut base: Vec<String> = words
        .iter()
        .flat_map(|(w, _)| w.chars())
        .map(|c| c.to_string())
        .collect();
    base.push(SPACE_MARKER.to_string());
    base.sort_unstable();
    base.dedup();

    let minimum = reserved.len() + base.len();
    if vocab_size <= minimum {
        return Err(SubwordError::VocabTooSmall {
            requested: vocab_size,
            minimum,
        });
    }

    let mut vocab: Vec<String> = reserved.iter().cloned().chain(base).collect();
    let mut seqs: Vec<(Vec<String>, usize)> = words
        .iter()
        .map(|(w, f)| {
            let mut symbols = vec![SPACE_MARKER.to_string()];
            symbols.extend(w.chars().map(|c| c.to_string()));
            (symbols, *f)
        })
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while vocab.len() < vocab_size {
        let mut pair_freq: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, freq) in &seqs {
            for pair in symbols.windows(2) {
                *pair_freq
                    .entry((pair[0].as_str(), pair[1].as_str()))
                    .or_insert(0) += freq;
            }
        }
        let best = pair_freq
            .iter()
            .filter(|(_, &f)| f >= MIN_PAIR_FREQ)
            .min_by(|((al, ar), af), ((bl, br), bf)| {
                bf.cmp(af)
                    .then_with(|| format!("{al}{ar}").cmp(&format!("{bl}{br}")))
                    .then_with(|| al.cmp(bl))
            })
            .map(|((l, r), _)| (l.to_string(), r.to_string()));
        let Some((left, right)) = best else { break };

        let merged = format!("{left}{right}");
        for (symbols, _) in &mut seqs {
            merge_in_place(symbols, &left, &right, &merged);
        }
        vocab.push(merged);
        merges.push((left, right));
    }

    Ok(build_model(merges, vocab, reserved))
}

fn merge_in_place(symbols: &mut Vec<String>, left: &str, right: &str, merged: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            symbols[i] = merged.to_string();
            symbols.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

fn build_model(
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    reserved: Vec<String>,
) -> BpeModel {
    let token_ids = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let ranks = merges
        .iter()
        .enumerate()
        .map(|(i, (l, r))| ((l.clone(), r.clone()), i))
        .collect();
    BpeModel {
        merges,
        vocab,
        token_ids,
        reserved,
        ranks,
    }
}

/// Ordered token ids for one text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenIds {
    pub ids: Vec<u32>,
}

/// Encode cleaned text: reserved words map to a single id; other words are
/// marker-prefixed, split to characters, and merged in training order.
/// Symbols absent from the vocabulary become `<unk>`.
pub fn encode(model: &BpeModel, text: &str) -> TokenIds {
    let mut ids = Vec::new();
    for word in text.split_whitespace() {
        if model.is_reserved(word) {
            ids.push(model.token_ids[word]);
            continue;
        }
        let mut symbols: Vec<String> = vec![SPACE_MARKER.to_string()];
        symbols.extend(word.chars().map(|c| c.to_string()));
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..symbols.len() - 1 {
                if let Some(&rank) = model
                    .ranks
                    .get(&(symbols[i].clone(), symbols[i + 1].clone()))
                {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (left, right) = model.merges[rank].clone();
            let merged = format!("{left}{right}");
            merge_in_place(&mut symbols, &left, &right, &merged);
        }
        for s in symbols {
            ids.push(model.token_ids.get(&s).copied().unwrap_or(UNK_ID));
        }
    }
    TokenIds { ids }
}

/// Invert `encode`: concatenate tokens, restore spaces from the word marker,
/// and keep reserved tokens space-separated.
pub fn decode(model: &BpeModel, ids: &TokenIds) -> Result<String, SubwordError> {
    let mut joined = String::new();
    for (i, &id) in ids.ids.iter().enumerate() {
        let token = model
            .token(id)
            .ok_or(SubwordError::UnknownId(id))?;
        if model.is_reserved(token) && i > 0 {
            joined.push(' ');
        }
        joined.push_str(token);
    }
    let with_spaces: String = joined
        .chars()
        .map(|c| if c == SPACE_MARKER { ' ' } else { c })
        .collect();
    Ok(with_spaces.strip_prefix(' ').unwrap_or(&with_spaces).to_string())
}

/// One truncated-backpropagation block: `input[b][i]` predicts `target[b][i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmBatch {
    pub input: Vec<Vec<u32>>,
    pub target: Vec<Vec<u32>>,
}

/// Reshape one long id stream into `batch_size` parallel streams cut into
/// `bptt`-length blocks with next-token targets. The ragged tail is dropped.
pub fn make_lm_batches(
    ids: &[u32],
    batch_size: usize,
    bptt: usize,
) -> Result<Vec<LmBatch>, SubwordError> {
    let needed = batch_size * (bptt + 1);
    if ids.len() < needed {
        return Err(SubwordError::CorpusTooSmall {
            needed,
            have: ids.len(),
        });
    }
    let stream_len = ids.len() / batch_size;
    let n_blocks = (stream_len - 1) / bptt;
    let mut batches = Vec::with_capacity(n_blocks);
    for k in 0..n_blocks {
        let mut input = Vec::with_capacity(batch_size);
        let mut target = Vec::with_capacity(batch_size);
        for b in 0..batch_size {
            let start = b * stream_len + k * bptt;
            input.push(ids[start..start + bptt].to_vec());
            target.push(ids[start + 1..start + bptt + 1].to_vec());
        }
        batches.push(LmBatch { input, target });
    }
    Ok(batches)
}

/// `<prefix>.vocab` / `<prefix>.merges` paths for a stored model.
pub fn model_paths(prefix: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let prefix = prefix.as_ref();
    let with_ext = |ext: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(ext);
        PathBuf::from(p)
    };
    (with_ext(".vocab"), with_ext(".merges"))
}

/// Write the vocab (one token per line, id = line number) and merges file
/// (format tag, then tab-separated pairs in application order).
pub fn save_model(model: &BpeModel, prefix: impl AsRef<Path>) -> Result<(), SubwordError> {
    let (vocab_path, merges_path) = model_paths(&prefix);
    let io_err = |path: &Path, source| SubwordError::Io {
        path: path.display().to_string(),
        source,
    };

    let mut vocab_text = String::new();
    for token in &model.vocab {
        let _ = writeln!(vocab_text, "{token}");
    }
    std::fs::write(&vocab_path, vocab_text).map_err(|e| io_err(&vocab_path, e))?;

    let mut merges_text = format!("{MERGES_TAG}\n");
    for (l, r) in &model.merges {
        let _ = writeln!(merges_text, "{l}\t{r}");
    }
    std::fs::write(&merges_path, merges_text).map_err(|e| io_err(&merges_path, e))
}

/// Load a model saved by [`save_model`].
pub fn load_model(prefix: impl AsRef<Path>) -> Result<BpeModel, SubwordError> {
    let (vocab_path, merges_path) = model_paths(&prefix);
    let io_err = |path: &Path, source| SubwordError::Io {
        path: path.display().to_string(),
        source,
    };
    let format_err = |path: &Path, reason: String| SubwordError::ModelFormat {
        path: path.display().to_string(),
        reason,
    };

    let vocab_text =
        std::fs::read_to_string(&vocab_path).map_err(|e| io_err(&vocab_path, e))?;
    let vocab: Vec<String> = vocab_text.lines().map(str::to_string).collect();
    if vocab.is_empty() {
        return Err(format_err(&vocab_path, "empty vocab file".into()));
    }

    let merges_text =
        std::fs::read_to_string(&merges_path).map_err(|e| io_err(&merges_path, e))?;
    let mut lines = merges_text.lines();
    match lines.next() {
        Some(MERGES_TAG) => {}
        other => {
            return Err(format_err(
                &merges_path,
                format!("expected format tag `{MERGES_TAG}`, got {other:?}"),
            ))
        }
    }
    let mut merges = Vec::new();
    for (i, line) in lines.enumerate() {
        let Some((l, r)) = line.split_once('\t') else {
            return Err(format_err(
                &merges_path,
                format!("line {}: expected `left<TAB>right`", i + 2),
            ));
        };
        merges.push((l.to_string(), r.to_string()));
    }

    let reserved: Vec<String> = default_reserved()
        .into_iter()
        .filter(|r| vocab.iter().any(|v| v == r))
        .collect();
    Ok(build_model(merges, vocab, reserved))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_corpus_merge_order() {
        let model = bpe_train(&["ab ab ab ac"], 100).unwrap();
        assert_eq!(
            model.merges()[0],
            (SPACE_MARKER.to_string(), "a".to_string())
        );
        assert_eq!(
            model.merges()[1],
            (format!("{SPACE_MARKER}a"), "b".to_string())
        );
        // (a,c) occurs once, below the minimum pair frequency.
        assert_eq!(model.merges().len(), 2);
    }

    #[test]
    fn single_word_degenerate() {
        // One occurrence is below the minimum pair frequency: no merges.
        let model = bpe_train(&["z"], 100).unwrap();
        let mut expected: Vec<String> = default_reserved();
        expected.extend(["z".to_string(), SPACE_MARKER.to_string()]);
        expected.sort();
        let mut got = model.vocab().to_vec();
        got.sort();
        assert_eq!(got, expected);
        let ids = encode(&model, "z");
        assert_eq!(ids.ids.len(), 2); // ▁ then z
        assert_eq!(decode(&model, &ids).unwrap(), "z");

        // Two occurrences clear the bar and merge into one ▁z token.
        let model = bpe_train(&["z z"], 100).unwrap();
        let ids = encode(&model, "z");
        assert_eq!(ids.ids.len(), 1);
        assert_eq!(model.token(ids.ids[0]).unwrap(), &format!("{SPACE_MARKER}z"));
        assert_eq!(decode(&model, &ids).unwrap(), "z");
    }

    #[test]
    fn vocab_cap_respected() {
        let corpus: Vec<String> = (0..50)
            .map(|i| format!("palabra{i} palabra{i} risa risa"))
            .collect();
        let model = bpe_train(&corpus, 30).unwrap();
        assert!(model.vocab_size() <= 30);
    }

    #[test]
    fn vocab_too_small() {
        match bpe_train(&["abc"], 5) {
            Err(SubwordError::VocabTooSmall { minimum, .. }) => assert!(minimum >= 7),
            other => panic!("expected VocabTooSmall, got {other:?}"),
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            bpe_train(&Vec::<String>::new(), 100),
            Err(SubwordError::EmptyCorpus)
        ));
        assert!(matches!(
            bpe_train(&[""], 100),
            Err(SubwordError::EmptyCorpus)
        ));
    }

    #[test]
    fn reserved_tokens_are_atomic() {
        let model = bpe_train(&["xxbos hola hola xxnl hola"], 100).unwrap();
        let ids = encode(&model, "xxbos hola");
        assert_eq!(ids.ids[0], model.token_id("xxbos").unwrap());
        for (l, r) in model.merges() {
            for reserved in model.reserved() {
                assert_ne!(l, reserved);
                assert_ne!(r, reserved);
                assert_ne!(&format!("{l}{r}"), reserved);
            }
        }
        assert_eq!(decode(&model, &ids).unwrap(), "xxbos hola");
    }

    #[test]
    fn fully_merged_word_is_single_token() {
        let model = bpe_train(&["xxbos hola hola hola hola"], 100).unwrap();
        let ids = encode(&model, "xxbos hola");
        assert_eq!(ids.ids.len(), 2);
        let word_token = model.token(ids.ids[1]).unwrap();
        assert_eq!(word_token, &format!("{SPACE_MARKER}hola"));
    }

    #[test]
    fn unseen_character_maps_to_unk() {
        let model = bpe_train(&["hola hola"], 100).unwrap();
        let ids = encode(&model, "hola\u{1F602}");
        assert!(ids.ids.contains(&UNK_ID));
        // Training corpus re-encoded has no unks.
        let ids = encode(&model, "hola hola");
        assert!(!ids.ids.contains(&UNK_ID));
    }

    #[test]
    fn decode_empty_and_unknown() {
        let model = bpe_train(&["hola"], 100).unwrap();
        assert_eq!(decode(&model, &TokenIds { ids: vec![] }).unwrap(), "");
        let bad = TokenIds {
            ids: vec![model.vocab_size() as u32],
        };
        assert!(matches!(
            decode(&model, &bad),
            Err(SubwordError::UnknownId(_))
        ));
    }

    #[test]
    fn adjacent_reserved_tokens_round_trip() {
        let model = bpe_train(&["xxbos xxup hola xxnl chau"], 100).unwrap();
        for text in ["xxbos xxup hola", "xxbos hola xxnl chau", "xxnl xxnl"] {
            let ids = encode(&model, text);
            assert_eq!(decode(&model, &ids).unwrap(), text, "for {text:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["xxbos que risa me da", "xxbos risa risa que dia", "me da da da"];
        let a = bpe_train(&corpus, 40).unwrap();
        let b = bpe_train(&corpus, 40).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert_eq!(a.vocab(), b.vocab());
    }

    #[test]
    fn batch_arithmetic() {
        let ids: Vec<u32> = (0..101).collect();
        let batches = make_lm_batches(&ids, 1, 10).unwrap();
        assert_eq!(batches.len(), 10);
        assert_eq!(batches[0].input[0].len(), 10);

        let ids: Vec<u32> = (0..10).collect();
        let batches = make_lm_batches(&ids, 2, 2).unwrap();
        assert_eq!(batches[0].input, vec![vec![0, 1], vec![5, 6]]);
        assert_eq!(batches[0].target, vec![vec![1, 2], vec![6, 7]]);
        assert_eq!(batches[1].input, vec![vec![2, 3], vec![7, 8]]);

        assert!(matches!(
            make_lm_batches(&ids, 4, 3),
            Err(SubwordError::CorpusTooSmall { needed: 16, .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = bpe_train(&["xxbos que risa que risa jaja jaja"], 64).unwrap();
        let prefix = dir.path().join("tok");
        save_model(&model, &prefix).unwrap();
        let loaded = load_model(&prefix).unwrap();
        assert_eq!(model, loaded);

        let (_, merges_path) = model_paths(&prefix);
        let text = std::fs::read_to_string(merges_path).unwrap();
        assert!(text.starts_with("bpe-v1\n"));
    }

    #[test]
    fn load_rejects_bad_tag() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("tok");
        std::fs::write(prefix.with_extension("vocab"), "a\n").unwrap();
        let (vocab_path, merges_path) = model_paths(&prefix);
        std::fs::write(vocab_path, "a\n").unwrap();
        std::fs::write(merges_path, "bpe-v9\n").unwrap();
        assert!(matches!(
            load_model(&prefix),
            Err(SubwordError::ModelFormat { .. })
        ));
    }
}
