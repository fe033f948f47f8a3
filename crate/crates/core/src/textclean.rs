//! Deterministic tweet normalization.
//!
//! Six staged rewrite rules collapse noisy tweet text onto a single
//! lowercase line: character-repetition and word-repetition markers, an
//! all-caps marker, spaced-out punctuation, a newline marker, and whitespace
//! normalization, finished by a beginning-of-sequence token. `clean` is
//! idempotent on its own output.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CleanError {
    #[error("reserved token `{0}` must be lowercase and contain no whitespace")]
    BadReservedToken(String),
    #[error("reserved tokens must be pairwise distinct (`{0}` repeats)")]
    DuplicateReservedToken(String),
    #[error("repetition threshold must be at least 2, got {0}")]
    ThresholdTooSmall(usize),
}

/// Reserved marker tokens injected by the cleanup rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReservedTokens {
    pub bos: String,
    pub char_rep: String,
    pub word_rep: String,
    pub caps: String,
    pub newline: String,
}

impl Default for ReservedTokens {
    fn default() -> Self {
        Self {
            bos: "xxbos".into(),
            char_rep: "xxrep".into(),
            word_rep: "xxwrep".into(),
            caps: "xxup".into(),
            newline: "xxnl".into(),
        }
    }
}

impl ReservedTokens {
    pub fn all(&self) -> [&str; 5] {
        [
            &self.bos,
            &self.char_rep,
            &self.word_rep,
            &self.caps,
            &self.newline,
        ]
    }
}

/// Cleanup settings. `rep_threshold` is the smallest run length that gets
/// rewritten: the default 4 rewrites runs of four or more (three repetitions
/// of the first occurrence).
#[derive(Debug, Clone)]
pub struct CleanConfig {
    pub rep_threshold: usize,
    pub reserved: ReservedTokens,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            rep_threshold: 4,
            reserved: ReservedTokens::default(),
        }
    }
}

impl CleanConfig {
    pub fn validate(&self) -> Result<(), CleanError> {
        if self.rep_threshold < 2 {
            return Err(CleanError::ThresholdTooSmall(self.rep_threshold));
        }
        let toks = self.reserved.all();
        for t in toks {
            if t.is_empty()
                || t.chars().any(|c| c.is_whitespace() || c.is_uppercase())
            {
                return Err(CleanError::BadReservedToken(t.to_string()));
            }
        }
        for (i, a) in toks.iter().enumerate() {
            if toks[i + 1..].contains(a) {
                return Err(CleanError::DuplicateReservedToken(a.to_string()));
            }
        }
        Ok(())
    }
}

/// Normalized single-line text: lowercase, single-spaced, newline-free, and
/// prefixed with the beginning-of-sequence token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanedText(String);

impl CleanedText {
    /// Wrap text that is already in cleaned form (used by loaders and tests).
    pub fn from_string(text: String) -> Self {
        Self(text)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl std::fmt::Display for CleanedText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Per-rule fire counts for one `clean` call (or a whole corpus when merged).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CleanStats {
    pub char_rep: usize,
    pub word_rep: usize,
    pub all_caps: usize,
    pub specials: usize,
    pub newlines: usize,
    pub spaces: usize,
}

impl CleanStats {
    pub fn merge(&mut self, other: &CleanStats) {
        self.char_rep += other.char_rep;
        self.word_rep += other.word_rep;
        self.all_caps += other.all_caps;
        self.specials += other.specials;
        self.newlines += other.newlines;
        self.spaces += other.spaces;
    }

    /// `(rule-name, count)` pairs in pipeline order.
    pub fn entries(&self) -> [(&'static str, usize); 6] {
        [
            ("char_rep", self.char_rep),
            ("word_rep", self.word_rep),
            ("all_caps", self.all_caps),
            ("specials", self.specials),
            ("newlines", self.newlines),
            ("spaces", self.spaces),
        ]
    }
}

/// Rewrite maximal runs of one non-whitespace character with length at least
/// `threshold` as ` <tok> <n> <c> `. Whitespace runs are left for the
/// newline/space rules so their markers stay single characters.
pub fn replace_char_rep(text: &str, threshold: usize) -> String {
    char_rep_with(text, threshold, "xxrep").0
}

fn fold_eq(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

fn char_rep_with(text: &str, threshold: usize, tok: &str) -> (String, usize) {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut fires = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut j = i + 1;
        // Case-folded comparison keeps the pipeline idempotent: the global
        // lowercase stage would otherwise create fresh runs out of mixed-case
        // repetitions.
        while j < chars.len() && fold_eq(chars[j], c) {
            j += 1;
        }
        let run = j - i;
        if run >= threshold && !c.is_whitespace() {
            out.push_str(&format!(" {tok} {run} {c} "));
            fires += 1;
        } else {
            for &orig in &chars[i..j] {
                out.push(orig);
            }
        }
        i = j;
    }
    (out, fires)
}

/// Rewrite maximal runs of `threshold`-or-more identical consecutive words
/// as ` <tok> <n> <word>`. Words are whitespace-delimited; the whitespace
/// after the run (which may be a newline) is preserved.
///
/// Run detection works on the same view the special-character rule later
/// produces (maximal alphanumeric runs, single punctuation marks), so a
/// cleaned text re-entering the pipeline finds the same runs it did raw.
pub fn replace_word_rep(text: &str, threshold: usize) -> String {
    word_rep_with(text, threshold, "xxwrep").0
}

/// Split into a leading-whitespace prefix and `(word, trailing whitespace)`
/// pairs, preserving every original character.
fn split_words(text: &str) -> (String, Vec<(String, String)>) {
    let mut lead = String::new();
    let mut items: Vec<(String, String)> = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if word.is_empty() {
                match items.last_mut() {
                    Some(last) => last.1.push(c),
                    None => lead.push(c),
                }
            } else {
                items.push((std::mem::take(&mut word), c.to_string()));
            }
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        items.push((word, String::new()));
    }
    (lead, items)
}

/// Smallest units the special-character rule will end up separating:
/// maximal alphanumeric runs and individual special characters. `ws` is the
/// whitespace following the piece (empty when glued to the next piece
/// within one word).
struct Piece {
    text: String,
    ws: String,
}

fn split_pieces(text: &str) -> (String, Vec<Piece>) {
    let (lead, words) = split_words(text);
    let mut pieces: Vec<Piece> = Vec::new();
    for (word, ws) in words {
        let start = pieces.len();
        let mut current = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() {
                current.push(c);
            } else {
                if !current.is_empty() {
                    pieces.push(Piece {
                        text: std::mem::take(&mut current),
                        ws: String::new(),
                    });
                }
                pieces.push(Piece {
                    text: c.to_string(),
                    ws: String::new(),
                });
            }
        }
        if !current.is_empty() {
            pieces.push(Piece {
                text: current,
                ws: String::new(),
            });
        }
        if pieces.len() > start {
            pieces.last_mut().expect("word produced pieces").ws = ws;
        }
    }
    (lead, pieces)
}

fn word_rep_with(text: &str, threshold: usize, tok: &str) -> (String, usize) {
    let (lead, pieces) = split_pieces(text);
    let folded: Vec<String> = pieces.iter().map(|p| p.text.to_lowercase()).collect();
    let mut out = lead;
    let mut fires = 0;
    let mut i = 0;
    while i < pieces.len() {
        let mut j = i + 1;
        // Same case-folded run detection as the character rule.
        while j < pieces.len() && folded[j] == folded[i] {
            j += 1;
        }
        let run = j - i;
        if run >= threshold {
            out.push_str(&format!(" {tok} {run} {}", pieces[i].text));
            out.push_str(&pieces[j - 1].ws);
            fires += 1;
        } else {
            for piece in &pieces[i..j] {
                out.push_str(&piece.text);
                out.push_str(&piece.ws);
            }
        }
        i = j;
    }
    (out, fires)
}

/// Mark whole words (length ≥ 2, at least one letter, every letter
/// uppercase) with `xxup` and lowercase them in place.
pub fn mark_all_caps(text: &str) -> String {
    all_caps_with(text, "xxup").0
}

fn all_caps_with(text: &str, tok: &str) -> (String, usize) {
    let (lead, words) = split_words(text);
    let mut out = lead;
    let mut fires = 0;
    for (w, ws) in &words {
        let letters = w.chars().filter(|c| c.is_alphabetic());
        let has_letter = w.chars().any(|c| c.is_alphabetic());
        let all_upper = letters.clone().all(|c| c.is_uppercase());
        if has_letter && all_upper && w.chars().count() >= 2 {
            out.push_str(tok);
            out.push(' ');
            out.push_str(&w.to_lowercase());
            fires += 1;
        } else {
            out.push_str(w);
        }
        out.push_str(ws);
    }
    (out, fires)
}

/// Surround every character that is not a letter, digit, or whitespace with
/// single spaces. A `.` attached at the end of a line (directly before a
/// newline, the newline marker token, or end of text) stays attached; the
/// reference cleanup keeps terminal periods glued to the last word.
pub fn space_specials(text: &str) -> String {
    specials_with(text, "xxnl").0
}

fn specials_with(text: &str, newline_tok: &str) -> (String, usize) {
    let chars: Vec<char> = text.chars().collect();
    let nl_tok: Vec<char> = newline_tok.chars().collect();
    let mut out = String::with_capacity(text.len() + 16);
    let mut fires = 0;
    for (i, &c) in chars.iter().enumerate() {
        let special = !c.is_alphanumeric() && !c.is_whitespace();
        if special && !(c == '.' && terminal_period(&chars, i, &nl_tok)) {
            out.push(' ');
            out.push(c);
            out.push(' ');
            fires += 1;
        } else {
            out.push(c);
        }
    }
    (out, fires)
}

fn terminal_period(chars: &[char], i: usize, nl_tok: &[char]) -> bool {
    let mut j = i + 1;
    while j < chars.len() && (chars[j] == ' ' || chars[j] == '\t') {
        j += 1;
    }
    if j == chars.len() || chars[j] == '\n' || chars[j] == '\r' {
        return true;
    }
    // Re-cleaning sees the marker token where the raw newline used to be.
    let end = j + nl_tok.len();
    end <= chars.len()
        && chars[j..end] == *nl_tok
        && (end == chars.len() || chars[end].is_whitespace())
}

/// Collapse every maximal run of newline characters into ` <tok> `.
pub fn replace_newlines(text: &str) -> String {
    newlines_with(text, "xxnl").0
}

fn newlines_with(text: &str, tok: &str) -> (String, usize) {
    let mut out = String::with_capacity(text.len() + 8);
    let mut fires = 0;
    let mut in_run = false;
    for c in text.chars() {
        if c == '\n' || c == '\r' {
            if !in_run {
                out.push_str(&format!(" {tok} "));
                fires += 1;
                in_run = true;
            }
        } else {
            in_run = false;
            out.push(c);
        }
    }
    (out, fires)
}

/// Normalize space/tab runs to single spaces and strip the ends.
pub fn collapse_spaces(text: &str) -> String {
    collapse_with(text).0
}

fn collapse_with(text: &str) -> (String, usize) {
    let mut out = String::with_capacity(text.len());
    let mut fires = 0;
    let mut run = 0usize;
    let mut run_was_plain_space = true;
    for c in text.chars() {
        if c == ' ' || c == '\t' {
            run += 1;
            if c != ' ' {
                run_was_plain_space = false;
            }
        } else {
            if run > 0 {
                if !out.is_empty() {
                    out.push(' ');
                }
                if run > 1 || !run_was_plain_space || out.is_empty() {
                    fires += 1;
                }
                run = 0;
                run_was_plain_space = true;
            }
            out.push(c);
        }
    }
    if run > 0 {
        fires += 1;
    }
    (out, fires)
}

/// Run the full pipeline and report per-rule fire counts.
///
/// Stage order: char repetition → word repetition → all-caps marking →
/// special-character spacing → newline marking → space collapsing → global
/// lowercase → beginning-of-sequence prefix.
pub fn clean_with_stats(text: &str, cfg: &CleanConfig) -> (CleanedText, CleanStats) {
    let mut stats = CleanStats::default();
    let (t, n) = char_rep_with(text, cfg.rep_threshold, &cfg.reserved.char_rep);
    stats.char_rep = n;
    let (t, n) = word_rep_with(&t, cfg.rep_threshold, &cfg.reserved.word_rep);
    stats.word_rep = n;
    let (t, n) = all_caps_with(&t, &cfg.reserved.caps);
    stats.all_caps = n;
    let (t, n) = specials_with(&t, &cfg.reserved.newline);
    stats.specials = n;
    let (t, n) = newlines_with(&t, &cfg.reserved.newline);
    stats.newlines = n;
    let (t, n) = collapse_with(&t);
    stats.spaces = n;
    let body = t.to_lowercase();
    let bos = &cfg.reserved.bos;
    let text = if body == *bos || body.starts_with(&format!("{bos} ")) {
        body
    } else if body.is_empty() {
        bos.clone()
    } else {
        format!("{bos} {body}")
    };
    (CleanedText(text), stats)
}

/// Run the full pipeline with the given configuration.
pub fn clean(text: &str, cfg: &CleanConfig) -> CleanedText {
    clean_with_stats(text, cfg).0
}
