//! Plain-text model persistence.
//!
//! A model file is line-oriented: a version header, then the sections
//! `[TAGS]`, `[WORDS]`, `[TRANS]`, `[EMIT]`, `[UNK]`, `[LEXSTATES]`,
//! `[META]`, `[END]` in that order. All probabilities are written with 17
//! significant digits so that saving, loading, and saving again produces a
//! byte-identical file. Loading re-checks every distribution invariant and,
//! for fully split models built on unsmoothed transitions, that the split
//! and residual incoming masses still add up to the base transition rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::corpus::{Lexicon, TagId, WordId};
use crate::error::{Error, Result};
use crate::lexicalize::{LexicalizedHmm, SplitMode};
use crate::model::{ProbVector, StandardHmm};

/// Current model file format version.
pub const FORMAT_VERSION: u32 = 1;

const SECTIONS: [&str; 7] = [
    "TAGS", "WORDS", "TRANS", "EMIT", "UNK", "LEXSTATES", "META",
];

/// Provenance recorded alongside the probability tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub seed: u64,
    pub test_fraction: f64,
    pub min_count: u64,
    pub smooth_base: bool,
    /// Digest of the training corpus text, used to pair a model with the
    /// corpus its counts came from.
    pub source_digest: String,
    pub corpus_path: Option<String>,
    pub tag_map: Vec<(String, String)>,
    /// Per-category smoothing strengths fitted at training time.
    pub alphas: Vec<f64>,
}

impl Default for ModelMeta {
    fn default() -> Self {
        ModelMeta {
            seed: 0,
            test_fraction: 0.1,
            min_count: 10,
            smooth_base: false,
            source_digest: String::new(),
            corpus_path: None,
            tag_map: Vec::new(),
            alphas: Vec::new(),
        }
    }
}

/// A model together with its training provenance.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub model: LexicalizedHmm,
    pub meta: ModelMeta,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_row(row: &[f64]) -> String {
    row.iter()
        .map(|&x| fmt_f64(x))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders a model and its metadata as the text format.
pub fn serialize_model(saved: &SavedModel) -> String {
    let model = &saved.model;
    let base = model.base();
    let lexicon = base.lexicon();
    let mut out = String::new();
    writeln!(out, "lexhmm model {FORMAT_VERSION}").unwrap();

    writeln!(out, "[TAGS]").unwrap();
    for tag in lexicon.content_tags() {
        writeln!(out, "{}", lexicon.tag_label(tag)).unwrap();
    }

    writeln!(out, "[WORDS]").unwrap();
    for (i, word) in lexicon.words().iter().enumerate() {
        let tags = lexicon
            .ambiguity_class(WordId(i as u32))
            .iter()
            .map(|t| t.index().to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{word}\t{tags}").unwrap();
    }

    writeln!(out, "[TRANS]").unwrap();
    for row in base.transitions() {
        writeln!(out, "{}", fmt_row(row)).unwrap();
    }

    writeln!(out, "[EMIT]").unwrap();
    for tag in lexicon.content_tags() {
        for (&word, &p) in base.emission_row(tag) {
            writeln!(out, "{} {} {}", tag.index(), word.index(), fmt_f64(p)).unwrap();
        }
    }

    writeln!(out, "[UNK]").unwrap();
    writeln!(out, "{}", fmt_row(base.unknown_dist())).unwrap();

    writeln!(out, "[LEXSTATES]").unwrap();
    match model.mode() {
        None => writeln!(out, "mode none").unwrap(),
        Some(mode) => writeln!(out, "mode {mode}").unwrap(),
    }
    for (c, w, row) in model.splits() {
        write!(out, "split {} {} out {}", c.index(), w.index(), fmt_row(row)).unwrap();
        if let Some(mass) = model.split_in_mass(c, w) {
            write!(out, " in {}", fmt_row(mass)).unwrap();
        }
        writeln!(out).unwrap();
    }
    for c in model.split_categories() {
        let row = model.residual_out_row(c).expect("residual row exists");
        write!(out, "residual {} out {}", c.index(), fmt_row(row)).unwrap();
        if let Some(mass) = model.residual_in_mass(c) {
            write!(out, " in {}", fmt_row(mass)).unwrap();
        }
        writeln!(out).unwrap();
    }

    let meta = &saved.meta;
    writeln!(out, "[META]").unwrap();
    writeln!(out, "seed {}", meta.seed).unwrap();
    writeln!(out, "test_fraction {}", fmt_f64(meta.test_fraction)).unwrap();
    writeln!(out, "min_count {}", meta.min_count).unwrap();
    writeln!(out, "smooth_base {}", meta.smooth_base).unwrap();
    let digest = if meta.source_digest.is_empty() {
        "-"
    } else {
        meta.source_digest.as_str()
    };
    writeln!(out, "source_digest {digest}").unwrap();
    writeln!(
        out,
        "corpus_path {}",
        meta.corpus_path.as_deref().unwrap_or("-")
    )
    .unwrap();
    if meta.alphas.is_empty() {
        writeln!(out, "alphas").unwrap();
    } else {
        writeln!(out, "alphas {}", fmt_row(&meta.alphas)).unwrap();
    }
    writeln!(out, "tagmap {}", meta.tag_map.len()).unwrap();
    for (raw, mapped) in &meta.tag_map {
        writeln!(out, "{raw}\t{mapped}").unwrap();
    }

    writeln!(out, "[END]").unwrap();
    out
}

struct Parser<'a> {
    lines: Vec<&'a str>,
    /// Zero-based cursor; reported line numbers are one-based.
    pos: usize,
    section: &'static str,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::ModelFormat {
            section: self.section.to_string(),
            line: self.pos + 1,
            message: message.into(),
        }
    }

    fn err_at(&self, line: usize, message: impl Into<String>) -> Error {
        Error::ModelFormat {
            section: self.section.to_string(),
            line,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn next_line(&mut self) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(line)
    }

    fn expect_header(&mut self, name: &'static str) -> Result<()> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(format!("missing section [{name}]")))?;
        if line != format!("[{name}]") {
            return Err(self.err(format!("expected section [{name}], found {line:?}")));
        }
        self.section = name;
        self.pos += 1;
        Ok(())
    }

    /// Consumes body lines until the next section header.
    fn body(&mut self) -> Vec<(usize, &'a str)> {
        let mut out = Vec::new();
        while let Some(line) = self.peek() {
            if line.starts_with('[') {
                break;
            }
            out.push((self.pos + 1, line));
            self.pos += 1;
        }
        out
    }

    fn parse_f64(&self, line: usize, token: &str) -> Result<f64> {
        token
            .parse::<f64>()
            .map_err(|_| self.err_at(line, format!("invalid number {token:?}")))
    }

    fn parse_usize(&self, line: usize, token: &str, what: &str) -> Result<usize> {
        token
            .parse::<usize>()
            .map_err(|_| self.err_at(line, format!("invalid {what} {token:?}")))
    }

    fn parse_float_row(&self, line: usize, tokens: &[&str], dim: usize) -> Result<Vec<f64>> {
        if tokens.len() != dim {
            return Err(self.err_at(
                line,
                format!("expected {dim} numbers, found {}", tokens.len()),
            ));
        }
        tokens
            .iter()
            .map(|t| self.parse_f64(line, t))
            .collect()
    }
}

/// Reads a model from the text format, re-validating every invariant.
pub fn parse_model(text: &str) -> Result<SavedModel> {
    let mut parser = Parser {
        lines: text.lines().collect(),
        pos: 0,
        section: "header",
    };

    let header = parser.next_line()?;
    let found = header
        .strip_prefix("lexhmm model ")
        .ok_or_else(|| Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: header.to_string(),
        })?;
    if found != FORMAT_VERSION.to_string() {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: found.to_string(),
        });
    }

    parser.expect_header(SECTIONS[0])?;
    let mut tags = Vec::new();
    for (line, text) in parser.body() {
        if text.is_empty() {
            return Err(parser.err_at(line, "empty tag label"));
        }
        if tags.iter().any(|t| t == text) {
            return Err(parser.err_at(line, format!("duplicate tag label {text:?}")));
        }
        tags.push(text.to_string());
    }
    if tags.is_empty() {
        return Err(parser.err("no tags listed"));
    }
    let num_content = tags.len();
    let dim = num_content + 1;

    parser.expect_header(SECTIONS[1])?;
    let mut words = Vec::new();
    let mut ambiguity = Vec::new();
    for (line, text) in parser.body() {
        let (word, tag_list) = text
            .split_once('\t')
            .ok_or_else(|| parser.err_at(line, "expected word<TAB>tag indices"))?;
        if word.is_empty() {
            return Err(parser.err_at(line, "empty word"));
        }
        let mut set = BTreeSet::new();
        for piece in tag_list.split(',') {
            let idx = parser.parse_usize(line, piece, "tag index")?;
            if idx >= num_content {
                return Err(parser.err_at(line, format!("tag index {idx} out of range")));
            }
            set.insert(TagId(idx as u16));
        }
        if set.is_empty() {
            return Err(parser.err_at(line, "word without candidate tags"));
        }
        words.push(word.to_string());
        ambiguity.push(set);
    }

    parser.expect_header(SECTIONS[2])?;
    let trans_body = parser.body();
    if trans_body.len() != dim {
        return Err(parser.err(format!(
            "expected {dim} transition rows, found {}",
            trans_body.len()
        )));
    }
    let mut transitions = Vec::with_capacity(dim);
    for (line, text) in trans_body {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let values = parser.parse_float_row(line, &tokens, dim)?;
        let row = ProbVector::new(values)
            .map_err(|e| parser.err_at(line, e.to_string()))?;
        transitions.push(row);
    }

    parser.expect_header(SECTIONS[3])?;
    let mut emissions: Vec<BTreeMap<WordId, f64>> = vec![BTreeMap::new(); num_content];
    let emit_start = parser.pos + 1;
    for (line, text) in parser.body() {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(parser.err_at(line, "expected: tag word probability"));
        }
        let tag = parser.parse_usize(line, tokens[0], "tag index")?;
        let word = parser.parse_usize(line, tokens[1], "word index")?;
        let p = parser.parse_f64(line, tokens[2])?;
        if tag >= num_content {
            return Err(parser.err_at(line, format!("tag index {tag} out of range")));
        }
        if word >= words.len() {
            return Err(parser.err_at(line, format!("word index {word} out of range")));
        }
        if emissions[tag].insert(WordId(word as u32), p).is_some() {
            return Err(parser.err_at(line, format!("duplicate emission ({tag}, {word})")));
        }
    }

    parser.expect_header(SECTIONS[4])?;
    let unk_body = parser.body();
    if unk_body.len() != 1 {
        return Err(parser.err(format!(
            "expected one distribution line, found {}",
            unk_body.len()
        )));
    }
    let (unk_line, unk_text) = unk_body[0];
    let tokens: Vec<&str> = unk_text.split_whitespace().collect();
    let unk_values = parser.parse_float_row(unk_line, &tokens, num_content)?;
    let unknown = ProbVector::new(unk_values)
        .map_err(|e| parser.err_at(unk_line, e.to_string()))?;

    let lexicon = Lexicon::from_parts(tags, words, ambiguity)
        .map_err(|e| parser.err(e.to_string()))?;
    let base = StandardHmm::from_parts(lexicon, transitions, emissions, unknown)
        .map_err(|e| parser.err_at(emit_start, e.to_string()))?;

    parser.expect_header(SECTIONS[5])?;
    let lex_start = parser.pos + 1;
    let lex_body = parser.body();
    if lex_body.is_empty() {
        return Err(parser.err("missing mode line"));
    }
    let (mode_line, mode_text) = lex_body[0];
    let mode = match mode_text.strip_prefix("mode ") {
        Some("none") => None,
        Some(word) => Some(word.parse::<SplitMode>().map_err(|e| {
            parser.err_at(mode_line, e.to_string())
        })?),
        None => return Err(parser.err_at(mode_line, "expected mode line")),
    };
    let mut split_out = BTreeMap::new();
    let mut residual_out = BTreeMap::new();
    let mut split_in = BTreeMap::new();
    let mut residual_in = BTreeMap::new();
    for &(line, text) in &lex_body[1..] {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let (key, rest) = match tokens.first().copied() {
            Some("split") => {
                if tokens.len() < 3 {
                    return Err(parser.err_at(line, "split line too short"));
                }
                let c = parser.parse_usize(line, tokens[1], "tag index")?;
                let w = parser.parse_usize(line, tokens[2], "word index")?;
                (Some((TagId(c as u16), WordId(w as u32))), &tokens[3..])
            }
            Some("residual") => {
                if tokens.len() < 2 {
                    return Err(parser.err_at(line, "residual line too short"));
                }
                let c = parser.parse_usize(line, tokens[1], "tag index")?;
                (Some((TagId(c as u16), WordId(u32::MAX))), &tokens[2..])
            }
            _ => return Err(parser.err_at(line, "expected split or residual line")),
        };
        let is_residual = tokens[0] == "residual";
        if rest.first() != Some(&"out") {
            return Err(parser.err_at(line, "expected out keyword"));
        }
        let after_out = &rest[1..];
        let in_pos = after_out.iter().position(|&t| t == "in");
        let (out_tokens, in_tokens) = match in_pos {
            Some(i) => (&after_out[..i], Some(&after_out[i + 1..])),
            None => (after_out, None),
        };
        let out_values = parser.parse_float_row(line, out_tokens, dim)?;
        let out_row = ProbVector::new(out_values)
            .map_err(|e| parser.err_at(line, e.to_string()))?;
        let key = key.expect("key set above");
        if is_residual {
            if residual_out.insert(key.0, out_row).is_some() {
                return Err(parser.err_at(line, "duplicate residual line"));
            }
            if let Some(in_tokens) = in_tokens {
                residual_in.insert(key.0, parser.parse_float_row(line, in_tokens, dim)?);
            }
        } else {
            if split_out.insert(key, out_row).is_some() {
                return Err(parser.err_at(line, "duplicate split line"));
            }
            if let Some(in_tokens) = in_tokens {
                split_in.insert(key, parser.parse_float_row(line, in_tokens, dim)?);
            }
        }
    }

    parser.expect_header(SECTIONS[6])?;
    let meta_body = parser.body();
    let mut meta_iter = meta_body.iter();
    let mut field = |name: &str| -> Result<(usize, String)> {
        let &(line, text) = meta_iter
            .next()
            .ok_or_else(|| parser.err(format!("missing meta field {name}")))?;
        match text.strip_prefix(name) {
            Some("") => Ok((line, String::new())),
            Some(rest) if rest.starts_with(' ') => Ok((line, rest[1..].to_string())),
            _ => Err(parser.err_at(line, format!("expected meta field {name}"))),
        }
    };
    let (line, value) = field("seed")?;
    let seed = value
        .parse::<u64>()
        .map_err(|_| parser.err_at(line, format!("invalid seed {value:?}")))?;
    let (line, value) = field("test_fraction")?;
    let test_fraction = parser.parse_f64(line, &value)?;
    let (line, value) = field("min_count")?;
    let min_count = value
        .parse::<u64>()
        .map_err(|_| parser.err_at(line, format!("invalid min_count {value:?}")))?;
    let (line, value) = field("smooth_base")?;
    let smooth_base = match value.as_str() {
        "true" => true,
        "false" => false,
        other => return Err(parser.err_at(line, format!("invalid smooth_base {other:?}"))),
    };
    let (_, value) = field("source_digest")?;
    let source_digest = if value == "-" { String::new() } else { value };
    let (_, value) = field("corpus_path")?;
    let corpus_path = if value == "-" { None } else { Some(value) };
    let (line, value) = field("alphas")?;
    let alphas = value
        .split_whitespace()
        .map(|t| parser.parse_f64(line, t))
        .collect::<Result<Vec<f64>>>()?;
    let (line, value) = field("tagmap")?;
    let tagmap_len = parser.parse_usize(line, &value, "tag map length")?;
    let mut tag_map = Vec::with_capacity(tagmap_len);
    for _ in 0..tagmap_len {
        let &(line, text) = meta_iter
            .next()
            .ok_or_else(|| parser.err("tag map shorter than declared"))?;
        let (raw, mapped) = text
            .split_once('\t')
            .ok_or_else(|| parser.err_at(line, "expected raw<TAB>mapped"))?;
        tag_map.push((raw.to_string(), mapped.to_string()));
    }
    if let Some(&(line, _)) = meta_iter.next() {
        return Err(parser.err_at(line, "unexpected extra meta line"));
    }

    parser.expect_header("END")?;
    while let Some(line) = parser.peek() {
        if !line.is_empty() {
            return Err(parser.err("content after [END]"));
        }
        parser.pos += 1;
    }

    parser.section = SECTIONS[5];
    let model = LexicalizedHmm::from_parts(
        base, mode, split_out, residual_out, split_in, residual_in,
    )
    .map_err(|e| parser.err_at(lex_start, e.to_string()))?;

    if model.mode() == Some(SplitMode::Full) && !smooth_base {
        check_incoming_conservation(&model).map_err(|e| parser.err_at(lex_start, e))?;
    }

    Ok(SavedModel {
        model,
        meta: ModelMeta {
            seed,
            test_fraction,
            min_count,
            smooth_base,
            source_digest,
            corpus_path,
            tag_map,
            alphas,
        },
    })
}

/// Verifies that for every split category the incoming masses of its
/// lexicalized states plus the residual still sum to the base transition
/// probability from each predecessor.
fn check_incoming_conservation(model: &LexicalizedHmm) -> std::result::Result<(), String> {
    let base = model.base();
    let dim = base.lexicon().num_tags_with_boundary();
    for c in model.split_categories() {
        let residual = model
            .residual_in_mass(c)
            .ok_or_else(|| format!("category {} missing residual mass", c.index()))?;
        for (prev, &res) in residual.iter().enumerate().take(dim) {
            let mut total = res;
            for &w in model.split_words_of(c).into_iter().flatten() {
                total += model.split_in_mass(c, w).expect("split mass exists")[prev];
            }
            let expected = base.transitions()[prev][c.index()];
            if (total - expected).abs() > 1e-6 {
                return Err(format!(
                    "incoming mass for category {} from predecessor {prev} sums to {total}, expected {expected}",
                    c.index()
                ));
            }
        }
    }
    Ok(())
}

/// Writes a file atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    // Temp files are created unreadable to other users; give the final
    // artifact ordinary permissions instead.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let perms = std::fs::Permissions::from_mode(0o644);
        tmp.as_file()
            .set_permissions(perms)
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Writes a model file atomically.
pub fn save_model(saved: &SavedModel, path: &Path) -> Result<()> {
    write_atomic(path, serialize_model(saved).as_bytes())
}

/// Loads and validates a model file.
pub fn load_model(path: &Path) -> Result<SavedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}
