//! Tagged-corpus parsing, tag-set mapping, train/test splitting, and the
//! interned lexicon with per-word ambiguity classes.
//!
//! The corpus format is one sentence per line, tokens separated by single
//! spaces, each token `word/TAG`. Tokens are split at the *last* slash so
//! words with embedded slashes survive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Dense id of a part-of-speech category. The reserved boundary tag gets the
/// highest id (`C` when there are `C` content tags).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TagId(pub u16);

impl TagId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Dense id of a surface word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WordId(pub u32);

impl WordId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for WordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One `word/TAG` token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub word: String,
    pub tag: String,
}

/// A non-empty sequence of tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    tokens: Vec<Token>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for t in &tokens {
            if t.word.is_empty() || t.tag.is_empty() {
                return Err(Error::CorpusParse {
                    line: 0,
                    column: 0,
                    message: "empty word or tag".to_string(),
                });
            }
        }
        Ok(TaggedSentence { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.word.as_str())
    }
}

/// A parsed corpus: sentences plus the tag set in first-appearance order and
/// a content digest for provenance checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedCorpus {
    sentences: Vec<TaggedSentence>,
    tag_set: Vec<String>,
    source_digest: String,
}

impl TaggedCorpus {
    /// Builds a corpus from sentences. The tag set is collected in
    /// first-appearance order and the digest is the SHA-256 of the canonical
    /// serialization, so parse -> serialize -> parse is an identity.
    pub fn from_sentences(sentences: Vec<TaggedSentence>) -> Self {
        let mut tag_set = Vec::new();
        let mut seen = BTreeSet::new();
        for s in &sentences {
            for t in s.tokens() {
                if seen.insert(t.tag.clone()) {
                    tag_set.push(t.tag.clone());
                }
            }
        }
        let mut corpus = TaggedCorpus {
            sentences,
            tag_set,
            source_digest: String::new(),
        };
        let text = corpus.to_text();
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        corpus.source_digest = hex;
        corpus
    }

    pub fn sentences(&self) -> &[TaggedSentence] {
        &self.sentences
    }

    pub fn tag_set(&self) -> &[String] {
        &self.tag_set
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    /// Canonical text form: one sentence per line, `word/TAG` tokens joined
    /// by single spaces, trailing newline.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            let mut first = true;
            for t in s.tokens() {
                if !first {
                    out.push(' ');
                }
                out.push_str(&t.word);
                out.push('/');
                out.push_str(&t.tag);
                first = false;
            }
            out.push('\n');
        }
        out
    }

    /// Applies a fine-to-coarse tag mapping to every token. Tags without a
    /// mapping entry pass through unchanged.
    pub fn map_tags(&self, map: &TagMap) -> TaggedCorpus {
        let sentences = self
            .sentences
            .iter()
            .map(|s| TaggedSentence {
                tokens: s
                    .tokens()
                    .iter()
                    .map(|t| Token {
                        word: t.word.clone(),
                        tag: map.map(&t.tag).to_string(),
                    })
                    .collect(),
            })
            .collect();
        TaggedCorpus::from_sentences(sentences)
    }
}

/// Parses the slash format described in the module docs. Blank lines are
/// ignored; a token without a slash, or with an empty word or tag half, is a
/// parse error carrying 1-based line and column.
pub fn parse_tagged_text(text: &str) -> Result<TaggedCorpus> {
    let mut sentences = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = Vec::new();
        let mut column = 1usize;
        for piece in line.split(' ') {
            if piece.is_empty() {
                return Err(Error::CorpusParse {
                    line: line_no,
                    column,
                    message: "empty token (consecutive spaces?)".to_string(),
                });
            }
            if piece.contains('\t') {
                return Err(Error::CorpusParse {
                    line: line_no,
                    column,
                    message: "token contains a tab character".to_string(),
                });
            }
            let slash = piece.rfind('/').ok_or_else(|| Error::CorpusParse {
                line: line_no,
                column,
                message: format!("token {piece:?} has no '/' separator"),
            })?;
            let (word, tag) = (&piece[..slash], &piece[slash + 1..]);
            if word.is_empty() || tag.is_empty() {
                return Err(Error::CorpusParse {
                    line: line_no,
                    column,
                    message: format!("token {piece:?} has an empty word or tag"),
                });
            }
            tokens.push(Token {
                word: word.to_string(),
                tag: tag.to_string(),
            });
            column += piece.len() + 1;
        }
        sentences.push(TaggedSentence { tokens });
    }
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(TaggedCorpus::from_sentences(sentences))
}

/// Fine-to-coarse tag mapping loaded from `FINE<TAB>COARSE` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagMap {
    entries: BTreeMap<String, String>,
}

impl TagMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let fine = parts.next().unwrap_or("");
            let coarse = parts.next().unwrap_or("");
            if fine.is_empty() || coarse.is_empty() {
                return Err(Error::TagMapParse {
                    line: idx + 1,
                    message: format!("expected FINE<TAB>COARSE, got {line:?}"),
                });
            }
            entries.insert(fine.to_string(), coarse.trim_end().to_string());
        }
        Ok(TagMap { entries })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        TagMap {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn map<'a>(&'a self, tag: &'a str) -> &'a str {
        self.entries.get(tag).map(String::as_str).unwrap_or(tag)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Splits a corpus at the sentence level: seeded shuffle, then the first
/// `round(test_fraction * n)` shuffled sentences form the test set. Within
/// each half the original sentence order is preserved.
pub fn split_corpus(
    corpus: &TaggedCorpus,
    test_fraction: f64,
    seed: u64,
) -> Result<(TaggedCorpus, TaggedCorpus)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidFraction(test_fraction));
    }
    let n = corpus.sentence_count();
    if n < 2 {
        return Err(Error::TooFewSentences(n));
    }
    let n_test = (test_fraction * n as f64).round() as usize;

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let mut test_idx: Vec<usize> = indices[..n_test].to_vec();
    let mut train_idx: Vec<usize> = indices[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let pick = |idx: &[usize]| {
        TaggedCorpus::from_sentences(idx.iter().map(|&i| corpus.sentences[i].clone()).collect())
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Interned vocabulary: word and tag ids, the reserved boundary tag, and the
/// tags each word was observed with in training.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    words: Vec<String>,
    word_ids: BTreeMap<String, WordId>,
    tags: Vec<String>,
    tag_ids: BTreeMap<String, TagId>,
    ambiguity: Vec<BTreeSet<TagId>>,
}

impl Lexicon {
    /// Word ids in first-appearance order, tag ids in tag-set order, boundary
    /// appended after all observed tags.
    pub fn build(train: &TaggedCorpus) -> Result<Self> {
        if train.sentence_count() == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut tags = Vec::new();
        let mut tag_ids = BTreeMap::new();
        for tag in train.tag_set() {
            let id = TagId(tags.len() as u16);
            tags.push(tag.clone());
            tag_ids.insert(tag.clone(), id);
        }

        let mut words = Vec::new();
        let mut word_ids: BTreeMap<String, WordId> = BTreeMap::new();
        let mut ambiguity: Vec<BTreeSet<TagId>> = Vec::new();
        for sentence in train.sentences() {
            for token in sentence.tokens() {
                let wid = *word_ids.entry(token.word.clone()).or_insert_with(|| {
                    words.push(token.word.clone());
                    ambiguity.push(BTreeSet::new());
                    WordId((words.len() - 1) as u32)
                });
                let tid = tag_ids[&token.tag];
                ambiguity[wid.index()].insert(tid);
            }
        }
        Ok(Lexicon {
            words,
            word_ids,
            tags,
            tag_ids,
            ambiguity,
        })
    }

    /// Reassembles a lexicon from serialized parts.
    pub fn from_parts(
        tags: Vec<String>,
        words: Vec<String>,
        ambiguity: Vec<BTreeSet<TagId>>,
    ) -> Result<Self> {
        if words.len() != ambiguity.len() {
            return Err(Error::DimensionMismatch {
                left: words.len(),
                right: ambiguity.len(),
            });
        }
        let boundary = TagId(tags.len() as u16);
        for set in &ambiguity {
            for &tid in set {
                if tid >= boundary {
                    return Err(Error::UnknownCategory(tid.index()));
                }
            }
        }
        let tag_ids = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), TagId(i as u16)))
            .collect();
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), WordId(i as u32)))
            .collect();
        Ok(Lexicon {
            words,
            word_ids,
            tags,
            tag_ids,
            ambiguity,
        })
    }

    /// Number of content categories, excluding the boundary tag.
    pub fn num_content_tags(&self) -> usize {
        self.tags.len()
    }

    /// Content categories plus the boundary tag; the transition dimension.
    pub fn num_tags_with_boundary(&self) -> usize {
        self.tags.len() + 1
    }

    pub fn boundary_tag(&self) -> TagId {
        TagId(self.tags.len() as u16)
    }

    pub fn word_id(&self, word: &str) -> Option<WordId> {
        self.word_ids.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id.index()]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn tag_id(&self, tag: &str) -> Option<TagId> {
        self.tag_ids.get(tag).copied()
    }

    pub fn tag_label(&self, id: TagId) -> &str {
        if id == self.boundary_tag() {
            "<boundary>"
        } else {
            &self.tags[id.index()]
        }
    }

    pub fn content_tags(&self) -> impl Iterator<Item = TagId> {
        (0..self.tags.len() as u16).map(TagId)
    }

    pub fn ambiguity_class(&self, word: WordId) -> &BTreeSet<TagId> {
        &self.ambiguity[word.index()]
    }
}

/// Test-token counts bucketed by training ambiguity degree, with unknown
/// words kept in their own bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmbiguityHistogram {
    counts: BTreeMap<usize, usize>,
    unknown: usize,
    total: usize,
}

impl AmbiguityHistogram {
    pub fn counts(&self) -> &BTreeMap<usize, usize> {
        &self.counts
    }

    pub fn unknown_count(&self) -> usize {
        self.unknown
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn fraction(&self, degree: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        *self.counts.get(&degree).unwrap_or(&0) as f64 / self.total as f64
    }

    pub fn unknown_fraction(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.unknown as f64 / self.total as f64
    }

    /// Known-degree fractions plus the unknown fraction; sums to 1 when the
    /// test set is non-empty.
    pub fn fractions(&self) -> (BTreeMap<usize, f64>, f64) {
        let map = self
            .counts
            .iter()
            .map(|(&k, &v)| (k, v as f64 / self.total.max(1) as f64))
            .collect();
        (map, self.unknown_fraction())
    }
}

/// Buckets every test token by the size of its training ambiguity class.
pub fn ambiguity_histogram(lexicon: &Lexicon, test: &TaggedCorpus) -> AmbiguityHistogram {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut unknown = 0usize;
    let mut total = 0usize;
    for sentence in test.sentences() {
        for token in sentence.tokens() {
            total += 1;
            match lexicon.word_id(&token.word) {
                Some(wid) => {
                    let degree = lexicon.ambiguity_class(wid).len();
                    *counts.entry(degree).or_insert(0) += 1;
                }
                None => unknown += 1,
            }
        }
    }
    AmbiguityHistogram {
        counts,
        unknown,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(text: &str) -> TaggedCorpus {
        parse_tagged_text(text).unwrap()
    }

    #[test]
    fn parses_simple_sentence() {
        let c = corpus("The/AT dog/NN barks/VBZ");
        assert_eq!(c.sentence_count(), 1);
        assert_eq!(c.token_count(), 3);
        assert_eq!(c.tag_set(), &["AT", "NN", "VBZ"]);
    }

    #[test]
    fn splits_token_at_last_slash() {
        let c = corpus("a/b/CD");
        let token = &c.sentences()[0].tokens()[0];
        assert_eq!(token.word, "a/b");
        assert_eq!(token.tag, "CD");
    }

    #[test]
    fn rejects_token_without_slash() {
        let err = parse_tagged_text("The/AT dog").unwrap_err();
        match err {
            Error::CorpusParse { line, column, .. } => {
                assert_eq!(line, 1);
                assert_eq!(column, 8);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_input() {
        assert!(matches!(parse_tagged_text(""), Err(Error::EmptyCorpus)));
        assert!(matches!(parse_tagged_text("\n\n"), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn blank_lines_are_ignored() {
        let c = corpus("a/A\n\nb/B\n");
        assert_eq!(c.sentence_count(), 2);
    }

    #[test]
    fn round_trip_is_identity() {
        let c = corpus("The/AT dog/NN\na/b/CD runs/VBZ\n");
        let again = parse_tagged_text(&c.to_text()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.source_digest(), again.source_digest());
    }

    #[test]
    fn tag_set_in_first_appearance_order() {
        let c = corpus("x/B y/A\nz/C w/A");
        assert_eq!(c.tag_set(), &["B", "A", "C"]);
    }

    #[test]
    fn split_ten_sentences_fraction_tenth() {
        let text: String = (0..10).map(|i| format!("w{i}/T\n")).collect();
        let c = corpus(&text);
        let (train, test) = split_corpus(&c, 0.1, 7).unwrap();
        assert_eq!(train.sentence_count(), 9);
        assert_eq!(test.sentence_count(), 1);
    }

    #[test]
    fn split_is_deterministic() {
        let text: String = (0..50).map(|i| format!("w{i}/T\n")).collect();
        let c = corpus(&text);
        let a = split_corpus(&c, 0.2, 99).unwrap();
        let b = split_corpus(&c, 0.2, 99).unwrap();
        assert_eq!(a, b);
        let other = split_corpus(&c, 0.2, 100).unwrap();
        assert_ne!(a.1, other.1);
    }

    #[test]
    fn split_is_a_partition() {
        let text: String = (0..20).map(|i| format!("w{i}/T\n")).collect();
        let c = corpus(&text);
        let (train, test) = split_corpus(&c, 0.25, 3).unwrap();
        let mut seen: Vec<&str> = train
            .sentences()
            .iter()
            .chain(test.sentences())
            .map(|s| s.tokens()[0].word.as_str())
            .collect();
        seen.sort_unstable();
        let mut expected: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        expected.sort();
        assert_eq!(seen, expected.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let c = corpus("a/A\nb/B");
        assert!(matches!(
            split_corpus(&c, 0.0, 0),
            Err(Error::InvalidFraction(_))
        ));
        assert!(matches!(
            split_corpus(&c, 1.0, 0),
            Err(Error::InvalidFraction(_))
        ));
    }

    #[test]
    fn lexicon_ambiguity_classes() {
        let c = corpus("the/D dog/N\nthe/D run/N\nthey/P run/V");
        let lex = Lexicon::build(&c).unwrap();
        let dog = lex.word_id("dog").unwrap();
        let run = lex.word_id("run").unwrap();
        assert_eq!(lex.ambiguity_class(dog).len(), 1);
        let run_tags: Vec<&str> = lex
            .ambiguity_class(run)
            .iter()
            .map(|&t| lex.tag_label(t))
            .collect();
        assert_eq!(run_tags, vec!["N", "V"]);
    }

    #[test]
    fn boundary_tag_follows_content_tags() {
        let c = corpus("a/A b/B");
        let lex = Lexicon::build(&c).unwrap();
        assert_eq!(lex.num_content_tags(), 2);
        assert_eq!(lex.boundary_tag(), TagId(2));
        for w in 0..lex.num_words() {
            assert!(!lex
                .ambiguity_class(WordId(w as u32))
                .contains(&lex.boundary_tag()));
        }
    }

    #[test]
    fn histogram_unambiguous_only() {
        let train = corpus("a/A b/B\na/A");
        let lex = Lexicon::build(&train).unwrap();
        let test = corpus("a/A b/B a/A");
        let hist = ambiguity_histogram(&lex, &test);
        assert_eq!(hist.fraction(1), 1.0);
        assert_eq!(hist.unknown_count(), 0);
    }

    #[test]
    fn histogram_separates_unknown() {
        let train = corpus("a/A");
        let lex = Lexicon::build(&train).unwrap();
        let test = corpus("a/A z/A");
        let hist = ambiguity_histogram(&lex, &test);
        assert_eq!(hist.fraction(1), 0.5);
        assert_eq!(hist.unknown_fraction(), 0.5);
    }

    #[test]
    fn histogram_fractions_sum_to_one() {
        let train = corpus("a/A b/B c/C\na/B b/B");
        let lex = Lexicon::build(&train).unwrap();
        let test = corpus("a/A c/C q/A b/B");
        let hist = ambiguity_histogram(&lex, &test);
        let (map, unknown) = hist.fractions();
        let sum: f64 = map.values().sum::<f64>() + unknown;
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tag_map_applies_before_training() {
        let map = TagMap::parse("NN1\tNN\nNN2\tNN\n").unwrap();
        let c = corpus("dog/NN1 cats/NN2 runs/VBZ");
        let mapped = c.map_tags(&map);
        assert_eq!(mapped.tag_set(), &["NN", "VBZ"]);
    }

    #[test]
    fn tag_map_rejects_malformed_line() {
        assert!(matches!(
            TagMap::parse("NN1 NN\n"),
            Err(Error::TagMapParse { line: 1, .. })
        ));
    }
}
