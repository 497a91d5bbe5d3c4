//! Event counting and estimation of the standard first-order HMM: maximum
//! likelihood transition/emission tables, Dirichlet-interpolation smoothing
//! with a leave-one-out-fitted concentration, and the unknown-word tag
//! distribution.

use std::collections::BTreeMap;
use std::ops::Deref;

use rayon::prelude::*;

use crate::corpus::{Lexicon, TagId, TaggedCorpus, WordId};
use crate::error::{Error, Result};

/// Sufficient statistics gathered in one pass over a training corpus.
///
/// All tables are indexed with the boundary tag included, so every bigram row
/// sums exactly to the matching unigram count (the boundary's unigram is the
/// sentence count). `lex_out` and `lex_in` hold, per (category, word) pair,
/// the successor-tag and predecessor-tag counts of that pair's occurrences;
/// summed over the words of a category they reconstruct the category's bigram
/// row and column exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountsTable {
    num_content_tags: usize,
    tag_unigram: Vec<u64>,
    tag_bigram: Vec<Vec<u64>>,
    emission: Vec<BTreeMap<WordId, u64>>,
    lex_out: BTreeMap<(TagId, WordId), BTreeMap<TagId, u64>>,
    lex_in: BTreeMap<(TagId, WordId), BTreeMap<TagId, u64>>,
    word_freq: Vec<u64>,
    token_total: u64,
}

impl CountsTable {
    pub fn num_content_tags(&self) -> usize {
        self.num_content_tags
    }

    /// Occurrence count of a tag; for the boundary tag, the sentence count.
    pub fn tag_unigram(&self, tag: TagId) -> u64 {
        self.tag_unigram[tag.index()]
    }

    /// Dense successor counts of `prev`, boundary column included.
    pub fn bigram_row(&self, prev: TagId) -> &[u64] {
        &self.tag_bigram[prev.index()]
    }

    pub fn emission_counts(&self, tag: TagId) -> &BTreeMap<WordId, u64> {
        &self.emission[tag.index()]
    }

    pub fn lex_out_row(&self, tag: TagId, word: WordId) -> Option<&BTreeMap<TagId, u64>> {
        self.lex_out.get(&(tag, word))
    }

    pub fn lex_in_row(&self, tag: TagId, word: WordId) -> Option<&BTreeMap<TagId, u64>> {
        self.lex_in.get(&(tag, word))
    }

    /// Successor counts of (tag, word) as a dense vector over all tags plus
    /// boundary.
    pub fn lex_out_dense(&self, tag: TagId, word: WordId) -> Option<Vec<u64>> {
        self.lex_out.get(&(tag, word)).map(|row| {
            let mut dense = vec![0u64; self.num_content_tags + 1];
            for (&t, &n) in row {
                dense[t.index()] = n;
            }
            dense
        })
    }

    /// All (word, successor-count) rows of one category, in word-id order.
    pub fn lex_out_rows_of(&self, tag: TagId) -> impl Iterator<Item = (WordId, &BTreeMap<TagId, u64>)> {
        self.lex_out
            .range((tag, WordId(0))..=(tag, WordId(u32::MAX)))
            .map(|(&(_, w), row)| (w, row))
    }

    /// Total training frequency of a word across all tags.
    pub fn word_freq(&self, word: WordId) -> u64 {
        self.word_freq[word.index()]
    }

    /// Occurrence count of one (category, word) pair.
    pub fn pair_count(&self, tag: TagId, word: WordId) -> u64 {
        self.lex_out
            .get(&(tag, word))
            .map(|row| row.values().sum())
            .unwrap_or(0)
    }

    pub fn token_total(&self) -> u64 {
        self.token_total
    }

    #[cfg(test)]
    pub(crate) fn from_raw(
        num_content_tags: usize,
        tag_unigram: Vec<u64>,
        tag_bigram: Vec<Vec<u64>>,
        emission: Vec<BTreeMap<WordId, u64>>,
        word_freq: Vec<u64>,
    ) -> Self {
        let token_total = tag_unigram[..num_content_tags].iter().sum();
        CountsTable {
            num_content_tags,
            tag_unigram,
            tag_bigram,
            emission,
            lex_out: BTreeMap::new(),
            lex_in: BTreeMap::new(),
            word_freq,
            token_total,
        }
    }
}

/// Tallies unigram, bigram, emission, and per-(category, word) transition
/// events. Sentence edges contribute boundary→first and last→boundary
/// bigrams, and the boundary participates in the lexicalized rows as both
/// successor and predecessor.
pub fn count_events(train: &TaggedCorpus, lexicon: &Lexicon) -> Result<CountsTable> {
    let c = lexicon.num_content_tags();
    let boundary = lexicon.boundary_tag();
    let dim = c + 1;

    let mut counts = CountsTable {
        num_content_tags: c,
        tag_unigram: vec![0; dim],
        tag_bigram: vec![vec![0; dim]; dim],
        emission: vec![BTreeMap::new(); c],
        lex_out: BTreeMap::new(),
        lex_in: BTreeMap::new(),
        word_freq: vec![0; lexicon.num_words()],
        token_total: 0,
    };

    for sentence in train.sentences() {
        let ids: Vec<(TagId, WordId)> = sentence
            .tokens()
            .iter()
            .map(|t| {
                let tag = lexicon
                    .tag_id(&t.tag)
                    .ok_or_else(|| Error::LexiconMismatch(format!("tag {:?}", t.tag)))?;
                let word = lexicon
                    .word_id(&t.word)
                    .ok_or_else(|| Error::LexiconMismatch(format!("word {:?}", t.word)))?;
                Ok((tag, word))
            })
            .collect::<Result<_>>()?;

        counts.tag_unigram[boundary.index()] += 1;
        for (i, &(tag, word)) in ids.iter().enumerate() {
            let prev = if i == 0 { boundary } else { ids[i - 1].0 };
            let next = ids.get(i + 1).map(|&(t, _)| t).unwrap_or(boundary);

            counts.tag_unigram[tag.index()] += 1;
            counts.tag_bigram[prev.index()][tag.index()] += 1;
            if i + 1 == ids.len() {
                counts.tag_bigram[tag.index()][boundary.index()] += 1;
            }
            *counts.emission[tag.index()].entry(word).or_insert(0) += 1;
            *counts
                .lex_out
                .entry((tag, word))
                .or_default()
                .entry(next)
                .or_insert(0) += 1;
            *counts
                .lex_in
                .entry((tag, word))
                .or_default()
                .entry(prev)
                .or_insert(0) += 1;
            counts.word_freq[word.index()] += 1;
            counts.token_total += 1;
        }
    }
    Ok(counts)
}

/// A probability distribution: non-negative entries summing to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbVector("empty vector".to_string()));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if p < 0.0 || !p.is_finite() {
                return Err(Error::InvalidProbVector(format!(
                    "entry {i} is {p}, expected a non-negative finite value"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbVector(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(ProbVector(probs))
    }

    pub fn uniform(n: usize) -> Self {
        ProbVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Dirichlet interpolation of sparse counts toward a parent distribution:
/// `(n_i + alpha * parent_i) / (N + alpha)`. With no counts at all the result
/// is exactly the parent.
pub fn mackay_peto_smooth(child: &[u64], parent: &ProbVector, alpha: f64) -> Result<ProbVector> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidAlpha(alpha));
    }
    if child.len() != parent.len() {
        return Err(Error::DimensionMismatch {
            left: child.len(),
            right: parent.len(),
        });
    }
    let total: u64 = child.iter().sum();
    if total == 0 {
        return Ok(parent.clone());
    }
    let denom = total as f64 + alpha;
    let probs = child
        .iter()
        .zip(parent.iter())
        .map(|(&n, &p)| (n as f64 + alpha * p) / denom)
        .collect();
    ProbVector::new(probs)
}

/// Leave-one-out log-likelihood of count rows under Dirichlet interpolation
/// toward their parents; the objective maximized by [`estimate_alpha`].
fn loo_log_likelihood(rows: &[(&[u64], &ProbVector)], alpha: f64) -> f64 {
    let mut ll = 0.0;
    for (child, parent) in rows {
        let total: u64 = child.iter().sum();
        if total == 0 {
            continue;
        }
        let denom = (total - 1) as f64 + alpha;
        for (&n, &p) in child.iter().zip(parent.iter()) {
            if n == 0 {
                continue;
            }
            let num = ((n - 1) as f64 + alpha * p).max(1e-300);
            ll += n as f64 * (num / denom).ln();
        }
    }
    ll
}

const ALPHA_LO: f64 = 1e-2;
const ALPHA_HI: f64 = 1e5;

/// Fits the shared concentration for a set of (counts, parent) rows by
/// maximizing their summed leave-one-out log-likelihood with a deterministic
/// golden-section search over log-alpha in [1e-2, 1e5] (tolerance 1e-3).
pub fn estimate_alpha(rows: &[(&[u64], &ProbVector)]) -> Result<f64> {
    if rows.iter().all(|(child, _)| child.iter().sum::<u64>() == 0) {
        return Err(Error::EmptyCountRows);
    }
    let f = |x: f64| loo_log_likelihood(rows, x.exp());
    let x = golden_section_max(f, ALPHA_LO.ln(), ALPHA_HI.ln(), 1e-3);
    Ok(x.exp())
}

/// Golden-section maximization of a unimodal function on [a, b]. On exact
/// ties the right endpoint moves, so flat objectives settle at the lower
/// bound and strictly increasing ones at the upper.
fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        }
    }
    (a + b) / 2.0
}

/// The standard first-order model: transition rows over tags plus boundary,
/// sparse per-tag emission tables, and the unknown-word tag distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardHmm {
    lexicon: Lexicon,
    transitions: Vec<ProbVector>,
    emissions: Vec<BTreeMap<WordId, f64>>,
    unknown_dist: ProbVector,
}

impl StandardHmm {
    /// Assembles a model from its tables, validating all normalization
    /// invariants.
    pub fn from_parts(
        lexicon: Lexicon,
        transitions: Vec<ProbVector>,
        emissions: Vec<BTreeMap<WordId, f64>>,
        unknown_dist: ProbVector,
    ) -> Result<Self> {
        let dim = lexicon.num_tags_with_boundary();
        if transitions.len() != dim {
            return Err(Error::DimensionMismatch {
                left: transitions.len(),
                right: dim,
            });
        }
        for row in &transitions {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: row.len(),
                    right: dim,
                });
            }
        }
        if emissions.len() != lexicon.num_content_tags() {
            return Err(Error::DimensionMismatch {
                left: emissions.len(),
                right: lexicon.num_content_tags(),
            });
        }
        for (i, row) in emissions.iter().enumerate() {
            let mut sum = 0.0;
            for (&w, &p) in row {
                if w.index() >= lexicon.num_words() {
                    return Err(Error::LexiconMismatch(format!("word id {w}")));
                }
                if p < 0.0 || !p.is_finite() {
                    return Err(Error::InvalidProbVector(format!(
                        "emission row {i} entry for word {w} is {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidProbVector(format!(
                    "emission row {i} sums to {sum}, expected 1"
                )));
            }
        }
        if unknown_dist.len() != lexicon.num_content_tags() {
            return Err(Error::DimensionMismatch {
                left: unknown_dist.len(),
                right: lexicon.num_content_tags(),
            });
        }
        Ok(StandardHmm {
            lexicon,
            transitions,
            emissions,
            unknown_dist,
        })
    }

    /// Assembles a model without invariant checks. Intended for tests that
    /// deliberately construct non-normalized tables.
    #[doc(hidden)]
    pub fn from_parts_unchecked(
        lexicon: Lexicon,
        transitions: Vec<ProbVector>,
        emissions: Vec<BTreeMap<WordId, f64>>,
        unknown_dist: ProbVector,
    ) -> Self {
        StandardHmm {
            lexicon,
            transitions,
            emissions,
            unknown_dist,
        }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    /// Outgoing distribution of a tag (or of the boundary as start state).
    pub fn transition_row(&self, tag: TagId) -> &ProbVector {
        &self.transitions[tag.index()]
    }

    pub fn transitions(&self) -> &[ProbVector] {
        &self.transitions
    }

    pub fn emission_row(&self, tag: TagId) -> &BTreeMap<WordId, f64> {
        &self.emissions[tag.index()]
    }

    /// Probability of a known word under a tag; 0 when the pair was unseen.
    pub fn emission_prob(&self, tag: TagId, word: WordId) -> f64 {
        self.emissions[tag.index()].get(&word).copied().unwrap_or(0.0)
    }

    pub fn unknown_dist(&self) -> &ProbVector {
        &self.unknown_dist
    }

    pub fn unknown_prob(&self, tag: TagId) -> f64 {
        self.unknown_dist[tag.index()]
    }
}

/// Maximum-likelihood estimation of the standard model from counts. Rows are
/// plain count ratios; known-word emissions get no smoothing, and unseen
/// (tag, word) pairs keep probability 0.
pub fn estimate_mle(counts: &CountsTable, lexicon: &Lexicon) -> Result<StandardHmm> {
    let dim = lexicon.num_tags_with_boundary();
    if counts.num_content_tags() != lexicon.num_content_tags() {
        return Err(Error::DimensionMismatch {
            left: counts.num_content_tags(),
            right: lexicon.num_content_tags(),
        });
    }

    let mut transitions = Vec::with_capacity(dim);
    for t in 0..dim {
        let tag = TagId(t as u16);
        let total = counts.tag_unigram(tag);
        if total == 0 {
            return Err(Error::ZeroOutgoingEvents(lexicon.tag_label(tag).to_string()));
        }
        let row = counts
            .bigram_row(tag)
            .iter()
            .map(|&n| n as f64 / total as f64)
            .collect();
        transitions.push(ProbVector::new(row)?);
    }

    let mut emissions = Vec::with_capacity(lexicon.num_content_tags());
    for t in 0..lexicon.num_content_tags() {
        let tag = TagId(t as u16);
        let total = counts.tag_unigram(tag) as f64;
        let row = counts
            .emission_counts(tag)
            .iter()
            .map(|(&w, &n)| (w, n as f64 / total))
            .collect();
        emissions.push(row);
    }

    let unknown_dist = unknown_word_distribution(counts);
    StandardHmm::from_parts(lexicon.clone(), transitions, emissions, unknown_dist)
}

/// Tag distribution for words never seen in training: the add-one-smoothed
/// tag profile of training hapax legomena (words of total frequency 1).
/// With no hapaxes this degrades to uniform over content tags.
pub fn unknown_word_distribution(counts: &CountsTable) -> ProbVector {
    let c = counts.num_content_tags();
    let mut hapax = vec![0u64; c];
    for (t, slot) in hapax.iter_mut().enumerate() {
        for &w in counts.emission_counts(TagId(t as u16)).keys() {
            if counts.word_freq(w) == 1 {
                *slot += 1;
            }
        }
    }
    let total: u64 = hapax.iter().sum();
    let denom = (total + c as u64) as f64;
    let probs = hapax.iter().map(|&h| (h + 1) as f64 / denom).collect();
    ProbVector::new(probs).expect("add-one distribution normalizes")
}

/// Fits one smoothing concentration per content category, shared by all of
/// that category's word-conditioned transition rows, with the category's own
/// transition row as the parent.
pub fn fit_category_alphas(counts: &CountsTable, model: &StandardHmm) -> Vec<f64> {
    let c = counts.num_content_tags();
    (0..c)
        .into_par_iter()
        .map(|t| {
            let tag = TagId(t as u16);
            let parent = model.transition_row(tag);
            let dense: Vec<Vec<u64>> = counts
                .lex_out_rows_of(tag)
                .map(|(w, _)| counts.lex_out_dense(tag, w).expect("row exists"))
                .collect();
            let rows: Vec<(&[u64], &ProbVector)> =
                dense.iter().map(|r| (r.as_slice(), parent)).collect();
            estimate_alpha(&rows).unwrap_or(1.0)
        })
        .collect()
}

/// Corpus-wide successor-tag marginal: the shared parent used when the base
/// transition rows themselves are smoothed.
pub fn successor_marginal(counts: &CountsTable) -> ProbVector {
    let dim = counts.num_content_tags() + 1;
    let mut sums = vec![0u64; dim];
    for t in 0..dim {
        for (i, &n) in counts.bigram_row(TagId(t as u16)).iter().enumerate() {
            sums[i] += n;
        }
    }
    let total: u64 = sums.iter().sum();
    let probs = sums.iter().map(|&n| n as f64 / total as f64).collect();
    ProbVector::new(probs).expect("marginal normalizes")
}

/// Like [`estimate_mle`] but with every transition row interpolated toward
/// the corpus-wide successor marginal, using one concentration fitted over
/// all rows. Returns the model and the fitted concentration.
pub fn estimate_with_smoothed_transitions(
    counts: &CountsTable,
    lexicon: &Lexicon,
) -> Result<(StandardHmm, f64)> {
    let mle = estimate_mle(counts, lexicon)?;
    let marginal = successor_marginal(counts);
    let dim = lexicon.num_tags_with_boundary();
    let dense: Vec<&[u64]> = (0..dim).map(|t| counts.bigram_row(TagId(t as u16))).collect();
    let rows: Vec<(&[u64], &ProbVector)> = dense.iter().map(|&r| (r, &marginal)).collect();
    let alpha = estimate_alpha(&rows)?;
    let transitions = dense
        .iter()
        .map(|&r| mackay_peto_smooth(r, &marginal, alpha))
        .collect::<Result<Vec<_>>>()?;
    let model = StandardHmm::from_parts(
        lexicon.clone(),
        transitions,
        mle.emissions.clone(),
        mle.unknown_dist.clone(),
    )?;
    Ok((model, alpha))
}
