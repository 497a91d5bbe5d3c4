//! Selective lexicalization: measure how far each (category, word) pair's
//! transition behaviour deviates from its category's, rank the pairs, and
//! split the worst offenders into word-specific states.
//!
//! Full splitting separates emissions, outgoing transitions, and incoming
//! transitions for the new state; pseudo splitting separates only the
//! outgoing transitions and shares everything else with the original state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::corpus::{TagId, WordId};
use crate::error::{Error, Result};
use crate::model::{mackay_peto_smooth, CountsTable, ProbVector, StandardHmm};

/// Which parameters a split separates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Full,
    Pseudo,
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::Full => "full",
            SplitMode::Pseudo => "pseudo",
        })
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SplitMode::Full),
            "pseudo" => Ok(SplitMode::Pseudo),
            other => Err(Error::Cli(format!(
                "unknown split mode {other:?}, expected full or pseudo"
            ))),
        }
    }
}

/// One scored split candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationEntry {
    pub category: TagId,
    pub word: WordId,
    pub count: u64,
    pub deviation: f64,
}

/// An ordered, duplicate-free set of (category, word) pairs to split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    entries: Vec<(TagId, WordId)>,
    mode: SplitMode,
}

impl SplitSpec {
    pub fn new(entries: Vec<(TagId, WordId)>, mode: SplitMode) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &(c, w) in &entries {
            if !seen.insert((c, w)) {
                return Err(Error::DuplicateSplit {
                    category: c.index(),
                    word: w.index(),
                });
            }
        }
        Ok(SplitSpec { entries, mode })
    }

    pub fn entries(&self) -> &[(TagId, WordId)] {
        &self.entries
    }

    pub fn mode(&self) -> SplitMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Squared Euclidean distance (v1 - v2)ᵀ(v1 - v2).
pub fn squared_distance(v1: &ProbVector, v2: &ProbVector) -> Result<f64> {
    if v1.len() != v2.len() {
        return Err(Error::DimensionMismatch {
            left: v1.len(),
            right: v2.len(),
        });
    }
    Ok(v1
        .iter()
        .zip(v2.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// The transition vector of a category: its outgoing row, boundary column
/// included. This is the centroid its word-conditioned vectors are measured
/// against.
pub fn centroid_vector(model: &StandardHmm, category: TagId) -> Result<&ProbVector> {
    if category.index() >= model.lexicon().num_content_tags() {
        return Err(Error::UnknownCategory(category.index()));
    }
    Ok(model.transition_row(category))
}

/// The word-conditioned transition vector of (category, word): its successor
/// counts smoothed toward the parent.
pub fn lexicalized_vector(
    counts: &CountsTable,
    category: TagId,
    word: WordId,
    parent: &ProbVector,
    alpha: f64,
) -> Result<ProbVector> {
    let dense = counts
        .lex_out_dense(category, word)
        .ok_or(Error::MissingLexRow {
            category: category.index(),
            word: word.index(),
        })?;
    mackay_peto_smooth(&dense, parent, alpha)
}

/// Deviation of a word-conditioned vector from its centroid.
pub fn deviation(lex_vector: &ProbVector, centroid: &ProbVector) -> Result<f64> {
    squared_distance(lex_vector, centroid)
}

/// Per-category cluster errors (sum of member deviations) and their total.
pub fn model_error(entries: &[DeviationEntry]) -> (BTreeMap<TagId, f64>, f64) {
    let mut per_category: BTreeMap<TagId, f64> = BTreeMap::new();
    for e in entries {
        *per_category.entry(e.category).or_insert(0.0) += e.deviation;
    }
    let total = per_category.values().sum();
    (per_category, total)
}

fn candidate_order(a: &DeviationEntry, b: &DeviationEntry) -> std::cmp::Ordering {
    b.deviation
        .total_cmp(&a.deviation)
        .then(b.count.cmp(&a.count))
        .then(a.category.cmp(&b.category))
        .then(a.word.cmp(&b.word))
}

/// Scores every (category, word) pair with at least `min_count` occurrences
/// and returns them ordered by descending deviation. Ties break by higher
/// count, then lower category id, then lower word id.
pub fn rank_candidates(
    model: &StandardHmm,
    counts: &CountsTable,
    min_count: u64,
    alphas: &[f64],
) -> Result<Vec<DeviationEntry>> {
    let c = model.lexicon().num_content_tags();
    if alphas.len() != c {
        return Err(Error::DimensionMismatch {
            left: alphas.len(),
            right: c,
        });
    }
    let mut pairs = Vec::new();
    for t in 0..c {
        let tag = TagId(t as u16);
        for (word, row) in counts.lex_out_rows_of(tag) {
            let count: u64 = row.values().sum();
            if count >= min_count.max(1) {
                pairs.push((tag, word, count));
            }
        }
    }
    let mut entries: Vec<DeviationEntry> = pairs
        .into_par_iter()
        .map(|(tag, word, count)| {
            let centroid = centroid_vector(model, tag)?;
            let vector = lexicalized_vector(counts, tag, word, centroid, alphas[tag.index()])?;
            Ok(DeviationEntry {
                category: tag,
                word,
                count,
                deviation: deviation(&vector, centroid)?,
            })
        })
        .collect::<Result<_>>()?;
    entries.sort_by(candidate_order);
    Ok(entries)
}

/// Greedy variant of [`rank_candidates`]: after each pick the chosen pair's
/// counts leave its category's residual, the category centroid is re-derived
/// from what remains, and that category's surviving candidates are rescored.
pub fn rank_candidates_rerank(
    model: &StandardHmm,
    counts: &CountsTable,
    min_count: u64,
    alphas: &[f64],
    limit: usize,
) -> Result<Vec<DeviationEntry>> {
    let c = model.lexicon().num_content_tags();
    if alphas.len() != c {
        return Err(Error::DimensionMismatch {
            left: alphas.len(),
            right: c,
        });
    }

    struct Candidate {
        category: TagId,
        word: WordId,
        count: u64,
        dense: Vec<u64>,
        deviation: f64,
    }

    let mut residual: Vec<Vec<u64>> = (0..c)
        .map(|t| counts.bigram_row(TagId(t as u16)).to_vec())
        .collect();
    let centroid_of = |residual_row: &[u64], base: &ProbVector| -> ProbVector {
        let total: u64 = residual_row.iter().sum();
        if total == 0 {
            return base.clone();
        }
        let probs = residual_row.iter().map(|&n| n as f64 / total as f64).collect();
        ProbVector::new(probs).expect("count ratios normalize")
    };

    let mut centroids: Vec<ProbVector> = (0..c)
        .map(|t| centroid_of(&residual[t], model.transition_row(TagId(t as u16))))
        .collect();

    let mut pool = Vec::new();
    for t in 0..c {
        let tag = TagId(t as u16);
        for (word, row) in counts.lex_out_rows_of(tag) {
            let count: u64 = row.values().sum();
            if count >= min_count.max(1) {
                let dense = counts.lex_out_dense(tag, word).expect("row exists");
                pool.push(Candidate {
                    category: tag,
                    word,
                    count,
                    dense,
                    deviation: 0.0,
                });
            }
        }
    }
    let rescore = |cand: &mut Candidate, centroids: &[ProbVector]| -> Result<()> {
        let centroid = &centroids[cand.category.index()];
        let vector = mackay_peto_smooth(&cand.dense, centroid, alphas[cand.category.index()])?;
        cand.deviation = deviation(&vector, centroid)?;
        Ok(())
    };
    for cand in pool.iter_mut() {
        rescore(cand, &centroids)?;
    }

    let mut picked = Vec::new();
    while picked.len() < limit && !pool.is_empty() {
        let best = pool
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                candidate_order(
                    &DeviationEntry {
                        category: a.category,
                        word: a.word,
                        count: a.count,
                        deviation: a.deviation,
                    },
                    &DeviationEntry {
                        category: b.category,
                        word: b.word,
                        count: b.count,
                        deviation: b.deviation,
                    },
                )
            })
            .map(|(i, _)| i)
            .expect("pool non-empty");
        let chosen = pool.swap_remove(best);
        let t = chosen.category.index();
        for (i, &n) in chosen.dense.iter().enumerate() {
            residual[t][i] -= n;
        }
        centroids[t] = centroid_of(&residual[t], model.transition_row(chosen.category));
        for cand in pool.iter_mut().filter(|cand| cand.category == chosen.category) {
            rescore(cand, &centroids)?;
        }
        picked.push(DeviationEntry {
            category: chosen.category,
            word: chosen.word,
            count: chosen.count,
            deviation: chosen.deviation,
        });
    }
    Ok(picked)
}

/// How to cut a ranking into a split set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectRule {
    TopK(usize),
    /// Keep entries with deviation strictly above the threshold.
    Threshold(f64),
}

/// Cuts a ranking down to a [`SplitSpec`] by prefix length or deviation
/// threshold.
pub fn select_splits(ranking: &[DeviationEntry], rule: SelectRule, mode: SplitMode) -> SplitSpec {
    let picked: Vec<(TagId, WordId)> = match rule {
        SelectRule::TopK(k) => ranking
            .iter()
            .take(k)
            .map(|e| (e.category, e.word))
            .collect(),
        SelectRule::Threshold(theta) => ranking
            .iter()
            .filter(|e| e.deviation > theta)
            .map(|e| (e.category, e.word))
            .collect(),
    };
    SplitSpec::new(picked, mode).expect("ranking carries no duplicates")
}

/// Deviation histogram buckets of width 0.01 over [0, 2] (squared distance
/// between probability vectors cannot exceed 2). Returns
/// (bucket_low, bucket_high, count) rows; the top value lands in the last
/// bucket.
pub fn deviation_histogram(entries: &[DeviationEntry]) -> Vec<(f64, f64, usize)> {
    const BUCKETS: usize = 200;
    let mut counts = vec![0usize; BUCKETS];
    for e in entries {
        let idx = ((e.deviation / 0.01) as usize).min(BUCKETS - 1);
        counts[idx] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &n)| (i as f64 * 0.01, (i + 1) as f64 * 0.01, n))
        .collect()
}

/// A standard model plus word-specific states split out of their categories.
///
/// A split category keeps one residual state for all its unsplit words. In
/// pseudo mode only the outgoing rows here differ from the base model; in
/// full mode the incoming transition mass and the emissions are divided too.
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalizedHmm {
    base: StandardHmm,
    mode: Option<SplitMode>,
    split_out: BTreeMap<(TagId, WordId), ProbVector>,
    residual_out: BTreeMap<TagId, ProbVector>,
    split_in: BTreeMap<(TagId, WordId), Vec<f64>>,
    residual_in: BTreeMap<TagId, Vec<f64>>,
    residual_emissions: BTreeMap<TagId, BTreeMap<WordId, f64>>,
    in_denom: BTreeMap<TagId, Vec<f64>>,
    splits_by_category: BTreeMap<TagId, BTreeSet<WordId>>,
}

impl LexicalizedHmm {
    /// Wraps a standard model with no splits at all.
    pub fn from_base(base: StandardHmm) -> Self {
        LexicalizedHmm {
            base,
            mode: None,
            split_out: BTreeMap::new(),
            residual_out: BTreeMap::new(),
            split_in: BTreeMap::new(),
            residual_in: BTreeMap::new(),
            residual_emissions: BTreeMap::new(),
            in_denom: BTreeMap::new(),
            splits_by_category: BTreeMap::new(),
        }
    }

    /// Reassembles a lexicalized model from serialized tables, deriving the
    /// shared-emission and incoming-normalizer caches.
    pub fn from_parts(
        base: StandardHmm,
        mode: Option<SplitMode>,
        split_out: BTreeMap<(TagId, WordId), ProbVector>,
        residual_out: BTreeMap<TagId, ProbVector>,
        split_in: BTreeMap<(TagId, WordId), Vec<f64>>,
        residual_in: BTreeMap<TagId, Vec<f64>>,
    ) -> Result<Self> {
        let dim = base.lexicon().num_tags_with_boundary();
        let mut splits_by_category: BTreeMap<TagId, BTreeSet<WordId>> = BTreeMap::new();
        for (&(c, w), row) in &split_out {
            if c.index() >= base.lexicon().num_content_tags() {
                return Err(Error::UnknownCategory(c.index()));
            }
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: row.len(),
                    right: dim,
                });
            }
            splits_by_category.entry(c).or_default().insert(w);
        }
        if mode.is_none() && !split_out.is_empty() {
            return Err(Error::InvalidProbVector(
                "split rows present without a split mode".to_string(),
            ));
        }
        for (&c, row) in &residual_out {
            if !splits_by_category.contains_key(&c) || row.len() != dim {
                return Err(Error::MissingResidualRow(c.index()));
            }
        }
        for &c in splits_by_category.keys() {
            if !residual_out.contains_key(&c) {
                return Err(Error::MissingResidualRow(c.index()));
            }
        }
        match mode {
            Some(SplitMode::Full) => {
                for &key in split_out.keys() {
                    let row = split_in.get(&key).ok_or(Error::MissingLexRow {
                        category: key.0.index(),
                        word: key.1.index(),
                    })?;
                    if row.len() != dim {
                        return Err(Error::DimensionMismatch {
                            left: row.len(),
                            right: dim,
                        });
                    }
                }
                for &c in splits_by_category.keys() {
                    let row = residual_in
                        .get(&c)
                        .ok_or(Error::MissingResidualRow(c.index()))?;
                    if row.len() != dim {
                        return Err(Error::DimensionMismatch {
                            left: row.len(),
                            right: dim,
                        });
                    }
                }
            }
            _ => {
                if !split_in.is_empty() || !residual_in.is_empty() {
                    return Err(Error::InvalidProbVector(
                        "incoming-mass rows are only meaningful in full mode".to_string(),
                    ));
                }
            }
        }
        let residual_emissions = match mode {
            Some(SplitMode::Full) => derive_residual_emissions(&base, &splits_by_category),
            _ => BTreeMap::new(),
        };
        let in_denom = derive_in_denoms(dim, &split_in, &residual_in, &splits_by_category);
        Ok(LexicalizedHmm {
            base,
            mode,
            split_out,
            residual_out,
            split_in,
            residual_in,
            residual_emissions,
            in_denom,
            splits_by_category,
        })
    }

    pub fn base(&self) -> &StandardHmm {
        &self.base
    }

    pub fn mode(&self) -> Option<SplitMode> {
        self.mode
    }

    pub fn num_splits(&self) -> usize {
        self.split_out.len()
    }

    pub fn is_split(&self, category: TagId, word: WordId) -> bool {
        self.split_out.contains_key(&(category, word))
    }

    pub fn has_splits(&self, category: TagId) -> bool {
        self.splits_by_category.contains_key(&category)
    }

    pub fn split_out_row(&self, category: TagId, word: WordId) -> Option<&ProbVector> {
        self.split_out.get(&(category, word))
    }

    pub fn residual_out_row(&self, category: TagId) -> Option<&ProbVector> {
        self.residual_out.get(&category)
    }

    /// Full mode: P(category, word | predecessor) per predecessor tag.
    pub fn split_in_mass(&self, category: TagId, word: WordId) -> Option<&[f64]> {
        self.split_in.get(&(category, word)).map(Vec::as_slice)
    }

    /// Full mode: P(category, no split word | predecessor) per predecessor.
    pub fn residual_in_mass(&self, category: TagId) -> Option<&[f64]> {
        self.residual_in.get(&category).map(Vec::as_slice)
    }

    /// Full mode: total incoming mass of a split category per predecessor;
    /// the normalizer that turns incoming masses into a state choice.
    pub fn in_denom_row(&self, category: TagId) -> Option<&[f64]> {
        self.in_denom.get(&category).map(Vec::as_slice)
    }

    /// Full mode: the renormalized emissions of a split category's residual
    /// state (split words excluded).
    pub fn residual_emission_row(&self, category: TagId) -> Option<&BTreeMap<WordId, f64>> {
        self.residual_emissions.get(&category)
    }

    pub fn splits(&self) -> impl Iterator<Item = (TagId, WordId, &ProbVector)> {
        self.split_out.iter().map(|(&(c, w), row)| (c, w, row))
    }

    pub fn split_categories(&self) -> impl Iterator<Item = TagId> + '_ {
        self.splits_by_category.keys().copied()
    }

    pub fn split_words_of(&self, category: TagId) -> Option<&BTreeSet<WordId>> {
        self.splits_by_category.get(&category)
    }
}

fn derive_residual_emissions(
    base: &StandardHmm,
    splits_by_category: &BTreeMap<TagId, BTreeSet<WordId>>,
) -> BTreeMap<TagId, BTreeMap<WordId, f64>> {
    let mut out = BTreeMap::new();
    for (&c, words) in splits_by_category {
        let remaining: BTreeMap<WordId, f64> = base
            .emission_row(c)
            .iter()
            .filter(|(w, _)| !words.contains(w))
            .map(|(&w, &p)| (w, p))
            .collect();
        let total: f64 = remaining.values().sum();
        let renormalized = if total > 0.0 {
            remaining.into_iter().map(|(w, p)| (w, p / total)).collect()
        } else {
            BTreeMap::new()
        };
        out.insert(c, renormalized);
    }
    out
}

fn derive_in_denoms(
    dim: usize,
    split_in: &BTreeMap<(TagId, WordId), Vec<f64>>,
    residual_in: &BTreeMap<TagId, Vec<f64>>,
    splits_by_category: &BTreeMap<TagId, BTreeSet<WordId>>,
) -> BTreeMap<TagId, Vec<f64>> {
    let mut out = BTreeMap::new();
    for (&c, words) in splits_by_category {
        let mut denom = residual_in.get(&c).cloned().unwrap_or_else(|| vec![0.0; dim]);
        for &w in words {
            if let Some(row) = split_in.get(&(c, w)) {
                for (d, &m) in denom.iter_mut().zip(row.iter()) {
                    *d += m;
                }
            }
        }
        out.insert(c, denom);
    }
    out
}

/// Smooths counts toward the parent, or takes their plain ratio when
/// `alpha == 0` (smoothing disabled). Empty counts fall back to the parent
/// either way.
fn smooth_or_mle(child: &[u64], parent: &ProbVector, alpha: f64) -> Result<ProbVector> {
    if alpha > 0.0 {
        return mackay_peto_smooth(child, parent, alpha);
    }
    let total: u64 = child.iter().sum();
    if total == 0 {
        return Ok(parent.clone());
    }
    ProbVector::new(child.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Builds the lexicalized model for a split set.
///
/// Every split pair gets its own smoothed outgoing row, and each affected
/// category gets a residual outgoing row estimated from the counts that
/// remain after its split words leave. In full mode the incoming bigram mass
/// is divided between the split states and the residual at plain count
/// ratios, and emissions move with the words. An `alphas` entry of 0 turns
/// smoothing off for that category's rows.
pub fn split_states(
    model: &StandardHmm,
    counts: &CountsTable,
    spec: &SplitSpec,
    alphas: &[f64],
) -> Result<LexicalizedHmm> {
    let c = model.lexicon().num_content_tags();
    let dim = model.lexicon().num_tags_with_boundary();
    if alphas.len() != c {
        return Err(Error::DimensionMismatch {
            left: alphas.len(),
            right: c,
        });
    }

    let mut splits_by_category: BTreeMap<TagId, BTreeSet<WordId>> = BTreeMap::new();
    for &(tag, word) in spec.entries() {
        if tag.index() >= c {
            return Err(Error::UnknownCategory(tag.index()));
        }
        if counts.pair_count(tag, word) == 0 {
            return Err(Error::SplitWithoutData {
                category: tag.index(),
                word: word.index(),
            });
        }
        splits_by_category.entry(tag).or_default().insert(word);
    }

    let mut split_out = BTreeMap::new();
    let mut residual_out = BTreeMap::new();
    let mut split_in = BTreeMap::new();
    let mut residual_in = BTreeMap::new();

    for (&tag, words) in &splits_by_category {
        let alpha = alphas[tag.index()];
        let parent = model.transition_row(tag);
        let mut residual_counts: Vec<u64> = counts.bigram_row(tag).to_vec();
        for &word in words {
            let dense = counts.lex_out_dense(tag, word).expect("count checked above");
            for (r, &n) in residual_counts.iter_mut().zip(dense.iter()) {
                *r -= n;
            }
            split_out.insert((tag, word), smooth_or_mle(&dense, parent, alpha)?);
        }
        residual_out.insert(tag, smooth_or_mle(&residual_counts, parent, alpha)?);

        if spec.mode() == SplitMode::Full {
            let mut residual_in_counts: Vec<u64> = (0..dim)
                .map(|p| counts.bigram_row(TagId(p as u16))[tag.index()])
                .collect();
            for &word in words {
                let mut mass = vec![0.0; dim];
                if let Some(row) = counts.lex_in_row(tag, word) {
                    for (&prev, &n) in row {
                        residual_in_counts[prev.index()] -= n;
                        mass[prev.index()] =
                            n as f64 / counts.tag_unigram(prev) as f64;
                    }
                }
                split_in.insert((tag, word), mass);
            }
            let mass: Vec<f64> = residual_in_counts
                .iter()
                .enumerate()
                .map(|(p, &n)| n as f64 / counts.tag_unigram(TagId(p as u16)) as f64)
                .collect();
            residual_in.insert(tag, mass);
        }
    }

    let residual_emissions = match spec.mode() {
        SplitMode::Full => derive_residual_emissions(model, &splits_by_category),
        SplitMode::Pseudo => BTreeMap::new(),
    };
    let in_denom = derive_in_denoms(dim, &split_in, &residual_in, &splits_by_category);

    Ok(LexicalizedHmm {
        base: model.clone(),
        mode: Some(spec.mode()),
        split_out,
        residual_out,
        split_in,
        residual_in,
        residual_emissions,
        in_denom,
        splits_by_category,
    })
}
