//! Exact decoding over the lexicalized state network: Viterbi, a brute-force
//! enumeration oracle, and the shared path scorer.
//!
//! A word occupies exactly one state per candidate tag: the lexicalized state
//! when that (tag, word) pair is split, otherwise the category's residual
//! state (if the category has splits) or its base state. Scores are natural
//! logs with `-inf` for zero probability, and every path is scored with one
//! fixed right-to-left summation order so that Viterbi and the oracle agree
//! bit-for-bit even on mathematically tied paths.

use crate::corpus::{TagId, WordId};
use crate::error::{Error, Result};
use crate::lexicalize::{LexicalizedHmm, SplitMode};

/// Decoding knobs.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecodeOptions {
    /// Score every content tag for known words instead of only the tags the
    /// word was seen with in training.
    pub open_lattice: bool,
}

/// A decoded tag sequence and its log joint probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TagSequence {
    pub tags: Vec<TagId>,
    pub log_score: f64,
}

/// Which table a lattice state draws its rows from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Base,
    Residual,
    Lexicalized,
}

/// One reachable state at a lattice position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeState {
    pub tag: TagId,
    pub kind: StateKind,
}

fn state_kind(model: &LexicalizedHmm, tag: TagId, word: Option<WordId>) -> StateKind {
    if let Some(w) = word {
        if model.is_split(tag, w) {
            return StateKind::Lexicalized;
        }
    }
    if model.has_splits(tag) {
        StateKind::Residual
    } else {
        StateKind::Base
    }
}

/// The states reachable for one surface word: one per candidate tag. Unknown
/// words are candidates for every content tag.
pub fn lattice_states(
    model: &LexicalizedHmm,
    word: &str,
    options: &DecodeOptions,
) -> Vec<LatticeState> {
    let lexicon = model.base().lexicon();
    let word_id = lexicon.word_id(word);
    let tags: Vec<TagId> = match word_id {
        Some(w) if !options.open_lattice => lexicon.ambiguity_class(w).iter().copied().collect(),
        _ => lexicon.content_tags().collect(),
    };
    tags.into_iter()
        .map(|tag| LatticeState {
            tag,
            kind: state_kind(model, tag, word_id),
        })
        .collect()
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn out_row(model: &LexicalizedHmm, state: LatticeState, word: Option<WordId>) -> &[f64] {
    match state.kind {
        StateKind::Base => model.base().transition_row(state.tag),
        StateKind::Residual => model
            .residual_out_row(state.tag)
            .expect("residual state implies a residual row"),
        StateKind::Lexicalized => model
            .split_out_row(state.tag, word.expect("lexicalized state implies a known word"))
            .expect("lexicalized state implies a split row"),
    }
}

/// In full mode, the probability that category mass arriving at `state.tag`
/// from `prev_cat` lands on this particular state rather than a sibling.
fn selection_factor(
    model: &LexicalizedHmm,
    prev_cat: TagId,
    state: LatticeState,
    word: Option<WordId>,
) -> f64 {
    if model.mode() != Some(SplitMode::Full) || !model.has_splits(state.tag) {
        return 1.0;
    }
    let denom = model.in_denom_row(state.tag).expect("split category has denominators")
        [prev_cat.index()];
    if denom <= 0.0 {
        // The predecessor never preceded this category in training; base
        // smoothing may still route mass here, and it all stays with the
        // residual state.
        return if state.kind == StateKind::Lexicalized { 0.0 } else { 1.0 };
    }
    let mass = match state.kind {
        StateKind::Lexicalized => model
            .split_in_mass(state.tag, word.expect("lexicalized state implies a known word"))
            .expect("split state has incoming mass")[prev_cat.index()],
        _ => model.residual_in_mass(state.tag).expect("split category has a residual")
            [prev_cat.index()],
    };
    mass / denom
}

/// Log transition term for entering `state` from a predecessor whose
/// outgoing row and category are given.
fn step_ln(
    model: &LexicalizedHmm,
    prev_row: &[f64],
    prev_cat: TagId,
    state: LatticeState,
    word: Option<WordId>,
) -> f64 {
    let category_mass = prev_row[state.tag.index()];
    ln_or_neg_inf(category_mass * selection_factor(model, prev_cat, state, word))
}

fn emission_ln(model: &LexicalizedHmm, state: LatticeState, word: Option<WordId>) -> f64 {
    let base = model.base();
    let Some(w) = word else {
        return ln_or_neg_inf(base.unknown_prob(state.tag));
    };
    let p = match (state.kind, model.mode()) {
        (StateKind::Lexicalized, Some(SplitMode::Full)) => return 0.0,
        (StateKind::Residual, Some(SplitMode::Full)) => model
            .residual_emission_row(state.tag)
            .expect("residual state implies residual emissions")
            .get(&w)
            .copied()
            .unwrap_or(0.0),
        _ => base.emission_prob(state.tag, w),
    };
    ln_or_neg_inf(p)
}

/// Log joint probability of a tagged sentence, boundary terms included,
/// routed through lexicalized states wherever (tag, word) is split. The sum
/// runs right to left; any zero factor makes the result `-inf`.
pub fn sentence_log_prob<S: AsRef<str>>(
    model: &LexicalizedHmm,
    words: &[S],
    tags: &[TagId],
) -> Result<f64> {
    if words.is_empty() {
        return Err(Error::EmptyInput);
    }
    if words.len() != tags.len() {
        return Err(Error::LengthMismatch {
            words: words.len(),
            tags: tags.len(),
        });
    }
    let lexicon = model.base().lexicon();
    let boundary = lexicon.boundary_tag();
    let n = words.len();
    let mut word_ids = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    for (word, &tag) in words.iter().zip(tags.iter()) {
        if tag.index() >= lexicon.num_content_tags() {
            return Err(Error::UnknownCategory(tag.index()));
        }
        let w = lexicon.word_id(word.as_ref());
        word_ids.push(w);
        states.push(LatticeState {
            tag,
            kind: state_kind(model, tag, w),
        });
    }

    let mut acc = ln_or_neg_inf(out_row(model, states[n - 1], word_ids[n - 1])[boundary.index()]);
    for i in (0..n).rev() {
        let (prev_row, prev_cat) = if i == 0 {
            (model.base().transition_row(boundary).as_slice(), boundary)
        } else {
            (out_row(model, states[i - 1], word_ids[i - 1]), states[i - 1].tag)
        };
        // Written as `term + acc`, not `+=`: every scoring path folds the
        // sentence right-to-left with the new term on the left, and keeping the
        // same textual shape everywhere makes their exact agreement auditable.
        #[allow(clippy::assign_op_pattern)]
        {
            acc = emission_ln(model, states[i], word_ids[i]) + acc;
            acc = step_ln(model, prev_row, prev_cat, states[i], word_ids[i]) + acc;
        }
    }
    Ok(acc)
}

/// Exact argmax decoding. Among equal-scoring sequences the lexicographically
/// smallest tag-id sequence wins, matching [`brute_force_decode`] exactly.
pub fn viterbi<S: AsRef<str>>(
    model: &LexicalizedHmm,
    words: &[S],
    options: &DecodeOptions,
) -> Result<TagSequence> {
    if words.is_empty() {
        return Err(Error::EmptyInput);
    }
    let lexicon = model.base().lexicon();
    let boundary = lexicon.boundary_tag();
    let n = words.len();

    let word_ids: Vec<Option<WordId>> = words
        .iter()
        .map(|w| lexicon.word_id(w.as_ref()))
        .collect();
    let cands: Vec<Vec<LatticeState>> = words
        .iter()
        .map(|w| lattice_states(model, w.as_ref(), options))
        .collect();
    let emits: Vec<Vec<f64>> = cands
        .iter()
        .zip(word_ids.iter())
        .map(|(states, &w)| states.iter().map(|&s| emission_ln(model, s, w)).collect())
        .collect();

    // Best completion after each state, summed in the scorer's exact order.
    let mut beta: Vec<Vec<f64>> = cands.iter().map(|c| vec![f64::NEG_INFINITY; c.len()]).collect();
    for (jx, &state) in cands[n - 1].iter().enumerate() {
        beta[n - 1][jx] = ln_or_neg_inf(out_row(model, state, word_ids[n - 1])[boundary.index()]);
    }
    for i in (0..n - 1).rev() {
        for (jx, &from) in cands[i].iter().enumerate() {
            let row = out_row(model, from, word_ids[i]);
            let mut best = f64::NEG_INFINITY;
            for (kx, &to) in cands[i + 1].iter().enumerate() {
                let tail = emits[i + 1][kx] + beta[i + 1][kx];
                let val = step_ln(model, row, from.tag, to, word_ids[i + 1]) + tail;
                if val > best {
                    best = val;
                }
            }
            beta[i][jx] = best;
        }
    }

    // Forward reconstruction. Candidate totals are folded through the terms
    // of the already-chosen prefix so they equal the scorer's value for the
    // best full path through that candidate; the first candidate attaining
    // the maximum (candidates are in ascending tag order) is kept.
    let mut prefix: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut tags: Vec<TagId> = Vec::with_capacity(n);
    let mut prev: Option<LatticeState> = None;
    for i in 0..n {
        let (prev_row, prev_cat) = match prev {
            None => (model.base().transition_row(boundary).as_slice(), boundary),
            Some(p) => (out_row(model, p, word_ids[i - 1]), p.tag),
        };
        let mut best_idx = 0usize;
        let mut best_total = f64::NEG_INFINITY;
        let mut best_terms = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (kx, &state) in cands[i].iter().enumerate() {
            let t = step_ln(model, prev_row, prev_cat, state, word_ids[i]);
            let e = emits[i][kx];
            let mut total = t + (e + beta[i][kx]);
            // Same `term + total` fold shape as the scorer above; see the
            // note there before rewriting this as `+=`.
            #[allow(clippy::assign_op_pattern)]
            for &(pt, pe) in prefix.iter().rev() {
                total = pe + total;
                total = pt + total;
            }
            if kx == 0 || total > best_total {
                best_total = total;
                best_idx = kx;
                best_terms = (t, e);
            }
        }
        let chosen = cands[i][best_idx];
        prefix.push(best_terms);
        tags.push(chosen.tag);
        prev = Some(chosen);
    }

    let log_score = sentence_log_prob(model, words, &tags)?;
    Ok(TagSequence { tags, log_score })
}

/// Enumeration oracle: scores every candidate tag sequence with
/// [`sentence_log_prob`] and keeps the first maximum in lexicographic order.
pub fn brute_force_decode<S: AsRef<str>>(
    model: &LexicalizedHmm,
    words: &[S],
    max_len: usize,
    options: &DecodeOptions,
) -> Result<TagSequence> {
    if words.is_empty() {
        return Err(Error::EmptyInput);
    }
    if words.len() > max_len {
        return Err(Error::SequenceTooLong {
            len: words.len(),
            max: max_len,
        });
    }
    let cands: Vec<Vec<LatticeState>> = words
        .iter()
        .map(|w| lattice_states(model, w.as_ref(), options))
        .collect();
    let n = words.len();

    let mut indices = vec![0usize; n];
    let tags_of =
        |idx: &[usize]| -> Vec<TagId> { idx.iter().zip(&cands).map(|(&i, c)| c[i].tag).collect() };

    let mut best_tags = tags_of(&indices);
    let mut best_score = sentence_log_prob(model, words, &best_tags)?;
    loop {
        // Advance the rightmost position first, like an odometer, so the
        // enumeration is lexicographic over tag sequences.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(TagSequence {
                    tags: best_tags,
                    log_score: best_score,
                });
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < cands[pos].len() {
                break;
            }
            indices[pos] = 0;
        }
        let tags = tags_of(&indices);
        let score = sentence_log_prob(model, words, &tags)?;
        if score > best_score {
            best_score = score;
            best_tags = tags;
        }
    }
}
