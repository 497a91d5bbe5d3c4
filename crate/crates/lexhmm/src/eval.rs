//! Token-accuracy evaluation, significance testing between taggers, and the
//! accuracy-vs-number-of-splits sweep.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::{Lexicon, TaggedCorpus};
use crate::decode::{viterbi, DecodeOptions, TagSequence};
use crate::error::{Error, Result};
use crate::lexicalize::{
    rank_candidates, rank_candidates_rerank, select_splits, split_states, SelectRule, SplitMode,
};
use crate::model::{
    count_events, estimate_mle, estimate_with_smoothed_transitions, fit_category_alphas,
};

/// Token-level evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub unknown_tokens: usize,
    pub unknown_correct: usize,
    /// (gold label, predicted label) -> count; sums to `total`.
    pub confusion: BTreeMap<(String, String), usize>,
    /// Per-token correctness in corpus order, for significance testing.
    pub per_token_correct: Vec<bool>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.correct as f64 / self.total as f64
    }

    pub fn unknown_accuracy(&self) -> f64 {
        if self.unknown_tokens == 0 {
            return 0.0;
        }
        self.unknown_correct as f64 / self.unknown_tokens as f64
    }

    pub fn known_tokens(&self) -> usize {
        self.total - self.unknown_tokens
    }

    pub fn known_accuracy(&self) -> f64 {
        let known = self.known_tokens();
        if known == 0 {
            return 0.0;
        }
        (self.correct - self.unknown_correct) as f64 / known as f64
    }
}

/// Exact-match token accuracy of predictions against a gold corpus, with
/// unknown-word accuracy (relative to the training lexicon) reported
/// separately and a full label confusion table.
pub fn accuracy(
    gold: &TaggedCorpus,
    predicted: &[TagSequence],
    lexicon: &Lexicon,
) -> Result<EvalReport> {
    if gold.sentence_count() != predicted.len() {
        return Err(Error::Misaligned(format!(
            "{} gold sentences vs {} predictions",
            gold.sentence_count(),
            predicted.len()
        )));
    }
    let mut report = EvalReport {
        total: 0,
        correct: 0,
        unknown_tokens: 0,
        unknown_correct: 0,
        confusion: BTreeMap::new(),
        per_token_correct: Vec::new(),
    };
    for (i, (sentence, seq)) in gold.sentences().iter().zip(predicted.iter()).enumerate() {
        if sentence.len() != seq.tags.len() {
            return Err(Error::Misaligned(format!(
                "sentence {}: {} tokens vs {} predicted tags",
                i + 1,
                sentence.len(),
                seq.tags.len()
            )));
        }
        for (token, &tag) in sentence.tokens().iter().zip(seq.tags.iter()) {
            let predicted_label = lexicon.tag_label(tag);
            let is_correct = token.tag == predicted_label;
            let is_unknown = lexicon.word_id(&token.word).is_none();
            report.total += 1;
            report.correct += is_correct as usize;
            report.unknown_tokens += is_unknown as usize;
            report.unknown_correct += (is_correct && is_unknown) as usize;
            *report
                .confusion
                .entry((token.tag.clone(), predicted_label.to_string()))
                .or_insert(0) += 1;
            report.per_token_correct.push(is_correct);
        }
    }
    Ok(report)
}

/// Outcome of comparing two taggers on the same tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Significance {
    /// One-sided two-proportion z statistic (improved minus baseline).
    pub z: f64,
    /// z > 1.645, the one-sided 95% criterion.
    pub significant_at_95: bool,
    /// McNemar's chi-squared on the disagreement cells, continuity-corrected.
    pub mcnemar_chi2: f64,
    /// Tokens only the baseline got right.
    pub baseline_only: usize,
    /// Tokens only the improved tagger got right.
    pub improved_only: usize,
}

/// Two-proportion z-test of improved over baseline accuracy, with McNemar's
/// paired statistic as a cross-check.
pub fn significance_test(baseline: &[bool], improved: &[bool]) -> Result<Significance> {
    if baseline.is_empty() || improved.is_empty() {
        return Err(Error::EmptyCorrectness);
    }
    if baseline.len() != improved.len() {
        return Err(Error::DimensionMismatch {
            left: baseline.len(),
            right: improved.len(),
        });
    }
    let n = baseline.len() as f64;
    let correct_base = baseline.iter().filter(|&&b| b).count();
    let correct_improved = improved.iter().filter(|&&b| b).count();
    let p1 = correct_base as f64 / n;
    let p2 = correct_improved as f64 / n;
    let pooled = (correct_base + correct_improved) as f64 / (2.0 * n);
    let se = (pooled * (1.0 - pooled) * 2.0 / n).sqrt();
    let z = if se > 0.0 { (p2 - p1) / se } else { 0.0 };

    let baseline_only = baseline
        .iter()
        .zip(improved.iter())
        .filter(|&(&b, &i)| b && !i)
        .count();
    let improved_only = baseline
        .iter()
        .zip(improved.iter())
        .filter(|&(&b, &i)| !b && i)
        .count();
    let disagreements = baseline_only + improved_only;
    let mcnemar_chi2 = if disagreements > 0 {
        let diff = (baseline_only as f64 - improved_only as f64).abs() - 1.0;
        diff.max(0.0).powi(2) / disagreements as f64
    } else {
        0.0
    };

    Ok(Significance {
        z,
        significant_at_95: z > 1.645,
        mcnemar_chi2,
        baseline_only,
        improved_only,
    })
}

/// Settings shared by every point of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepConfig {
    /// Minimum (category, word) occurrence count for split candidacy.
    pub min_count: u64,
    /// Score all content tags for known words while decoding.
    pub open_lattice: bool,
    /// Re-rank candidates greedily against updated centroids instead of
    /// using one fixed ranking.
    pub rerank: bool,
    /// Smooth the base transition rows toward the corpus marginal.
    pub smooth_base: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            min_count: 10,
            open_lattice: false,
            rerank: false,
            smooth_base: false,
        }
    }
}

/// One sweep measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: SplitMode,
    /// Number of lexicalized states actually used.
    pub k: usize,
    /// Number requested by the grid.
    pub requested_k: usize,
    /// True when the ranking ran out of candidates below `requested_k`.
    pub truncated: bool,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_token_correct: Vec<bool>,
}

/// Trains once on `train`, then for every (mode, K) grid point splits the
/// top-K candidates of one shared ranking and measures tagging accuracy on
/// `test`. Points run in parallel; rows come back ordered by mode then K.
pub fn sweep(
    train: &TaggedCorpus,
    test: &TaggedCorpus,
    grid: &[usize],
    modes: &[SplitMode],
    config: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() || grid[0] != 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidGrid);
    }
    let lexicon = Lexicon::build(train)?;
    let counts = count_events(train, &lexicon)?;
    let base = if config.smooth_base {
        estimate_with_smoothed_transitions(&counts, &lexicon)?.0
    } else {
        estimate_mle(&counts, &lexicon)?
    };
    let alphas = fit_category_alphas(&counts, &base);
    let ranking = if config.rerank {
        let limit = *grid.last().expect("grid non-empty");
        rank_candidates_rerank(&base, &counts, config.min_count, &alphas, limit)?
    } else {
        rank_candidates(&base, &counts, config.min_count, &alphas)?
    };

    let points: Vec<(SplitMode, usize)> = modes
        .iter()
        .flat_map(|&mode| grid.iter().map(move |&k| (mode, k)))
        .collect();
    let options = DecodeOptions {
        open_lattice: config.open_lattice,
    };
    points
        .into_par_iter()
        .map(|(mode, requested_k)| {
            let k = requested_k.min(ranking.len());
            let spec = select_splits(&ranking, SelectRule::TopK(k), mode);
            let model = split_states(&base, &counts, &spec, &alphas)?;
            let predictions: Vec<TagSequence> = test
                .sentences()
                .iter()
                .map(|s| {
                    let words: Vec<&str> = s.words().collect();
                    viterbi(&model, &words, &options)
                })
                .collect::<Result<_>>()?;
            let report = accuracy(test, &predictions, &lexicon)?;
            Ok(SweepRow {
                mode,
                k,
                requested_k,
                truncated: k < requested_k,
                accuracy: report.accuracy(),
                correct: report.correct,
                total: report.total,
                per_token_correct: report.per_token_correct,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_tagged_text;
    use crate::lexicalize::LexicalizedHmm;
    use approx::assert_abs_diff_eq;

    fn tagger_output(model: &LexicalizedHmm, corpus: &TaggedCorpus) -> Vec<TagSequence> {
        corpus
            .sentences()
            .iter()
            .map(|s| {
                let words: Vec<&str> = s.words().collect();
                viterbi(model, &words, &DecodeOptions::default()).unwrap()
            })
            .collect()
    }

    fn train_base(text: &str) -> (Lexicon, LexicalizedHmm) {
        let corpus = parse_tagged_text(text).unwrap();
        let lexicon = Lexicon::build(&corpus).unwrap();
        let counts = count_events(&corpus, &lexicon).unwrap();
        let model = LexicalizedHmm::from_base(estimate_mle(&counts, &lexicon).unwrap());
        (lexicon, model)
    }

    #[test]
    fn perfect_predictions_score_one() {
        let text = "the/D dog/N\nthe/D dog/N runs/V";
        let (lexicon, model) = train_base(text);
        let gold = parse_tagged_text(text).unwrap();
        let report = accuracy(&gold, &tagger_output(&model, &gold), &lexicon).unwrap();
        assert_eq!(report.accuracy(), 1.0);
        assert_eq!(report.correct, 5);
        assert_eq!(report.confusion.values().sum::<usize>(), report.total);
    }

    #[test]
    fn three_of_four_is_three_quarters() {
        let (lexicon, _) = train_base("a/A b/B c/C d/D");
        let gold = parse_tagged_text("a/A b/B c/C d/D").unwrap();
        let predicted = vec![TagSequence {
            tags: vec![
                lexicon.tag_id("A").unwrap(),
                lexicon.tag_id("B").unwrap(),
                lexicon.tag_id("C").unwrap(),
                lexicon.tag_id("A").unwrap(),
            ],
            log_score: 0.0,
        }];
        let report = accuracy(&gold, &predicted, &lexicon).unwrap();
        assert_eq!(report.accuracy(), 0.75);
        assert_eq!(report.confusion[&("D".to_string(), "A".to_string())], 1);
        assert_eq!(report.per_token_correct, vec![true, true, true, false]);
    }

    #[test]
    fn misalignment_is_rejected() {
        let (lexicon, model) = train_base("a/A b/B");
        let gold = parse_tagged_text("a/A b/B").unwrap();
        let mut predicted = tagger_output(&model, &gold);
        predicted[0].tags.pop();
        assert!(matches!(
            accuracy(&gold, &predicted, &lexicon),
            Err(Error::Misaligned(_))
        ));
        assert!(matches!(
            accuracy(&gold, &[], &lexicon),
            Err(Error::Misaligned(_))
        ));
    }

    #[test]
    fn unknown_tokens_are_reported_separately() {
        let (lexicon, model) = train_base("a/A b/B\na/A");
        let gold = parse_tagged_text("a/A z/A").unwrap();
        let report = accuracy(&gold, &tagger_output(&model, &gold), &lexicon).unwrap();
        assert_eq!(report.total, 2);
        assert_eq!(report.unknown_tokens, 1);
        assert!(report.unknown_correct <= report.unknown_tokens);
        assert_eq!(
            report.correct - report.unknown_correct,
            (report.known_accuracy() * report.known_tokens() as f64).round() as usize
        );
    }

    #[test]
    fn identical_vectors_give_zero_z() {
        let v = vec![true, false, true, true];
        let sig = significance_test(&v, &v).unwrap();
        assert_eq!(sig.z, 0.0);
        assert!(!sig.significant_at_95);
        assert_eq!(sig.mcnemar_chi2, 0.0);
    }

    #[test]
    fn large_sample_small_gain_is_significant() {
        let n = 111_479usize;
        let correct_base = (0.957858 * n as f64).round() as usize;
        let correct_improved = (0.959966 * n as f64).round() as usize;
        let baseline: Vec<bool> = (0..n).map(|i| i < correct_base).collect();
        let improved: Vec<bool> = (0..n).map(|i| i < correct_improved).collect();
        let sig = significance_test(&baseline, &improved).unwrap();
        assert!(sig.z > 1.645, "z = {}", sig.z);
        assert!(sig.significant_at_95);
    }

    #[test]
    fn tiny_sample_single_flip_is_not_significant() {
        let baseline = vec![true, true, true, true, true, false, false, false, false, false];
        let mut improved = baseline.clone();
        improved[5] = true;
        let sig = significance_test(&baseline, &improved).unwrap();
        assert_abs_diff_eq!(sig.z, 0.449, epsilon = 1e-3);
        assert!(!sig.significant_at_95);
        assert_eq!(sig.improved_only, 1);
        assert_eq!(sig.baseline_only, 0);
    }

    #[test]
    fn significance_rejects_bad_input() {
        assert!(matches!(
            significance_test(&[], &[]),
            Err(Error::EmptyCorrectness)
        ));
        assert!(matches!(
            significance_test(&[true], &[true, false]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    const SWEEP_TRAIN: &str = "the/D dog/N runs/V\nthe/D cat/N runs/V\nout/D runs/V\nthe/D dog/N sits/V\nout/P now/N\nthe/D bird/N sings/V";
    const SWEEP_TEST: &str = "the/D dog/N runs/V\nout/D runs/V\nthe/D cat/N sits/V";

    #[test]
    fn sweep_zero_rows_match_baseline() {
        let train = parse_tagged_text(SWEEP_TRAIN).unwrap();
        let test = parse_tagged_text(SWEEP_TEST).unwrap();
        let config = SweepConfig {
            min_count: 1,
            ..SweepConfig::default()
        };
        let rows = sweep(
            &train,
            &test,
            &[0, 1, 2],
            &[SplitMode::Full, SplitMode::Pseudo],
            &config,
        )
        .unwrap();
        assert_eq!(rows.len(), 6);

        let lexicon = Lexicon::build(&train).unwrap();
        let counts = count_events(&train, &lexicon).unwrap();
        let base = LexicalizedHmm::from_base(estimate_mle(&counts, &lexicon).unwrap());
        let baseline = accuracy(&test, &tagger_output(&base, &test), &lexicon).unwrap();

        let zero_rows: Vec<&SweepRow> = rows.iter().filter(|r| r.requested_k == 0).collect();
        assert_eq!(zero_rows.len(), 2);
        for row in zero_rows {
            assert_eq!(row.per_token_correct, baseline.per_token_correct);
            assert_eq!(row.correct, baseline.correct);
        }
    }

    #[test]
    fn sweep_rows_are_ordered_and_truncation_is_flagged() {
        let train = parse_tagged_text(SWEEP_TRAIN).unwrap();
        let test = parse_tagged_text(SWEEP_TEST).unwrap();
        let config = SweepConfig {
            min_count: 1,
            ..SweepConfig::default()
        };
        let rows = sweep(&train, &test, &[0, 1000], &[SplitMode::Pseudo], &config).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].requested_k, 0);
        assert!(!rows[0].truncated);
        assert_eq!(rows[1].requested_k, 1000);
        assert!(rows[1].truncated);
        assert!(rows[1].k < 1000);
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let train = parse_tagged_text(SWEEP_TRAIN).unwrap();
        let test = parse_tagged_text(SWEEP_TEST).unwrap();
        let config = SweepConfig::default();
        for grid in [&[][..], &[1, 2][..], &[0, 2, 1][..], &[0, 2, 2][..]] {
            assert!(matches!(
                sweep(&train, &test, grid, &[SplitMode::Pseudo], &config),
                Err(Error::InvalidGrid)
            ));
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let train = parse_tagged_text(SWEEP_TRAIN).unwrap();
        let test = parse_tagged_text(SWEEP_TEST).unwrap();
        let config = SweepConfig {
            min_count: 1,
            rerank: true,
            ..SweepConfig::default()
        };
        let a = sweep(&train, &test, &[0, 2], &[SplitMode::Full], &config).unwrap();
        let b = sweep(&train, &test, &[0, 2], &[SplitMode::Full], &config).unwrap();
        assert_eq!(a, b);
    }
}
