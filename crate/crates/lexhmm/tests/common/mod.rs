//! Shared fixtures for integration tests: seeded random corpora and models,
//! and a hand-built corpus with one word whose transition behaviour
//! contradicts its category.

#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::Rng;

use lexhmm::corpus::{parse_tagged_text, Lexicon, TaggedCorpus};
use lexhmm::lexicalize::{split_states, LexicalizedHmm, SplitMode, SplitSpec};
use lexhmm::model::{count_events, estimate_mle, CountsTable};

pub const TAG_NAMES: [&str; 5] = ["A", "B", "C", "D", "E"];

/// Size caps for random corpus generation.
pub struct RandomLimits {
    pub max_tags: usize,
    pub max_vocab: usize,
    pub max_sentences: usize,
    pub max_sentence_len: usize,
}

impl Default for RandomLimits {
    fn default() -> Self {
        RandomLimits {
            max_tags: 4,
            max_vocab: 6,
            max_sentences: 8,
            max_sentence_len: 4,
        }
    }
}

pub fn random_corpus(rng: &mut StdRng, limits: &RandomLimits) -> TaggedCorpus {
    let num_tags = rng.random_range(1..=limits.max_tags);
    let vocab_size = rng.random_range(2..=limits.max_vocab);
    let num_sentences = rng.random_range(2..=limits.max_sentences);
    let mut text = String::new();
    for _ in 0..num_sentences {
        let len = rng.random_range(1..=limits.max_sentence_len);
        let tokens: Vec<String> = (0..len)
            .map(|_| {
                format!(
                    "w{}/{}",
                    rng.random_range(0..vocab_size),
                    TAG_NAMES[rng.random_range(0..num_tags)]
                )
            })
            .collect();
        text.push_str(&tokens.join(" "));
        text.push('\n');
    }
    parse_tagged_text(&text).unwrap()
}

/// A trained model together with the tables it came from.
pub struct Trained {
    pub corpus: TaggedCorpus,
    pub counts: CountsTable,
    pub model: LexicalizedHmm,
    pub alphas: Vec<f64>,
}

/// Trains a base (unsplit) model on the corpus.
pub fn train_base(corpus: TaggedCorpus) -> Trained {
    let lexicon = Lexicon::build(&corpus).unwrap();
    let counts = count_events(&corpus, &lexicon).unwrap();
    let model = LexicalizedHmm::from_base(estimate_mle(&counts, &lexicon).unwrap());
    let alphas = vec![1.0; lexicon.num_content_tags()];
    Trained {
        corpus,
        counts,
        model,
        alphas,
    }
}

/// Trains and then splits up to `max_pairs` randomly chosen (category, word)
/// pairs, with a random mix of smoothed and unsmoothed lexicalized rows.
pub fn train_random_split(
    rng: &mut StdRng,
    corpus: TaggedCorpus,
    mode: SplitMode,
    max_pairs: usize,
) -> Trained {
    let base = train_base(corpus);
    let lexicon = base.model.base().lexicon();
    let mut pairs = Vec::new();
    for tag in lexicon.content_tags() {
        for (word, _) in base.counts.lex_out_rows_of(tag) {
            pairs.push((tag, word));
        }
    }
    let take = rng.random_range(0..=pairs.len().min(max_pairs));
    let chosen: Vec<_> = (0..take)
        .map(|_| pairs.remove(rng.random_range(0..pairs.len())))
        .collect();
    let alphas: Vec<f64> = (0..lexicon.num_content_tags())
        .map(|_| if rng.random_bool(0.5) { 0.7 } else { 0.0 })
        .collect();
    let spec = SplitSpec::new(chosen, mode).unwrap();
    let model = split_states(base.model.base(), &base.counts, &spec, &alphas).unwrap();
    Trained {
        corpus: base.corpus,
        counts: base.counts,
        model,
        alphas,
    }
}

/// Random test sentence over the generator's vocabulary with occasional
/// out-of-vocabulary tokens.
pub fn random_sentence(
    rng: &mut StdRng,
    vocab_size: usize,
    max_len: usize,
    oov_prob: f64,
) -> Vec<String> {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| {
            if rng.random_bool(oov_prob) {
                "oov".to_string()
            } else {
                format!("w{}", rng.random_range(0..vocab_size))
            }
        })
        .collect()
}

/// Training text with a planted idiosyncrasy: "out" is tagged D but is
/// always followed by a verb, while every other D word is followed by a
/// noun. "runs" is ambiguous between N and V, so a category-level model
/// tags "runs" after "out" as N; a model with a lexicalized (D, out) state
/// tags it V.
pub fn planted_train_text() -> String {
    let mut text = String::new();
    for _ in 0..30 {
        text.push_str("the/D dog/N sits/V\n");
    }
    for _ in 0..30 {
        text.push_str("the/D runs/N end/V\n");
    }
    for _ in 0..20 {
        text.push_str("dog/N out/D runs/V\n");
    }
    for _ in 0..40 {
        text.push_str("the/D dog/N\n");
    }
    text
}

/// Held-out text matching the planted training distribution. A base model
/// mistags the "runs" token of every "dog out runs" sentence.
pub fn planted_test_text() -> String {
    let mut text = String::new();
    for _ in 0..5 {
        text.push_str("dog/N out/D runs/V\n");
    }
    for _ in 0..5 {
        text.push_str("the/D dog/N sits/V\n");
    }
    for _ in 0..3 {
        text.push_str("the/D runs/N end/V\n");
    }
    for _ in 0..3 {
        text.push_str("the/D dog/N\n");
    }
    text
}
