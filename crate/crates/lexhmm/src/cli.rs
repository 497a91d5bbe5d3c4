//! Command-line interface: train, rank, split, tag, eval, and sweep
//! subcommands over the library pipeline.

use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand};
use rayon::prelude::*;

use crate::corpus::{parse_tagged_text, split_corpus, Lexicon, TagMap, TaggedCorpus};
use crate::decode::{viterbi, DecodeOptions, TagSequence};
use crate::error::{Error, Result};
use crate::eval::{accuracy, significance_test, sweep, EvalReport, SweepConfig};
use crate::lexicalize::{
    deviation_histogram, rank_candidates, rank_candidates_rerank, select_splits, split_states,
    DeviationEntry, LexicalizedHmm, SelectRule, SplitMode,
};
use crate::model::{
    count_events, estimate_mle, estimate_with_smoothed_transitions, fit_category_alphas,
    CountsTable,
};
use crate::model_file::{load_model, save_model, write_atomic, ModelMeta, SavedModel};

#[derive(Parser)]
#[command(
    name = "lexhmm",
    version,
    about = "Train, lexicalize, and evaluate HMM part-of-speech taggers"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a base tagger from a tagged corpus.
    Train(TrainArgs),
    /// Rank (category, word) pairs by transition deviation.
    Rank(RankArgs),
    /// Lexicalize the top-ranked or above-threshold pairs.
    Split(SplitArgs),
    /// Tag plain text, one sentence per line.
    Tag(TagArgs),
    /// Measure tagging accuracy on a held-out tagged corpus.
    Eval(EvalArgs),
    /// Measure accuracy across a grid of split counts.
    Sweep(SweepArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Tagged corpus: word/TAG tokens, one sentence per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Optional tag mapping file (raw<TAB>mapped per line).
    #[arg(long)]
    tag_map: Option<PathBuf>,
    /// Fraction of sentences held out for testing.
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    /// Seed for the train/test shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the model.
    #[arg(long)]
    out: PathBuf,
    /// Also write the training half as tagged text.
    #[arg(long)]
    write_train: Option<PathBuf>,
    /// Also write the held-out half as tagged text.
    #[arg(long)]
    write_test: Option<PathBuf>,
    /// Smooth base transition rows toward the corpus marginal.
    #[arg(long)]
    smooth_base: bool,
    /// Minimum pair count recorded for later split candidacy.
    #[arg(long, default_value_t = 10)]
    min_count: u64,
}

#[derive(clap::Args)]
struct RankArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training corpus to recount events from: "auto" uses the path
    /// recorded in the model.
    #[arg(long, default_value = "auto")]
    counts: String,
    /// Minimum (category, word) occurrence count.
    #[arg(long, default_value_t = 10)]
    min_count: u64,
    /// Keep only the top K entries in the output.
    #[arg(long)]
    top: Option<usize>,
    /// Re-rank greedily against updated centroids after each pick.
    #[arg(long)]
    rerank: bool,
    /// Ranking CSV destination.
    #[arg(long)]
    out: PathBuf,
    /// Optional deviation histogram CSV destination.
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(clap::Args)]
#[command(group(ArgGroup::new("selection").required(true).args(["top", "theta"])))]
struct SplitArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training corpus to recount events from: "auto" uses the path
    /// recorded in the model.
    #[arg(long, default_value = "auto")]
    counts: String,
    /// full: split emissions and both transition directions;
    /// pseudo: split outgoing transitions only.
    #[arg(long)]
    mode: SplitMode,
    /// Split the K highest-deviation pairs.
    #[arg(long)]
    top: Option<usize>,
    /// Split every pair with deviation strictly above this threshold.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    /// Plain text, one sentence per line, tokens separated by spaces.
    #[arg(long)]
    input: PathBuf,
    /// Tagged output (word/TAG), parseable as a training corpus.
    #[arg(long)]
    output: PathBuf,
    /// Consider every content tag for known words.
    #[arg(long)]
    open_lattice: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Tagged test corpus.
    #[arg(long)]
    test: PathBuf,
    /// Plain-text accuracy report destination.
    #[arg(long)]
    report: PathBuf,
    /// Optional confusion table CSV destination.
    #[arg(long)]
    confusion: Option<PathBuf>,
    /// Optional second model to test this one against for significance.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    open_lattice: bool,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tag_map: Option<PathBuf>,
    /// Split-count grid as START:END:STEP, e.g. 0:60:10.
    #[arg(long)]
    grid: String,
    /// Comma-separated split modes.
    #[arg(long, default_value = "full,pseudo")]
    modes: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 10)]
    min_count: u64,
    #[arg(long)]
    smooth_base: bool,
    #[arg(long)]
    rerank: bool,
    #[arg(long)]
    open_lattice: bool,
    /// Results CSV destination.
    #[arg(long)]
    out: PathBuf,
}

/// Parses arguments and dispatches. Honors LEXHMM_THREADS for the size of
/// the worker pool.
pub fn run() -> Result<()> {
    let cli = Cli::parse();
    init_thread_pool()?;
    match cli.command {
        Command::Train(args) => run_train(args),
        Command::Rank(args) => run_rank(args),
        Command::Split(args) => run_split(args),
        Command::Tag(args) => run_tag(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep(args),
    }
}

fn init_thread_pool() -> Result<()> {
    if let Ok(value) = std::env::var("LEXHMM_THREADS") {
        let n: usize = value
            .parse()
            .map_err(|_| Error::Cli(format!("invalid LEXHMM_THREADS value {value:?}")))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Cli(format!("thread pool: {e}")))?;
        }
    }
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_corpus(path: &Path) -> Result<TaggedCorpus> {
    parse_tagged_text(&read_to_string(path)?)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Cli(format!("csv: {e}"))
}

fn finish_csv(wtr: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    wtr.into_inner()
        .map_err(|e| Error::Cli(format!("csv: {e}")))
}

fn decode_corpus(
    model: &LexicalizedHmm,
    corpus: &TaggedCorpus,
    options: &DecodeOptions,
) -> Result<Vec<TagSequence>> {
    corpus
        .sentences()
        .par_iter()
        .map(|s| {
            let words: Vec<&str> = s.words().collect();
            viterbi(model, &words, options)
        })
        .collect()
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut corpus = read_corpus(&args.corpus)?;
    let mut tag_map_entries = Vec::new();
    if let Some(map_path) = &args.tag_map {
        let map = TagMap::parse(&read_to_string(map_path)?)?;
        tag_map_entries = map
            .entries()
            .map(|(raw, mapped)| (raw.to_string(), mapped.to_string()))
            .collect();
        corpus = corpus.map_tags(&map);
    }
    let (train, test) = split_corpus(&corpus, args.test_fraction, args.seed)?;
    if let Some(path) = &args.write_train {
        write_atomic(path, train.to_text().as_bytes())?;
    }
    if let Some(path) = &args.write_test {
        write_atomic(path, test.to_text().as_bytes())?;
    }
    let lexicon = Lexicon::build(&train)?;
    let counts = count_events(&train, &lexicon)?;
    let base = if args.smooth_base {
        estimate_with_smoothed_transitions(&counts, &lexicon)?.0
    } else {
        estimate_mle(&counts, &lexicon)?
    };
    let alphas = fit_category_alphas(&counts, &base);
    let saved = SavedModel {
        model: LexicalizedHmm::from_base(base),
        meta: ModelMeta {
            seed: args.seed,
            test_fraction: args.test_fraction,
            min_count: args.min_count,
            smooth_base: args.smooth_base,
            source_digest: train.source_digest().to_string(),
            corpus_path: Some(args.corpus.display().to_string()),
            tag_map: tag_map_entries,
            alphas,
        },
    };
    save_model(&saved, &args.out)?;
    let lexicon = saved.model.base().lexicon();
    println!(
        "trained on {} sentences ({} tokens), held out {} sentences ({} tokens); {} tags, {} words -> {}",
        train.sentence_count(),
        train.token_count(),
        test.sentence_count(),
        test.token_count(),
        lexicon.num_content_tags(),
        lexicon.num_words(),
        args.out.display()
    );
    Ok(())
}

/// Recounts training events for a loaded model. "auto" re-reads the corpus
/// recorded in the model; an explicit path may be either the written-out
/// training half or the original full corpus, verified by digest.
fn resolve_counts(saved: &SavedModel, counts_arg: &str) -> Result<CountsTable> {
    let path: PathBuf = if counts_arg == "auto" {
        saved
            .meta
            .corpus_path
            .clone()
            .ok_or_else(|| {
                Error::Cli("model records no corpus path; pass --counts <corpus>".to_string())
            })?
            .into()
    } else {
        counts_arg.into()
    };
    let mut corpus = read_corpus(&path)?;
    if !saved.meta.tag_map.is_empty() {
        corpus = corpus.map_tags(&TagMap::from_entries(saved.meta.tag_map.iter().cloned()));
    }
    let train = if corpus.source_digest() == saved.meta.source_digest {
        corpus
    } else {
        let (train, _) = split_corpus(&corpus, saved.meta.test_fraction, saved.meta.seed)?;
        if train.source_digest() != saved.meta.source_digest {
            return Err(Error::Cli(format!(
                "{} does not reproduce the corpus this model was trained on (digest mismatch)",
                path.display()
            )));
        }
        train
    };
    count_events(&train, saved.model.base().lexicon())
}

fn model_alphas(saved: &SavedModel, counts: &CountsTable) -> Vec<f64> {
    if saved.meta.alphas.len() == saved.model.base().lexicon().num_content_tags() {
        saved.meta.alphas.clone()
    } else {
        fit_category_alphas(counts, saved.model.base())
    }
}

fn write_ranking_csv(
    path: &Path,
    lexicon: &Lexicon,
    entries: &[&DeviationEntry],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["rank", "category", "word", "count", "deviation"])
        .map_err(csv_error)?;
    for (i, entry) in entries.iter().enumerate() {
        wtr.write_record([
            (i + 1).to_string(),
            lexicon.tag_label(entry.category).to_string(),
            lexicon.word(entry.word).to_string(),
            entry.count.to_string(),
            format!("{:.9e}", entry.deviation),
        ])
        .map_err(csv_error)?;
    }
    write_atomic(path, &finish_csv(wtr)?)
}

fn write_histogram_csv(path: &Path, entries: &[DeviationEntry]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["bucket_low", "bucket_high", "count"])
        .map_err(csv_error)?;
    for (low, high, count) in deviation_histogram(entries) {
        wtr.write_record([format!("{low:.2}"), format!("{high:.2}"), count.to_string()])
            .map_err(csv_error)?;
    }
    write_atomic(path, &finish_csv(wtr)?)
}

fn run_rank(args: RankArgs) -> Result<()> {
    let saved = load_model(&args.model)?;
    let counts = resolve_counts(&saved, &args.counts)?;
    let alphas = model_alphas(&saved, &counts);
    let base = saved.model.base();
    let ranking = if args.rerank {
        let limit = args.top.unwrap_or(usize::MAX);
        rank_candidates_rerank(base, &counts, args.min_count, &alphas, limit)?
    } else {
        rank_candidates(base, &counts, args.min_count, &alphas)?
    };
    let shown: Vec<&DeviationEntry> = match args.top {
        Some(k) => ranking.iter().take(k).collect(),
        None => ranking.iter().collect(),
    };
    write_ranking_csv(&args.out, base.lexicon(), &shown)?;
    if let Some(hist_path) = &args.histogram {
        write_histogram_csv(hist_path, &ranking)?;
    }
    println!(
        "ranked {} candidates ({} written) -> {}",
        ranking.len(),
        shown.len(),
        args.out.display()
    );
    Ok(())
}

fn run_split(args: SplitArgs) -> Result<()> {
    let saved = load_model(&args.model)?;
    if saved.model.num_splits() > 0 {
        return Err(Error::Cli(
            "model already contains lexicalized states; start from a base model".to_string(),
        ));
    }
    let counts = resolve_counts(&saved, &args.counts)?;
    let alphas = model_alphas(&saved, &counts);
    let ranking = rank_candidates(saved.model.base(), &counts, saved.meta.min_count, &alphas)?;
    let rule = match (args.top, args.theta) {
        (Some(k), None) => SelectRule::TopK(k),
        (None, Some(theta)) => SelectRule::Threshold(theta),
        _ => unreachable!("clap enforces exactly one selection flag"),
    };
    let spec = select_splits(&ranking, rule, args.mode);
    let model = split_states(saved.model.base(), &counts, &spec, &alphas)?;
    let num_splits = model.num_splits();
    let out_model = SavedModel {
        model,
        meta: ModelMeta {
            alphas,
            ..saved.meta
        },
    };
    save_model(&out_model, &args.out)?;
    println!(
        "lexicalized {} states in {} mode -> {}",
        num_splits,
        args.mode,
        args.out.display()
    );
    Ok(())
}

fn run_tag(args: TagArgs) -> Result<()> {
    let saved = load_model(&args.model)?;
    let text = read_to_string(&args.input)?;
    let sentences: Vec<Vec<&str>> = text
        .lines()
        .map(|line| line.split_whitespace().collect::<Vec<&str>>())
        .filter(|words| !words.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(Error::EmptyInput);
    }
    let options = DecodeOptions {
        open_lattice: args.open_lattice,
    };
    let results: Vec<TagSequence> = sentences
        .par_iter()
        .map(|words| viterbi(&saved.model, words, &options))
        .collect::<Result<_>>()?;
    let lexicon = saved.model.base().lexicon();
    let mut out = String::new();
    let mut tokens = 0usize;
    for (words, seq) in sentences.iter().zip(results.iter()) {
        let line: Vec<String> = words
            .iter()
            .zip(seq.tags.iter())
            .map(|(w, &t)| format!("{w}/{}", lexicon.tag_label(t)))
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
        tokens += words.len();
    }
    write_atomic(&args.output, out.as_bytes())?;
    println!(
        "tagged {} sentences ({} tokens) -> {}",
        sentences.len(),
        tokens,
        args.output.display()
    );
    Ok(())
}

fn report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("total tokens: {}\n", report.total));
    out.push_str(&format!("correct: {}\n", report.correct));
    out.push_str(&format!("accuracy: {:.6}\n", report.accuracy()));
    out.push_str(&format!("known tokens: {}\n", report.known_tokens()));
    out.push_str(&format!(
        "known correct: {}\n",
        report.correct - report.unknown_correct
    ));
    out.push_str(&format!("known accuracy: {:.6}\n", report.known_accuracy()));
    out.push_str(&format!("unknown tokens: {}\n", report.unknown_tokens));
    out.push_str(&format!("unknown correct: {}\n", report.unknown_correct));
    out.push_str(&format!(
        "unknown accuracy: {:.6}\n",
        report.unknown_accuracy()
    ));
    out
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let saved = load_model(&args.model)?;
    let mut test = read_corpus(&args.test)?;
    if !saved.meta.tag_map.is_empty() {
        test = test.map_tags(&TagMap::from_entries(saved.meta.tag_map.iter().cloned()));
    }
    let options = DecodeOptions {
        open_lattice: args.open_lattice,
    };
    let predictions = decode_corpus(&saved.model, &test, &options)?;
    let report = accuracy(&test, &predictions, saved.model.base().lexicon())?;
    let mut text = report_text(&report);
    if let Some(baseline_path) = &args.baseline {
        let baseline = load_model(baseline_path)?;
        let baseline_pred = decode_corpus(&baseline.model, &test, &options)?;
        let baseline_report = accuracy(&test, &baseline_pred, baseline.model.base().lexicon())?;
        let sig = significance_test(
            &baseline_report.per_token_correct,
            &report.per_token_correct,
        )?;
        text.push_str(&format!(
            "baseline accuracy: {:.6}\n",
            baseline_report.accuracy()
        ));
        text.push_str(&format!(
            "accuracy delta: {:.6}\n",
            report.accuracy() - baseline_report.accuracy()
        ));
        text.push_str(&format!("z statistic: {:.4}\n", sig.z));
        text.push_str(&format!(
            "significant at 95% (one-sided): {}\n",
            if sig.significant_at_95 { "yes" } else { "no" }
        ));
        text.push_str(&format!("mcnemar chi2: {:.4}\n", sig.mcnemar_chi2));
        text.push_str(&format!("baseline-only correct: {}\n", sig.baseline_only));
        text.push_str(&format!("improved-only correct: {}\n", sig.improved_only));
    }
    write_atomic(&args.report, text.as_bytes())?;
    if let Some(confusion_path) = &args.confusion {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["gold", "predicted", "count"])
            .map_err(csv_error)?;
        for ((gold, predicted), count) in &report.confusion {
            wtr.write_record([gold.as_str(), predicted.as_str(), &count.to_string()])
                .map_err(csv_error)?;
        }
        write_atomic(confusion_path, &finish_csv(wtr)?)?;
    }
    println!(
        "accuracy {:.6} ({}/{}) -> {}",
        report.accuracy(),
        report.correct,
        report.total,
        args.report.display()
    );
    Ok(())
}

/// Expands START:END:STEP into an inclusive ascending grid.
fn parse_grid(spec: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Cli(format!(
            "grid {spec:?} is not of the form START:END:STEP"
        )));
    }
    let numbers: Vec<usize> = parts
        .iter()
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Cli(format!("grid value {p:?} is not a number")))
        })
        .collect::<Result<_>>()?;
    let (start, end, step) = (numbers[0], numbers[1], numbers[2]);
    if step == 0 {
        return Err(Error::Cli("grid step must be positive".to_string()));
    }
    if end < start {
        return Err(Error::Cli(format!(
            "grid end {end} is below start {start}"
        )));
    }
    Ok((start..=end).step_by(step).collect())
}

fn parse_modes(spec: &str) -> Result<Vec<SplitMode>> {
    spec.split(',')
        .map(|piece| piece.trim().parse::<SplitMode>())
        .collect()
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let mut corpus = read_corpus(&args.corpus)?;
    if let Some(map_path) = &args.tag_map {
        corpus = corpus.map_tags(&TagMap::parse(&read_to_string(map_path)?)?);
    }
    let (train, test) = split_corpus(&corpus, args.test_fraction, args.seed)?;
    let grid = parse_grid(&args.grid)?;
    let modes = parse_modes(&args.modes)?;
    let config = SweepConfig {
        min_count: args.min_count,
        open_lattice: args.open_lattice,
        rerank: args.rerank,
        smooth_base: args.smooth_base,
    };
    let rows = sweep(&train, &test, &grid, &modes, &config)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["mode", "k", "accuracy", "correct", "total"])
        .map_err(csv_error)?;
    for row in &rows {
        if row.truncated {
            eprintln!(
                "warning: requested K={} but only {} candidates were available",
                row.requested_k, row.k
            );
        }
        wtr.write_record([
            row.mode.to_string(),
            row.k.to_string(),
            format!("{:.6}", row.accuracy),
            row.correct.to_string(),
            row.total.to_string(),
        ])
        .map_err(csv_error)?;
    }
    write_atomic(&args.out, &finish_csv(wtr)?)?;
    println!(
        "swept {} grid points over {} test tokens -> {}",
        rows.len(),
        test.token_count(),
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_expansion_is_inclusive() {
        assert_eq!(parse_grid("0:60:10").unwrap(), vec![0, 10, 20, 30, 40, 50, 60]);
        assert_eq!(parse_grid("0:25:10").unwrap(), vec![0, 10, 20]);
        assert_eq!(parse_grid("0:0:5").unwrap(), vec![0]);
    }

    #[test]
    fn bad_grids_are_rejected() {
        for spec in ["", "0:60", "0:60:0", "10:0:5", "a:b:c", "0:60:10:2"] {
            assert!(parse_grid(spec).is_err(), "grid {spec:?} should fail");
        }
    }

    #[test]
    fn modes_parse_as_comma_list() {
        assert_eq!(
            parse_modes("full,pseudo").unwrap(),
            vec![SplitMode::Full, SplitMode::Pseudo]
        );
        assert_eq!(parse_modes("pseudo").unwrap(), vec![SplitMode::Pseudo]);
        assert!(parse_modes("full,bogus").is_err());
    }

    #[test]
    fn cli_declaration_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
