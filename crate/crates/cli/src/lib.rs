//! The commands behind the `bitext` binary. Each one reads its inputs from
//! files, writes its artifact, and prints a report to `out`; diagnostics
//! and progress go to `log`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use bitext_core::annindex::{ExactIndex, PartitionedIndex, VectorIndex};
use bitext_core::encoder;
use bitext_core::evalkit::{self, SynthCorpusConfig};
use bitext_core::io::{self as bio, RunConfig};
use bitext_core::miner::{self, DocMatchConfig, DocMatchResult};
use bitext_core::trainer::{self, Checkpoint, SentencePair, Trainer};
use bitext_core::{Error, Matrix, Result, Side};

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::Io {
            path: PathBuf::from("<output>"),
            source: e,
        })
}

/// Turns a failure on the `i`-th input sentence into an error naming its
/// file line.
fn at_line(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Sentence { index, source } => Error::Parse {
            path: path.display().to_string(),
            line: index + 1,
            message: source.to_string(),
        },
        other => other,
    }
}

fn config_echo(cfg: &RunConfig) -> String {
    cfg.to_text().lines().map(|l| format!("# {l}\n")).collect()
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub corpus: PathBuf,
    pub output: PathBuf,
    /// Mine hard negatives after `warmup_steps` and continue with them.
    pub hard_negatives: bool,
}

/// Trains a model and writes its checkpoint. The effective configuration
/// and every `log_every`-th progress record go to `log`.
pub fn cmd_train(args: &TrainArgs, log: &mut dyn Write) -> Result<Checkpoint<f32>> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let corpus = bio::read_parallel(&args.corpus)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if args.hard_negatives && cfg.training.hard_negatives_per_example == 0 {
        return Err(Error::ConfigInvalid(
            "hard negatives requested but hard_negatives_per_example is 0".into(),
        ));
    }
    emit(log, &config_echo(&cfg))?;
    let mut sink = Ok(());
    let mut observer = |r: &trainer::ProgressRecord| {
        if cfg.log_every > 0 && (r.step + 1) % cfg.log_every == 0 && sink.is_ok() {
            sink = emit(log, &format!("{r}\n"));
        }
    };
    let ckpt = if args.hard_negatives {
        trainer::train_with_mining(&cfg.training, &cfg.model, &corpus, cfg.warmup_steps, &mut observer)?
    } else {
        let init = Checkpoint::init(&cfg.model, cfg.training.seed)?;
        Trainer::new(cfg.training.clone(), &corpus, init, None)?.run(&mut observer)?
    };
    sink?;
    bio::save_checkpoint(&args.output, &ckpt)?;
    Ok(ckpt)
}

/// Encodes one sentence per line of `input` and writes the matrix plus its
/// `.ids` sidecar (0-based line numbers). Returns the number of rows.
pub fn cmd_encode(checkpoint: &Path, input: &Path, side: Side, output: &Path) -> Result<usize> {
    let model = bio::load_checkpoint(checkpoint)?.model;
    let lines = bio::read_lines(input)?;
    let emb = if lines.is_empty() {
        Matrix::zeros(0, model.embedding_dim())
    } else {
        encoder::encode_corpus(&lines, side, &model).map_err(at_line(input))?
    };
    let ids: Vec<usize> = (0..lines.len()).collect();
    bio::save_embeddings(output, &emb, &ids)?;
    Ok(ids.len())
}

/// Exact search when `partitions` is 0, otherwise a partitioned index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexParams {
    pub partitions: usize,
    pub n_probe: usize,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            partitions: 0,
            n_probe: 1,
            seed: 0,
        }
    }
}

fn build_index(emb: Matrix<f32>, params: IndexParams) -> Result<Box<dyn VectorIndex>> {
    let ids: Vec<usize> = (0..emb.rows()).collect();
    Ok(if params.partitions == 0 {
        Box::new(ExactIndex::build(emb, ids)?)
    } else {
        Box::new(PartitionedIndex::build(emb, ids, params.partitions, params.n_probe, params.seed)?)
    })
}

pub struct MineArgs {
    pub checkpoint: PathBuf,
    pub source: PathBuf,
    pub target: PathBuf,
    pub output: PathBuf,
    pub threshold: f64,
    pub index: IndexParams,
}

/// Writes `source_id<TAB>target_id<TAB>dot_score<TAB>confidence` for every
/// source line whose best target clears the threshold. Ids are 0-based
/// line numbers. Returns the number of pairs written.
pub fn cmd_mine_sentences(args: &MineArgs) -> Result<usize> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(Error::ConfigInvalid(format!(
            "threshold must lie in [0, 1], got {}",
            args.threshold
        )));
    }
    let model = bio::load_checkpoint(&args.checkpoint)?.model;
    let sources = bio::read_lines(&args.source)?;
    let targets = bio::read_lines(&args.target)?;
    let mut out = String::new();
    let mut written = 0;
    if !sources.is_empty() {
        if targets.is_empty() {
            return Err(Error::EmptyInput);
        }
        let v = encoder::encode_corpus(&targets, Side::Target, &model).map_err(at_line(&args.target))?;
        let index = build_index(v, args.index)?;
        let u = encoder::encode_corpus(&sources, Side::Source, &model).map_err(at_line(&args.source))?;
        let ids: Vec<usize> = (0..sources.len()).collect();
        let retrievals = miner::retrieve_encoded(&model, &u, &ids, index.as_ref(), 1)?;
        let pairs = miner::mine_sentence_pairs(&retrievals, &sources, &targets, &model.featurizer, args.threshold);
        for p in &pairs {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", p.source_id, p.target_id, p.dot_score, p.confidence);
        }
        written = pairs.len();
    }
    bio::write_file(&args.output, out.as_bytes())?;
    Ok(written)
}

/// `source_doc<TAB>target_doc` per line.
pub fn read_gold(path: &Path) -> Result<BTreeMap<String, String>> {
    let pairs = bio::read_parallel(path)?;
    Ok(pairs.into_iter().map(|p| (p.source, p.target)).collect())
}

pub struct MatchArgs {
    pub checkpoint: PathBuf,
    pub source_docs: PathBuf,
    pub target_docs: PathBuf,
    pub output: PathBuf,
    pub doc_match: DocMatchConfig,
    /// Use mutual best-match counts instead of the document score.
    pub baseline: bool,
    pub gold: Option<PathBuf>,
    pub index: IndexParams,
}

fn rows<S: std::fmt::Display>(results: &[DocMatchResult<S>], log: &mut dyn Write) -> Result<(String, BTreeMap<String, String>)> {
    let mut text = String::new();
    let mut predicted = BTreeMap::new();
    for r in results {
        match &r.outcome {
            Ok((doc, score)) => {
                let _ = writeln!(text, "{}\t{doc}\t{score}", r.source_doc);
                predicted.insert(r.source_doc.clone(), doc.clone());
            }
            Err(e) => {
                emit(log, &format!("warning: {e}\n"))?;
                let _ = writeln!(text, "{}\t-\t-", r.source_doc);
                predicted.insert(r.source_doc.clone(), String::new());
            }
        }
    }
    Ok((text, predicted))
}

/// Writes a header echoing the method and its settings, then
/// `source_doc<TAB>target_doc<TAB>score` per source document (`-` when it
/// has no candidates). With a gold map, appends and returns the accuracy.
pub fn cmd_match_docs(args: &MatchArgs, log: &mut dyn Write) -> Result<Option<f64>> {
    args.doc_match.validate()?;
    let model = bio::load_checkpoint(&args.checkpoint)?.model;
    let source = bio::read_documents(&args.source_docs)?;
    let target = bio::read_documents(&args.target_docs)?;
    let d = &args.doc_match;
    let mut report = String::new();
    let (body, predicted) = if args.baseline {
        report.push_str("# method = alignment_counts\n");
        rows(&miner::match_documents_baseline(&model, &source, &target)?, log)?
    } else {
        let _ = write!(
            report,
            "# method = doc_score\n# retrieval_depth = {}\n# w1 = {}\n# w2 = {}\n# normalized_positions = {}\n",
            d.retrieval_depth, d.w1, d.w2, d.normalized_positions
        );
        let v = encoder::encode_corpus(&target.sentences, Side::Target, &model).map_err(at_line(&args.target_docs))?;
        let index = build_index(v, args.index)?;
        rows(&miner::match_documents(&model, &source, &target, index.as_ref(), d)?, log)?
    };
    report.push_str(&body);
    let accuracy = match &args.gold {
        Some(g) => {
            let acc = evalkit::doc_match_accuracy(&predicted, &read_gold(g)?)?;
            let _ = writeln!(report, "# accuracy = {acc}");
            Some(acc)
        }
        None => None,
    };
    bio::write_file(&args.output, report.as_bytes())?;
    Ok(accuracy)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub pairs: PathBuf,
    /// Distractor targets, one per line; the eval targets when absent.
    pub pool: Option<PathBuf>,
    pub pool_size: usize,
    pub ns: Vec<usize>,
}

/// Prints a configuration echo and one `P@N<TAB>N<TAB>value` line per
/// cutoff. A pool smaller than requested is used whole, with a warning.
pub fn cmd_evaluate(args: &EvalArgs, out: &mut dyn Write, log: &mut dyn Write) -> Result<evalkit::EvalResult> {
    let ns: BTreeSet<usize> = args.ns.iter().copied().collect();
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::ConfigInvalid("cutoffs must be positive and non-empty".into()));
    }
    let model = bio::load_checkpoint(&args.checkpoint)?.model;
    let pairs: Vec<SentencePair> = bio::read_parallel(&args.pairs)?;
    let mut pool: Vec<String> = match &args.pool {
        Some(p) => bio::read_lines(p)?,
        None => pairs.iter().map(|p| p.target.clone()).collect(),
    };
    if pool.len() < args.pool_size {
        emit(
            log,
            &format!("warning: pool has {} sentences, fewer than the {} requested\n", pool.len(), args.pool_size),
        )?;
    }
    pool.truncate(args.pool_size);
    let result = evalkit::precision_at_n(&model, &pairs, &pool, &ns)?;
    let cutoffs: Vec<String> = ns.iter().map(usize::to_string).collect();
    let mut report = format!(
        "# checkpoint = {}\n# pairs = {}\n# pool_size = {}\n# n = {}\n# queries = {}\n",
        args.checkpoint.display(),
        args.pairs.display(),
        pool.len(),
        cutoffs.join(","),
        result.num_queries
    );
    report.push_str(&result.records());
    emit(out, &report)?;
    Ok(result)
}

/// Writes `pairs.tsv`, `source_docs.tsv`, `target_docs.tsv` and `gold.tsv`
/// for a synthetic cipher corpus into `dir`.
pub fn cmd_synth(cfg: &SynthCorpusConfig, dir: &Path) -> Result<()> {
    let corpus = evalkit::make_synthetic_corpus(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    bio::write_parallel(&dir.join("pairs.tsv"), &corpus.pairs)?;
    bio::write_documents(&dir.join("source_docs.tsv"), &corpus.source_docs)?;
    bio::write_documents(&dir.join("target_docs.tsv"), &corpus.target_docs)?;
    let gold: String = corpus.gold.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect();
    bio::write_file(&dir.join("gold.tsv"), gold.as_bytes())
}

/// Process exit code for a failed command: 1 when the inputs were at fault,
/// 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_user_error() {
        1
    } else {
        2
    }
}
