use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use bitext_cli::*;
use bitext_core::evalkit::SynthCorpusConfig;
use bitext_core::io::{self as bio, RunConfig};
use bitext_core::miner::DocMatchConfig;
use bitext_core::trainer::Checkpoint;
use bitext_core::{encoder, Error, Side};
use tempfile::TempDir;

const SMALL_CONFIG: &str = "\
batch_size = 32
total_steps = 1000
calibration_steps = 1000
input_dim = 64
hidden_dims = 64,64
hash_buckets = 4096
log_every = 250
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bitext"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn column(path: &Path, col: usize, out: &Path) {
    let text: String = std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| format!("{}\n", l.split('\t').nth(col).unwrap()))
        .collect();
    std::fs::write(out, text).unwrap();
}

/// A synthetic corpus and a model trained on its pairs, shared by the
/// tests that need a working model.
struct Fixture {
    dir: TempDir,
    model: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthCorpusConfig {
            seed: 3,
            num_pairs: 200,
            sentences_per_doc: 10,
            doc_noise_rate: 0.1,
            doc_deletion_rate: 0.1,
            ..Default::default()
        };
        cmd_synth(&cfg, dir.path()).unwrap();
        let model = dir.path().join("model.bxm");
        let args = TrainArgs {
            config: Some(write(dir.path(), "small.cfg", SMALL_CONFIG)),
            corpus: dir.path().join("pairs.tsv"),
            output: model.clone(),
            hard_negatives: false,
        };
        cmd_train(&args, &mut Vec::new()).unwrap();
        column(&dir.path().join("pairs.tsv"), 0, &dir.path().join("src.txt"));
        column(&dir.path().join("pairs.tsv"), 1, &dir.path().join("tgt.txt"));
        Fixture { dir, model }
    })
}

#[test]
fn zero_steps_gives_the_seeded_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let pairs: String = (0..64).map(|i| format!("s{i} s{}\tt{i} t{}\n", i % 5, i % 3)).collect();
    let corpus = write(dir.path(), "p.tsv", &pairs);
    let config = write(
        dir.path(),
        "c.cfg",
        "batch_size = 8\ntotal_steps = 0\ncalibration_steps = 0\nseed = 11\ninput_dim = 16\nhidden_dims = 16\n",
    );
    let out = dir.path().join("m.bxm");
    cmd_train(
        &TrainArgs {
            config: Some(config.clone()),
            corpus,
            output: out.clone(),
            hard_negatives: false,
        },
        &mut Vec::new(),
    )
    .unwrap();
    let cfg = RunConfig::load(&config).unwrap();
    assert_eq!(bio::load_checkpoint(&out).unwrap(), Checkpoint::init(&cfg.model, 11).unwrap());
}

#[test]
fn training_twice_is_byte_identical_and_logs_progress() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(
        &SynthCorpusConfig {
            num_pairs: 64,
            ..Default::default()
        },
        dir.path(),
    )
    .unwrap();
    let config = write(
        dir.path(),
        "c.cfg",
        "batch_size = 8\ntotal_steps = 40\ncalibration_steps = 10\ninput_dim = 16\nhidden_dims = 16\n\
         hard_negatives_per_example = 2\nwarmup_steps = 20\nlog_every = 10\n",
    );
    let mut logs = Vec::new();
    for name in ["a.bxm", "b.bxm"] {
        let status = bin()
            .args(["train", "--hard-negatives", "--config"])
            .arg(&config)
            .arg("--corpus")
            .arg(dir.path().join("pairs.tsv"))
            .arg("-o")
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        logs.push(String::from_utf8(status.stderr).unwrap());
    }
    let a = std::fs::read(dir.path().join("a.bxm")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.bxm")).unwrap());
    assert!(logs[0].contains("# hard_negatives_per_example = 2"));
    assert!(logs[0].lines().any(|l| l.starts_with("49\tconf\t")), "{}", logs[0]);
}

#[test]
fn malformed_corpus_names_the_line_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut text: String = (1..17).map(|i| format!("s{i}\tt{i}\n")).collect();
    text.push_str("a line without a tab\n");
    let corpus = write(dir.path(), "bad.tsv", &text);
    let out = bin()
        .arg("train")
        .arg("--corpus")
        .arg(&corpus)
        .arg("-o")
        .arg(dir.path().join("m.bxm"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.tsv:17:"), "{err}");
}

#[test]
fn hard_negative_flag_needs_a_count() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "p.tsv", "a b\tc d\ne f\tg h\n");
    let r = cmd_train(
        &TrainArgs {
            config: None,
            corpus,
            output: dir.path().join("m.bxm"),
            hard_negatives: true,
        },
        &mut Vec::new(),
    );
    assert!(matches!(r, Err(Error::ConfigInvalid(_))));
}

#[test]
fn usage_and_file_errors_exit_1() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let fake = write(dir.path(), "x.bxm", "XXXXnot a checkpoint");
    let input = write(dir.path(), "in.txt", "hello\n");
    let out = bin()
        .args(["encode", "--side", "source", "--checkpoint"])
        .arg(&fake)
        .arg("--input")
        .arg(&input)
        .arg("-o")
        .arg(dir.path().join("e.bin"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn encode_matches_in_process_rows_and_is_repeatable() {
    let f = fixture();
    let d = f.dir.path();
    let one = write(d, "one.txt", "sa sb sc\n");
    assert_eq!(cmd_encode(&f.model, &one, Side::Source, &d.join("one.bin")).unwrap(), 1);
    let (m, ids) = bio::load_embeddings(&d.join("one.bin")).unwrap();
    assert_eq!((m.rows(), ids), (1, vec![0]));

    let src = d.join("src.txt");
    cmd_encode(&f.model, &src, Side::Source, &d.join("e1.bin")).unwrap();
    cmd_encode(&f.model, &src, Side::Source, &d.join("e2.bin")).unwrap();
    let bytes = std::fs::read(d.join("e1.bin")).unwrap();
    assert_eq!(bytes, std::fs::read(d.join("e2.bin")).unwrap());

    let model = bio::load_checkpoint(&f.model).unwrap().model;
    let (m, _) = bio::load_embeddings(&d.join("e1.bin")).unwrap();
    let lines = bio::read_lines(&src).unwrap();
    for k in [0, 17, 199] {
        let want = model.encode(&lines[k], Side::Source).unwrap();
        assert_eq!(m.row(k), want.values());
    }
    assert_eq!(m.row(5), encoder::encode_corpus(&lines[5..6], Side::Source, &model).unwrap().row(0));
}

#[test]
fn encode_reports_the_offending_line() {
    let f = fixture();
    let d = f.dir.path();
    let input = write(d, "blank.txt", "sa sb\n   \nsc\n");
    match cmd_encode(&f.model, &input, Side::Target, &d.join("x.bin")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

fn mine(f: &Fixture, source: &Path, threshold: f64, name: &str) -> Vec<Vec<String>> {
    let out = f.dir.path().join(name);
    cmd_mine_sentences(&MineArgs {
        checkpoint: f.model.clone(),
        source: source.to_path_buf(),
        target: f.dir.path().join("tgt.txt"),
        output: out.clone(),
        threshold,
        index: IndexParams::default(),
    })
    .unwrap();
    std::fs::read_to_string(out)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

#[test]
fn mining_a_ciphered_copy_recovers_the_counterparts() {
    let f = fixture();
    let rows = mine(f, &f.dir.path().join("src.txt"), 0.5, "mined.tsv");
    assert!(rows.len() >= 190, "only {} of 200 mined", rows.len());
    for r in &rows {
        assert_eq!(r.len(), 4);
        assert_eq!(r[0], r[1], "line {} mined with {}", r[0], r[1]);
        let conf: f64 = r[3].parse().unwrap();
        assert!((0.5..1.0).contains(&conf));
    }
    let confs: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(confs.windows(2).all(|w| w[0] >= w[1]));

    assert!(mine(f, &f.dir.path().join("src.txt"), 1.0, "none.tsv").is_empty());
}

#[test]
fn empty_source_file_mines_nothing_and_exits_0() {
    let f = fixture();
    let empty = write(f.dir.path(), "empty.txt", "");
    let out = f.dir.path().join("empty_mined.tsv");
    let status = bin()
        .arg("mine-sentences")
        .arg("--checkpoint")
        .arg(&f.model)
        .arg("--source")
        .arg(&empty)
        .arg("--target")
        .arg(f.dir.path().join("tgt.txt"))
        .arg("-o")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out).unwrap(), "");
}

#[test]
fn partitioned_mining_agrees_with_exact_on_most_lines() {
    let f = fixture();
    let out = f.dir.path().join("ivf.tsv");
    let n = cmd_mine_sentences(&MineArgs {
        checkpoint: f.model.clone(),
        source: f.dir.path().join("src.txt"),
        target: f.dir.path().join("tgt.txt"),
        output: out,
        threshold: 0.5,
        index: IndexParams {
            partitions: 8,
            n_probe: 8,
            seed: 1,
        },
    })
    .unwrap();
    // probing every partition is an exhaustive search
    assert_eq!(n, mine(f, &f.dir.path().join("src.txt"), 0.5, "exact.tsv").len());
}

fn match_docs(f: &Fixture, depth: usize, baseline: bool, name: &str) -> (Option<f64>, String) {
    let d = f.dir.path();
    let out = d.join(name);
    let acc = cmd_match_docs(
        &MatchArgs {
            checkpoint: f.model.clone(),
            source_docs: d.join("source_docs.tsv"),
            target_docs: d.join("target_docs.tsv"),
            output: out.clone(),
            doc_match: DocMatchConfig {
                retrieval_depth: depth,
                normalized_positions: true,
                ..Default::default()
            },
            baseline,
            gold: Some(d.join("gold.tsv")),
            index: IndexParams::default(),
        },
        &mut Vec::new(),
    )
    .unwrap();
    (acc, std::fs::read_to_string(out).unwrap())
}

#[test]
fn document_matching_reports_settings_and_accuracy() {
    let f = fixture();
    let (acc, report) = match_docs(f, 10, false, "docs10.tsv");
    assert!(acc.unwrap() >= 0.9, "{report}");
    assert!(report.contains("# method = doc_score\n# retrieval_depth = 10\n"));
    assert!(report.ends_with(&format!("# accuracy = {}\n", acc.unwrap())));
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 20);

    let (_, report) = match_docs(f, 1, false, "docs1.tsv");
    assert!(report.contains("# retrieval_depth = 1\n"));

    let (acc, report) = match_docs(f, 10, true, "base.tsv");
    assert!(report.starts_with("# method = alignment_counts\n"));
    assert!(report.ends_with(&format!("# accuracy = {}\n", acc.unwrap())));
}

#[test]
fn evaluate_emits_one_row_per_cutoff_and_warns_on_small_pools() {
    let f = fixture();
    let mut out = Vec::new();
    let mut log = Vec::new();
    let r = cmd_evaluate(
        &EvalArgs {
            checkpoint: f.model.clone(),
            pairs: f.dir.path().join("pairs.tsv"),
            pool: None,
            pool_size: 1000,
            ns: vec![10, 1, 3],
        },
        &mut out,
        &mut log,
    )
    .unwrap();
    let out = String::from_utf8(out).unwrap();
    let rows: Vec<&str> = out.lines().filter(|l| l.starts_with("P@N")).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("P@N\t1\t"));
    assert!(out.contains("# pool_size = 200\n"));
    assert!(String::from_utf8(log).unwrap().contains("fewer than the 1000 requested"));
    let p = &r.p_at;
    assert!(p[&1] <= p[&3] && p[&3] <= p[&10]);
    assert!(p[&1] > 0.9);
}

#[test]
fn untrained_model_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(
        &SynthCorpusConfig {
            num_pairs: 300,
            seed: 9,
            ..Default::default()
        },
        dir.path(),
    )
    .unwrap();
    let mut p1 = 0.0;
    for seed in 0..3 {
        let cfg = write(
            dir.path(),
            "zero.cfg",
            &format!("total_steps = 0\ncalibration_steps = 0\nseed = {seed}\n"),
        );
        let model = dir.path().join("zero.bxm");
        cmd_train(
            &TrainArgs {
                config: Some(cfg),
                corpus: dir.path().join("pairs.tsv"),
                output: model.clone(),
                hard_negatives: false,
            },
            &mut Vec::new(),
        )
        .unwrap();
        let r = cmd_evaluate(
            &EvalArgs {
                checkpoint: model,
                pairs: dir.path().join("pairs.tsv"),
                pool: None,
                pool_size: 300,
                ns: vec![1],
            },
            &mut Vec::new(),
            &mut Vec::new(),
        )
        .unwrap();
        p1 += r.p_at[&1] / 3.0;
    }
    // chance is 1/300
    assert!(p1 < 0.03, "{p1}");
}
