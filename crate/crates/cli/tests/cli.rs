use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_rnnlm-rescore");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(&o));
    stdout(&o)
}

fn sentences(n: usize, salt: usize) -> String {
    let subjects = ["the cat", "a dog", "my friend", "the robot"];
    let verbs = ["sees", "likes", "opens", "takes"];
    let objects = ["the door", "a ball", "the box", "it"];
    (0..n)
        .map(|i| {
            let k = i * 7 + salt;
            format!(
                "{} {} {}\n",
                subjects[k % 4],
                verbs[(k / 4) % 4],
                objects[(k / 16 + i) % 4]
            )
        })
        .collect()
}

/// A working directory with corpora and a small config.
fn workspace(extra: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("train.txt"), sentences(200, 0)).unwrap();
    fs::write(dir.path().join("test.txt"), sentences(6, 3)).unwrap();
    let config = format!(
        "corpus = train.txt\nreferences = test.txt\nhidden_size = 12\nmaxent_table_bits = 12\nepochs = 2\n\
         cache_capacity_kb = 0, 1, 2, 3, 4\nseed = 3\n{extra}"
    );
    fs::write(dir.path().join("run.conf"), config).unwrap();
    dir
}

fn pipeline(extra: &str) -> TempDir {
    let dir = workspace(extra);
    for cmd in ["train-rnnlm", "train-ngram", "gen-lattices"] {
        ok(run(dir.path(), &["--config", "run.conf", cmd]));
    }
    dir
}

/// Utterance lines of decode output as (id, words, score).
fn hypotheses(out: &str) -> Vec<(String, String, f64)> {
    out.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 3, "{l}");
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn training_writes_a_model_and_logs_every_epoch() {
    let dir = workspace("");
    let out = ok(run(dir.path(), &["--config", "run.conf", "train-rnnlm"]));
    let model = fs::read(dir.path().join("rnnlm.bin")).unwrap();
    assert_eq!(&model[..4], b"RNLM");
    assert!(out.contains("# seed=3\n") && out.contains("# hidden_size=12\n"));
    let rows: Vec<&str> = out.lines().skip_while(|l| l.starts_with('#')).collect();
    assert_eq!(rows[0], "epoch\ttrain_loss\ttrain_perplexity\tvalid_perplexity");
    assert_eq!(rows.len(), 3);
    assert!(rows[1..].iter().all(|r| r.split('\t').count() == 4));
}

#[test]
fn missing_corpus_is_a_usage_error_naming_the_path() {
    let dir = workspace("");
    fs::write(dir.path().join("gone.conf"), "corpus = no/such/file.txt\n").unwrap();
    let o = run(dir.path(), &["--config", "gone.conf", "train-rnnlm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/file.txt"), "{}", stderr(&o));
}

#[test]
fn bad_configuration_exits_two() {
    let dir = workspace("");
    fs::write(dir.path().join("typo.conf"), "hiden_size = 4\n").unwrap();
    let o = run(dir.path(), &["--config", "typo.conf", "train-rnnlm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hiden_size"));
    assert_eq!(
        run(dir.path(), &["decode", "--mode", "sideways"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(dir.path(), &["--config", "missing.conf", "report"]).status.code(),
        Some(2)
    );
}

#[test]
fn fixed_seed_gives_byte_identical_models() {
    let a = workspace("");
    let b = workspace("");
    ok(run(a.path(), &["--config", "run.conf", "train-rnnlm"]));
    ok(run(b.path(), &["--config", "run.conf", "train-rnnlm"]));
    let (ma, mb) = (
        fs::read(a.path().join("rnnlm.bin")).unwrap(),
        fs::read(b.path().join("rnnlm.bin")).unwrap(),
    );
    assert_eq!(ma, mb);
    let c = workspace("seed = 4\n");
    ok(run(c.path(), &["--config", "run.conf", "train-rnnlm"]));
    assert_ne!(fs::read(c.path().join("rnnlm.bin")).unwrap(), ma);
}

#[test]
fn malformed_lattice_error_names_the_line() {
    let dir = pipeline("");
    fs::write(
        dir.path().join("bad.lat"),
        "start 0\n0 1 4 -1.0 -2.0\n1 2 five -1.0 -2.0\nfinal 2\n",
    )
    .unwrap();
    let o = run(dir.path(), &["--config", "run.conf", "decode", "bad.lat"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("bad.lat"), "{err}");
}

#[test]
fn linear_lattice_echoes_its_only_path() {
    let dir = pipeline("");
    let vocab = fs::read_to_string(dir.path().join("vocab.tsv")).unwrap();
    let id = |w: &str| vocab.lines().position(|l| l.split('\t').next() == Some(w)).unwrap();
    let lat = format!(
        "start 0\n0 1 {} -0.5 -1\n1 2 {} -0.5 -1\n2 3 {} -0.5 -1\nfinal 3\n",
        id("robot"),
        id("opens"),
        id("it")
    );
    fs::write(dir.path().join("line.lat"), lat).unwrap();
    for mode in ["onthefly", "twopass-rnnlm", "twopass-hybrid"] {
        let out = ok(run(
            dir.path(),
            &["--config", "run.conf", "decode", "--mode", mode, "line.lat"],
        ));
        let h = hypotheses(&out);
        assert_eq!((h[0].0.as_str(), h[0].1.as_str()), ("line", "robot opens it"));
    }
}

#[test]
fn exhaustive_one_pass_scores_at_least_two_pass() {
    let dir = pipeline("");
    let one = hypotheses(&ok(run(
        dir.path(),
        &["--config", "run.conf", "decode", "--mode", "onthefly", "--beam", "all"],
    )));
    let two = hypotheses(&ok(run(
        dir.path(),
        &["--config", "run.conf", "decode", "--mode", "twopass-rnnlm"],
    )));
    assert_eq!(one.len(), 6);
    for (a, b) in one.iter().zip(&two) {
        assert_eq!(a.0, b.0);
        // printed to six decimals; the one-pass delta is carried in f32
        assert!(a.2 >= b.2 - 1e-4, "{a:?} vs {b:?}");
    }
}

#[test]
fn cache_does_not_change_hypotheses() {
    let dir = pipeline("");
    let on = ok(run(dir.path(), &["--config", "run.conf", "decode"]));
    let off = ok(run(dir.path(), &["--config", "run.conf", "decode", "--no-cache"]));
    let body = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    assert_eq!(body(&on), body(&off));
    assert!(on.contains("# cache=on") && off.contains("# cache=off lookups"));
    assert!(off.contains(" hits=0 "));
}

fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split('\t').map(str::to_string).collect();
    (
        header,
        lines.map(|l| l.split('\t').map(str::to_string).collect()).collect(),
    )
}

#[test]
fn bench_tables_are_rederived_from_the_ledgers() {
    let dir = pipeline("");
    ok(run(dir.path(), &["--config", "run.conf", "bench"]));
    let reports = dir.path().join("reports");
    let (header, sweep) = table(&reports.join("sweep.tsv"));
    assert_eq!(sweep.len(), 5);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let capacities: Vec<&str> = sweep.iter().map(|r| r[col("capacity_kb")].as_str()).collect();
    assert_eq!(capacities, ["0", "1", "2", "3", "4"]);
    for r in &sweep {
        let entries: u64 = r[col("entries")].parse().unwrap();
        assert_eq!(r[col("resident_bytes")], (entries * 32).to_string());
    }
    let (_, retention) = table(&reports.join("retention.tsv"));
    assert_eq!(retention.len(), 2);
    let misses = |r: &Vec<String>| r[col("misses")].parse::<u64>().unwrap();
    assert!(misses(&retention[1]) <= misses(&retention[0]));

    // recount the sweep from the raw ledger
    let (lh, ledger) = table(&reports.join("cache_ledger.tsv"));
    let lcol = |name: &str| lh.iter().position(|h| h == name).unwrap();
    for r in &sweep {
        let rows: Vec<&Vec<String>> = ledger
            .iter()
            .filter(|l| l[lcol("capacity_kb")] == r[col("capacity_kb")] && l[lcol("retain")] == r[col("retain")])
            .collect();
        let sum = |name: &str| rows.iter().map(|l| l[lcol(name)].parse::<u64>().unwrap()).sum::<u64>();
        assert_eq!(r[col("lookups")], sum("lookups").to_string());
        assert_eq!(r[col("computations")], sum("computations").to_string());
    }

    let (_, systems) = table(&reports.join("comparison.tsv"));
    let names: Vec<&str> = systems.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["1/ngram", "1/rnnlm", "2/hybrid", "2/rnnlm"]);
    assert!(fs::read_to_string(reports.join("sweep.tsv"))
        .unwrap()
        .starts_with("# corpus=train.txt\n"));

    // report alone reproduces the same tables byte for byte
    let before: Vec<Vec<u8>> = ["sweep.tsv", "retention.tsv", "transfer.tsv", "comparison.tsv"]
        .iter()
        .map(|f| fs::read(reports.join(f)).unwrap())
        .collect();
    for f in ["sweep.tsv", "retention.tsv", "transfer.tsv", "comparison.tsv"] {
        fs::remove_file(reports.join(f)).unwrap();
    }
    ok(run(dir.path(), &["--config", "run.conf", "report"]));
    let after: Vec<Vec<u8>> = ["sweep.tsv", "retention.tsv", "transfer.tsv", "comparison.tsv"]
        .iter()
        .map(|f| fs::read(reports.join(f)).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn bench_without_lattices_fails() {
    let dir = workspace("");
    ok(run(dir.path(), &["--config", "run.conf", "train-rnnlm"]));
    ok(run(dir.path(), &["--config", "run.conf", "train-ngram"]));
    let o = run(dir.path(), &["--config", "run.conf", "bench"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("references.tsv"));
}
