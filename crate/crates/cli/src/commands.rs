use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rnnlm_rescore::arpa::{read_arpa, write_arpa};
use rnnlm_rescore::bench::{
    comparison_table, make_utterances, read_cache_ledger, read_comparison_ledger, run_comparison, run_sweep,
    sweep_table, transfer_table, write_cache_ledger, write_comparison_ledger, write_tsv, BenchModels, Utterance,
    COMPARISON_HEADER, SWEEP_HEADER, TRANSFER_HEADER,
};
use rnnlm_rescore::codec::reduction_ratio;
use rnnlm_rescore::rnnlm::{read_model, write_model};
use rnnlm_rescore::{
    nbest, rescore_onthefly, rescore_twopass, HuffmanTree, Lattice, NgramModel, RescoreCache, RescoreStack, RnnlmModel,
    RnnlmRescorer, Sentence, Smoothing, TwoPassMode, Vocabulary,
};

use crate::config::RunConfig;
use crate::{Command, Mode};

const CACHE_LEDGER: &str = "cache_ledger.tsv";
const COMPARISON_LEDGER: &str = "comparison_ledger.tsv";
const REFERENCES: &str = "references.tsv";

/// A failed command: bad usage or configuration (exit 2), or a failure
/// while running (exit 1).
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn usage(e: anyhow::Error) -> Failure {
    Failure::Usage(e)
}

/// Opens an input that must already exist; a missing one is a usage error.
fn open_input(path: &Path, what: &str) -> Result<BufReader<File>> {
    if !path.is_file() {
        return Err(usage(anyhow!("{what} not found: {}", path.display())));
    }
    let f = File::open(path).with_context(|| format!("cannot open {what} {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn run(config: Option<&Path>, command: Command) -> Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    match command {
        Command::TrainRnnlm => train_rnnlm(&cfg),
        Command::TrainNgram => train_ngram(&cfg),
        Command::GenLattices => gen_lattices(&cfg),
        Command::Decode {
            mode,
            beam,
            no_cache,
            lattices,
        } => {
            cfg.beam = beam.unwrap_or(cfg.beam);
            decode(&cfg, mode, !no_cache, &lattices)
        }
        Command::Bench { beam } => {
            cfg.beam = beam.unwrap_or(cfg.beam);
            bench(&cfg)
        }
        Command::Report => report(&cfg),
    }
}

fn print_preamble(cfg: &RunConfig) {
    for line in cfg.echo() {
        println!("# {line}");
    }
}

/// Builds the vocabulary from the training corpus, writes it, and returns
/// it with the tokenized corpus and validation set.
fn corpus_and_vocab(cfg: &RunConfig) -> Result<(Vocabulary, Vec<Sentence>, Option<Vec<Sentence>>)> {
    let path = cfg
        .corpus
        .as_ref()
        .map(|p| cfg.resolve(p))
        .ok_or_else(|| usage(anyhow!("`corpus` is not set")))?;
    let vocab = Vocabulary::build(open_input(&path, "corpus")?, cfg.min_count)
        .with_context(|| format!("reading corpus {}", path.display()))?;
    let corpus = vocab.read_corpus(open_input(&path, "corpus")?)?;
    let valid = match &cfg.valid_corpus {
        Some(p) => Some(vocab.read_corpus(open_input(&cfg.resolve(p), "validation corpus")?)?),
        None => None,
    };
    let vocab_path = cfg.resolve(&cfg.vocab);
    let mut out = create_output(&vocab_path)?;
    vocab.write(&mut out)?;
    out.flush()?;
    Ok((vocab, corpus, valid))
}

fn load_vocab(cfg: &RunConfig) -> Result<(Vocabulary, HuffmanTree)> {
    let path = cfg.resolve(&cfg.vocab);
    let vocab = Vocabulary::read(open_input(&path, "vocabulary")?)
        .with_context(|| format!("reading vocabulary {}", path.display()))?;
    let tree = HuffmanTree::build(&vocab)?;
    Ok((vocab, tree))
}

fn load_rnnlm(cfg: &RunConfig, vocab: &Vocabulary) -> Result<RnnlmModel> {
    let path = cfg.resolve(&cfg.rnnlm);
    let model = read_model(open_input(&path, "RNNLM model")?)
        .with_context(|| format!("reading RNNLM model {}", path.display()))?;
    if model.vocab_size() != vocab.len() {
        return Err(usage(anyhow!(
            "RNNLM model {} has {} words but the vocabulary has {}",
            path.display(),
            model.vocab_size(),
            vocab.len()
        )));
    }
    Ok(model)
}

fn load_arpa(path: &Path, vocab: &Vocabulary, what: &str) -> Result<NgramModel> {
    Ok(read_arpa(open_input(path, what)?, vocab).with_context(|| format!("reading {what} {}", path.display()))?)
}

fn train_rnnlm(cfg: &RunConfig) -> Result<()> {
    let (vocab, corpus, valid) = corpus_and_vocab(cfg)?;
    let tree = HuffmanTree::build(&vocab)?;
    let mut model = RnnlmModel::new(&tree, &cfg.rnnlm_config())?;
    let log = model.train(
        &tree,
        &corpus,
        vocab.sentence_end_id(),
        &cfg.train_config(),
        valid.as_deref(),
    )?;
    let path = cfg.resolve(&cfg.rnnlm);
    let mut out = create_output(&path)?;
    write_model(&model, &mut out)?;
    out.flush()?;

    print_preamble(cfg);
    println!("epoch\ttrain_loss\ttrain_perplexity\tvalid_perplexity");
    for e in &log.epochs {
        let valid = e
            .valid_perplexity
            .map(|p| format!("{p:.4}"))
            .unwrap_or_else(|| "-".into());
        println!("{}\t{:.6}\t{:.4}\t{valid}", e.epoch, e.train_loss, e.train_perplexity);
    }
    eprintln!(
        "wrote {} ({} words, H = {})",
        path.display(),
        vocab.len(),
        model.hidden_size()
    );
    Ok(())
}

fn train_ngram(cfg: &RunConfig) -> Result<()> {
    let (vocab, corpus, valid) = corpus_and_vocab(cfg)?;
    print_preamble(cfg);
    println!("model\torder\tpath\ttrain_perplexity\tvalid_perplexity");
    let jobs = [
        ("rescoring", cfg.ngram_order, cfg.smoothing, &cfg.ngram),
        ("lattice", cfg.lattice_lm_order, Smoothing::KneserNey, &cfg.lattice_lm),
    ];
    for (name, order, smoothing, path) in jobs {
        let model = NgramModel::train(&corpus, &vocab, order, smoothing)?;
        let path = cfg.resolve(path);
        let mut out = create_output(&path)?;
        write_arpa(&model, &vocab, &mut out)?;
        out.flush()?;
        let valid = match &valid {
            Some(v) => format!("{:.4}", model.perplexity(v)?),
            None => "-".into(),
        };
        println!(
            "{name}\t{order}\t{}\t{:.4}\t{valid}",
            path.display(),
            model.perplexity(&corpus)?
        );
    }
    Ok(())
}

fn gen_lattices(cfg: &RunConfig) -> Result<()> {
    let (vocab, _) = load_vocab(cfg)?;
    let small = load_arpa(&cfg.resolve(&cfg.lattice_lm), &vocab, "lattice LM")?;
    let refs_path = cfg
        .references
        .as_ref()
        .or(cfg.corpus.as_ref())
        .map(|p| cfg.resolve(p))
        .ok_or_else(|| usage(anyhow!("neither `references` nor `corpus` is set")))?;
    let references = vocab.read_corpus(open_input(&refs_path, "references")?)?;
    let utterances = make_utterances(&references, &vocab, &small, &cfg.lattice, cfg.seed)?;
    if utterances.is_empty() {
        return Err(usage(anyhow!("no non-empty references in {}", refs_path.display())));
    }
    let dir = cfg.resolve(&cfg.lattices);
    let mut refs_out = create_output(&dir.join(REFERENCES))?;
    print_preamble(cfg);
    println!("utterance\tnodes\tarcs\tpaths");
    for u in &utterances {
        let mut out = create_output(&dir.join(format!("{}.lat", u.id)))?;
        u.lattice.write(&mut out)?;
        out.flush()?;
        writeln!(refs_out, "{}\t{}", u.id, vocab.render(&u.reference))?;
        println!(
            "{}\t{}\t{}\t{}",
            u.id,
            u.lattice.num_nodes(),
            u.lattice.arcs().len(),
            u.lattice.path_count()
        );
    }
    refs_out.flush()?;
    eprintln!("wrote {} lattices to {}", utterances.len(), dir.display());
    Ok(())
}

fn read_lattice(path: &Path) -> Result<Lattice> {
    let input = open_input(path, "lattice")?;
    Ok(Lattice::read(input).with_context(|| format!("lattice {}", path.display()))?)
}

fn utterance_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn lattice_files(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.resolve(&cfg.lattices);
    let entries = fs::read_dir(&dir).map_err(|e| usage(anyhow!("lattice directory {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "lat") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(usage(anyhow!("no *.lat files in {}", dir.display())));
    }
    Ok(files)
}

fn decode(cfg: &RunConfig, mode: Mode, cache_on: bool, files: &[PathBuf]) -> Result<()> {
    let files = if files.is_empty() {
        lattice_files(cfg)?
    } else {
        files.to_vec()
    };
    let (vocab, tree) = load_vocab(cfg)?;
    let model = load_rnnlm(cfg, &vocab)?;
    let ngram = match mode {
        Mode::TwopassHybrid => Some(load_arpa(&cfg.resolve(&cfg.ngram), &vocab, "n-gram model")?),
        _ => None,
    };
    let cache = if cache_on {
        RescoreCache::new()
    } else {
        RescoreCache::disabled()
    };
    let mut stack = RescoreStack::new(RnnlmRescorer::new(&model, &tree, cache), cfg.rnn_bits);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut total = 0.0;
    for path in &files {
        let lattice = read_lattice(path)?;
        let best = match mode {
            Mode::Onthefly => {
                let r = rescore_onthefly(&lattice, &mut stack, cfg.lm_weight, cfg.beam.0)?;
                stack.reset_utterance(cfg.retain_across_utterances);
                r.best
            }
            Mode::TwopassRnnlm | Mode::TwopassHybrid => {
                let hyps = nbest(&lattice, cfg.nbest_n, cfg.lm_weight)?;
                let two_pass = match &ngram {
                    Some(ngram) => TwoPassMode::Hybrid {
                        ngram,
                        interp_weight: cfg.interp_weight,
                    },
                    None => TwoPassMode::Rnnlm,
                };
                rescore_twopass(&hyps, two_pass, &model, &tree)?
            }
        };
        total += best.combined_score;
        writeln!(
            out,
            "{}\t{}\t{:.6}",
            utterance_id(path),
            vocab.render(&best.words),
            best.combined_score
        )?;
    }
    let mode_name = match mode {
        Mode::Onthefly => "onthefly",
        Mode::TwopassRnnlm => "twopass-rnnlm",
        Mode::TwopassHybrid => "twopass-hybrid",
    };
    writeln!(
        out,
        "# mode={mode_name} utterances={} beam={} nbest_n={} lm_weight={}",
        files.len(),
        cfg.beam,
        cfg.nbest_n,
        cfg.lm_weight
    )?;
    writeln!(out, "# total_score={total:.6}")?;
    if mode == Mode::Onthefly {
        let ledger = stack.ledger;
        let ratio = reduction_ratio(&ledger, ledger.context_bytes)
            .map(|r| format!("{r}"))
            .unwrap_or_else(|_| "-".into());
        writeln!(
            out,
            "# cache={} {}",
            if cache_on { "on" } else { "off" },
            stack.rescorer.cache.cumulative_stats()
        )?;
        writeln!(
            out,
            "# requests={} bytes_indexed={} bytes_baseline={} ratio={ratio}",
            ledger.requests, ledger.bytes_indexed, ledger.bytes_full_baseline
        )?;
    }
    Ok(())
}

fn load_utterances(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let dir = cfg.resolve(&cfg.lattices);
    let refs = open_input(&dir.join(REFERENCES), "reference list")?;
    let mut out = Vec::new();
    for line in refs.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, words) = line.split_once('\t').unwrap_or((line.as_str(), ""));
        out.push(Utterance {
            id: id.to_string(),
            reference: vocab.tokenize(words),
            lattice: read_lattice(&dir.join(format!("{id}.lat")))?,
        });
    }
    if out.is_empty() {
        return Err(usage(anyhow!(
            "no utterances listed in {}",
            dir.join(REFERENCES).display()
        )));
    }
    Ok(out)
}

fn bench(cfg: &RunConfig) -> Result<()> {
    let (vocab, tree) = load_vocab(cfg)?;
    let rnnlm = load_rnnlm(cfg, &vocab)?;
    let ngram = load_arpa(&cfg.resolve(&cfg.ngram), &vocab, "n-gram model")?;
    let utterances = load_utterances(cfg, &vocab)?;
    let models = BenchModels {
        rnnlm: &rnnlm,
        tree: &tree,
        ngram: &ngram,
    };
    let bench_cfg = cfg.bench_config();
    let cache_ledger = run_sweep(models, &utterances, &bench_cfg)?;
    let comparison = run_comparison(models, &utterances, &bench_cfg)?;

    let dir = cfg.resolve(&cfg.output);
    let pre = cfg.echo();
    let mut out = create_output(&dir.join(CACHE_LEDGER))?;
    write_cache_ledger(&mut out, &pre, &cache_ledger)?;
    out.flush()?;
    let mut out = create_output(&dir.join(COMPARISON_LEDGER))?;
    write_comparison_ledger(&mut out, &pre, &comparison)?;
    out.flush()?;
    report(cfg)
}

/// The `#` lines at the top of a report.
fn read_preamble(path: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in open_input(path, "ledger")?.lines() {
        let line = line?;
        match line.strip_prefix("# ") {
            Some(rest) => out.push(rest.to_string()),
            None => break,
        }
    }
    Ok(out)
}

fn write_table(path: &Path, preamble: &[String], header: &str, rows: Vec<String>) -> Result<()> {
    let mut out = create_output(path)?;
    write_tsv(&mut out, preamble, header, rows.iter().cloned())?;
    out.flush()?;
    println!("## {}", path.file_name().unwrap_or_default().to_string_lossy());
    println!("{header}");
    for r in rows {
        println!("{r}");
    }
    Ok(())
}

fn report(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.resolve(&cfg.output);
    let cache_path = dir.join(CACHE_LEDGER);
    let comparison_path = dir.join(COMPARISON_LEDGER);
    let cache_ledger = read_cache_ledger(open_input(&cache_path, "cache ledger")?)
        .with_context(|| format!("reading {}", cache_path.display()))?;
    let comparison = read_comparison_ledger(open_input(&comparison_path, "comparison ledger")?)
        .with_context(|| format!("reading {}", comparison_path.display()))?;
    let pre = read_preamble(&cache_path)?;

    // the unbounded retained run is a reference point, not a swept capacity
    let (reference, swept): (Vec<_>, Vec<_>) = sweep_table(&cache_ledger)
        .into_iter()
        .partition(|r| r.capacity_kb == 0 && r.retain);
    let sweep = swept.iter().map(|r| r.fields()).collect();
    write_table(&dir.join("sweep.tsv"), &pre, SWEEP_HEADER, sweep)?;
    let retention = swept
        .iter()
        .filter(|r| r.capacity_kb == 0)
        .chain(&reference)
        .map(|r| r.fields())
        .collect();
    write_table(&dir.join("retention.tsv"), &pre, SWEEP_HEADER, retention)?;
    let transfer = transfer_table(&cache_ledger).into_iter().map(|r| r.fields()).collect();
    write_table(&dir.join("transfer.tsv"), &pre, TRANSFER_HEADER, transfer)?;
    let systems = comparison_table(&comparison).iter().map(|r| r.fields()).collect();
    write_table(&dir.join("comparison.tsv"), &pre, COMPARISON_HEADER, systems)?;
    Ok(())
}
