//! Flat `key = value` run configuration with `#` comments.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rnnlm_rescore::bench::BenchConfig;
use rnnlm_rescore::{LatticeGenConfig, RnnlmConfig, Smoothing, TrainConfig};

/// Search width of the on-the-fly decoder; `all` keeps every token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Beam(pub usize);

impl FromStr for Beam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(Beam(usize::MAX));
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("beam must be a positive integer or `all`, got {s:?}")),
            Ok(n) => Ok(Beam(n)),
        }
    }
}

impl Display for Beam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 == usize::MAX {
            write!(f, "all")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    base: PathBuf,
    pub corpus: Option<PathBuf>,
    pub valid_corpus: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub vocab: PathBuf,
    pub rnnlm: PathBuf,
    pub ngram: PathBuf,
    pub lattice_lm: PathBuf,
    pub lattices: PathBuf,
    pub output: PathBuf,

    pub min_count: u64,
    pub hidden_size: usize,
    pub maxent_order: usize,
    pub maxent_table_bits: u32,
    pub epochs: usize,
    pub learn_rate: f64,
    pub bptt_steps: usize,
    pub ngram_order: usize,
    pub smoothing: Smoothing,
    pub lattice_lm_order: usize,

    pub beam: Beam,
    pub nbest_n: usize,
    pub lm_weight: f64,
    pub interp_weight: f64,
    pub rnn_bits: u32,
    pub cache_capacity_kb: Vec<u64>,
    pub retain_across_utterances: bool,

    pub lattice: LatticeGenConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rnn = RnnlmConfig::default();
        let train = TrainConfig::default();
        let bench = BenchConfig::default();
        RunConfig {
            base: PathBuf::from("."),
            corpus: None,
            valid_corpus: None,
            references: None,
            vocab: "vocab.tsv".into(),
            rnnlm: "rnnlm.bin".into(),
            ngram: "ngram.arpa".into(),
            lattice_lm: "lattice_lm.arpa".into(),
            lattices: "lattices".into(),
            output: "reports".into(),
            min_count: 1,
            hidden_size: rnn.hidden_size,
            maxent_order: rnn.maxent_order,
            maxent_table_bits: rnn.maxent_table_bits,
            epochs: train.epochs,
            learn_rate: train.learn_rate,
            bptt_steps: train.bptt_steps,
            ngram_order: 3,
            smoothing: Smoothing::KneserNey,
            lattice_lm_order: 2,
            beam: Beam(bench.beam),
            nbest_n: bench.nbest_n,
            lm_weight: bench.lm_weight,
            interp_weight: bench.interp_weight,
            rnn_bits: bench.rnn_bits,
            cache_capacity_kb: bench.capacities_kb,
            retain_across_utterances: false,
            lattice: LatticeGenConfig {
                alignments: 3,
                ..Default::default()
            },
            seed: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_smoothing(value: &str) -> Result<Smoothing> {
    match value {
        "kn" | "kneser-ney" => Ok(Smoothing::KneserNey),
        _ => match value.strip_prefix("absolute:") {
            Some(d) => Ok(Smoothing::AbsoluteDiscount(parse("smoothing", d)?)),
            None => bail!("smoothing: expected `kn` or `absolute:<discount>`, got {value:?}"),
        },
    }
}

fn smoothing_text(s: Smoothing) -> String {
    match s {
        Smoothing::KneserNey => "kn".into(),
        Smoothing::AbsoluteDiscount(d) => format!("absolute:{d}"),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::parse_str(&text).with_context(|| format!("in config {}", path.display()))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let l = &mut self.lattice;
        match key {
            "corpus" => self.corpus = Some(value.into()),
            "valid_corpus" => self.valid_corpus = Some(value.into()),
            "references" => self.references = Some(value.into()),
            "vocab" => self.vocab = value.into(),
            "rnnlm" => self.rnnlm = value.into(),
            "ngram" => self.ngram = value.into(),
            "lattice_lm" => self.lattice_lm = value.into(),
            "lattices" => self.lattices = value.into(),
            "output" => self.output = value.into(),
            "min_count" => self.min_count = parse(key, value)?,
            "hidden_size" => self.hidden_size = parse(key, value)?,
            "maxent_order" => self.maxent_order = parse(key, value)?,
            "maxent_table_bits" => self.maxent_table_bits = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "learn_rate" => self.learn_rate = parse(key, value)?,
            "bptt_steps" => self.bptt_steps = parse(key, value)?,
            "ngram_order" => self.ngram_order = parse(key, value)?,
            "smoothing" => self.smoothing = parse_smoothing(value)?,
            "lattice_lm_order" => self.lattice_lm_order = parse(key, value)?,
            "beam" => self.beam = parse(key, value)?,
            "nbest_n" => self.nbest_n = parse(key, value)?,
            "lm_weight" => self.lm_weight = parse(key, value)?,
            "interp_weight" => self.interp_weight = parse(key, value)?,
            "rnn_bits" => self.rnn_bits = parse(key, value)?,
            "cache_capacity_kb" => {
                self.cache_capacity_kb = value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_>>()?
            }
            "retain_across_utterances" => self.retain_across_utterances = parse_bool(key, value)?,
            "confusion_breadth" => l.confusion_breadth = parse(key, value)?,
            "alignments" => l.alignments = parse(key, value)?,
            "arc_density" => l.arc_density = parse(key, value)?,
            "min_frames" => l.min_frames = parse(key, value)?,
            "max_frames" => l.max_frames = parse(key, value)?,
            "penalty_mean" => l.penalty_mean = parse(key, value)?,
            "penalty_std" => l.penalty_std = parse(key, value)?,
            "alignment_penalty" => l.alignment_penalty = parse(key, value)?,
            "arc_noise_std" => l.arc_noise_std = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.lattice;
        let checks: [(bool, &str); 15] = [
            (self.min_count >= 1, "min_count must be at least 1"),
            (self.hidden_size >= 1, "hidden_size must be at least 1"),
            (
                (1..=32).contains(&self.maxent_table_bits),
                "maxent_table_bits must be in 1..=32",
            ),
            (
                self.learn_rate.is_finite() && self.learn_rate >= 0.0,
                "learn_rate must be non-negative",
            ),
            (self.bptt_steps >= 1, "bptt_steps must be at least 1"),
            ((1..=5).contains(&self.ngram_order), "ngram_order must be in 1..=5"),
            (
                (1..=5).contains(&self.lattice_lm_order),
                "lattice_lm_order must be in 1..=5",
            ),
            (self.nbest_n >= 1, "nbest_n must be at least 1"),
            (self.lm_weight.is_finite(), "lm_weight must be finite"),
            (
                (0.0..=1.0).contains(&self.interp_weight),
                "interp_weight must be in [0, 1]",
            ),
            ((1..=63).contains(&self.rnn_bits), "rnn_bits must be in 1..=63"),
            (
                !self.cache_capacity_kb.is_empty(),
                "cache_capacity_kb needs at least one value",
            ),
            (
                l.confusion_breadth >= 1 && l.alignments >= 1,
                "confusion_breadth and alignments must be at least 1",
            ),
            ((0.0..=1.0).contains(&l.arc_density), "arc_density must be in [0, 1]"),
            (
                l.min_frames > l.alignments as u32 && l.max_frames >= l.min_frames,
                "need alignments < min_frames <= max_frames",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                bail!("{msg}");
            }
        }
        if let Smoothing::AbsoluteDiscount(d) = self.smoothing {
            if !(0.0..=1.0).contains(&d) {
                bail!("absolute discount must be in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn rnnlm_config(&self) -> RnnlmConfig {
        RnnlmConfig {
            hidden_size: self.hidden_size,
            maxent_order: self.maxent_order,
            maxent_table_bits: self.maxent_table_bits,
            init_seed: self.seed,
            ..Default::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learn_rate: self.learn_rate,
            bptt_steps: self.bptt_steps,
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        BenchConfig {
            capacities_kb: self.cache_capacity_kb.clone(),
            beam: self.beam.0,
            nbest_n: self.nbest_n,
            lm_weight: self.lm_weight,
            interp_weight: self.interp_weight,
            rnn_bits: self.rnn_bits,
        }
    }

    /// Every setting as `key=value`, in a fixed order, for report preambles.
    pub fn echo(&self) -> Vec<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let l = &self.lattice;
        let capacities: Vec<String> = self.cache_capacity_kb.iter().map(u64::to_string).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("corpus", path(&self.corpus)),
            ("valid_corpus", path(&self.valid_corpus)),
            ("references", path(&self.references)),
            ("vocab", self.vocab.display().to_string()),
            ("rnnlm", self.rnnlm.display().to_string()),
            ("ngram", self.ngram.display().to_string()),
            ("lattice_lm", self.lattice_lm.display().to_string()),
            ("lattices", self.lattices.display().to_string()),
            ("output", self.output.display().to_string()),
            ("min_count", self.min_count.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("maxent_order", self.maxent_order.to_string()),
            ("maxent_table_bits", self.maxent_table_bits.to_string()),
            ("epochs", self.epochs.to_string()),
            ("learn_rate", self.learn_rate.to_string()),
            ("bptt_steps", self.bptt_steps.to_string()),
            ("ngram_order", self.ngram_order.to_string()),
            ("smoothing", smoothing_text(self.smoothing)),
            ("lattice_lm_order", self.lattice_lm_order.to_string()),
            ("beam", self.beam.to_string()),
            ("nbest_n", self.nbest_n.to_string()),
            ("lm_weight", self.lm_weight.to_string()),
            ("interp_weight", self.interp_weight.to_string()),
            ("rnn_bits", self.rnn_bits.to_string()),
            ("cache_capacity_kb", capacities.join(",")),
            ("retain_across_utterances", self.retain_across_utterances.to_string()),
            ("confusion_breadth", l.confusion_breadth.to_string()),
            ("alignments", l.alignments.to_string()),
            ("arc_density", l.arc_density.to_string()),
            ("min_frames", l.min_frames.to_string()),
            ("max_frames", l.max_frames.to_string()),
            ("penalty_mean", l.penalty_mean.to_string()),
            ("penalty_std", l.penalty_std.to_string()),
            ("alignment_penalty", l.alignment_penalty.to_string()),
            ("arc_noise_std", l.arc_noise_std.to_string()),
            ("seed", self.seed.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k}={v}")).collect()
    }
}
