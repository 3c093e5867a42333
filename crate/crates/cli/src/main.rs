use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};
use rand::Rng;

use hicl::bench::{cost_model, wallclock_bench};
use hicl::encoder::{init_params, EncoderConfig};
use hicl::eval::{evaluate, synthetic_splits, StsExample};
use hicl::hierarchy::PoolingMode;
use hicl::losses::{LossConfig, Relationship, Variant};
use hicl::numerics::{Purpose, RngStream};
use hicl::textproc::{length_stats, load_corpus, load_sts, read_lines, TokenSeq, Vocab};
use hicl::training::{load_checkpoint, save_checkpoint, train, OptimizerKind, PositiveStrategy, TrainConfig};
use hicl::HiclError;

const SUBCOMMANDS: [(&str, &str); 5] = [
    ("synth", "Write a synthetic training corpus and dev/test similarity files"),
    ("train", "Train an encoder and write the best checkpoint, log and vocab"),
    ("eval", "Score a similarity file with a checkpoint"),
    ("bench", "Compare full and hierarchical encoding cost"),
    ("stats", "Length buckets and segment counts of a corpus"),
];

/// Every config key with its default. An empty default means unset.
const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "42", "master seed"),
    ("steps", "1000", "training steps"),
    ("batch_size", "64", "sequences per step"),
    ("learning_rate", "0.001", "optimizer step size"),
    ("optimizer", "adam", "adam | sgd"),
    ("eval_every", "125", "steps between dev evaluations"),
    ("slice_len", "32", "maximum tokens per segment"),
    ("pooling", "weighted", "weighted | unweighted"),
    ("tau", "0.05", "contrastive temperature"),
    ("alpha", "0.05", "local loss weight"),
    ("beta", "0", "entailment loss weight (hiclv2)"),
    ("relationship", "neither", "sibling segments: neither | negative | positive"),
    ("variant", "hicl", "hicl | hiclv2 | global_only | local_only"),
    ("positive", "dropout", "positive view: dropout | repetition"),
    ("repetition_rate", "0.25", "fraction of words duplicated"),
    ("queue_capacity", "0", "momentum queue rows, 0 disables"),
    ("dropout", "0.1", "dropout rate"),
    ("d_model", "64", "model width"),
    ("n_heads", "4", "attention heads"),
    ("n_layers", "2", "transformer layers"),
    ("vocab_limit", "30000", "maximum vocabulary size"),
    ("corpus", "", "training corpus, one sentence per line"),
    ("dev", "", "dev similarity file"),
    ("eval", "", "similarity file to score"),
    ("checkpoint", "model.ckpt", "checkpoint path"),
    ("vocab", "vocab.txt", "vocabulary path"),
    ("log", "train_log.tsv", "training log path"),
    ("out_dir", ".", "synth output directory"),
    ("pairs", "200", "synthetic training pairs"),
    ("dev_pairs", "200", "synthetic dev pairs"),
    ("test_pairs", "200", "synthetic test pairs"),
    ("synth_vocab", "200", "synthetic word types"),
    ("body_length", "24", "synthetic words per sentence"),
    ("seq_len", "256", "bench sequence length in tokens"),
    ("sequences", "8", "bench sequences"),
    ("repetitions", "5", "bench timing repetitions"),
    ("parallel", "false", "encode bench inputs in parallel"),
];

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    fn io(message: impl Display) -> Self {
        Self { code: 3, message: message.to_string() }
    }
}

impl From<HiclError> for Failure {
    fn from(e: HiclError) -> Self {
        let code = match &e {
            _ if e.is_numeric() => 4,
            HiclError::Io(_) | HiclError::Parse { .. } | HiclError::Checkpoint(_) => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn cli() -> Command {
    let mut root = Command::new("hicl")
        .about("Hierarchical contrastive sentence encoders")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config").long("config").short('c').value_name("FILE").help("flat `key = value` config file"),
        );
        for &(key, default, help) in KEYS {
            let help = if default.is_empty() { help.to_string() } else { format!("{help} [default: {default}]") };
            sub = sub.arg(Arg::new(key).long(key).value_name("VALUE").help(help).action(ArgAction::Set));
        }
        root = root.subcommand(sub);
    }
    root
}

/// Parse a flat config file: `key = value` lines, `#` starts a comment.
fn parse_config(text: &str) -> Outcome<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("config line {}: expected `key = value`", n + 1)))?;
        let key = key.trim();
        if !KEYS.iter().any(|k| k.0 == key) {
            return Err(Failure::config(format!("config line {}: unknown key {key:?}", n + 1)));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

/// Effective settings: defaults, then the config file, then flags.
struct Settings(BTreeMap<String, String>);

impl Settings {
    fn resolve(matches: &ArgMatches) -> Outcome<Self> {
        let mut map: BTreeMap<String, String> = KEYS.iter().map(|&(k, d, _)| (k.to_string(), d.to_string())).collect();
        if let Some(path) = matches.get_one::<String>("config") {
            let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("{path}: {e}")))?;
            map.extend(parse_config(&text)?);
        }
        for &(key, _, _) in KEYS {
            if let Some(v) = matches.get_one::<String>(key) {
                map.insert(key.to_string(), v.clone());
            }
        }
        Ok(Self(map))
    }

    fn raw(&self, key: &str) -> &str {
        &self.0[key]
    }

    fn get<T: FromStr>(&self, key: &str) -> Outcome<T>
    where
        T::Err: Display,
    {
        self.raw(key).parse().map_err(|e| Failure::config(format!("{key} = {:?}: {e}", self.raw(key))))
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> Outcome<T> {
        let v = self.raw(key);
        options.iter().find(|o| o.0 == v).map(|o| o.1).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|o| o.0).collect();
            Failure::config(format!("{key} = {v:?}: expected one of {}", names.join(", ")))
        })
    }

    /// A path that must name an existing file.
    fn input(&self, key: &str) -> Outcome<PathBuf> {
        let v = self.raw(key);
        if v.is_empty() {
            return Err(Failure::config(format!("missing required setting `{key}`")));
        }
        let path = PathBuf::from(v);
        if !path.is_file() {
            return Err(Failure::io(format!("{key}: {v}: no such file")));
        }
        Ok(path)
    }

    fn output(&self, key: &str) -> Outcome<PathBuf> {
        match self.raw(key) {
            "" => Err(Failure::config(format!("missing required setting `{key}`"))),
            v => Ok(PathBuf::from(v)),
        }
    }

    fn echo(&self) -> String {
        self.0.iter().filter(|(_, v)| !v.is_empty()).map(|(k, v)| format!("# {k} = {v}\n")).collect()
    }

    fn pooling(&self) -> Outcome<PoolingMode> {
        self.choice("pooling", &[("weighted", PoolingMode::Weighted), ("unweighted", PoolingMode::Unweighted)])
    }

    fn train_config(&self, vocab_size: usize) -> Outcome<TrainConfig> {
        let encoder = EncoderConfig::with_dims(vocab_size, self.get("d_model")?, self.get("n_heads")?, self.get("n_layers")?);
        let loss = LossConfig {
            tau: self.get("tau")?,
            alpha: self.get("alpha")?,
            beta: self.get("beta")?,
            relationship: self.choice(
                "relationship",
                &[("neither", Relationship::Neither), ("negative", Relationship::Negative), ("positive", Relationship::Positive)],
            )?,
            variant: self.choice(
                "variant",
                &[
                    ("hicl", Variant::Hicl),
                    ("hiclv2", Variant::HiclV2),
                    ("global_only", Variant::GlobalOnly),
                    ("local_only", Variant::LocalOnly),
                ],
            )?,
        };
        let queue: usize = self.get("queue_capacity")?;
        let cfg = TrainConfig {
            encoder,
            batch_size: self.get("batch_size")?,
            steps: self.get("steps")?,
            learning_rate: self.get("learning_rate")?,
            optimizer: self.choice("optimizer", &[("adam", OptimizerKind::Adam), ("sgd", OptimizerKind::Sgd)])?,
            eval_every: self.get("eval_every")?,
            slice_len: self.get("slice_len")?,
            pooling: self.pooling()?,
            loss,
            positive: self.choice(
                "positive",
                &[("dropout", PositiveStrategy::Dropout), ("repetition", PositiveStrategy::Repetition)],
            )?,
            repetition_rate: self.get("repetition_rate")?,
            queue_capacity: (queue > 0).then_some(queue),
            dropout: self.get("dropout")?,
            seed: self.get("seed")?,
        };
        cfg.validate().map_err(Failure::config)?;
        Ok(cfg)
    }
}

fn write(path: &Path, body: &str) -> Outcome {
    fs::write(path, body).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn sts_examples(path: &Path, vocab: &Vocab) -> Outcome<Vec<StsExample>> {
    Ok(StsExample::from_tuples(load_sts(path, vocab)?))
}

fn synth(s: &Settings) -> Outcome {
    let pairs = (s.get("pairs")?, s.get("dev_pairs")?, s.get("test_pairs")?);
    let splits = synthetic_splits(s.get("seed")?, pairs, s.get("synth_vocab")?, s.get("body_length")?)
        .map_err(Failure::config)?;
    let dir = s.output("out_dir")?;
    fs::create_dir_all(&dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    write(&dir.join("train.txt"), &splits.train.corpus.iter().map(|l| format!("{l}\n")).collect::<String>())?;
    write(&dir.join("dev.tsv"), &splits.dev.to_sts_tsv())?;
    write(&dir.join("test.tsv"), &splits.test.to_sts_tsv())?;
    println!(
        "wrote {} training sentences, {} dev and {} test pairs to {}",
        splits.train.corpus.len(),
        splits.dev.pairs.len(),
        splits.test.pairs.len(),
        dir.display()
    );
    Ok(())
}

fn run_train(s: &Settings) -> Outcome {
    let (corpus_path, dev_path) = (s.input("corpus")?, s.input("dev")?);
    let lines = read_lines(&corpus_path)?;
    let vocab = Vocab::build(&lines, s.get("vocab_limit")?);
    let cfg = s.train_config(vocab.len())?;
    let corpus = load_corpus(&corpus_path, &vocab)?;
    let dev = sts_examples(&dev_path, &vocab)?;

    let (ckpt, log) = train(&cfg, &corpus, &dev)?;
    save_checkpoint(&s.output("checkpoint")?, &ckpt)?;
    vocab.save(&s.output("vocab")?)?;
    write(&s.output("log")?, &format!("{}{}", s.echo(), log.to_tsv()))?;
    match ckpt.dev_metric {
        Some(rho) => println!("best step {} dev spearman {rho:.4}", ckpt.step),
        None => println!("finished {} steps", ckpt.step),
    }
    Ok(())
}

fn run_eval(s: &Settings) -> Outcome {
    let (ckpt_path, vocab_path, eval_path) = (s.input("checkpoint")?, s.input("vocab")?, s.input("eval")?);
    let ckpt = load_checkpoint(&ckpt_path)?;
    let vocab = Vocab::load(&vocab_path)?;
    if vocab.len() != ckpt.params.config.vocab_size {
        return Err(Failure::config(format!(
            "vocab has {} entries but the checkpoint expects {}",
            vocab.len(),
            ckpt.params.config.vocab_size
        )));
    }
    let data = sts_examples(&eval_path, &vocab)?;
    let report = evaluate(&ckpt.params, &data, s.get("slice_len")?, s.pooling()?)?;
    print!("{}", report.to_tsv());
    Ok(())
}

fn bench(s: &Settings) -> Outcome {
    let (seq_len, slice_len): (usize, usize) = (s.get("seq_len")?, s.get("slice_len")?);
    if seq_len < 2 {
        return Err(Failure::config("seq_len must be at least 2"));
    }
    cost_model(seq_len, slice_len).map_err(Failure::config)?;
    let vocab_size = 1000;
    let seed = s.get("seed")?;
    let encoder = EncoderConfig::with_dims(vocab_size, s.get("d_model")?, s.get("n_heads")?, s.get("n_layers")?);
    let params = init_params(seed, encoder).map_err(Failure::config)?;
    let mut rng = RngStream::new(seed, Purpose::Data).fork(0);
    let corpus: Vec<TokenSeq> = (0..s.get::<usize>("sequences")?)
        .map(|_| {
            let body: Vec<usize> = (0..seq_len - 2).map(|_| rng.gen_range(5..vocab_size)).collect();
            TokenSeq::from_body(&body, 0)
        })
        .collect();
    let report = wallclock_bench(&params, &corpus, slice_len, s.get("repetitions")?, s.get("parallel")?)?;
    print!("{}\n{}", report.to_tsv(), report.to_kv());
    Ok(())
}

fn stats(s: &Settings) -> Outcome {
    let lines = read_lines(&s.input("corpus")?)?;
    let lengths = lines.iter().map(|l| l.split_whitespace().count() + 2);
    print!("{}", length_stats(lengths, s.get("slice_len")?)?.to_table());
    Ok(())
}

fn run(name: &str, matches: &ArgMatches) -> Outcome {
    let settings = Settings::resolve(matches)?;
    eprint!("{}", settings.echo());
    match name {
        "synth" => synth(&settings),
        "train" => run_train(&settings),
        "eval" => run_eval(&settings),
        "bench" => bench(&settings),
        "stats" => stats(&settings),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hicl {name}: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
