use std::fmt;
use std::path::Path;

use bon_core::corpus::{corrupt_targets, generate_task, read_parallel, write_corpus};
use bon_core::eval::{
    corpus_bleu, correlation_study_with, length_bucket_bleu, removed_token_report,
    split_short_long, CorrelationReport,
};
use bon_core::gradcheck::{
    check_model_gradient, check_table_gradient, random_table, GradcheckReport,
};
use bon_core::model::{train as train_model, StepRecord};
use bon_core::probmodel::ORACLE_LIMIT;
use bon_core::{
    count_ngrams, expected_counts, expected_ngram_count, oracle_expected_count, Checkpoint, Error,
    LossSpec, ModelDims, Ngram, ParallelPair, Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Settings, TaskSettings};
use crate::output::{ensure_dir, sha256_file, write_csv, write_snapshot, Sidecar, Summary};

/// Largest vocabulary accepted by `oracle-check`.
pub const ORACLE_MAX_VOCAB: usize = 6;
/// Tolerance of `oracle-check`, both per n-gram and for the sum rule.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or inputs. Exit code 2.
    Usage(String),
    /// Non-finite loss during training. Exit code 3.
    Numerical(String),
    /// A check ran and did not pass. Exit code 1.
    Check(String),
    /// Filesystem trouble. Exit code 1.
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Check(_) | Failure::Io(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) | Failure::Check(m) | Failure::Io(m) => {
                f.write_str(m)
            }
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NumericalFailure { .. } => Failure::Numerical(e.to_string()),
            Error::Io(_) => Failure::Io(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn setup_threads(s: &Settings) -> CmdResult {
    let threads = s.threads()?;
    if threads > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(())
}

fn synthetic_corpus(task: &TaskSettings) -> Result<Vec<ParallelPair>, Failure> {
    let pairs = generate_task(&task.spec)?;
    if task.noise > 0.0 {
        let noise_seed = task.spec.seed.wrapping_add(1);
        return Ok(corrupt_targets(
            &pairs,
            task.noise,
            task.spec.vocab_size,
            noise_seed,
        )?);
    }
    Ok(pairs)
}

/// The corpus selected by the `[data]` and `[task]` settings, with the
/// total vocabulary size.
fn load_corpus(s: &Settings) -> Result<(Vec<ParallelPair>, usize), Failure> {
    match s.path("data", "dir") {
        Some(dir) => {
            let split = s.raw("data", "split");
            let vocab_path = dir.join("vocab.txt");
            let (src, tgt) = (
                dir.join(format!("{split}.src")),
                dir.join(format!("{split}.tgt")),
            );
            for p in [&vocab_path, &src, &tgt] {
                if !p.exists() {
                    return Err(Failure::Usage(format!(
                        "missing corpus file {}",
                        p.display()
                    )));
                }
            }
            let vocab = Vocabulary::load(&vocab_path)?;
            let pairs = read_parallel(&src, &tgt, &vocab)?;
            Ok((pairs, vocab.len()))
        }
        None => {
            let task = s.task()?;
            Ok((synthetic_corpus(&task)?, task.spec.total_vocab()))
        }
    }
}

fn load_checkpoint(path: Option<&Path>) -> Result<(Checkpoint, String), Failure> {
    let path =
        path.ok_or_else(|| Failure::Usage("a checkpoint is required (--checkpoint)".into()))?;
    if !path.is_file() {
        return Err(Failure::Usage(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    Ok((Checkpoint::load(path)?, sha256_file(path)?))
}

pub fn gen_data(s: &Settings) -> CmdResult {
    let task = s.task()?;
    let pairs = synthetic_corpus(&task)?;
    let out = s.out_dir();
    ensure_dir(&out)?;
    let split = s.raw("data", "split");
    let vocab = task.spec.vocabulary();
    vocab.save(out.join("vocab.txt"))?;
    write_corpus(
        out.join(format!("{split}.src")),
        &vocab,
        pairs.iter().map(|p| &p.source),
    )?;
    write_corpus(
        out.join(format!("{split}.tgt")),
        &vocab,
        pairs.iter().map(|p| &p.target),
    )?;
    write_snapshot(&out, &format!("gen-data-{split}.ini"), s)?;

    Summary::new("gen-data")
        .field("status", "ok")
        .field("split", split)
        .field("pairs", pairs.len())
        .field("vocab", vocab.len())
        .field(
            "target_tokens",
            pairs.iter().map(|p| p.target.len()).sum::<usize>(),
        )
        .field("out", out.display())
        .print();
    Ok(())
}

fn tail_mean(log: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> f64 {
    let tail = &log[log.len().saturating_sub(50)..];
    tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
}

pub fn train(s: &Settings) -> CmdResult {
    setup_threads(s)?;
    let cfg = s.train_config()?;
    let init = match s.path("train", "init") {
        Some(p) => Some(load_checkpoint(Some(&p))?.0),
        None => None,
    };
    let (corpus, vocab) = load_corpus(s)?;
    let dims = s.dims(vocab)?;
    let outcome = train_model(&cfg, &dims, &corpus, init)?;

    let out = s.out_dir();
    ensure_dir(&out)?;
    let ckpt_path = out.join("model.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;
    let sha = sha256_file(&ckpt_path)?;
    write_csv(&out.join("train_log.csv"), &outcome.log)?;
    write_snapshot(&out, "train.ini", s)?;
    let mut meta = Sidecar::new("train", s)?;
    meta.insert("checkpoint", "model.ckpt");
    meta.insert("checkpoint_sha256", sha.clone());
    meta.insert("schedule", cfg.schedule.to_string());
    meta.insert("total_steps", outcome.checkpoint.header.step);
    meta.insert("parameters", outcome.checkpoint.model.parameter_count());
    meta.insert("degenerate_sentences", outcome.degenerate);
    meta.write(&out.join("train.meta.json"))?;

    Summary::new("train")
        .field("status", "ok")
        .field("schedule", cfg.schedule)
        .field("steps", outcome.checkpoint.header.step)
        .float("ce_loss", tail_mean(&outcome.log, |r| r.ce_loss))
        .float("bon_loss", tail_mean(&outcome.log, |r| r.bon_loss))
        .field("checkpoint", ckpt_path.display())
        .field("sha256", sha)
        .print();
    Ok(())
}

#[derive(Serialize)]
struct BleuRow {
    sentences: usize,
    bleu: f64,
    p1: f64,
    p2: f64,
    p3: f64,
    p4: f64,
    brevity_penalty: f64,
    hyp_len: usize,
    ref_len: usize,
}

pub fn eval(s: &Settings) -> CmdResult {
    setup_threads(s)?;
    let (ckpt, sha) = load_checkpoint(s.path("eval", "checkpoint").as_deref())?;
    let edges = s.bucket_edges()?;
    let (corpus, _) = load_corpus(s)?;

    let score = corpus_bleu(&ckpt, &corpus)?;
    let removal = removed_token_report(&ckpt, &corpus)?;
    let buckets = length_bucket_bleu(&ckpt, &corpus, &edges)?;

    let out = s.out_dir();
    ensure_dir(&out)?;
    let [p1, p2, p3, p4] = score.precisions;
    let row = BleuRow {
        sentences: corpus.len(),
        bleu: score.value,
        p1,
        p2,
        p3,
        p4,
        brevity_penalty: score.brevity_penalty,
        hyp_len: score.hyp_len,
        ref_len: score.ref_len,
    };
    write_csv(&out.join("bleu.csv"), &[row])?;
    write_csv(&out.join("removed_tokens.csv"), &removal)?;
    write_csv(&out.join("length_buckets.csv"), &buckets)?;
    write_snapshot(&out, "eval.ini", s)?;
    let mut meta = Sidecar::new("eval", s)?;
    meta.insert("checkpoint_sha256", sha);
    meta.insert(
        "bleu",
        "corpus BLEU-4 after collapsing adjacent repeats, unsmoothed",
    );
    meta.insert("bucket_edges", edges.clone());
    meta.write(&out.join("eval.meta.json"))?;

    let all = removal
        .iter()
        .find(|r| r.bucket == "all")
        .expect("report has an all row");
    Summary::new("eval")
        .field("status", "ok")
        .field("sentences", corpus.len())
        .float("bleu", score.value)
        .float("removed_pct", all.removed_pct)
        .field("removed", all.removed)
        .field("buckets", buckets.len())
        .print();
    Ok(())
}

#[derive(Serialize)]
struct CorrelationRow<'a> {
    part: &'a str,
    loss: String,
    pooling: String,
    subsets: usize,
    subset_size: usize,
    r: Option<f64>,
    abs_r: Option<f64>,
}

#[derive(Serialize)]
struct PointRow<'a> {
    part: &'a str,
    loss: String,
    subset: usize,
    loss_value: f64,
    bleu: f64,
}

pub fn correlate(s: &Settings, split_length: bool) -> CmdResult {
    setup_threads(s)?;
    let (ckpt, sha) = load_checkpoint(s.path("eval", "checkpoint").as_deref())?;
    let losses = s.losses()?;
    let pooling = s.pooling()?;
    let subsets: usize = s.get("eval", "subsets")?;
    let size: usize = s.get("eval", "subset_size")?;
    let seed = s.seed()?;
    let (corpus, _) = load_corpus(s)?;

    let parts: Vec<(&str, Vec<ParallelPair>, usize)> = if split_length {
        if corpus.len() < 2 {
            return Err(Failure::Usage("splitting needs at least two pairs".into()));
        }
        let (short, long) = split_short_long(&corpus);
        // Each half holds as many subsets as fit, up to the requested count.
        let fit = |half: &[ParallelPair]| subsets.min(half.len() / size.max(1));
        let (fs, fl) = (fit(&short), fit(&long));
        vec![("short", short, fs), ("long", long, fl)]
    } else {
        vec![("all", corpus, subsets)]
    };

    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut summary = Summary::new("correlate").field("status", "ok");
    for (part, pairs, count) in &parts {
        let reports: Vec<CorrelationReport> =
            correlation_study_with(&ckpt, pairs, &losses, *count, size, seed, pooling)?;
        for rep in reports {
            let name = rep.loss.to_string();
            summary = match rep.r {
                Some(r) => summary.float(&format!("r_{part}_{name}"), r),
                None => summary.field(&format!("r_{part}_{name}"), "na"),
            };
            for p in &rep.points {
                points.push(PointRow {
                    part,
                    loss: name.clone(),
                    subset: p.subset,
                    loss_value: p.loss,
                    bleu: p.bleu,
                });
            }
            rows.push(CorrelationRow {
                part,
                loss: name,
                pooling: rep.pooling.to_string(),
                subsets: rep.subsets,
                subset_size: rep.subset_size,
                r: rep.r,
                abs_r: rep.r.map(f64::abs),
            });
        }
    }

    let out = s.out_dir();
    ensure_dir(&out)?;
    write_csv(&out.join("correlation.csv"), &rows)?;
    write_csv(&out.join("correlation_points.csv"), &points)?;
    write_snapshot(&out, "correlate.ini", s)?;
    let mut meta = Sidecar::new("correlate", s)?;
    meta.insert("checkpoint_sha256", sha);
    meta.insert(
        "subset_bleu",
        "BLEU-4 with add-one smoothing for orders 2-4, after collapsing adjacent repeats",
    );
    meta.insert("split_length", split_length);
    meta.write(&out.join("correlate.meta.json"))?;

    summary.field("rows", rows.len()).print();
    Ok(())
}

#[derive(Serialize)]
struct OracleRow {
    trial: usize,
    max_ngram_dev: f64,
    sum_rule_dev: f64,
}

fn all_ngrams(vocab: usize, n: usize) -> Vec<Ngram> {
    let total = vocab.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut ids = vec![0u32; n];
            for slot in ids.iter_mut().rev() {
                *slot = (code % vocab) as u32;
                code /= vocab;
            }
            Ngram::new(&ids).expect("order is valid")
        })
        .collect()
}

pub fn oracle_check(s: &Settings, vocab: usize, len: usize, trials: usize) -> CmdResult {
    let n: usize = s.get("train", "n")?;
    if !(1..=ORACLE_MAX_VOCAB).contains(&vocab) {
        return Err(Failure::Usage(format!(
            "--vocab must be in 1..={ORACLE_MAX_VOCAB}"
        )));
    }
    if len < 1 || trials < 1 {
        return Err(Failure::Usage("--len and --trials must be positive".into()));
    }
    let space = (vocab as u128).checked_pow(len as u32).unwrap_or(u128::MAX);
    if space > ORACLE_LIMIT {
        return Err(Failure::Usage(format!(
            "{vocab}^{len} sequences exceed the enumeration limit of {ORACLE_LIMIT}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed()?);
    let every = all_ngrams(vocab, n);
    let windows = (len + 1).saturating_sub(n) as f64;
    let mut rows = Vec::with_capacity(trials);
    for trial in 0..trials {
        let table = random_table(&mut rng, len, vocab)?;
        let reference: Vec<u32> = (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect();
        let mut max_dev: f64 = 0.0;
        if len >= n {
            for (g, _) in count_ngrams(&reference, n)?.iter() {
                let dev =
                    (expected_ngram_count(&table, g) - oracle_expected_count(&table, g)?).abs();
                max_dev = max_dev.max(dev);
            }
        }
        let sum: f64 = expected_counts(&table, &every).iter().sum();
        rows.push(OracleRow {
            trial,
            max_ngram_dev: max_dev,
            sum_rule_dev: (sum - windows).abs(),
        });
    }

    let out = s.out_dir();
    ensure_dir(&out)?;
    write_csv(&out.join("oracle_check.csv"), &rows)?;
    let max_dev = rows.iter().map(|r| r.max_ngram_dev).fold(0.0, f64::max);
    let max_sum = rows.iter().map(|r| r.sum_rule_dev).fold(0.0, f64::max);
    let pass = max_dev <= ORACLE_TOLERANCE && max_sum <= ORACLE_TOLERANCE;
    Summary::new("oracle-check")
        .field("status", if pass { "pass" } else { "fail" })
        .field("vocab", vocab)
        .field("len", len)
        .field("n", n)
        .field("trials", trials)
        .field("max_dev", format!("{max_dev:.3e}"))
        .field("max_sum_dev", format!("{max_sum:.3e}"))
        .print();
    if pass {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "deviation {max_dev:e} / {max_sum:e} above {ORACLE_TOLERANCE:e}"
        )))
    }
}

pub struct GradcheckOptions {
    pub loss: Option<String>,
    pub vocab: usize,
    pub len: usize,
    pub d_model: usize,
    pub hidden: usize,
    pub probes: usize,
}

/// Worst relative error accepted for gradients with respect to the table.
pub fn table_threshold(spec: &LossSpec) -> f64 {
    match spec {
        LossSpec::NormalizedCe | LossSpec::CrossEntropy => 1e-6,
        _ => 1e-4,
    }
}

/// Worst relative error accepted through the model parameters.
pub const MODEL_THRESHOLD: f64 = 1e-3;

pub fn gradcheck(s: &Settings, opts: &GradcheckOptions) -> CmdResult {
    let spec: LossSpec = match &opts.loss {
        Some(l) => l.parse()?,
        None => LossSpec::Bon(s.get("train", "n")?),
    };
    let seed = s.seed()?;
    let table = check_table_gradient(&spec, opts.vocab, opts.len, opts.probes, 5, seed)?;
    let dims = ModelDims {
        vocab: opts.vocab,
        d_model: opts.d_model,
        hidden: opts.hidden,
        max_len: opts.len + 1,
        max_len_diff: 2,
    };
    let model = check_model_gradient(&spec, dims, opts.len, opts.probes, 10, seed.wrapping_add(1))?;

    let out = s.out_dir();
    ensure_dir(&out)?;
    write_csv(
        &out.join("gradcheck.csv"),
        &[table.clone(), model.clone()] as &[GradcheckReport],
    )?;

    let pass =
        table.worst_rel_err < table_threshold(&spec) && model.worst_rel_err < MODEL_THRESHOLD;
    Summary::new("gradcheck")
        .field("status", if pass { "pass" } else { "fail" })
        .field("loss", spec)
        .field("table_worst", format!("{:.3e}", table.worst_rel_err))
        .field("model_worst", format!("{:.3e}", model.worst_rel_err))
        .field("probes", table.probes + model.probes)
        .field("resampled", table.resampled + model.resampled)
        .print();
    if pass {
        Ok(())
    } else {
        Err(Failure::Check("gradient check above threshold".into()))
    }
}
