use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use plbk::corpus::{compute_stats, ingest_jsonl, truncate, CorpusStats, RawInstance};
use plbk::metrics::{
    corpus_bleu, corpus_codebleu, exact_match_text, smoothed_bleu4, whitespace_tokens, MetricReport, MiniProfile,
    DEFAULT_KEYWORD_WEIGHT, DEFAULT_WEIGHTS,
};
use plbk::model::{checkpoint, generate, ModelConfig, Parameters};
use plbk::noising::corrupt;
use plbk::sampler::compute_plan;
use plbk::selfcheck::{self, PlanExpectation, CRITERIA};
use plbk::tokenizer::{train_subword, Vocabulary};
use plbk::training::{
    build_classification_example, build_generation_example, classification_accuracy, finetune, generation_bleu,
    generation_exact_match, pretrain, FinetuneData, Mode, PretrainData, RunConfig, RunOutput, SelectionMetric, Trainer,
};

use crate::data::{corpus_arg, read_jsonl, read_lines, resolve, ClassificationRecord, GenerationRecord};
use crate::manifest::RunManifest;
use crate::{Cli, Command, MetricName, Task};

/// Validation score of the current parameters.
type Evaluator = Box<dyn FnMut(&Parameters<f32>) -> plbk::Result<f64>>;

const LOG_FILE: &str = "log.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

pub fn run(cli: &Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let (manifest, default_path, code) = match &cli.command {
        Command::TrainTokenizer {
            corpus,
            vocab_size,
            sample_fraction,
            seed,
            extra_lang,
            out,
        } => {
            let m = train_tokenizer(corpus, *vocab_size, *sample_fraction, *seed, extra_lang, out)?;
            (m, Some(sidecar(out)), ExitCode::SUCCESS)
        }
        Command::Plan { stats, alpha } => (plan(stats, *alpha)?, None, ExitCode::SUCCESS),
        Command::NoisePreview {
            corpus,
            vocab,
            config,
            seed,
            n,
        } => (
            noise_preview(corpus, vocab, config.as_deref(), *seed, *n)?,
            None,
            ExitCode::SUCCESS,
        ),
        Command::Pretrain { config, out, resume } => (
            pretrain_cmd(config, out, resume.as_deref())?,
            Some(out.join(MANIFEST_FILE)),
            ExitCode::SUCCESS,
        ),
        Command::Finetune {
            task,
            config,
            init,
            out,
        } => (
            finetune_cmd(*task, config, init, out)?,
            Some(out.join(MANIFEST_FILE)),
            ExitCode::SUCCESS,
        ),
        Command::Generate {
            ckpt,
            vocab,
            target_lang,
            beam,
            max_len,
            input,
        } => (
            generate_cmd(ckpt, vocab, target_lang, *beam, *max_len, input)?,
            None,
            ExitCode::SUCCESS,
        ),
        Command::Evaluate {
            metric,
            hyp,
            reference,
            lang_profile,
            json,
        } => (
            evaluate(*metric, hyp, reference, lang_profile, *json)?,
            None,
            ExitCode::SUCCESS,
        ),
        Command::Selfcheck { only } => {
            let (m, ok) = selfcheck_cmd(only)?;
            (m, None, if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    };
    match cli.manifest.clone().or(default_path) {
        Some(path) => manifest.write(&path)?,
        None => eprintln!("{}", json!({ "manifest": manifest })),
    }
    Ok(code)
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn load_corpora(args: &[(String, PathBuf)], manifest: &mut RunManifest) -> Result<BTreeMap<String, Vec<RawInstance>>> {
    let mut corpora: BTreeMap<String, Vec<RawInstance>> = BTreeMap::new();
    for (lang, path) in args {
        let ingested = ingest_jsonl(path, lang)?;
        if ingested.skipped > 0 {
            eprintln!("{}: skipped {} malformed line(s)", path.display(), ingested.skipped);
        }
        manifest.input(path)?;
        corpora.entry(lang.clone()).or_default().extend(ingested.instances);
    }
    Ok(corpora)
}

fn train_tokenizer(
    corpus: &[String],
    vocab_size: usize,
    sample_fraction: f64,
    seed: u64,
    extra_lang: &[String],
    out: &Path,
) -> Result<RunManifest> {
    let args = corpus.iter().map(|c| corpus_arg(c)).collect::<Result<Vec<_>>>()?;
    let mut manifest = RunManifest::new(
        "train-tokenizer",
        json!({
            "corpus": args.iter().map(|(l, p)| format!("{l}={}", p.display())).collect::<Vec<_>>(),
            "vocab_size": vocab_size,
            "sample_fraction": sample_fraction,
            "extra_lang": extra_lang,
        }),
    );
    manifest.seed = Some(seed);
    let corpora = load_corpora(&args, &mut manifest)?;
    let all: Vec<RawInstance> = corpora.values().flatten().cloned().collect();
    let mut langs: Vec<String> = corpora.keys().cloned().collect();
    langs.extend(extra_lang.iter().cloned());
    let vocab = train_subword(&all, vocab_size, sample_fraction, seed)?.add_language_ids(&langs)?;
    vocab.save(out)?;
    manifest.output(out);
    eprintln!(
        "{} ids ({} base pieces, {} merges, languages {})",
        vocab.len(),
        vocab.base_piece_count(),
        vocab.merges().len(),
        vocab.language_ids().join(" ")
    );
    Ok(manifest)
}

fn plan(stats_path: &Path, alpha: f64) -> Result<RunManifest> {
    let mut manifest = RunManifest::new("plan", json!({ "alpha": alpha }));
    let text = fs::read_to_string(stats_path).with_context(|| format!("reading {}", stats_path.display()))?;
    let stats: CorpusStats =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", stats_path.display()))?;
    manifest.input(stats_path)?;
    let plan = compute_plan(&stats, alpha)?;
    println!("{}", serde_json::to_string_pretty(&plan.to_json_12())?);
    Ok(manifest)
}

fn load_run_config(path: &Path, manifest_cfg: &mut serde_json::Value) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    cfg.validate()?;
    *manifest_cfg = json!({ "file": path, "resolved": cfg.to_text() });
    Ok(cfg)
}

fn noise_preview(corpus: &str, vocab_path: &Path, config: Option<&Path>, seed: u64, n: usize) -> Result<RunManifest> {
    let (lang, path) = corpus_arg(corpus)?;
    let mut manifest = RunManifest::new("noise-preview", json!({ "n": n, "language": lang }));
    manifest.seed = Some(seed);
    let noise = match config {
        Some(c) => {
            let mut snapshot = json!(null);
            let cfg = load_run_config(c, &mut snapshot)?;
            manifest.config["run_config"] = snapshot;
            manifest.input(c)?;
            cfg.noise
        }
        None => Default::default(),
    };
    let vocab = Vocabulary::load(vocab_path)?;
    manifest.input(vocab_path)?;
    let corpora = load_corpora(&[(lang.clone(), path)], &mut manifest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for inst in corpora.get(&lang).into_iter().flatten().take(n) {
        let ids = vocab.encode(&inst.text);
        if ids.is_empty() {
            continue;
        }
        let t = corrupt(&ids, &lang, &noise, &vocab, &mut rng)?;
        let pieces = |ids: &[u32]| -> Vec<String> { ids.iter().map(|&i| vocab.piece(i).unwrap_or_default()).collect() };
        let line = json!({
            "id": inst.source_id,
            "strategy": t.strategy,
            "encoder_input": pieces(&t.encoder_input),
            "decoder_input": pieces(&t.decoder_input),
            "target": pieces(&t.target),
        });
        writeln!(out, "{line}")?;
    }
    Ok(manifest)
}

/// Model configuration with the vocabulary size filled in.
fn model_config(cfg: &RunConfig, vocab: &Vocabulary) -> Result<ModelConfig> {
    let mut model = cfg.model.clone();
    if model.vocab_size == 0 {
        model.vocab_size = vocab.len();
    }
    ensure!(
        model.vocab_size == vocab.len(),
        "model.vocab_size {} does not match the vocabulary ({} ids)",
        model.vocab_size,
        vocab.len()
    );
    model.validate()?;
    Ok(model)
}

/// Initialization draws from its own stream so it never shares numbers with
/// the batch and dropout stream seeded from the same value.
fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn pretrain_cmd(config: &Path, out: &Path, resume: Option<&Path>) -> Result<RunManifest> {
    let mut manifest = RunManifest::new("pretrain", json!(null));
    let cfg = load_run_config(config, &mut manifest.config)?;
    manifest.input(config)?;
    ensure!(
        cfg.train.mode == Mode::Pretrain,
        "pretrain needs mode = pretrain in {}",
        config.display()
    );
    manifest.seed = Some(cfg.train.seed);
    let vocab_path = resolve(config, cfg.data("vocab")?);
    let vocab = Vocabulary::load(&vocab_path)?;
    manifest.input(&vocab_path)?;
    let corpus_args: Vec<(String, PathBuf)> = cfg
        .data
        .iter()
        .filter_map(|(k, v)| {
            k.strip_prefix("corpus.")
                .map(|lang| (lang.to_string(), resolve(config, v)))
        })
        .collect();
    ensure!(
        !corpus_args.is_empty(),
        "no data.corpus.<lang> entries in {}",
        config.display()
    );
    let raw = load_corpora(&corpus_args, &mut manifest)?;
    let encoded: BTreeMap<String, Vec<Vec<u32>>> = raw
        .iter()
        .map(|(lang, items)| {
            let ids: Vec<Vec<u32>> = items
                .iter()
                .map(|i| vocab.encode(&i.text))
                .filter(|ids| !ids.is_empty())
                .collect();
            (lang.clone(), ids)
        })
        .collect();
    let mut stats = compute_stats(&raw);
    for (lang, ids) in &encoded {
        stats.counts.insert(lang.clone(), ids.len());
        stats.token_counts.insert(lang.clone(), ids.iter().map(Vec::len).sum());
    }
    let plan = compute_plan(&stats, cfg.alpha)?;

    let mut trainer = match resume {
        Some(dir) => {
            let t = Trainer::load(dir)?;
            manifest.input(&dir.join(plbk::training::MODEL_FILE))?;
            ensure!(
                t.config == cfg.train,
                "the training settings in {} differ from the resumed run",
                config.display()
            );
            t
        }
        None => {
            let model = model_config(&cfg, &vocab)?;
            Trainer::new(
                Parameters::init(&model, &mut init_rng(cfg.train.seed)),
                cfg.train.clone(),
            )?
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
    fs::write(
        out.join("plan.json"),
        serde_json::to_string_pretty(&plan.to_json_12())? + "\n",
    )?;
    let log_path = out.join(LOG_FILE);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let data = PretrainData {
        corpora: &encoded,
        vocab: &vocab,
        noise: &cfg.noise,
        plan: &plan,
    };
    let losses = pretrain(
        &mut trainer,
        &data,
        &mut RunOutput {
            dir: Some(out),
            log: Some(&mut log),
        },
    )?;
    for name in ["stats.json", "plan.json", LOG_FILE, "last"] {
        manifest.output(out.join(name));
    }
    let every = trainer.config.checkpoint_every;
    if every > 0 {
        let first = resume.map_or(0, |_| trainer.step - losses.len());
        for s in (first + 1..=trainer.step).filter(|s| s % every == 0) {
            manifest.output(out.join(format!("step-{s:07}")));
        }
    }
    eprintln!(
        "{} steps, final loss {:.4}",
        trainer.step,
        losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(manifest)
}

fn finetune_cmd(task: Task, config: &Path, init: &Path, out: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new("finetune", json!(null));
    let mut cfg = load_run_config(config, &mut manifest.config)?;
    manifest.config["task"] = json!(format!("{task:?}"));
    manifest.input(config)?;
    cfg.train.mode = match task {
        Task::Generation => Mode::FinetuneGeneration,
        Task::ClassifySingle | Task::ClassifyPair => Mode::FinetuneClassification,
    };
    manifest.seed = Some(cfg.train.seed);
    let vocab_path = resolve(config, cfg.data("vocab")?);
    let mut vocab = Vocabulary::load(&vocab_path)?;
    manifest.input(&vocab_path)?;
    let mut params = checkpoint::load(init).with_context(|| format!("loading {}", init.display()))?;
    manifest.input(init)?;
    ensure!(
        params.config.vocab_size == vocab.len(),
        "{} was trained with {} ids but the vocabulary has {}",
        init.display(),
        params.config.vocab_size,
        vocab.len()
    );
    let mut rng = init_rng(cfg.train.seed);
    let train_path = resolve(config, cfg.data("train")?);
    let valid_path = cfg.data.get("valid").map(|v| resolve(config, v));
    manifest.input(&train_path)?;
    if let Some(p) = &valid_path {
        manifest.input(p)?;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let (data, metric, mut evaluate): (FinetuneData, SelectionMetric, Evaluator) = match task {
        Task::Generation => {
            let src_lang = cfg.data("source_lang")?.to_string();
            let tgt_lang = cfg.data("target_lang")?.to_string();
            let missing: Vec<&str> = [src_lang.as_str(), tgt_lang.as_str()]
                .into_iter()
                .filter(|l| vocab.language_id(l).is_err())
                .collect();
            if !missing.is_empty() {
                vocab = vocab.add_language_ids(&missing)?;
                params.resize_vocab(vocab.len(), &mut rng);
                eprintln!("registered new language id(s): {}", missing.join(" "));
            }
            let max_positions = params.config.max_positions;
            let max_len = cfg.noise.max_len.min(max_positions);
            let build = |recs: Vec<GenerationRecord>| {
                recs.iter()
                    .map(|r| {
                        build_generation_example(
                            &r.source,
                            &r.target,
                            &src_lang,
                            &tgt_lang,
                            &vocab,
                            max_len,
                            max_positions,
                        )
                    })
                    .collect::<plbk::Result<Vec<_>>>()
            };
            let train = build(read_jsonl(&train_path)?)?;
            let valid = match &valid_path {
                Some(p) => build(read_jsonl(p)?)?,
                None => train.clone(),
            };
            let decode_len: usize = match cfg.data.get("decode_max_len") {
                Some(v) => v.parse().context("data.decode_max_len")?,
                None => 128,
            };
            let metric = match cfg.data.get("metric").map(String::as_str).unwrap_or("bleu") {
                "bleu" => SelectionMetric::Bleu,
                "em" => SelectionMetric::ExactMatch,
                other => bail!("data.metric {other:?} is not a generation metric (bleu, em)"),
            };
            let eval_vocab = vocab.clone();
            let eval: Evaluator = match metric {
                SelectionMetric::Bleu => Box::new(move |p| generation_bleu(p, &valid, &eval_vocab, decode_len)),
                _ => Box::new(move |p| generation_exact_match(p, &valid, decode_len)),
            };
            (FinetuneData::Generation(train), metric, eval)
        }
        Task::ClassifySingle | Task::ClassifyPair => {
            let pair = task == Task::ClassifyPair;
            let build = |recs: Vec<ClassificationRecord>| -> Result<Vec<(Vec<u32>, usize)>> {
                recs.into_iter()
                    .map(|r| {
                        let b = match (pair, &r.text_b) {
                            (true, Some(b)) => Some(b.as_str()),
                            (true, None) => bail!("classify-pair records need text_b"),
                            (false, Some(_)) => bail!("classify-single records must not carry text_b"),
                            (false, None) => None,
                        };
                        Ok((build_classification_example(&r.text, b, &vocab)?, r.label))
                    })
                    .collect()
            };
            let train = build(read_jsonl(&train_path)?)?;
            let valid = match &valid_path {
                Some(p) => build(read_jsonl(p)?)?,
                None => train.clone(),
            };
            let seen = train.iter().chain(&valid).map(|e| e.1).max().unwrap_or(0) + 1;
            let num_labels = if cfg.model.num_labels > 0 {
                cfg.model.num_labels
            } else {
                seen
            };
            ensure!(
                seen <= num_labels,
                "label {} out of range for {num_labels} labels",
                seen - 1
            );
            if params.classifier.as_ref().map(|c| c.bias.len()) != Some(num_labels) {
                params = params.with_classifier(num_labels, &mut rng);
            }
            let eval: Evaluator = Box::new(move |p| classification_accuracy(p, &valid));
            (FinetuneData::Classification(train), SelectionMetric::Accuracy, eval)
        }
    };

    let vocab_out = out.join("vocab.json");
    vocab.save(&vocab_out)?;
    let log_path = out.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut trainer = Trainer::new(params, cfg.train.clone())?;
    let report = finetune(
        &mut trainer,
        &data,
        metric,
        &mut *evaluate,
        &mut RunOutput {
            dir: Some(out),
            log: Some(&mut log),
        },
    )?;
    let report_json = json!({
        "metric": report.metric,
        "best_step": report.best_step,
        "best_value": report.best_value,
        "history": report.history,
    });
    let report_path = out.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report_json)? + "\n")?;
    for p in [
        vocab_out,
        log_path,
        report_path,
        out.join("best.plbk"),
        out.join("last"),
    ] {
        manifest.output(p);
    }
    eprintln!(
        "best {:?} {:.6} at step {}",
        report.metric, report.best_value, report.best_step
    );
    Ok(manifest)
}

fn generate_cmd(
    ckpt: &Path,
    vocab_path: &Path,
    target_lang: &str,
    beam: usize,
    max_len: usize,
    input: &Path,
) -> Result<RunManifest> {
    ensure!(beam >= 1, "--beam must be at least 1");
    let mut manifest = RunManifest::new(
        "generate",
        json!({ "target_lang": target_lang, "beam": beam, "max_len": max_len }),
    );
    let params = checkpoint::load(ckpt)?;
    let vocab = Vocabulary::load(vocab_path)?;
    for p in [ckpt, vocab_path, input] {
        manifest.input(p)?;
    }
    ensure!(
        params.config.vocab_size == vocab.len(),
        "checkpoint has {} ids but the vocabulary has {}",
        params.config.vocab_size,
        vocab.len()
    );
    let lang = vocab.language_id(target_lang)?;
    let limit = params.config.max_positions;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in read_lines(input)? {
        let source = truncate(&vocab.encode(&line), limit);
        let ids = if source.is_empty() {
            Vec::new()
        } else {
            generate(&params, &source, lang, beam, max_len)?
        };
        writeln!(out, "{}", vocab.decode(&ids))?;
    }
    Ok(manifest)
}

fn evaluate(metric: MetricName, hyp: &Path, reference: &Path, profile: &str, as_json: bool) -> Result<RunManifest> {
    let mut manifest = RunManifest::new(
        "evaluate",
        json!({ "metric": format!("{metric:?}"), "lang_profile": profile }),
    );
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    manifest.input(hyp)?;
    manifest.input(reference)?;
    ensure!(
        hyps.len() == refs.len(),
        "{} has {} lines but {} has {}",
        hyp.display(),
        hyps.len(),
        reference.display(),
        refs.len()
    );
    ensure!(!hyps.is_empty(), "nothing to evaluate");
    let report = match metric {
        MetricName::Bleu => {
            let h: Vec<Vec<&str>> = hyps.iter().map(|s| whitespace_tokens(s)).collect();
            let r: Vec<Vec<&str>> = refs.iter().map(|s| whitespace_tokens(s)).collect();
            MetricReport::percent("bleu", corpus_bleu(&h, &r)?)
        }
        MetricName::SmoothedBleu4 => {
            let total: f64 = hyps
                .iter()
                .zip(&refs)
                .map(|(h, r)| smoothed_bleu4(&whitespace_tokens(h), &whitespace_tokens(r)))
                .sum();
            MetricReport::percent("smoothed_bleu4", total / hyps.len() as f64)
        }
        MetricName::Em => MetricReport::ratio("exact_match", exact_match_text(&hyps, &refs)?),
        MetricName::Codebleu => {
            if profile != "mini" {
                return Err(anyhow!("unknown language profile {profile:?}; available: mini"));
            }
            corpus_codebleu(&hyps, &refs, &MiniProfile, DEFAULT_WEIGHTS, DEFAULT_KEYWORD_WEIGHT)?
        }
    };
    if as_json {
        println!("{}", report.to_json_6());
    } else {
        println!("{:.6}", report.value);
    }
    Ok(manifest)
}

fn selfcheck_cmd(only: &[usize]) -> Result<(RunManifest, bool)> {
    let ids: Vec<usize> = if only.is_empty() {
        CRITERIA.to_vec()
    } else {
        only.to_vec()
    };
    for id in &ids {
        ensure!(CRITERIA.contains(id), "no acceptance criterion {id}");
    }
    let manifest = RunManifest::new("selfcheck", json!({ "criteria": ids }));
    let mut all = true;
    for id in ids {
        let r = selfcheck::run(id, &PlanExpectation::ORACLE);
        println!("{r}");
        all &= r.passed;
    }
    println!("selfcheck: {}", if all { "ok" } else { "FAILED" });
    Ok((manifest, all))
}
