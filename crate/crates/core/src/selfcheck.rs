//! The acceptance property suite, shared by the `acceptance` test target and
//! the `plbk selfcheck` command.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{split, CorpusStats, RawInstance};
use crate::error::{Error, Result};
use crate::fixtures::{
    toy_corpora, toy_pair_classification, toy_parallel_pairs, PretrainFixture, CODE_LANG, TEXT_LANG,
};
use crate::metrics::{
    codebleu, corpus_bleu, exact_match, smoothed_bleu4, whitespace_tokens, CodeBleuWeights, MiniProfile,
    DEFAULT_KEYWORD_WEIGHT,
};
use crate::model::gradcheck::{micro_batch, micro_config, probe_parameters, relative_errors};
use crate::model::{checkpoint, classification_loss_and_grads, loss_and_grads, Batch, ModelConfig, Parameters};
use crate::noising::{apply_token_masking, infill_spans, poisson_pmf, sample_poisson};
use crate::sampler::{compute_plan, LanguageSampler};
use crate::tokenizer::{train_subword, MASK};
use crate::training::{
    build_classification_example, build_generation_example, classification_accuracy, denoising_accuracy, dropout_at,
    find_loss_rise, finetune, generation_exact_match, lr_at, pretrain, FinetuneData, Mode, RunOutput, SelectionMetric,
    TrainConfig, Trainer,
};

pub const CRITERIA: [usize; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {}: {} ({:.2}s of {}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

/// Expected sampling plan for corpus sizes pl = 14, nl = 1 at alpha 0.3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanExpectation {
    pub q_pl: f64,
    pub q_nl: f64,
    pub select_pl: f64,
    pub select_nl: f64,
}

impl PlanExpectation {
    /// The published target values.
    pub const PUBLISHED: PlanExpectation = PlanExpectation {
        q_pl: 0.737358,
        q_nl: 4.676955,
        select_pl: 0.688201,
        select_nl: 0.311799,
    };

    /// The formula evaluated independently in 50-digit arithmetic.
    pub const ORACLE: PlanExpectation = PlanExpectation {
        q_pl: 0.737357065181556,
        q_nl: 4.677001087458216,
        select_pl: 0.688199927502786,
        select_nl: 0.311800072497214,
    };
}

pub fn name(id: usize) -> &'static str {
    match id {
        1 => "noise budget",
        2 => "span distribution",
        3 => "sampling plan",
        4 => "gradient check",
        5 => "pretrain overfit",
        6 => "fine-tune generation",
        7 => "fine-tune classification",
        8 => "metric oracles",
        9 => "schedules",
        10 => "determinism and persistence",
        _ => "unknown",
    }
}

pub fn budget(id: usize) -> Duration {
    Duration::from_secs(match id {
        1 => 10,
        2 | 3 | 8 => 5,
        4 => 60,
        5 => 300,
        6 => 300,
        7 => 180,
        9 => 1,
        _ => 120,
    })
}

/// Run one criterion. The runtime budget is part of the verdict.
pub fn run(id: usize, plan: &PlanExpectation) -> CheckResult {
    let start = Instant::now();
    let outcome = match id {
        1 => noise_budget(),
        2 => span_distribution(),
        3 => sampling_plan(plan),
        4 => gradient_check(),
        5 => pretrain_overfit(),
        6 => finetune_generation(),
        7 => finetune_classification(),
        8 => metric_oracles(),
        9 => schedules(),
        10 => determinism(),
        _ => Err(Error::Config(format!("no acceptance criterion {id}"))),
    };
    let elapsed = start.elapsed();
    let budget = budget(id);
    let (ok, mut detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    if elapsed > budget {
        detail.push_str("; over the time budget");
    }
    CheckResult {
        id,
        name: name(id),
        passed: ok && elapsed <= budget,
        detail,
        elapsed,
        budget,
    }
}

type Outcome = Result<(bool, String)>;

fn noise_budget() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<u32> = (5..105).collect();
    let mut exact = true;
    let mut covered = 0usize;
    for _ in 0..10_000 {
        let masked = apply_token_masking(&x, 0.35, &mut rng);
        exact &= masked.iter().filter(|&&t| t == MASK).count() == 35;
        covered += infill_spans(&x, 0.35, 3.5, 10, &mut rng).covered;
    }
    let mean = covered as f64 / 10_000.0 / 100.0;
    let ok = exact && (mean - 0.35).abs() <= 0.01;
    Ok((
        ok,
        format!("masking exact 35 = {exact}, infilling mean coverage {mean:.4}"),
    ))
}

fn span_distribution() -> Outcome {
    const DRAWS: usize = 100_000;
    let lambda = 3.5;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts: Vec<usize> = Vec::new();
    for _ in 0..DRAWS {
        let k = sample_poisson(lambda, &mut rng);
        if k >= counts.len() {
            counts.resize(k + 1, 0);
        }
        counts[k] += 1;
    }
    let mut tv = 0.0;
    let mut mass = 0.0;
    for (k, &c) in counts.iter().enumerate() {
        let pmf = poisson_pmf(k, lambda);
        mass += pmf;
        tv += (c as f64 / DRAWS as f64 - pmf).abs();
    }
    // support beyond the largest draw
    tv = 0.5 * (tv + (1.0 - mass).max(0.0));
    let p3 = counts.get(3).copied().unwrap_or(0) as f64 / DRAWS as f64;
    let ok = tv < 0.01 && (p3 - 0.2158).abs() <= 0.005;
    Ok((ok, format!("total variation {tv:.5}, P(L=3) {p3:.4}")))
}

fn sampling_plan(expect: &PlanExpectation) -> Outcome {
    let stats = CorpusStats {
        counts: BTreeMap::from([("pl".to_string(), 14), ("nl".to_string(), 1)]),
        token_counts: BTreeMap::new(),
    };
    let plan = compute_plan(&stats, 0.3)?;
    let (q_pl, q_nl) = (plan.q["pl"], plan.q["nl"]);
    let q_ok = (q_pl - expect.q_pl).abs() <= 1e-6 && (q_nl - expect.q_nl).abs() <= 1e-6;
    let sampler = LanguageSampler::new(&plan, &stats.counts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut hits = [0usize; 2];
    for _ in 0..100_000 {
        let (li, _) = sampler.draw(&mut rng);
        hits[usize::from(sampler.languages()[li] == "nl")] += 1;
    }
    let f_pl = hits[0] as f64 / 1e5;
    let f_nl = hits[1] as f64 / 1e5;
    let s_ok = (f_pl - expect.select_pl).abs() <= 0.005 && (f_nl - expect.select_nl).abs() <= 0.005;
    Ok((
        q_ok && s_ok,
        format!(
            "q = ({q_pl:.9}, {q_nl:.9}) vs expected ({}, {}), stream = ({f_pl:.4}, {f_nl:.4}) vs ({}, {})",
            expect.q_pl, expect.q_nl, expect.select_pl, expect.select_nl
        ),
    ))
}

fn gradient_check() -> Outcome {
    let cfg = micro_config(2, 0);
    let p = probe_parameters(&cfg, 3);
    let batch = micro_batch();
    let (_, grads) = loss_and_grads(&p, &batch, 0.0, None)?;
    let gen = relative_errors(&p, &grads, 1e-5, |q| {
        loss_and_grads(q, &batch, 0.0, None).map(|r| r.0).unwrap_or(f64::NAN)
    });

    let cfg = micro_config(2, 2);
    let p = probe_parameters(&cfg, 8);
    let rows = Batch::classification(&[vec![5, 6, 2, 7, 2], vec![9, 4, 2]]);
    let labels = [1, 0];
    let (_, grads) = classification_loss_and_grads(&p, &rows, &labels, 0.0, None)?;
    let cls = relative_errors(&p, &grads, 1e-5, |q| {
        classification_loss_and_grads(q, &rows, &labels, 0.0, None)
            .map(|r| r.0)
            .unwrap_or(f64::NAN)
    });

    let worst = gen.iter().chain(&cls).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let ok = gen.iter().chain(&cls).all(|(_, e)| *e < 1e-4);
    Ok((
        ok,
        format!(
            "{} tensors, worst {} at {:.2e}",
            gen.len() + cls.len(),
            worst.0,
            worst.1
        ),
    ))
}

fn pretrain_overfit() -> Outcome {
    let fx = PretrainFixture::new(16, 7)?;
    let params = Parameters::<f32>::init(&ModelConfig::desk(fx.vocab.len()), &mut ChaCha8Rng::seed_from_u64(1));
    let config = TrainConfig {
        mode: Mode::Pretrain,
        ..TrainConfig::desk()
    };
    let mut trainer = Trainer::new(params, config)?;
    let data = fx.data();
    let losses = pretrain(&mut trainer, &data, &mut RunOutput::default())?;
    let acc = denoising_accuracy(&trainer.params, &data, 99)?;
    let rise = find_loss_rise(&losses, 20, 100, 0.1);
    let ok = acc > 0.95 && rise.is_none();
    let rise = match rise {
        None => "none".to_string(),
        Some(r) => format!("x{:.3} between smoothed steps {} and {}", r.ratio, r.from, r.to),
    };
    Ok((
        ok,
        format!(
            "{} steps, accuracy {acc:.4}, final loss {:.4}, loss rise {rise}",
            losses.len(),
            losses.last().copied().unwrap_or(f64::NAN)
        ),
    ))
}

fn finetune_generation() -> Outcome {
    let fx = PretrainFixture::new(16, 7)?;
    let examples = toy_parallel_pairs()
        .iter()
        .map(|(s, t)| build_generation_example(s, t, CODE_LANG, TEXT_LANG, &fx.vocab, 64, 256))
        .collect::<Result<Vec<_>>>()?;
    let params = Parameters::<f32>::init(&ModelConfig::desk(fx.vocab.len()), &mut ChaCha8Rng::seed_from_u64(1));
    let config = TrainConfig {
        total_steps: 150,
        warmup_steps: 15,
        batch_size: 16,
        peak_lr: 3e-3,
        eval_every: 25,
        mode: Mode::FinetuneGeneration,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(params, config)?;
    let data = FinetuneData::Generation(examples.clone());
    let report = finetune(
        &mut trainer,
        &data,
        SelectionMetric::ExactMatch,
        &mut |p| generation_exact_match(p, &examples, 32),
        &mut RunOutput::default(),
    )?;
    let em = generation_exact_match(&report.best, &examples, 32)?;
    Ok((
        em == 1.0,
        format!(
            "{} pairs, exact match {em:.4} at step {}",
            examples.len(),
            report.best_step
        ),
    ))
}

fn finetune_classification() -> Outcome {
    let fx = PretrainFixture::new(16, 7)?;
    let examples = toy_pair_classification(32, 3)
        .iter()
        .map(|(a, b, l)| Ok((build_classification_example(a, Some(b), &fx.vocab)?, *l)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = Parameters::<f32>::init(&ModelConfig::desk(fx.vocab.len()), &mut rng).with_classifier(2, &mut rng);
    let config = TrainConfig {
        total_steps: 100,
        warmup_steps: 10,
        batch_size: 16,
        peak_lr: 1e-3,
        eval_every: 20,
        mode: Mode::FinetuneClassification,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(params, config)?;
    let data = FinetuneData::Classification(examples.clone());
    let report = finetune(
        &mut trainer,
        &data,
        SelectionMetric::Accuracy,
        &mut |p| classification_accuracy(p, &examples),
        &mut RunOutput::default(),
    )?;
    let acc = classification_accuracy(&report.best, &examples)?;
    Ok((
        acc == 1.0,
        format!(
            "{} pairs, accuracy {acc:.4} at step {}",
            examples.len(),
            report.best_step
        ),
    ))
}

fn metric_oracles() -> Outcome {
    let t = whitespace_tokens;
    let mut failures = Vec::new();
    let mut expect = |label: &str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() > tol {
            failures.push(format!("{label} = {got} (want {want})"));
        }
    };

    let same = vec![t("the cat sat on the mat"), t("a b")];
    expect("bleu identity", corpus_bleu(&same, &same)?, 100.0, 1e-4);
    expect(
        "bleu clipped",
        corpus_bleu(&[t("the the the the")], &[t("the cat")])?,
        0.0,
        1e-4,
    );
    expect(
        "bleu brevity",
        corpus_bleu(&[t("the cat sat on")], &[t("the cat sat on the mat")])?,
        60.65306597126334,
        1e-4,
    );

    expect("em all", exact_match(&["a", "b"], &["a", "b"])?, 1.0, 0.0);
    expect("em none", exact_match(&["a", "b"], &["c", "d"])?, 0.0, 0.0);
    expect(
        "em one of four",
        exact_match(&["a", "b", "c", "d"], &["a", "x", "y", "z"])?,
        0.25,
        0.0,
    );

    expect("sbleu identity", smoothed_bleu4(&t("a b c"), &t("a b c")), 100.0, 1e-9);
    expect(
        "sbleu abd",
        smoothed_bleu4(&t("a b c"), &t("a b d")),
        68.65890479690392,
        1e-9,
    );
    expect("sbleu disjoint", smoothed_bleu4(&t("a b c"), &t("x y z")), 0.0, 0.0);

    let reference = "fn f(x){ y = x * 2; if y > 3 { y = 0; } return y + x; }";
    let renamed = "fn f(a){ b = a * 2; if b > 3 { b = 0; } return b + a; }";
    for weights in [[0.25; 4], [0.1, 0.2, 0.3, 0.4]] {
        let r = codebleu(
            renamed,
            reference,
            &MiniProfile,
            CodeBleuWeights(weights),
            DEFAULT_KEYWORD_WEIGHT,
        )?;
        let sum: f64 = r.components.iter().zip(weights).map(|(c, w)| c.1 * w).sum();
        expect("codebleu weighted sum", r.value, sum, 1e-9);
        expect("dataflow_match renamed", r.components[3].1, 1.0, 0.0);
        expect("ast_match renamed", r.components[2].1, 1.0, 0.0);
        let inside = r.value > 0.0 && r.value < 1.0;
        expect("renamed composite inside (0, 1)", f64::from(u8::from(inside)), 1.0, 0.0);
    }

    if failures.is_empty() {
        Ok((
            true,
            "bleu 3/3, exact match 3/3, smoothed bleu 3/3, codebleu 2/2".into(),
        ))
    } else {
        Ok((false, failures.join("; ")))
    }
}

fn schedules() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |label: String, got: f64, want: f64| {
        if (got - want).abs() > 1e-15 {
            failures.push(format!("{label} = {got} (want {want})"));
        }
    };
    let paper = TrainConfig::paper_pretrain();
    for (s, d) in [
        (0, 0.1),
        (49_999, 0.1),
        (50_000, 0.05),
        (79_999, 0.05),
        (80_000, 0.0),
        (100_000, 0.0),
    ] {
        expect(format!("dropout_at({s}) of 100000"), dropout_at(s, &paper), d);
    }
    let desk = TrainConfig {
        total_steps: 1000,
        mode: Mode::Pretrain,
        ..TrainConfig::default()
    };
    for (s, d) in [(499, 0.1), (500, 0.05), (799, 0.05), (800, 0.0)] {
        expect(format!("dropout_at({s}) of 1000"), dropout_at(s, &desk), d);
    }
    let ft = TrainConfig::paper_finetune(Mode::FinetuneGeneration);
    for s in [0, 50_000, 90_000] {
        expect(format!("fine-tune dropout_at({s})"), dropout_at(s, &ft), 0.1);
    }
    expect("lr_at(warmup)".into(), lr_at(ft.warmup_steps, &ft), ft.peak_lr);
    expect(
        "lr_at(warmup / 2)".into(),
        lr_at(ft.warmup_steps / 2, &ft),
        ft.peak_lr / 2.0,
    );
    expect("lr_at(total)".into(), lr_at(ft.total_steps, &ft), 0.0);
    expect("lr_at(0) without warmup".into(), lr_at(0, &paper), paper.peak_lr);
    expect(
        "lr_at(total) without warmup".into(),
        lr_at(paper.total_steps, &paper),
        0.0,
    );
    if failures.is_empty() {
        Ok((true, "dropout 13/13, lr 5/5".into()))
    } else {
        Ok((false, failures.join("; ")))
    }
}

struct ScratchDir(PathBuf);

impl ScratchDir {
    fn new(tag: &str) -> Result<ScratchDir> {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let path = std::env::temp_dir().join(format!("plbk-{tag}-{}-{nanos}", std::process::id()));
        std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(ScratchDir(path))
    }
}

impl Drop for ScratchDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn determinism() -> Outcome {
    let fx = PretrainFixture::new(4, 5)?;
    let data = fx.data();
    let config = TrainConfig {
        total_steps: 6,
        batch_size: 4,
        checkpoint_every: 3,
        peak_lr: 3e-3,
        mode: Mode::Pretrain,
        seed: 17,
        ..TrainConfig::default()
    };
    let init = Parameters::<f32>::init(&ModelConfig::desk(fx.vocab.len()), &mut ChaCha8Rng::seed_from_u64(2));

    let scratch = ScratchDir::new("resume")?;
    let mut straight = Trainer::new(init, config)?;
    let straight_losses = pretrain(
        &mut straight,
        &data,
        &mut RunOutput {
            dir: Some(&scratch.0),
            log: None,
        },
    )?;
    let mut resumed = Trainer::load(scratch.0.join("step-0000003"))?;
    let resumed_losses = pretrain(&mut resumed, &data, &mut RunOutput::default())?;
    let resume_ok = checkpoint::to_bytes(&resumed.params)? == checkpoint::to_bytes(&straight.params)?
        && resumed_losses == straight_losses[3..]
        && resumed.adam.m == straight.adam.m
        && resumed.adam.v == straight.adam.v;

    let corpora = toy_corpora(16, 9);
    let all: Vec<RawInstance> = corpora.values().flatten().cloned().collect();
    let a = train_subword(&all, 400, 0.5, 21)?.to_json()?;
    let b = train_subword(&all, 400, 0.5, 21)?.to_json()?;
    let tokenizer_ok = a == b;

    let (t1, v1) = split(&all, 0.25, 4)?;
    let (t2, v2) = split(&all, 0.25, 4)?;
    let split_ok = t1 == t2 && v1 == v2 && t1.len() + v1.len() == all.len() && !v1.is_empty();

    Ok((
        resume_ok && tokenizer_ok && split_ok,
        format!("resume 3+3 == 6 bit-identical: {resume_ok}, tokenizer json stable: {tokenizer_ok}, split stable: {split_ok}"),
    ))
}
