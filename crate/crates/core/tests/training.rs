use std::collections::BTreeMap;

use plbk::corpus::compute_stats;
use plbk::fixtures::{toy_corpora, toy_parallel_pairs, PretrainFixture, CODE_LANG, TEXT_LANG};
use plbk::model::{checkpoint, greedy, ModelConfig, Parameters};
use plbk::noising::NoiseConfig;
use plbk::sampler::compute_plan;
use plbk::training::*;
use plbk::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk_params(vocab_size: usize, seed: u64) -> Parameters<f32> {
    Parameters::init(&ModelConfig::desk(vocab_size), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn generation_examples(fx: &PretrainFixture) -> Vec<GenerationExample> {
    toy_parallel_pairs()
        .iter()
        .map(|(s, t)| build_generation_example(s, t, CODE_LANG, TEXT_LANG, &fx.vocab, 64, 256).unwrap())
        .collect()
}

fn generation_config(total_steps: usize) -> TrainConfig {
    TrainConfig {
        total_steps,
        warmup_steps: 2,
        batch_size: 4,
        peak_lr: 3e-3,
        eval_every: 3,
        checkpoint_every: 3,
        mode: Mode::FinetuneGeneration,
        ..TrainConfig::default()
    }
}

#[test]
fn copy_task_converges_quickly() {
    let mut fx = PretrainFixture::new(3, 2).unwrap();
    fx.noise = NoiseConfig {
        mask_ratio: 0.0,
        ..NoiseConfig::default()
    };
    let config = TrainConfig {
        total_steps: 50,
        batch_size: 16,
        peak_lr: 1e-2,
        dropout_start: 0.0,
        mode: Mode::Pretrain,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(desk_params(fx.vocab.len(), 1), config).unwrap();
    let data = fx.data();
    let losses = pretrain(&mut trainer, &data, &mut RunOutput::default()).unwrap();
    assert_eq!(losses.len(), 50);
    let acc = denoising_accuracy(&trainer.params, &data, 5).unwrap();
    assert!(acc > 0.99, "copy accuracy {acc}");
}

#[test]
fn single_language_pretraining_runs() {
    let mut raw = toy_corpora(4, 3);
    raw.remove(TEXT_LANG);
    let plan = compute_plan(&compute_stats(&raw), 0.3).unwrap();
    assert_eq!(plan.q[CODE_LANG], 1.0);
    let fx = PretrainFixture::new(4, 3).unwrap();
    let encoded: BTreeMap<String, Vec<Vec<u32>>> = raw
        .iter()
        .map(|(l, items)| (l.clone(), items.iter().map(|i| fx.vocab.encode(&i.text)).collect()))
        .collect();
    let data = PretrainData {
        corpora: &encoded,
        vocab: &fx.vocab,
        noise: &fx.noise,
        plan: &plan,
    };
    let config = TrainConfig {
        total_steps: 3,
        batch_size: 2,
        mode: Mode::Pretrain,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(desk_params(fx.vocab.len(), 1), config).unwrap();
    let losses = pretrain(&mut trainer, &data, &mut RunOutput::default()).unwrap();
    assert_eq!(losses.len(), 3);
    assert!(losses.iter().all(|l| l.is_finite()));
}

#[test]
fn pretrain_writes_log_and_checkpoints() {
    let fx = PretrainFixture::new(2, 4).unwrap();
    let config = TrainConfig {
        total_steps: 4,
        batch_size: 2,
        checkpoint_every: 2,
        mode: Mode::Pretrain,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut log = Vec::new();
    let mut trainer = Trainer::new(desk_params(fx.vocab.len(), 1), config).unwrap();
    pretrain(
        &mut trainer,
        &fx.data(),
        &mut RunOutput {
            dir: Some(dir.path()),
            log: Some(&mut log),
        },
    )
    .unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["step"], 3);
    for sub in ["step-0000002", "step-0000004", "last"] {
        for file in [MODEL_FILE, OPTIMIZER_FILE, TRAINER_FILE] {
            assert!(dir.path().join(sub).join(file).exists(), "{sub}/{file}");
        }
    }
    let last = Trainer::load(dir.path().join("last")).unwrap();
    assert_eq!(last.step, 4);
    assert_eq!(last.params, trainer.params);
}

#[test]
fn finetune_resume_is_bit_identical() {
    let fx = PretrainFixture::new(2, 4).unwrap();
    let examples = generation_examples(&fx);
    let data = FinetuneData::Generation(examples);
    let dir = tempfile::tempdir().unwrap();
    let mut straight = Trainer::new(desk_params(fx.vocab.len(), 6), generation_config(6)).unwrap();
    let mut eval = |_: &Parameters<f32>| Ok(0.0);
    let full = finetune(
        &mut straight,
        &data,
        SelectionMetric::ExactMatch,
        &mut eval,
        &mut RunOutput {
            dir: Some(dir.path()),
            log: None,
        },
    )
    .unwrap();
    let mut resumed = Trainer::load(dir.path().join("step-0000003")).unwrap();
    assert_eq!(resumed.step, 3);
    let rest = finetune(
        &mut resumed,
        &data,
        SelectionMetric::ExactMatch,
        &mut eval,
        &mut RunOutput::default(),
    )
    .unwrap();
    assert_eq!(rest.losses, full.losses[3..]);
    assert_eq!(
        checkpoint::to_bytes(&resumed.params).unwrap(),
        checkpoint::to_bytes(&straight.params).unwrap()
    );
    assert_eq!(resumed.adam, straight.adam);
}

#[test]
fn best_checkpoint_is_the_mid_run_peak() {
    let fx = PretrainFixture::new(2, 4).unwrap();
    let data = FinetuneData::Generation(generation_examples(&fx));
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(desk_params(fx.vocab.len(), 6), generation_config(12)).unwrap();
    let scripted = [0.2, 0.7, 0.4, 0.7];
    let mut calls = 0;
    let mut snapshots = Vec::new();
    let report = finetune(
        &mut trainer,
        &data,
        SelectionMetric::Bleu,
        &mut |p| {
            snapshots.push(p.clone());
            calls += 1;
            Ok(scripted[calls - 1])
        },
        &mut RunOutput {
            dir: Some(dir.path()),
            log: None,
        },
    )
    .unwrap();
    assert_eq!(report.history, vec![(3, 0.2), (6, 0.7), (9, 0.4), (12, 0.7)]);
    assert_eq!(report.best_step, 6);
    assert_eq!(report.best_value, 0.7);
    assert_eq!(report.best, snapshots[1]);
    assert_ne!(report.best, trainer.params);
    assert_eq!(checkpoint::load(dir.path().join("best.plbk")).unwrap(), snapshots[1]);
}

#[test]
fn metric_and_mode_must_agree() {
    let fx = PretrainFixture::new(2, 4).unwrap();
    let data = FinetuneData::Generation(generation_examples(&fx));
    let mut trainer = Trainer::new(desk_params(fx.vocab.len(), 6), generation_config(3)).unwrap();
    let err = finetune(
        &mut trainer,
        &data,
        SelectionMetric::Accuracy,
        &mut |_| Ok(0.0),
        &mut RunOutput::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(trainer.step, 0);

    let mut pre = Trainer::new(desk_params(fx.vocab.len(), 6), generation_config(3)).unwrap();
    assert!(pretrain(&mut pre, &fx.data(), &mut RunOutput::default()).is_err());

    let cls = FinetuneData::Classification(vec![(vec![5, 2], 0)]);
    let mut no_head = Trainer::new(
        desk_params(fx.vocab.len(), 6),
        TrainConfig {
            mode: Mode::FinetuneClassification,
            ..generation_config(3)
        },
    )
    .unwrap();
    assert!(finetune(
        &mut no_head,
        &cls,
        SelectionMetric::Accuracy,
        &mut |_| Ok(0.0),
        &mut RunOutput::default()
    )
    .is_err());
}

#[test]
fn unseen_target_language_becomes_a_prefix() {
    let fx = PretrainFixture::new(2, 4).unwrap();
    assert!(matches!(
        build_generation_example("x = 1;", "y = 1;", CODE_LANG, "cs", &fx.vocab, 64, 256),
        Err(Error::UnknownLanguage(_))
    ));
    let vocab = fx.vocab.add_language_ids(&["cs"]).unwrap();
    let cs = vocab.language_id("cs").unwrap();
    assert_eq!(cs as usize, vocab.len() - 1);
    let ex = build_generation_example("x = 1;", "y = 1;", CODE_LANG, "cs", &vocab, 64, 256).unwrap();
    assert_eq!(ex.decoder_input[0], cs);

    let mut params = desk_params(fx.vocab.len(), 1);
    let old_rows = params.embed_tokens.data.clone();
    params.resize_vocab(vocab.len(), &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(&params.embed_tokens.data[..old_rows.len()], &old_rows[..]);
    let hyp = greedy(&params, &ex.encoder_input, cs, 8).unwrap();
    assert!(hyp.tokens.iter().all(|&t| (t as usize) < vocab.len()));
}
