use std::fs;
use std::path::Path;

use sedst::corpus::synth::{generate_synthetic_corpus, GenConfig};
use sedst::corpus::{load_corpus, save_corpus, KnowledgeBase, Split};
use sedst::decoding::DialogueConfig;
use sedst::evaluation::{Embeddings, EvalOptions};
use sedst::model::{SpanDecodeConfig, SpanStop};
use sedst::persist::{load_model, save_model};
use sedst::pipeline::{self, Dataset};
use sedst::training::{LambdaSchedule, Mode, StopReason, TrainingConfig};
use serde_json::json;

use crate::{DecodeArgs, EvalArgs, Failure, GenArgs, Preset, Schedule, SpanModeArg, SplitArg, TrainArgs};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const KB_FILE: &str = "kb.json";
pub const SPLIT_FILE: &str = "split.json";

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), Failure> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

pub fn gen_corpus(a: &GenArgs) -> Result<(), Failure> {
    let d = GenConfig::default();
    let cfg = GenConfig {
        sessions: a.sessions.unwrap_or(d.sessions),
        slots: a.slots.unwrap_or(d.slots),
        values_per_slot: a.values_per_slot.unwrap_or(d.values_per_slot),
        entities: a.entities.unwrap_or(d.entities),
        min_turns: a.min_turns.unwrap_or(d.min_turns),
        max_turns: a.max_turns.unwrap_or(d.max_turns),
        ..d
    };
    let (sessions, kb) = generate_synthetic_corpus(&cfg, a.seed)?;
    let split = Split::three_one_one(&sessions);
    fs::create_dir_all(&a.out)?;
    save_corpus(a.out.join(CORPUS_FILE), &sessions)?;
    kb.save(a.out.join(KB_FILE))?;
    let manifest = json!({
        "sessions": sessions.len(),
        "counts": { "train": split.train.len(), "valid": split.valid.len(), "test": split.test.len() },
        "train": split.train,
        "valid": split.valid,
        "test": split.test,
    });
    write_json(&a.out.join(SPLIT_FILE), &manifest)?;
    write_json(&a.out.join("gen_config.json"), &json!({ "seed": a.seed, "generator": cfg }))?;
    println!(
        "wrote {} sessions ({} informable slots, {} entities) to {}",
        sessions.len(),
        kb.schema.informable.len(),
        kb.entities.len(),
        a.out.display()
    );
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, Failure> {
    let kb = KnowledgeBase::load(dir.join(KB_FILE))?;
    let sessions = load_corpus(dir.join(CORPUS_FILE), &kb.schema)?;
    let split: Split = serde_json::from_str(&fs::read_to_string(dir.join(SPLIT_FILE))?)?;
    Ok(Dataset::new(sessions, kb, split))
}

fn training_config(a: &TrainArgs) -> Result<TrainingConfig, Failure> {
    let mut c = match (&a.config, a.preset) {
        (Some(p), _) => serde_json::from_str(&fs::read_to_string(p)?)?,
        (None, Some(Preset::Nontask)) => TrainingConfig::nontask(),
        (None, _) => TrainingConfig::default(),
    };
    if a.config.is_some() && a.preset.is_some() {
        return Err(Failure::Usage("--config and --preset are exclusive".into()));
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag { c.$field = v; }
        )*};
    }
    set!(seed => seed, supervision => supervision, lr => learning_rate, batch_size => batch_size,
         hidden => hidden_size, embed => embed_size, utterance_len => utterance_len,
         span_len => span_len, epochs => max_epochs, patience => patience);
    if let Some(g) = a.grad_clip {
        c.grad_clip = (g > 0.0).then_some(g);
    }
    let (start, end) = match c.lambda {
        LambdaSchedule::Constant { value } => (value, 0.001),
        LambdaSchedule::Linear { start, end } => (start, end),
    };
    let start = a.lambda.unwrap_or(start);
    c.lambda = match a.lambda_schedule {
        Some(Schedule::Linear) => LambdaSchedule::Linear { start, end },
        Some(Schedule::Constant) => LambdaSchedule::Constant { value: start },
        None => match c.lambda {
            LambdaSchedule::Constant { .. } => LambdaSchedule::Constant { value: start },
            LambdaSchedule::Linear { .. } => LambdaSchedule::Linear { start, end },
        },
    };
    c.use_unlabeled &= !a.no_unlabeled;
    c.posterior_regularization &= !a.no_posterior_reg;
    c.log_wall_clock &= !a.no_wall_clock;
    c.validate()?;
    Ok(c)
}

pub fn train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = training_config(a)?;
    let ds = load_dataset(&a.data)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("train_config.json"), &json!(cfg))?;
    let (out, meta) = pipeline::train(&ds, &cfg)?;
    println!(
        "mode: {} (annotated sessions: {}, unannotated: {})",
        out.log.mode.unwrap_or(Mode::Supervised).name(),
        out.log.annotated,
        out.log.unannotated
    );
    fs::write(a.out.join("train_log.tsv"), out.log.to_tsv())?;
    save_model(a.out.join("model.ckpt"), &out.params, &meta, &out.rng)?;
    match &out.stop {
        StopReason::Diverged { epoch, message } => Err(Failure::Numerical(format!(
            "training diverged in epoch {epoch}: {message}; kept the checkpoint of epoch {}",
            out.best_epoch
        ))),
        stop => {
            println!("stopped: {stop:?}; best epoch {}", out.best_epoch);
            Ok(())
        }
    }
}

pub fn dialogue_config(d: &DecodeArgs, mode: Mode, span_len: usize) -> Result<DialogueConfig, Failure> {
    let mut c = pipeline::dialogue_config(mode, d.span_len.unwrap_or(span_len), d.beam);
    if let Some(m) = d.span_mode {
        c.span = SpanDecodeConfig {
            stop: match m {
                SpanModeArg::EosTerminated => SpanStop::EosTerminated,
                SpanModeArg::FixedLength => SpanStop::FixedLength,
            },
            ..c.span
        };
    }
    c.span.no_repeat |= d.no_repeat;
    c.slot_intersection |= d.unsupervised_slot_intersection;
    if c.beam_size == 0 {
        return Err(Failure::Usage("beam size must be positive".into()));
    }
    Ok(c)
}

pub fn evaluate(a: &EvalArgs) -> Result<(), Failure> {
    let ds = load_dataset(&a.data)?;
    let saved = load_model(&a.checkpoint)?;
    let dialogue = dialogue_config(&a.decode, saved.meta.mode, saved.meta.model.span_len)?;
    let embeddings = match &a.embeddings {
        Some(p) => Embeddings::load(p)?,
        None => pipeline::synthetic_embeddings(&ds.vocab, a.seed)?,
    };
    let ids = match a.split {
        SplitArg::Valid => &ds.split.valid,
        SplitArg::Test => &ds.split.test,
    };
    let sessions = ds.part(ids)?;
    let mut opts = EvalOptions::new(dialogue);
    opts.keyword_thanks = a.keyword_thanks;
    fs::create_dir_all(&a.out)?;
    write_json(
        &a.out.join("eval_config.json"),
        &json!({
            "checkpoint": a.checkpoint,
            "data": a.data,
            "split": format!("{:?}", a.split).to_lowercase(),
            "embeddings": a.embeddings,
            "seed": a.seed,
            "options": opts,
        }),
    )?;
    let (report, transcripts) = pipeline::evaluate_saved(&saved, &ds, &sessions, &embeddings, &opts)?;
    fs::write(a.out.join("eval_report.json"), report.to_json()?)?;
    let table = report.to_table();
    fs::write(a.out.join("eval_report.txt"), &table)?;
    let mut lines = String::new();
    for t in &transcripts {
        lines.push_str(&serde_json::to_string(t)?);
        lines.push('\n');
    }
    fs::write(a.out.join("transcripts.jsonl"), lines)?;
    print!("{table}");
    Ok(())
}
