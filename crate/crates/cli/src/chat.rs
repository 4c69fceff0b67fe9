use std::fs;
use std::io::{self, BufRead, Write};

use sedst::corpus::camrest::tokenize;
use sedst::corpus::KnowledgeBase;
use sedst::decoding::{format_span_trace, DialogueConfig, DialogueRunner};
use sedst::persist::{load_model, SavedModel};

use crate::commands::dialogue_config;
use crate::{ChatArgs, Failure};

pub fn run(a: &ChatArgs) -> Result<(), Failure> {
    let saved = load_model(&a.checkpoint)?;
    let kb = a.kb.as_ref().map(KnowledgeBase::load).transpose()?;
    let cfg = dialogue_config(&a.decode, saved.meta.mode, saved.meta.model.span_len)?;
    let stdin = io::stdin();
    let mut transcript = Vec::new();
    converse(&saved, kb.as_ref(), cfg, stdin.lock(), &mut io::stdout(), &mut transcript)?;
    let path = match &a.transcript {
        Some(p) => p.clone(),
        None => {
            fs::create_dir_all(&a.out)?;
            a.out.join("chat_transcript.txt")
        }
    };
    fs::write(path, transcript)?;
    Ok(())
}

/// Reads user lines until `:quit` or end of input. Each turn is echoed to
/// `out` and appended to `transcript`.
fn converse<R: BufRead, W: Write>(
    saved: &SavedModel,
    kb: Option<&KnowledgeBase>,
    cfg: DialogueConfig,
    input: R,
    out: &mut W,
    transcript: &mut Vec<u8>,
) -> Result<(), Failure> {
    let mut runner = DialogueRunner::new(&saved.params, &saved.model, &saved.vocab, kb, cfg)?;
    let mut emit = |line: String, out: &mut W| -> Result<(), Failure> {
        writeln!(out, "{line}")?;
        transcript.extend_from_slice(line.as_bytes());
        transcript.push(b'\n');
        Ok(())
    };
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        if text == ":quit" {
            break;
        }
        if text.is_empty() {
            continue;
        }
        let user = tokenize(text);
        let ids = saved.vocab.encode(&user);
        let shown: Vec<&str> = saved.vocab.decode(&ids);
        emit(format!("user: {}", shown.join(" ")), out)?;
        let t = runner.turn(&ids, None)?;
        emit(format!("span: {}", saved.vocab.decode(&t.span).join(" ")), out)?;
        emit(format!("trace: {}", format_span_trace(&t, &saved.vocab)), out)?;
        if let Some(n) = t.matches {
            let entity = t.entity.map_or_else(|| "none".to_string(), |e| e.to_string());
            emit(format!("kb: {n} matching entities, selected {entity}"), out)?;
        }
        emit(format!("system: {}", t.surface), out)?;
        out.flush()?;
    }
    Ok(())
}
