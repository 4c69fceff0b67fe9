use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sedst_autodiff::{finite_difference_check, Graph, ParamStore};

use super::*;
use crate::vocab::{EOS_SPAN_ID, EOU_ID, PAD_ID};

fn small(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_size: 3,
        hidden_size: 3,
        utterance_len: 4,
        span_len: 3,
        init_range: 0.5,
    }
}

fn model(seed: u64, vocab: usize) -> (Model, ParamStore) {
    Model::init(small(vocab), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn zero_all(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        store.values_mut(id).iter_mut().for_each(|v| *v = 0.0);
    }
}

// ---- scalar oracles, written against raw parameter arrays ----

fn p<'a>(store: &'a ParamStore, name: &str) -> &'a [f64] {
    store.by_name(name).unwrap().data()
}

fn mv(w: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..w.len() / n)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                s += w[i * n + j] * x[j];
            }
            s
        })
        .collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru_oracle(store: &ParamStore, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let get = |s: &str| p(store, &format!("{prefix}.{s}"));
    let wr = mv(get("w_r"), x);
    let ur = mv(get("u_r"), h);
    let wz = mv(get("w_z"), x);
    let uz = mv(get("u_z"), h);
    let mut out = vec![0.0; h.len()];
    let mut rh = vec![0.0; h.len()];
    let mut z = vec![0.0; h.len()];
    for i in 0..h.len() {
        let r = sig(wr[i] + ur[i] + get("b_r")[i]);
        z[i] = sig(wz[i] + uz[i] + get("b_z")[i]);
        rh[i] = r * h[i];
    }
    let wn = mv(get("w_n"), x);
    let un = mv(get("u_n"), &rh);
    for i in 0..h.len() {
        let n = (wn[i] + un[i] + get("b_n")[i]).tanh();
        out[i] = (1.0 - z[i]) * n + z[i] * h[i];
    }
    out
}

fn emb_row(store: &ParamStore, name: &str, t: usize, e: usize) -> Vec<f64> {
    p(store, name)[t * e..(t + 1) * e].to_vec()
}

fn attend_oracle(store: &ParamStore, dec: &str, rows: &[Vec<f64>], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w1 = p(store, &format!("{dec}.w1"));
    let w2 = p(store, &format!("{dec}.w2"));
    let v1 = p(store, &format!("{dec}.v1"));
    let q = mv(w2, h);
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| {
            let k = mv(w1, r);
            (0..k.len()).map(|i| v1[i] * (k[i] + q[i]).tanh()).sum()
        })
        .collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
    let z: f64 = ex.iter().sum();
    let a: Vec<f64> = ex.iter().map(|e| e / z).collect();
    let mut ctx = vec![0.0; h.len()];
    for (ai, r) in a.iter().zip(rows) {
        for i in 0..ctx.len() {
            ctx[i] += ai * r[i];
        }
    }
    (a, ctx)
}

fn psi_oracle(store: &ParamStore, dec: &str, rows: &[Vec<f64>], h: &[f64]) -> Vec<f64> {
    let w4 = p(store, &format!("{dec}.w4"));
    let w5 = p(store, &format!("{dec}.w5"));
    let v2 = p(store, &format!("{dec}.v2"));
    let q = mv(w5, h);
    rows.iter()
        .map(|r| {
            let k = mv(w4, r);
            (0..k.len()).map(|i| v2[i] * (k[i] + q[i]).tanh()).sum()
        })
        .collect()
}

fn rows_of(g: &Graph, v: sedst_autodiff::Var) -> Vec<Vec<f64>> {
    let k = g.shape(v)[1];
    g.value(v).chunks(k).map(<[f64]>::to_vec).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
    }
}

// ---- encode_context ----

#[test]
fn all_pad_with_zero_params_encodes_to_zero() {
    let (m, mut store) = model(1, 12);
    zero_all(&mut store);
    let mut g = Graph::new(&store);
    let toks = context_tokens(&[&[], &[]], 4);
    let enc = encode_context(&mut g, &m.prior, &toks, 12).unwrap();
    assert!(g.value(enc.hidden).iter().all(|&v| v == 0.0));
    assert!(enc.kept.is_empty());
}

#[test]
fn encoder_emits_two_n_rows() {
    let mut cfg = small(12);
    cfg.utterance_len = 8;
    let (m, store) = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut g = Graph::new(&store);
    let toks = context_tokens(&[&[5, 6], &[7, 8, 9]], 8);
    let enc = encode_context(&mut g, &m.prior, &toks, 12).unwrap();
    assert_eq!(g.shape(enc.hidden), [16, 3]);
    assert_eq!(enc.kept, vec![0, 1, 8, 9, 10]);
}

#[test]
fn encoder_matches_step_loop_oracle() {
    let (m, store) = model(13, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let toks: Vec<usize> = (0..8).map(|_| rng.gen_range(0..12)).collect();
    let mut g = Graph::new(&store);
    let enc = encode_context(&mut g, &m.prior, &toks, 12).unwrap();
    let got = rows_of(&g, enc.hidden);
    let mut h = vec![0.0; 3];
    for (i, &t) in toks.iter().enumerate() {
        h = gru_oracle(&store, "prior.encoder", &emb_row(&store, "prior.embedding", t, 3), &h);
        close(&got[i], &h, 1e-12);
    }
}

#[test]
fn out_of_range_token_is_an_index_error() {
    let (m, store) = model(1, 12);
    let mut g = Graph::new(&store);
    assert!(matches!(
        encode_context(&mut g, &m.prior, &[3, 12], 12),
        Err(crate::Error::Index(_))
    ));
}

// ---- attend / decode_step ----

#[test]
fn attention_singleton_and_symmetry() {
    let (m, store) = model(3, 12);
    let mut g = Graph::new(&store);
    let r = g.vector(vec![0.3, -0.2, 0.9]);
    let rows = g.stack_rows(&[r]);
    let mem = Memory::new(&mut g, &m.response, rows);
    let h = g.vector(vec![0.1, 0.2, 0.3]);
    let (a, ctx) = attend(&mut g, &m.response, &mem, h);
    close(g.value(a), &[1.0], 1e-15);
    close(g.value(ctx), &[0.3, -0.2, 0.9], 1e-15);
    let rows = g.stack_rows(&[r, r]);
    let mem = Memory::new(&mut g, &m.response, rows);
    let (a, _) = attend(&mut g, &m.response, &mem, h);
    close(g.value(a), &[0.5, 0.5], 1e-15);
}

#[test]
fn attention_matches_scalar_oracle() {
    let (m, store) = model(5, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::new(&store);
    let vars: Vec<_> = rows.iter().map(|r| g.vector(r.clone())).collect();
    let rv = g.stack_rows(&vars);
    let mem = Memory::new(&mut g, &m.prior.span, rv);
    let hv = g.vector(h.clone());
    let (a, ctx) = attend(&mut g, &m.prior.span, &mem, hv);
    let (ao, co) = attend_oracle(&store, "prior.span", &rows, &h);
    close(g.value(a), &ao, 1e-12);
    close(g.value(ctx), &co, 1e-12);
}

#[test]
fn decode_step_zero_and_oracle() {
    let (m, mut store) = model(8, 12);
    let x = vec![0.2, -0.4, 0.1];
    let h = vec![0.5, 0.0, -0.3];
    let c = vec![-0.1, 0.7, 0.2];
    {
        let mut g = Graph::new(&store);
        let (xv, hv, cv) = (g.vector(x.clone()), g.vector(h.clone()), g.vector(c.clone()));
        let out = decode_step(&mut g, &m.response, xv, hv, cv).unwrap();
        let mut input = x.clone();
        input.extend(&c);
        close(g.value(out), &gru_oracle(&store, "response.gru", &input, &h), 1e-12);
        let again = decode_step(&mut g, &m.response, xv, hv, cv).unwrap();
        assert_eq!(g.value(out), g.value(again));
    }
    zero_all(&mut store);
    let mut g = Graph::new(&store);
    let z = g.zeros(3);
    let out = decode_step(&mut g, &m.response, z, z, z).unwrap();
    assert!(g.value(out).iter().all(|&v| v == 0.0));
    let bad = g.zeros(2);
    assert!(decode_step(&mut g, &m.response, bad, z, z).is_err());
}

// ---- generation / copy / mixture ----

#[test]
fn generation_scores_cases() {
    let (m, mut store) = model(4, 6);
    {
        let mut g = Graph::new(&store);
        let h = g.vector(vec![0.3, -0.6, 0.8]);
        let s = generation_scores(&mut g, &m.response, h);
        close(g.value(s), &mv(p(&store, "response.w3"), &[0.3, -0.6, 0.8]), 1e-12);
        let z = g.zeros(3);
        let s = generation_scores(&mut g, &m.response, z);
        assert!(g.value(s).iter().all(|&v| v == 0.0));
    }
    // Row k of W_3 selects h[k % 3].
    let sel: Vec<f64> = (0..6).flat_map(|k| (0..3).map(move |j| (j == k % 3) as u8 as f64)).collect();
    store.assign(m.response.w3, &sel).unwrap();
    let mut g = Graph::new(&store);
    let h = g.vector(vec![0.3, -0.6, 0.8]);
    let s = generation_scores(&mut g, &m.response, h);
    close(g.value(s), &[0.3, -0.6, 0.8, 0.3, -0.6, 0.8], 1e-15);
}

#[test]
fn copy_scores_cases() {
    let (m, mut store) = model(6, 12);
    let rows = vec![vec![0.1, 0.2, -0.3], vec![-0.5, 0.4, 0.0]];
    let h = vec![0.2, -0.1, 0.6];
    {
        let mut g = Graph::new(&store);
        let r: Vec<_> = rows.iter().map(|r| g.vector(r.clone())).collect();
        let rv = g.stack_rows(&r);
        let src = CopySource::new(&mut g, &m.response, Component::SpanCopy, rv, SourceContent::Tokens(vec![5, 6])).unwrap();
        let hv = g.vector(h.clone());
        let psi = copy_scores(&mut g, &m.response, &src, hv);
        close(g.value(psi), &psi_oracle(&store, "response", &rows, &h), 1e-12);
        let one = g.stack_rows(&r[..1]);
        let src = CopySource::new(&mut g, &m.response, Component::SpanCopy, one, SourceContent::Tokens(vec![5])).unwrap();
        let psi = copy_scores(&mut g, &m.response, &src, hv);
        assert_eq!(g.value(psi).len(), 1);
    }
    zero_all(&mut store);
    let mut g = Graph::new(&store);
    let r: Vec<_> = rows.iter().map(|r| g.vector(r.clone())).collect();
    let rv = g.stack_rows(&r);
    let src = CopySource::new(&mut g, &m.response, Component::SpanCopy, rv, SourceContent::Tokens(vec![5, 6])).unwrap();
    let hv = g.vector(h);
    let psi = copy_scores(&mut g, &m.response, &src, hv);
    assert!(g.value(psi).iter().all(|&v| v == 0.0));
}

fn token_and_onehot_sources(
    g: &mut Graph,
    dec: &Decoder,
    tokens: &[usize],
    vocab: usize,
) -> (CopySource, CopySource) {
    let rows: Vec<_> = (0..tokens.len()).map(|i| g.vector(vec![0.1 * i as f64, -0.2, 0.3])).collect();
    let hv = g.stack_rows(&rows);
    let onehots: Vec<_> = tokens
        .iter()
        .map(|&t| g.vector((0..vocab).map(|v| (v == t) as u8 as f64).collect()))
        .collect();
    let d = g.stack_rows(&onehots);
    (
        CopySource::new(g, dec, Component::SpanCopy, hv, SourceContent::Tokens(tokens.to_vec())).unwrap(),
        CopySource::new(g, dec, Component::SpanCopy, hv, SourceContent::Dists(d)).unwrap(),
    )
}

#[test]
fn implicit_copy_with_one_hot_equals_deterministic_copy() {
    let (m, store) = model(9, 6);
    let mut g = Graph::new(&store);
    let (tok, soft) = token_and_onehot_sources(&mut g, &m.response, &[2, 5, 2], 6);
    let psi = g.vector(vec![0.3, -1.2, 0.7]);
    let a = project_copy_mass(&mut g, &tok, psi, 0.4, 6);
    let b = project_copy_mass(&mut g, &soft, psi, 0.4, 6);
    close(g.value(a), g.value(b), 1e-12);
    // Tokens absent from the source receive nothing.
    for v in [0, 1, 3, 4] {
        assert_eq!(g.value(a)[v], 0.0);
    }
}

#[test]
fn soft_copy_mass_example() {
    let (m, store) = model(9, 6);
    let mut g = Graph::new(&store);
    let h = g.zeros(3);
    let hv = g.stack_rows(&[h, h]);
    let d1 = g.vector(vec![0.7, 0.3]);
    let d2 = g.vector(vec![0.4, 0.6]);
    let d = g.stack_rows(&[d1, d2]);
    let src = CopySource::new(&mut g, &m.response, Component::SpanCopy, hv, SourceContent::Dists(d)).unwrap();
    let psi = g.vector(vec![0.0, 0.0]);
    let mass = project_copy_mass(&mut g, &src, psi, 0.0, 2);
    close(g.value(mass), &[1.1, 0.9], 1e-12);
}

#[test]
fn mixture_examples() {
    let (m, store) = model(9, 6);
    let mut g = Graph::new(&store);
    let gen = g.zeros(4);
    let d = mix_distribution(&mut g, gen, &[]).unwrap();
    close(g.value(d.probs), &[0.25; 4], 1e-15);

    let gen = g.zeros(2);
    let h = g.zeros(3);
    let hv = g.stack_rows(&[h]);
    let src = CopySource::new(&mut g, &m.response, Component::SpanCopy, hv, SourceContent::Tokens(vec![0])).unwrap();
    let psi = g.vector(vec![1.0]);
    let d = mix_distribution(&mut g, gen, &[(&src, psi)]).unwrap();
    let e = std::f64::consts::E;
    close(g.value(d.probs), &[(1.0 + e) / (2.0 + e), 1.0 / (2.0 + e)], 1e-12);
    let total: f64 = d.components.iter().map(|c| c.1).sum();
    assert!((total - d.normalizer).abs() < 1e-9);
    // Unshifted masses: generation 2, copy e.
    let scale = d.shift.exp();
    assert!((d.mass(Component::Generation).unwrap() * scale - 2.0).abs() < 1e-12);
    assert!((d.mass(Component::SpanCopy).unwrap() * scale - e).abs() < 1e-12);
}

// ---- span and response distributions ----

fn turn(prev: &[usize], user: &[usize], resp: &[usize]) -> TurnInput {
    TurnInput {
        prev_response: prev.to_vec(),
        user: user.to_vec(),
        response: Some(resp.to_vec()),
    }
}

#[test]
fn span_component_count_follows_turn_index() {
    let (m, store) = model(10, 12);
    let mut g = Graph::new(&store);
    let t0 = turn(&[], &[5, 6, 7], &[8, 9]);
    let (_, s0) = prior_span_distributions(&mut g, &m, &t0, None, SpanMode::TeacherForced(&[5, 4, EOS_SPAN_ID])).unwrap();
    assert!(s0.dists.iter().all(|d| d.components.len() == 2));
    let t1 = turn(&[8, 9], &[10, 11], &[6]);
    let prev = SpanSource { trace: &s0, deterministic: true };
    let (enc, s1) = prior_span_distributions(&mut g, &m, &t1, Some(prev), SpanMode::TeacherForced(&[5, 10, EOS_SPAN_ID])).unwrap();
    assert!(s1.dists.iter().all(|d| d.components.len() == 3));
    let r = response_distributions(&mut g, &m, &enc, &s1, false, &[6, 7]).unwrap();
    assert_eq!(r.len(), 3);
    assert!(r.iter().all(|d| d.components.len() == 2));
    for d in s0.dists.iter().chain(&s1.dists).chain(&r) {
        let s: f64 = g.value(d.probs).iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn teacher_forced_product_equals_chain_rule() {
    let (m, store) = model(11, 12);
    let t = turn(&[6, 7], &[8, 9, 10], &[]);
    let span = [9, 4];
    let mut g = Graph::new(&store);
    let (_, full) = prior_span_distributions(&mut g, &m, &t, None, SpanMode::TeacherForced(&span)).unwrap();
    let joint: f64 = full.dists.iter().zip(&span).map(|(d, &s)| g.value(d.probs)[s]).product();
    // Oracle: condition on each prefix separately in a fresh graph and read
    // the probability of the next token from the last step only.
    let mut chain = 1.0;
    for i in 0..span.len() {
        let mut g2 = Graph::new(&store);
        let (_, part) = prior_span_distributions(&mut g2, &m, &t, None, SpanMode::TeacherForced(&span[..=i])).unwrap();
        chain *= g2.value(part.dists[i].probs)[span[i]];
    }
    assert!((joint - chain).abs() < 1e-15 * chain.max(1.0));
}

#[test]
fn posterior_equals_prior_when_parameters_and_inputs_coincide() {
    let (m, mut store) = model(12, 12);
    let names: Vec<String> = store
        .iter()
        .map(|(n, _)| n.to_string())
        .filter(|n| n.starts_with("prior."))
        .collect();
    for n in names {
        let v = store.by_name(&n).unwrap().data().to_vec();
        let id = store.id(&n.replacen("prior.", "posterior.", 1)).unwrap();
        store.assign(id, &v).unwrap();
    }
    let mut g = Graph::new(&store);
    let t = turn(&[5, 6], &[7, 8], &[]);
    let (_, p) = prior_span_distributions(&mut g, &m, &t, None, SpanMode::TeacherForced(&[7, 4, EOS_SPAN_ID])).unwrap();
    let (enc, q) = posterior_span_distributions(&mut g, &m, &t, None, SpanMode::TeacherForced(&[7, 4, EOS_SPAN_ID])).unwrap();
    assert_eq!(enc.tokens.len(), 12);
    for (a, b) in p.dists.iter().zip(&q.dists) {
        close(g.value(a.probs), g.value(b.probs), 1e-9);
    }
}

#[test]
fn posterior_without_gold_response_is_a_contract_error() {
    let (m, store) = model(12, 12);
    let mut g = Graph::new(&store);
    let t = TurnInput {
        prev_response: vec![],
        user: vec![5],
        response: None,
    };
    let cfg = SpanDecodeConfig { stop: SpanStop::EosTerminated, span_len: 3, no_repeat: false };
    assert!(matches!(
        posterior_span_distributions(&mut g, &m, &t, None, SpanMode::Free(cfg)),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn response_with_one_hot_span_equals_deterministic_span() {
    let (m, store) = model(14, 12);
    let mut g = Graph::new(&store);
    let t = turn(&[], &[5, 6, 7], &[]);
    let (enc, s) = prior_span_distributions(&mut g, &m, &t, None, SpanMode::TeacherForced(&[6, 4, EOS_SPAN_ID])).unwrap();
    let onehots: Vec<_> = s
        .tokens
        .iter()
        .map(|&k| g.vector((0..12).map(|v| (v == k) as u8 as f64).collect()))
        .collect();
    let mut s_hot = s.clone();
    s_hot.probs = g.stack_rows(&onehots);
    let a = response_distributions(&mut g, &m, &enc, &s, true, &[8, 6]).unwrap();
    let b = response_distributions(&mut g, &m, &enc, &s_hot, false, &[8, 6]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        close(g.value(x.probs), g.value(y.probs), 1e-12);
    }
}

#[test]
fn free_running_span_respects_config() {
    let (m, store) = model(15, 12);
    let mut g = Graph::new(&store);
    let t = turn(&[], &[5, 6, 7], &[]);
    let cfg = SpanDecodeConfig { stop: SpanStop::FixedLength, span_len: 5, no_repeat: true };
    let (_, s) = prior_span_distributions(&mut g, &m, &t, None, SpanMode::Free(cfg)).unwrap();
    assert_eq!(s.tokens.len(), 5);
    let mut seen = s.tokens.clone();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 5);
    assert!(s.tokens.iter().all(|&t| t >= crate::vocab::NUM_RESERVED));
    let cfg = SpanDecodeConfig { stop: SpanStop::EosTerminated, span_len: 3, no_repeat: false };
    let (_, s) = prior_span_distributions(&mut g, &m, &t, None, SpanMode::Free(cfg)).unwrap();
    assert!(s.tokens.len() <= 6);
    assert_eq!(s.truncated, s.tokens.last() != Some(&EOS_SPAN_ID));
}

#[test]
fn no_repeat_forces_runner_up() {
    let cfg = SpanDecodeConfig { stop: SpanStop::FixedLength, span_len: 2, no_repeat: true };
    let probs = [0.0, 0.0, 0.0, 0.0, 0.0, 0.9, 0.06, 0.04];
    assert_eq!(cfg.choose(&probs, &[]), Some(5));
    assert_eq!(cfg.choose(&probs, &[5]), Some(6));
    let too_long = SpanDecodeConfig { span_len: 4, ..cfg };
    assert!(too_long.validate(8).is_err());
}

#[test]
fn reconstruction_target_layout() {
    let t = turn(&[5, 6, PAD_ID], &[7, 8, 9, 10, 11], &[6]);
    assert_eq!(
        reconstruction_target(&t, 4),
        vec![5, 6, EOU_ID, 7, 8, 9, 10, EOU_ID, 6, EOU_ID]
    );
}

#[test]
fn teacher_forced_log_likelihood_gradients_match_finite_differences() {
    let (m, store) = model(16, 12);
    let t0 = turn(&[], &[5, 6, 7], &[8, 9]);
    let t1 = turn(&[8, 9], &[10, 6], &[11]);
    let loss = |g: &mut Graph| -> sedst_autodiff::Result<sedst_autodiff::Var> {
        let wrap = |e: crate::Error| sedst_autodiff::Error::Contract(e.to_string());
        let (_, s0) = prior_span_distributions(g, &m, &t0, None, SpanMode::TeacherForced(&[6, 4, 3])).map_err(wrap)?;
        let (enc, s1) = prior_span_distributions(
            g,
            &m,
            &t1,
            Some(SpanSource { trace: &s0, deterministic: false }),
            SpanMode::TeacherForced(&[6, 10, 3]),
        )
        .map_err(wrap)?;
        let r = response_distributions(g, &m, &enc, &s1, false, &[11]).map_err(wrap)?;
        let mut terms = Vec::new();
        for (d, &k) in s1.dists.iter().zip(&[6, 10, 3]).chain(r.iter().zip(&[11, EOU_ID])) {
            let pk = g.pick(d.probs, k);
            let lp = g.ln(pk);
            terms.push(g.scale(lp, -1.0));
        }
        Ok(g.sum_all(&terms))
    };
    let report = finite_difference_check(loss, &store, 1e-5, 200, 3).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}
