mod common;

use common::ScnOracle;
use densecap::scn::{Decode, EventContext, Scn, ScnConfig};
use densecap::synthdata::{EOS, PAD};
use densecap_nn::gradcheck::check_params;
use densecap_nn::{Graph, LstmState, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const V: usize = 7;
const H: usize = 3;

fn config() -> ScnConfig {
    ScnConfig {
        d_feat: 2,
        vis_dim: 3,
        vocab: V,
        hidden: H,
        embed: 2,
        att: 2,
        gate: 2,
        max_len: 5,
    }
}

fn model(contextual: bool, scale: f64, seed: u64) -> (Scn, ParamStore) {
    let scn = Scn::new(config(), contextual);
    let mut s = ParamStore::new();
    scn.init(&mut s, scale, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (scn, s)
}

fn event(rng: &mut ChaCha8Rng, len: usize) -> (EventContext, Vec<Vec<f64>>) {
    let rows: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let vis: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ctx = EventContext {
        seg_feats: Tensor::matrix(len, 2, rows.concat()).unwrap(),
        vis,
    };
    (ctx, rows)
}

fn close_all(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!(common::close(*x, *y, tol), "{a:?} vs {b:?}");
    }
}

#[test]
fn components_match_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..5 {
        let (scn, store) = model(true, 0.8, seed);
        let oracle = ScnOracle { store: &store, hidden: H };
        let (ctx, rows) = event(&mut rng, 4);
        let g = Graph::new(&store);
        let b = scn.bind(&g).unwrap();
        let h: Vec<f64> = (0..H).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..H).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gp: Vec<f64> = (0..H).map(|_| rng.random_range(-1.0..1.0)).collect();

        let st = LstmState {
            h: g.constant_vec(h.clone()),
            c: g.constant_vec(c.clone()),
        };
        let ep = scn
            .episode_step(&b, &g, g.constant_vec(ctx.vis.clone()), g.constant_vec(gp.clone()), st)
            .unwrap();
        let (eh, ec) = oracle.episode(&ctx.vis, &gp, &h, &c);
        close_all(g.value(ep.h).data(), &eh, 1e-12);
        close_all(g.value(ep.c).data(), &ec, 1e-12);

        let ev = scn.event_inputs(&b, &g, &ctx).unwrap();
        let (a, z) = scn.tda_attend(&b, &g, &ev, g.constant_vec(h.clone())).unwrap();
        let (oa, oz) = oracle.tda(&rows, &ctx.vis, &h);
        close_all(g.value(a).data(), &oa, 1e-12);
        close_all(g.value(z).data(), &oz, 1e-12);
        assert!(common::close(g.value(a).data().iter().sum(), 1.0, 1e-12));

        let x = oracle.embed(4);
        let (k, o) = scn.context_gate(&b, &g, &ev, z, g.constant_vec(x.clone()), g.constant_vec(h.clone()));
        let (ok, oo) = oracle.gate(&oz, &ctx.vis, &x, &h);
        close_all(g.value(k).data(), &ok, 1e-12);
        close_all(g.value(o).data(), &oo, 1e-12);

        let step = scn.word_step(&b, &g, &ev, g.constant_vec(x), st).unwrap();
        let os = oracle.step(&rows, &ctx.vis, 4, &h, &c);
        close_all(g.value(step.state.h).data(), &os.h, 1e-12);
        close_all(g.value(step.logits).data(), &os.logits, 1e-12);
    }
}

#[test]
fn gate_saturates_to_either_source() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (scn, mut store) = model(false, 0.5, 3);
    let (ctx, rows) = event(&mut rng, 3);
    let oracle_zbar_vbar = |s: &ParamStore| {
        let o = ScnOracle { store: s, hidden: H };
        let (_, z) = o.tda(&rows, &ctx.vis, &[0.0; H]);
        let zbar: Vec<f64> = common::mv(&common::p(s, "scn.cg.wz"), &z).iter().map(|v| v.tanh()).collect();
        let vbar: Vec<f64> = common::mv(&common::p(s, "scn.cg.wvbar"), &ctx.vis).iter().map(|v| v.tanh()).collect();
        (zbar, vbar)
    };
    // x = embedding of BOS, rigged to a large constant; only the x columns of W_k are non-zero
    store.get_mut("scn.wemb").unwrap().data_mut()[2..4].copy_from_slice(&[1.0, 1.0]);
    for sign in [1.0, -1.0] {
        let wk = store.get_mut("scn.cg.wk").unwrap();
        let cols = wk.cols();
        for r in 0..2 {
            for c in 0..cols {
                wk.data_mut()[r * cols + c] = if (4..6).contains(&c) { sign * 200.0 } else { 0.0 };
            }
        }
        let g = Graph::new(&store);
        let b = scn.bind(&g).unwrap();
        let ev = scn.event_inputs(&b, &g, &ctx).unwrap();
        let h0 = g.constant_vec(vec![0.0; H]);
        let (_, z) = scn.tda_attend(&b, &g, &ev, h0).unwrap();
        let x = g.embed_one(g.param("scn.wemb").unwrap(), 1).unwrap();
        let (k, o) = scn.context_gate(&b, &g, &ev, z, x, h0);
        let (zbar, vbar) = oracle_zbar_vbar(&store);
        let o = g.value(o).data().to_vec();
        if sign > 0.0 {
            assert!(g.value(k).data().iter().all(|&v| v == 1.0));
            close_all(&o, &common::cat(&[&[0.0, 0.0], &vbar]), 1e-12);
        } else {
            assert!(g.value(k).data().iter().all(|&v| v < 1e-150));
            close_all(&o, &common::cat(&[&zbar, &[0.0, 0.0]]), 1e-12);
        }
    }
}

#[test]
fn greedy_decoding_matches_oracle_and_is_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for contextual in [true, false] {
        for seed in 0..6 {
            let (scn, store) = model(contextual, 1.5, seed);
            let evs: Vec<_> = (0..3).map(|i| event(&mut rng, 2 + i)).collect();
            let ctxs: Vec<EventContext> = evs.iter().map(|e| e.0.clone()).collect();
            let a = scn.greedy(&store, &ctxs).unwrap();
            let b = scn.greedy(&store, &ctxs).unwrap();
            assert_eq!(a, b);
            let oracle = ScnOracle { store: &store, hidden: H };
            let pairs: Vec<_> = evs.iter().map(|(c, r)| (r.clone(), c.vis.clone())).collect();
            let expect: Vec<Vec<usize>> = oracle
                .sequence(&pairs, contextual, 5, None)
                .into_iter()
                .map(|x| x.0)
                .collect();
            assert_eq!(a, expect);
            for cap in &a {
                assert!(cap.len() <= 5);
                assert!(cap.iter().all(|&t| t >= EOS && t < V));
            }
        }
    }
}

#[test]
fn eos_bias_ends_every_caption_at_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (scn, mut store) = model(true, 0.5, 1);
    store.get_mut("scn.out.w").unwrap().data_mut().fill(0.0);
    let bias = store.get_mut("scn.out.b").unwrap().data_mut();
    bias.fill(0.0);
    bias[EOS] = 60.0;
    let ctxs: Vec<EventContext> = (0..3).map(|_| event(&mut rng, 3).0).collect();
    assert_eq!(scn.greedy(&store, &ctxs).unwrap(), vec![vec![EOS]; 3]);
    // and the opposite rig never stops before max_len
    store.get_mut("scn.out.b").unwrap().data_mut()[EOS] = -60.0;
    for cap in scn.greedy(&store, &ctxs).unwrap() {
        assert_eq!(cap.len(), 5);
        assert!(!cap.contains(&EOS));
    }
}

#[test]
fn sampled_logp_matches_forced_rescoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (scn, store) = model(true, 1.0, 2);
    let evs: Vec<_> = (0..2).map(|_| event(&mut rng, 3)).collect();
    let ctxs: Vec<EventContext> = evs.iter().map(|e| e.0.clone()).collect();
    let oracle = ScnOracle { store: &store, hidden: H };
    let pairs: Vec<_> = evs.iter().map(|(c, r)| (r.clone(), c.vis.clone())).collect();
    for i in 0..20 {
        let g = Graph::new(&store);
        let b = scn.bind(&g).unwrap();
        let mut srng = ChaCha8Rng::seed_from_u64(i);
        let sampled = scn
            .caption_sequence(&b, &g, &ctxs, |_| Decode::Sample { temperature: 1.0 }, &mut srng)
            .unwrap();
        let caps: Vec<Vec<usize>> = sampled.iter().map(|d| d.tokens.clone()).collect();
        let forced = scn
            .caption_sequence(&b, &g, &ctxs, |k| Decode::Forced(&caps[k]), &mut srng)
            .unwrap();
        let rescored = oracle.sequence(&pairs, true, 5, Some(&caps));
        for ((s, f), (_, lp)) in sampled.iter().zip(&forced).zip(&rescored) {
            assert!(common::close(g.item(s.logp), g.item(f.logp), 1e-12));
            assert!(common::close(g.item(s.logp), *lp, 1e-10));
            assert!(g.item(s.logp) <= 0.0);
        }
    }
}

#[test]
fn uniform_decoder_nll_is_tokens_times_log_live_vocab() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (scn, mut store) = model(true, 0.5, 3);
    store.get_mut("scn.out.w").unwrap().data_mut().fill(0.0);
    store.get_mut("scn.out.b").unwrap().data_mut().fill(0.0);
    let ctxs: Vec<EventContext> = (0..3).map(|_| event(&mut rng, 2).0).collect();
    let caps: Vec<Vec<usize>> = vec![vec![3, 4, EOS], vec![EOS], vec![6, 6, 5, 3, EOS]];
    let refs: Vec<&[usize]> = caps.iter().map(Vec::as_slice).collect();
    let g = Graph::new(&store);
    let nll = g.item(scn.nll(&g, &ctxs, &refs).unwrap());
    let expect = 9.0 * ((V - 2) as f64).ln();
    assert!(common::close(nll, expect, 1e-12), "{nll} vs {expect}");
}

#[test]
fn padding_after_eos_does_not_change_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (scn, store) = model(true, 0.8, 8);
    let ctxs: Vec<EventContext> = (0..2).map(|_| event(&mut rng, 3).0).collect();
    let plain: Vec<&[usize]> = vec![&[3, 4, EOS], &[5, EOS]];
    let padded: Vec<&[usize]> = vec![&[3, 4, EOS, PAD, PAD], &[5, EOS, PAD]];
    let g = Graph::new(&store);
    let a = g.item(scn.nll(&g, &ctxs, &plain).unwrap());
    let b = g.item(scn.nll(&g, &ctxs, &padded).unwrap());
    assert_eq!(a, b);
}

#[test]
fn greedy_logp_beats_sampled_logp_on_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (scn, store) = model(true, 2.0, 9);
    let ctxs: Vec<EventContext> = (0..2).map(|_| event(&mut rng, 3).0).collect();
    let g = Graph::inference(&store);
    let b = scn.bind(&g).unwrap();
    let total = |ds: &[densecap::scn::Decoded]| ds.iter().map(|d| g.item(d.logp)).sum::<f64>();
    let greedy = total(&scn.caption_sequence(&b, &g, &ctxs, |_| Decode::Greedy, &mut rng).unwrap());
    let mut sampled = 0.0;
    for _ in 0..100 {
        sampled += total(&scn.caption_sequence(&b, &g, &ctxs, |_| Decode::Sample { temperature: 1.0 }, &mut rng).unwrap());
    }
    assert!(greedy >= sampled / 100.0, "{greedy} vs {}", sampled / 100.0);
}

#[test]
fn nll_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for contextual in [true, false] {
        let (scn, store) = model(contextual, 0.5, 4);
        let ctxs: Vec<EventContext> = (0..2).map(|_| event(&mut rng, 3).0).collect();
        let caps: Vec<Vec<usize>> = vec![vec![3, 5, EOS], vec![4, EOS]];
        let refs: Vec<&[usize]> = caps.iter().map(Vec::as_slice).collect();
        let report = check_params(&store, 1e-5, |g| common::nn(scn.nll(g, &ctxs, &refs))).unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }
}

#[test]
fn context_makes_captions_order_dependent() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let evs: Vec<EventContext> = (0..2).map(|_| event(&mut rng, 3).0).collect();
    let caps: Vec<Vec<usize>> = vec![vec![3, 5, EOS], vec![4, EOS]];
    let per_event = |scn: &Scn, store: &ParamStore, order: [usize; 2]| -> Vec<f64> {
        let g = Graph::new(store);
        let b = scn.bind(&g).unwrap();
        let ctxs: Vec<EventContext> = order.iter().map(|&i| evs[i].clone()).collect();
        let out = scn
            .caption_sequence(&b, &g, &ctxs, |k| Decode::Forced(&caps[order[k]]), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let mut lp = vec![0.0; 2];
        for (k, d) in out.iter().enumerate() {
            lp[order[k]] = g.item(d.logp);
        }
        lp
    };
    let (ctx_model, s1) = model(true, 0.8, 5);
    let (a, b) = (per_event(&ctx_model, &s1, [0, 1]), per_event(&ctx_model, &s1, [1, 0]));
    assert!((a[0] - b[0]).abs() > 1e-6 && (a[1] - b[1]).abs() > 1e-6);
    let (ind, s2) = model(false, 0.8, 5);
    let (a, b) = (per_event(&ind, &s2, [0, 1]), per_event(&ind, &s2, [1, 0]));
    close_all(&a, &b, 1e-15);
}

#[test]
fn decoding_rejects_malformed_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (scn, store) = model(true, 0.5, 6);
    let (ctx, _) = event(&mut rng, 2);
    let g = Graph::new(&store);
    let bad: Vec<&[usize]> = vec![&[3, 4]];
    assert!(scn.nll(&g, std::slice::from_ref(&ctx), &bad).is_err());
    let oov: Vec<&[usize]> = vec![&[V, EOS]];
    assert!(scn.nll(&g, std::slice::from_ref(&ctx), &oov).is_err());
    // a full-length caption without EOS is what sampling can produce, so it scores
    let full: Vec<&[usize]> = vec![&[3, 3, 3, 3, 3]];
    assert!(scn.nll(&g, std::slice::from_ref(&ctx), &full).is_ok());
    let wrong = EventContext {
        seg_feats: Tensor::matrix(2, 3, vec![0.0; 6]).unwrap(),
        vis: vec![0.0; 3],
    };
    assert!(scn.greedy(&store, &[wrong]).is_err());
    assert!(scn.greedy(&store, &[]).unwrap().is_empty());
}

#[test]
fn temperature_flattens_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (scn, store) = model(false, 3.0, 7);
    let (ctx, _) = event(&mut rng, 3);
    let first_token_entropy = |temperature: f64| {
        let mut counts = [0usize; V];
        let mut srng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..4000 {
            let g = Graph::inference(&store);
            let b = scn.bind(&g).unwrap();
            let d = scn
                .decode_caption(&b, &g, &ctx, g.constant_vec(vec![0.0; H]), Decode::Sample { temperature }, &mut srng)
                .unwrap();
            counts[d.tokens[0]] += 1;
        }
        assert_eq!(counts[0] + counts[1], 0);
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / 4000.0;
                -p * p.ln()
            })
            .sum::<f64>()
    };
    assert!(first_token_entropy(5.0) > first_token_entropy(0.2));
}
