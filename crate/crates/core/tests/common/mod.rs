//! Independent reference implementations for tests: plain loops over slices,
//! no graph, no shared helpers from the library except plain data types.
#![allow(dead_code)]

use std::collections::BTreeSet;

use densecap::epn::Proposal;
use densecap::Interval;
use densecap_nn::{ParamStore, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn p(store: &ParamStore, name: &str) -> Vec<f64> {
    store.get(name).unwrap_or_else(|| panic!("missing {name}")).data().to_vec()
}

/// `W x` for row-major `W` with `x.len()` columns.
pub fn mv(w: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    assert_eq!(w.len() % cols, 0);
    (0..w.len() / cols)
        .map(|r| (0..cols).map(|c| w[r * cols + c] * x[c]).sum())
        .collect()
}

pub fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|x| x.iter().copied()).collect()
}

pub fn gru(store: &ParamStore, pre: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let nh = h.len();
    let gi = mv(&p(store, &format!("{pre}.w_ih")), x);
    let gh = mv(&p(store, &format!("{pre}.w_hh")), h);
    let (bi, bh) = (p(store, &format!("{pre}.b_ih")), p(store, &format!("{pre}.b_hh")));
    (0..nh)
        .map(|j| {
            let r = sig(gi[j] + bi[j] + gh[j] + bh[j]);
            let z = sig(gi[nh + j] + bi[nh + j] + gh[nh + j] + bh[nh + j]);
            let n = (gi[2 * nh + j] + bi[2 * nh + j] + r * (gh[2 * nh + j] + bh[2 * nh + j])).tanh();
            (1.0 - z) * n + z * h[j]
        })
        .collect()
}

pub fn lstm(store: &ParamStore, pre: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nh = h.len();
    let gi = mv(&p(store, &format!("{pre}.w_ih")), x);
    let gh = mv(&p(store, &format!("{pre}.w_hh")), h);
    let b = p(store, &format!("{pre}.b"));
    let a = |r: usize| gi[r] + gh[r] + b[r];
    let (mut h2, mut c2) = (vec![0.0; nh], vec![0.0; nh]);
    for j in 0..nh {
        let (i, f, g, o) = (sig(a(j)), sig(a(nh + j)), a(2 * nh + j).tanh(), sig(a(3 * nh + j)));
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

/// Per-segment confidences `[t][k]` and top-layer hidden states of the proposal network.
pub fn epn_forward(store: &ParamStore, features: &Tensor, hidden: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (w, b) = (p(store, "epn.out.w"), p(store, "epn.out.b"));
    let (mut h0, mut h1) = (vec![0.0; hidden], vec![0.0; hidden]);
    let (mut conf, mut hs) = (Vec::new(), Vec::new());
    for t in 0..features.rows() {
        h0 = gru(store, "epn.gru0", features.row(t), &h0);
        h1 = gru(store, "epn.gru1", &h0, &h1);
        conf.push(mv(&w, &h1).iter().zip(&b).map(|(x, y)| sig(x + y)).collect());
        hs.push(h1.clone());
    }
    (conf, hs)
}

/// `Loc(p)` written as an explicit bin walk.
pub fn loc_mask(iv: Interval, t_c: usize, l_loc: usize) -> Vec<f64> {
    let len = iv.end - iv.start + 1;
    let mut ones = ((l_loc * len) as f64 / t_c as f64).round() as usize;
    if ones < 1 {
        ones = 1;
    }
    if ones > l_loc {
        ones = l_loc;
    }
    let mut first = l_loc * iv.start / t_c;
    if first + ones > l_loc {
        first = l_loc - ones;
    }
    (0..l_loc).map(|i| if i >= first && i < first + ones { 1.0 } else { 0.0 }).collect()
}

pub fn embedding(c: &Proposal, t_c: usize, l_loc: usize) -> Vec<f64> {
    cat(&[&loc_mask(c.interval, t_c, l_loc), &c.vis])
}

/// Pointer logits over END and the candidates, given the pointer hidden state.
pub fn esgn_logits(store: &ParamStore, cands: &[Proposal], t_c: usize, l_loc: usize, h: &[f64]) -> Vec<f64> {
    let (w1, w2, w) = (p(store, "esgn.att.w1"), p(store, "esgn.att.w2"), p(store, "esgn.att.w"));
    let w2h = mv(&w2, h);
    let mut us = vec![p(store, "esgn.end")];
    us.extend(cands.iter().map(|c| embedding(c, t_c, l_loc)));
    us.iter()
        .map(|u| {
            let w1u = mv(&w1, u);
            (0..w.len()).map(|a| w[a] * (w1u[a] + w2h[a]).tanh()).sum()
        })
        .collect()
}

pub fn esgn_encode(store: &ParamStore, cands: &[Proposal], hidden: usize) -> Vec<f64> {
    let mut h = vec![0.0; hidden];
    for c in cands {
        h = gru(store, "esgn.enc", &c.vis, &h);
    }
    h
}

/// Teacher-forced pointer logits for every step `0..=gt.len()`.
pub fn esgn_teacher_logits(store: &ParamStore, cands: &[Proposal], gt: &[Interval], t_c: usize, l_loc: usize, hidden: usize) -> Vec<Vec<f64>> {
    let mut h = esgn_encode(store, cands, hidden);
    let mut c = vec![0.0; hidden];
    let mut input = p(store, "esgn.start");
    let mut out = Vec::new();
    for n in 0..=gt.len() {
        let (h2, c2) = lstm(store, "esgn.ptr", &input, &h, &c);
        h = h2;
        c = c2;
        out.push(esgn_logits(store, cands, t_c, l_loc, &h));
        if n < gt.len() {
            let ious: Vec<f64> = cands.iter().map(|q| tiou(q.interval, gt[n])).collect();
            let mut best = 0;
            for m in 0..cands.len() {
                if ious[m] > ious[best] {
                    best = m;
                }
            }
            input = embedding(&cands[best], t_c, l_loc);
        }
    }
    out
}

/// Stable `-(y log σ(x) + (1-y) log(1-σ(x)))`.
pub fn bce(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

pub fn esgn_loss(store: &ParamStore, cands: &[Proposal], gt: &[Interval], t_c: usize, l_loc: usize, hidden: usize) -> f64 {
    let logits = esgn_teacher_logits(store, cands, gt, t_c, l_loc, hidden);
    let mut total = 0.0;
    for (n, row) in logits.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            let y = if n == gt.len() {
                if j == 0 { 1.0 } else { 0.0 }
            } else if j == 0 {
                0.0
            } else {
                tiou(cands[j - 1].interval, gt[n])
            };
            total += bce(x, y);
        }
    }
    total
}

/// Scalar SCN, mirroring the documented equations.
pub struct ScnOracle<'a> {
    pub store: &'a ParamStore,
    pub hidden: usize,
}

pub struct StepOut {
    pub attention: Vec<f64>,
    pub z: Vec<f64>,
    pub gate: Vec<f64>,
    pub o: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ScnOracle<'_> {
    pub fn episode(&self, vis: &[f64], g_prev: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        lstm(self.store, "scn.episode", &cat(&[vis, g_prev]), h, c)
    }

    pub fn tda(&self, feats: &[Vec<f64>], vis: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.store;
        let (wc, wv, wh, wa) = (p(s, "scn.tda.wc"), p(s, "scn.tda.wv"), p(s, "scn.tda.wh"), p(s, "scn.tda.walpha"));
        let (pv, ph) = (mv(&wv, vis), mv(&wh, h));
        let alpha: Vec<f64> = feats
            .iter()
            .map(|cs| {
                let pc = mv(&wc, cs);
                (0..wa.len()).map(|a| wa[a] * (pc[a] + pv[a] + ph[a]).tanh()).sum()
            })
            .collect();
        let mx = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = alpha.iter().map(|x| (x - mx).exp()).collect();
        let tot: f64 = e.iter().sum();
        let a: Vec<f64> = e.iter().map(|x| x / tot).collect();
        let d = feats[0].len();
        let z = (0..d).map(|k| (0..feats.len()).map(|i| a[i] * feats[i][k]).sum()).collect();
        (a, z)
    }

    pub fn gate(&self, z: &[f64], vis: &[f64], x: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.store;
        let zbar: Vec<f64> = mv(&p(s, "scn.cg.wz"), z).iter().map(|v| v.tanh()).collect();
        let vbar: Vec<f64> = mv(&p(s, "scn.cg.wvbar"), vis).iter().map(|v| v.tanh()).collect();
        let k: Vec<f64> = mv(&p(s, "scn.cg.wk"), &cat(&[&zbar, &vbar, x, h])).iter().map(|v| sig(*v)).collect();
        let mut o: Vec<f64> = k.iter().zip(&zbar).map(|(k, z)| (1.0 - k) * z).collect();
        o.extend(k.iter().zip(&vbar).map(|(k, v)| k * v));
        (k, o)
    }

    pub fn embed(&self, id: usize) -> Vec<f64> {
        let w = p(self.store, "scn.wemb");
        let e = self.store.get("scn.wemb").unwrap().shape()[1];
        w[id * e..(id + 1) * e].to_vec()
    }

    pub fn step(&self, feats: &[Vec<f64>], vis: &[f64], prev: usize, h: &[f64], c: &[f64]) -> StepOut {
        let x = self.embed(prev);
        let (attention, z) = self.tda(feats, vis, h);
        let (gate, o) = self.gate(&z, vis, &x, h);
        let (h2, c2) = lstm(self.store, "scn.event", &cat(&[&o, &x]), h, c);
        let logits = mv(&p(self.store, "scn.out.w"), &h2)
            .iter()
            .zip(p(self.store, "scn.out.b"))
            .map(|(a, b)| a + b)
            .collect();
        StepOut {
            attention,
            z,
            gate,
            o,
            h: h2,
            c: c2,
            logits,
        }
    }

    /// Log-probabilities with PAD and BOS excluded.
    pub fn log_probs(logits: &[f64]) -> Vec<f64> {
        let live: Vec<usize> = (2..logits.len()).collect();
        let mx = live.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + live.iter().map(|&i| (logits[i] - mx).exp()).sum::<f64>().ln();
        (0..logits.len())
            .map(|i| if i < 2 { f64::NEG_INFINITY } else { logits[i] - lse })
            .collect()
    }

    /// Greedy (or forced) decoding of one event; returns (tokens, final h, summed logp).
    pub fn decode(&self, feats: &[Vec<f64>], vis: &[f64], r: &[f64], max_len: usize, forced: Option<&[usize]>) -> (Vec<usize>, Vec<f64>, f64) {
        let (mut h, mut c) = (r.to_vec(), vec![0.0; self.hidden]);
        let (mut prev, mut toks, mut lp) = (1usize, Vec::new(), 0.0);
        let limit = forced.map_or(max_len, |f| f.len());
        while toks.len() < limit {
            let s = self.step(feats, vis, prev, &h, &c);
            h = s.h;
            c = s.c;
            let logp = Self::log_probs(&s.logits);
            let next = match forced {
                Some(f) => f[toks.len()],
                None => {
                    let mut best = 2;
                    for i in 2..logp.len() {
                        if logp[i] > logp[best] {
                            best = i;
                        }
                    }
                    best
                }
            };
            lp += logp[next];
            toks.push(next);
            prev = next;
            if next == 2 {
                break;
            }
        }
        (toks, h, lp)
    }

    /// Captions a sequence of events `(segment rows, vis)`, contextual or not.
    pub fn sequence(&self, events: &[(Vec<Vec<f64>>, Vec<f64>)], contextual: bool, max_len: usize, forced: Option<&[Vec<usize>]>) -> Vec<(Vec<usize>, f64)> {
        let hd = self.hidden;
        let (mut eh, mut ec, mut g) = (vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]);
        let mut out = Vec::new();
        for (i, (feats, vis)) in events.iter().enumerate() {
            let r = if contextual {
                let (h2, c2) = self.episode(vis, &g, &eh, &ec);
                eh = h2;
                ec = c2;
                eh.clone()
            } else {
                vec![0.0; hd]
            };
            let (toks, h, lp) = self.decode(feats, vis, &r, max_len, forced.map(|f| f[i].as_slice()));
            g = h;
            out.push((toks, lp));
        }
        out
    }
}

// ---- brute-force set computations ----

pub fn segments(iv: Interval) -> BTreeSet<usize> {
    (iv.start..=iv.end).collect()
}

pub fn tiou(a: Interval, b: Interval) -> f64 {
    let (sa, sb) = (segments(a), segments(b));
    sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
}

/// Picks the best remaining proposal by explicit scan, drops everything overlapping it.
pub fn nms(props: &[Proposal], theta: f64, m_max: usize) -> Vec<Interval> {
    let better = |a: &Proposal, b: &Proposal| {
        a.score > b.score
            || (a.score == b.score && a.interval.start < b.interval.start)
            || (a.score == b.score && a.interval.start == b.interval.start && a.interval.end < b.interval.end)
    };
    let mut pool: Vec<Proposal> = props.to_vec();
    let mut kept = Vec::new();
    while !pool.is_empty() && kept.len() < m_max {
        let mut bi = 0;
        for i in 1..pool.len() {
            if better(&pool[i], &pool[bi]) {
                bi = i;
            }
        }
        let best = pool.remove(bi);
        pool.retain(|q| tiou(q.interval, best.interval) <= theta);
        kept.push(best.interval);
    }
    kept.sort();
    kept
}

pub fn labels(events: &[Interval], t_c: usize, k: usize) -> Vec<u8> {
    let mut y = Vec::new();
    for t in 0..t_c {
        for j in 0..k {
            let hit = j <= t && events.iter().any(|e| tiou(Interval { start: t - j, end: t }, *e) > 0.5);
            y.push(hit as u8);
        }
    }
    y
}

pub fn match_reference(detected: &[Interval], gt: &[Interval]) -> Vec<(usize, f64)> {
    detected
        .iter()
        .map(|d| {
            let ious: Vec<f64> = gt.iter().map(|e| tiou(*d, *e)).collect();
            let top = ious.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tied: Vec<usize> = (0..gt.len()).filter(|&j| ious[j] == top).collect();
            let min_start = tied.iter().map(|&j| gt[j].start).min().unwrap();
            let j = *tied.iter().find(|&&j| gt[j].start == min_start).unwrap();
            (j, top)
        })
        .collect()
}

pub const THETAS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

/// (recall per θ, precision per θ).
pub fn detection(pred: &[Vec<Interval>], gt: &[Vec<Interval>]) -> (Vec<f64>, Vec<f64>) {
    let mut rec = Vec::new();
    let mut prec = Vec::new();
    for &th in &THETAS {
        let (mut r, mut pr) = (0.0, 0.0);
        for v in 0..pred.len() {
            let mut hit_gt = 0;
            for e in &gt[v] {
                let mut found = false;
                for q in &pred[v] {
                    if tiou(*e, *q) >= th {
                        found = true;
                    }
                }
                if found {
                    hit_gt += 1;
                }
            }
            let mut hit_pred = 0;
            for q in &pred[v] {
                let mut found = false;
                for e in &gt[v] {
                    if tiou(*e, *q) >= th {
                        found = true;
                    }
                }
                if found {
                    hit_pred += 1;
                }
            }
            if !gt[v].is_empty() {
                r += hit_gt as f64 / gt[v].len() as f64;
            }
            if !pred[v].is_empty() {
                pr += hit_pred as f64 / pred[v].len() as f64;
            }
        }
        rec.push(r / pred.len() as f64);
        prec.push(pr / pred.len() as f64);
    }
    (rec, prec)
}

/// n-grams as an unsorted list of (gram, count).
pub fn grams(t: &[usize], n: usize) -> Vec<(Vec<usize>, usize)> {
    let mut out: Vec<(Vec<usize>, usize)> = Vec::new();
    if t.len() < n {
        return out;
    }
    for i in 0..=t.len() - n {
        let g = t[i..i + n].to_vec();
        match out.iter_mut().find(|(h, _)| *h == g) {
            Some(e) => e.1 += 1,
            None => out.push((g, 1)),
        }
    }
    out
}

fn count_of(list: &[(Vec<usize>, usize)], g: &[usize]) -> usize {
    list.iter().find(|(h, _)| h.as_slice() == g).map_or(0, |e| e.1)
}

pub fn bleu(cand: &[usize], refs: &[Vec<usize>], n: usize) -> f64 {
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut prod = 1.0;
    for k in 1..=n {
        let cg = grams(cand, k);
        let total: usize = cg.iter().map(|e| e.1).sum();
        let mut clipped = 0;
        for (g, c) in &cg {
            let m = refs.iter().map(|r| count_of(&grams(r, k), g)).max().unwrap();
            clipped += (*c).min(m);
        }
        if total == 0 || clipped == 0 {
            return 0.0;
        }
        prod *= clipped as f64 / total as f64;
    }
    let c = cand.len() as f64;
    let mut r = refs[0].len() as f64;
    for x in refs {
        let l = x.len() as f64;
        if (l - c).abs() < (r - c).abs() || ((l - c).abs() == (r - c).abs() && l < r) {
            r = l;
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * prod.powf(1.0 / n as f64)
}

pub struct CiderRef {
    pub docs: Vec<Vec<usize>>,
}

impl CiderRef {
    fn idf(&self, g: &[usize]) -> f64 {
        let df = self.docs.iter().filter(|d| count_of(&grams(d, g.len()), g) > 0).count().max(1);
        ((self.docs.len() + 1) as f64 / df as f64).ln()
    }

    pub fn score(&self, cand: &[usize], refs: &[Vec<usize>]) -> f64 {
        if cand.is_empty() || refs.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        for n in 1..=4 {
            let vc: Vec<(Vec<usize>, f64)> = grams(cand, n).into_iter().map(|(g, c)| { let w = c as f64 * self.idf(&g); (g, w) }).collect();
            let nc = vc.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            let mut acc = 0.0;
            for r in refs {
                let vr: Vec<(Vec<usize>, f64)> = grams(r, n).into_iter().map(|(g, c)| { let w = c as f64 * self.idf(&g); (g, w) }).collect();
                let nr = vr.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
                if nc > 0.0 && nr > 0.0 {
                    let mut dot = 0.0;
                    for (g, x) in &vc {
                        for (h, y) in &vr {
                            if g == h {
                                dot += x * y;
                            }
                        }
                    }
                    acc += dot / (nc * nr);
                }
            }
            total += acc / refs.len() as f64;
        }
        10.0 * total / 4.0
    }
}

/// (BLEU@1..4 averaged over θ, CIDEr averaged over θ) for dense captions.
pub fn dense(preds: &[Vec<(Interval, Vec<usize>)>], gt: &[Vec<(Interval, Vec<usize>)>], cider: &CiderRef) -> ([f64; 4], f64) {
    let mut b_out = [0.0; 4];
    let mut c_out = 0.0;
    for &th in &THETAS {
        let mut b_th = [0.0; 4];
        let mut c_th = 0.0;
        for v in 0..preds.len() {
            if preds[v].is_empty() {
                continue;
            }
            let mut b_v = [0.0; 4];
            let mut c_v = 0.0;
            for (iv, words) in &preds[v] {
                let refs: Vec<Vec<usize>> = gt[v].iter().filter(|(e, _)| tiou(*e, *iv) >= th).map(|(_, w)| w.clone()).collect();
                for n in 0..4 {
                    b_v[n] += bleu(words, &refs, n + 1);
                }
                c_v += cider.score(words, &refs);
            }
            for n in 0..4 {
                b_th[n] += b_v[n] / preds[v].len() as f64;
            }
            c_th += c_v / preds[v].len() as f64;
        }
        for n in 0..4 {
            b_out[n] += b_th[n] / preds.len() as f64 / 4.0;
        }
        c_out += c_th / preds.len() as f64 / 4.0;
    }
    (b_out, c_out)
}

// ---- random instances ----

pub fn rand_interval(rng: &mut ChaCha8Rng, t_c: usize) -> Interval {
    let a = rng.random_range(0..t_c);
    let b = rng.random_range(0..t_c);
    Interval { start: a.min(b), end: a.max(b) }
}

pub fn rand_proposals(rng: &mut ChaCha8Rng, t_c: usize, n: usize, vis_dim: usize) -> Vec<Proposal> {
    (0..n)
        .map(|_| Proposal {
            interval: rand_interval(rng, t_c),
            // coarse scores so ties occur
            score: rng.random_range(0..6) as f64 / 5.0,
            vis: (0..vis_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

pub fn rand_features(rng: &mut ChaCha8Rng, t_c: usize, d: usize) -> Tensor {
    Tensor::matrix(t_c, d, (0..t_c * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

pub fn rand_words(rng: &mut ChaCha8Rng, len: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Converts library errors for closures handed to the gradient checker.
pub fn nn<T>(r: densecap::Result<T>) -> densecap_nn::Result<T> {
    r.map_err(|e| match e {
        densecap::Error::Nn(n) => n,
        other => panic!("{other}"),
    })
}
