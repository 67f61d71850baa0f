//! Event-sequence selection with a pointer network.
//!
//! An encoder GRU reads `Vis(p)` of the candidates in start order and
//! initializes an LSTM pointer. At every step the pointer scores the END
//! element (index 0) and each candidate with
//! `a_j = sigmoid(wᵀ tanh(W1 u_j + W2 h))`, where `u(p) = [Loc(p); Vis(p)]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use densecap_nn::{sigmoid, Graph, GruCell, LstmCell, LstmState, ParamStore, Var};

use crate::epn::Proposal;
use crate::error::{Error, Result};
use crate::interval::{tiou, Interval};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsgnConfig {
    pub vis_dim: usize,
    /// Shared by the encoder GRU and the pointer LSTM, since one initializes the other.
    pub hidden: usize,
    pub att: usize,
    pub l_loc: usize,
    pub n_max: usize,
}

impl Default for EsgnConfig {
    fn default() -> Self {
        EsgnConfig {
            vis_dim: 64,
            hidden: 64,
            att: 32,
            l_loc: 20,
            n_max: 8,
        }
    }
}

impl EsgnConfig {
    pub fn embed_dim(&self) -> usize {
        self.l_loc + self.vis_dim
    }
}

/// Binary mask of `iv` rasterized onto `l_loc` equal bins of `[0, t_c)`.
///
/// The mask holds `max(1, round(l_loc * len / t_c))` contiguous ones starting
/// at the bin containing `iv.start`.
pub fn loc_mask(iv: Interval, t_c: usize, l_loc: usize) -> Vec<f64> {
    let ones = ((l_loc * iv.len()) as f64 / t_c as f64).round().max(1.0) as usize;
    let ones = ones.min(l_loc);
    let first = (l_loc * iv.start / t_c).min(l_loc - ones);
    let mut m = vec![0.0; l_loc];
    m[first..first + ones].iter_mut().for_each(|x| *x = 1.0);
    m
}

/// `u(p) = [Loc(p); Vis(p)]`.
pub fn pointer_embedding(p: &Proposal, t_c: usize, l_loc: usize) -> Vec<f64> {
    let mut u = loc_mask(p.interval, t_c, l_loc);
    u.extend_from_slice(&p.vis);
    u
}

/// Index of the highest logit among END (index 0) and the still-available candidates.
/// Ties go to the lower index.
pub fn pointer_argmax(logits: &[f64], available: &[bool]) -> usize {
    let mut best = 0;
    for j in 1..logits.len() {
        if available[j - 1] && logits[j] > logits[best] {
            best = j;
        }
    }
    best
}

/// Soft targets per supervised step: row `n < N` is `[0, tIoU(p_1, e_n), ..]`,
/// the final row is `[1, 0, ..]`.
pub fn esgn_targets(candidates: &[Proposal], gt: &[Interval]) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = gt
        .iter()
        .map(|e| {
            std::iter::once(0.0)
                .chain(candidates.iter().map(|p| tiou(&p.interval, e)))
                .collect()
        })
        .collect();
    let mut end = vec![0.0; candidates.len() + 1];
    end[0] = 1.0;
    rows.push(end);
    rows
}

/// Candidate with maximum tIoU to `e`; ties go to the earlier candidate.
pub fn best_match(candidates: &[Proposal], e: &Interval) -> usize {
    let mut best = 0;
    for (m, p) in candidates.iter().enumerate() {
        if tiou(&p.interval, e) > tiou(&candidates[best].interval, e) {
            best = m;
        }
    }
    best
}

/// A selected event sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EventSequence {
    pub events: Vec<Proposal>,
    /// Indices into the candidate list.
    pub indices: Vec<usize>,
    /// True when the selector chose END; false when stopped by the pool or `n_max`.
    pub terminated: bool,
}

impl EventSequence {
    pub fn empty() -> Self {
        EventSequence {
            events: Vec::new(),
            indices: Vec::new(),
            terminated: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Esgn {
    pub config: EsgnConfig,
    enc: GruCell,
    ptr: LstmCell,
}

impl Esgn {
    pub fn new(config: EsgnConfig) -> Self {
        Esgn {
            enc: GruCell::new("esgn.enc", config.vis_dim, config.hidden),
            ptr: LstmCell::new("esgn.ptr", config.embed_dim(), config.hidden),
            config,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, scale: f64, rng: &mut R) -> Result<()> {
        let c = &self.config;
        self.enc.init(store, scale, rng)?;
        self.ptr.init(store, scale, rng)?;
        store.insert_uniform("esgn.att.w1", &[c.att, c.embed_dim()], scale, rng)?;
        store.insert_uniform("esgn.att.w2", &[c.att, c.hidden], scale, rng)?;
        store.insert_uniform("esgn.att.w", &[c.att], scale, rng)?;
        store.insert_uniform("esgn.end", &[c.embed_dim()], scale, rng)?;
        store.insert_uniform("esgn.start", &[c.embed_dim()], scale, rng)?;
        Ok(())
    }

    /// Final encoder state after reading `Vis` of every candidate in order.
    pub fn encode_candidates(&self, g: &Graph, candidates: &[Proposal]) -> Result<Var> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let enc = self.enc.bind(g)?;
        let mut h = g.constant_vec(vec![0.0; self.config.hidden]);
        for p in candidates {
            h = enc.step(g, g.constant_vec(p.vis.clone()), h)?;
        }
        Ok(h)
    }

    /// `W1 u_j` for END and every candidate, as an `[M + 1, att]` matrix.
    pub fn project_embeddings(&self, g: &Graph, embeddings: Var) -> Result<Var> {
        Ok(g.matmul_nt(embeddings, g.param("esgn.att.w1")?))
    }

    /// Stacks `u(p_end)` above the candidate embeddings.
    pub fn embedding_matrix(&self, g: &Graph, candidates: &[Proposal], t_c: usize) -> Result<Var> {
        let e = g.param("esgn.end")?;
        let rows: Vec<Var> = std::iter::once(e)
            .chain(
                candidates
                    .iter()
                    .map(|p| g.constant_vec(pointer_embedding(p, t_c, self.config.l_loc))),
            )
            .collect();
        Ok(g.stack(&rows))
    }

    /// Attention logits `wᵀ tanh(W1 u_j + W2 h)` given projected embeddings.
    pub fn attention_logits(&self, g: &Graph, projected: Var, h: Var) -> Result<Var> {
        let w2h = g.matvec(g.param("esgn.att.w2")?, h);
        let act = g.tanh(g.add_row_vec(projected, w2h));
        Ok(g.matvec(act, g.param("esgn.att.w")?))
    }

    fn initial_state(&self, g: &Graph, candidates: &[Proposal]) -> Result<LstmState> {
        let h = self.encode_candidates(g, candidates)?;
        Ok(LstmState {
            h,
            c: g.constant_vec(vec![0.0; self.config.hidden]),
        })
    }

    /// Greedy selection until END, pool exhaustion or `n_max`.
    pub fn select_sequence(&self, store: &ParamStore, candidates: &[Proposal], t_c: usize) -> Result<EventSequence> {
        let g = Graph::inference(store);
        let ptr = self.ptr.bind(&g)?;
        let mut state = self.initial_state(&g, candidates)?;
        let projected = self.project_embeddings(&g, self.embedding_matrix(&g, candidates, t_c)?)?;
        let mut available = vec![true; candidates.len()];
        let mut input = g.param("esgn.start")?;
        let mut seq = EventSequence::empty();
        loop {
            if seq.events.len() >= self.config.n_max || !available.contains(&true) {
                break;
            }
            state = ptr.step(&g, input, state)?;
            let logits = self.attention_logits(&g, projected, state.h)?;
            let j = pointer_argmax(g.value(logits).data(), &available);
            if j == 0 {
                seq.terminated = true;
                break;
            }
            available[j - 1] = false;
            seq.indices.push(j - 1);
            seq.events.push(candidates[j - 1].clone());
            input = g.constant_vec(pointer_embedding(&candidates[j - 1], t_c, self.config.l_loc));
        }
        Ok(seq)
    }

    /// Like [`Esgn::select_sequence`] but draws each step from the softmax of the available logits.
    pub fn sample_sequence<R: Rng>(&self, store: &ParamStore, candidates: &[Proposal], t_c: usize, rng: &mut R) -> Result<EventSequence> {
        let g = Graph::inference(store);
        let ptr = self.ptr.bind(&g)?;
        let mut state = self.initial_state(&g, candidates)?;
        let projected = self.project_embeddings(&g, self.embedding_matrix(&g, candidates, t_c)?)?;
        let mut available = vec![true; candidates.len()];
        let mut input = g.param("esgn.start")?;
        let mut seq = EventSequence::empty();
        while seq.events.len() < self.config.n_max && available.contains(&true) {
            state = ptr.step(&g, input, state)?;
            let logits = self.attention_logits(&g, projected, state.h)?;
            let masked: Vec<f64> = g
                .value(logits)
                .data()
                .iter()
                .enumerate()
                .map(|(j, &l)| if j == 0 || available[j - 1] { l } else { f64::NEG_INFINITY })
                .collect();
            let lse = densecap_nn::log_sum_exp(&masked);
            let logp: Vec<f64> = masked.iter().map(|l| l - lse).collect();
            let j = crate::scn::sample_index(&logp, rng);
            if j == 0 {
                seq.terminated = true;
                break;
            }
            available[j - 1] = false;
            seq.indices.push(j - 1);
            seq.events.push(candidates[j - 1].clone());
            input = g.constant_vec(pointer_embedding(&candidates[j - 1], t_c, self.config.l_loc));
        }
        Ok(seq)
    }

    /// Per-step scores `a_t` for a teacher-forced pass, for inspection.
    pub fn attention_scores(&self, store: &ParamStore, candidates: &[Proposal], gt: &[Interval], t_c: usize) -> Result<Vec<Vec<f64>>> {
        let g = Graph::inference(store);
        let logits = self.teacher_forced_logits(&g, candidates, gt, t_c)?;
        Ok(logits
            .iter()
            .map(|&l| g.value(l).data().iter().map(|&x| sigmoid(x)).collect())
            .collect())
    }

    fn teacher_forced_logits(&self, g: &Graph, candidates: &[Proposal], gt: &[Interval], t_c: usize) -> Result<Vec<Var>> {
        let ptr = self.ptr.bind(g)?;
        let mut state = self.initial_state(g, candidates)?;
        let projected = self.project_embeddings(g, self.embedding_matrix(g, candidates, t_c)?)?;
        let mut input = g.param("esgn.start")?;
        let mut out = Vec::with_capacity(gt.len() + 1);
        for n in 0..=gt.len() {
            state = ptr.step(g, input, state)?;
            out.push(self.attention_logits(g, projected, state.h)?);
            if n < gt.len() {
                let m = best_match(candidates, &gt[n]);
                input = g.constant_vec(pointer_embedding(&candidates[m], t_c, self.config.l_loc));
            }
        }
        Ok(out)
    }

    /// Soft-target BCE over `(N + 1) x (M + 1)` scores; `gt` must be sorted by start.
    pub fn loss(&self, g: &Graph, candidates: &[Proposal], gt: &[Interval], t_c: usize) -> Result<Var> {
        let logits = self.teacher_forced_logits(g, candidates, gt, t_c)?;
        let targets = esgn_targets(candidates, gt);
        let ones = vec![1.0; candidates.len() + 1];
        let terms: Vec<Var> = logits
            .iter()
            .zip(&targets)
            .map(|(&l, t)| g.bce_with_logits(l, t, &ones))
            .collect();
        Ok(g.add_n(&terms))
    }
}
