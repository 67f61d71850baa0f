//! Sequential captioning.
//!
//! An episode LSTM consumes `[Vis(ê_t); g_{t-1}]` per selected event and
//! hands its hidden state `r_t` to an event LSTM that writes the caption.
//! Each word step attends over the event's segment features (TDA) and gates
//! the attended feature against the event's global feature (CG):
//!
//! ```text
//! α_s = W_α · tanh(W_c c_s + W_v Vis + W_h h_{t-1})      a = softmax(α)
//! z   = Σ_s a_s c_s
//! z̄   = tanh(W_z z)        v̄ = tanh(W_v̄ Vis)
//! k   = σ(W_k [z̄; v̄; x_t; h_{t-1}])
//! o   = [(1 - k) ⊙ z̄; k ⊙ v̄]
//! h_t = LSTM_e([o; x_t], h_{t-1})                        p_t = softmax(W_p h_t + b_p)
//! ```
//!
//! PAD and BOS can never be emitted: their logits are masked out of every
//! output distribution.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use densecap_nn::{BoundLstm, Graph, LstmCell, LstmState, ParamStore, Tensor, Var};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::synthdata::{BOS, EOS, PAD};

const MASKED: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScnConfig {
    pub d_feat: usize,
    pub vis_dim: usize,
    /// Set from the corpus vocabulary at run time.
    pub vocab: usize,
    /// Shared by the episode and event LSTMs, since `h_0^e = r`.
    pub hidden: usize,
    pub embed: usize,
    pub att: usize,
    pub gate: usize,
    pub max_len: usize,
}

impl Default for ScnConfig {
    fn default() -> Self {
        ScnConfig {
            d_feat: 16,
            vis_dim: 64,
            vocab: 0,
            hidden: 64,
            embed: 32,
            att: 32,
            gate: 32,
            max_len: 20,
        }
    }
}

/// Visual inputs of one event.
#[derive(Clone, Debug, PartialEq)]
pub struct EventContext {
    /// `[S, D_feat]` segment features inside the event.
    pub seg_feats: Tensor,
    pub vis: Vec<f64>,
}

impl EventContext {
    /// Rows `iv.start..=iv.end` of `features`.
    pub fn from_video(features: &Tensor, iv: Interval, vis: Vec<f64>) -> Result<Self> {
        let d = features.cols();
        let data = features.data()[iv.start * d..(iv.end + 1) * d].to_vec();
        Ok(EventContext {
            seg_feats: Tensor::matrix(iv.len(), d, data)?,
            vis,
        })
    }
}

/// How the next word is chosen.
#[derive(Clone, Copy, Debug)]
pub enum Decode<'a> {
    Greedy,
    Sample { temperature: f64 },
    /// Teacher forcing with the given ids. They must end with EOS unless they
    /// fill exactly `max_len` steps, as a sampled caption cut at the limit does.
    Forced(&'a [usize]),
}

/// One generated caption inside a graph.
#[derive(Clone, Debug)]
pub struct Decoded {
    /// Emitted ids, including EOS when it was produced.
    pub tokens: Vec<usize>,
    /// Caption feature `g`: the event-LSTM hidden state at the last emitted token.
    pub feature: Var,
    /// Summed log-probability of the emitted tokens under the decoding distribution.
    pub logp: Var,
}

/// Intermediate values of one word step, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct WordStep {
    pub attention: Var,
    pub gate: Var,
    pub o: Var,
    pub state: LstmState,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct Scn {
    pub config: ScnConfig,
    /// Without context the episode LSTM is absent and `r = 0` for every event.
    pub contextual: bool,
    episode: LstmCell,
    event: LstmCell,
}

/// All SCN parameters bound to one graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundScn {
    episode: Option<BoundLstm>,
    event: BoundLstm,
    wemb: Var,
    wp: Var,
    bp: Var,
    wc: Var,
    wv: Var,
    wh: Var,
    walpha: Var,
    wz: Var,
    wvbar: Var,
    wk: Var,
}

/// Per-event values that do not change across word steps.
#[derive(Clone, Copy, Debug)]
pub struct EventInputs {
    feats: Var,
    feats_proj: Var,
    vis_proj: Var,
    vbar: Var,
}

impl Scn {
    pub fn new(config: ScnConfig, contextual: bool) -> Self {
        let c = &config;
        Scn {
            episode: LstmCell::new("scn.episode", c.vis_dim + c.hidden, c.hidden),
            event: LstmCell::new("scn.event", 2 * c.gate + c.embed, c.hidden),
            contextual,
            config,
        }
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, scale: f64, rng: &mut R) -> Result<()> {
        let c = &self.config;
        if self.contextual {
            self.episode.init(store, scale, rng)?;
        }
        self.event.init(store, scale, rng)?;
        store.insert_uniform("scn.wemb", &[c.vocab, c.embed], scale, rng)?;
        store.insert_uniform("scn.out.w", &[c.vocab, c.hidden], scale, rng)?;
        store.insert_uniform("scn.out.b", &[c.vocab], scale, rng)?;
        store.insert_uniform("scn.tda.wc", &[c.att, c.d_feat], scale, rng)?;
        store.insert_uniform("scn.tda.wv", &[c.att, c.vis_dim], scale, rng)?;
        store.insert_uniform("scn.tda.wh", &[c.att, c.hidden], scale, rng)?;
        store.insert_uniform("scn.tda.walpha", &[c.att], scale, rng)?;
        store.insert_uniform("scn.cg.wz", &[c.gate, c.d_feat], scale, rng)?;
        store.insert_uniform("scn.cg.wvbar", &[c.gate, c.vis_dim], scale, rng)?;
        store.insert_uniform("scn.cg.wk", &[c.gate, 2 * c.gate + c.embed + c.hidden], scale, rng)?;
        Ok(())
    }

    pub fn bind(&self, g: &Graph) -> Result<BoundScn> {
        Ok(BoundScn {
            episode: if self.contextual {
                Some(self.episode.bind(g)?)
            } else {
                None
            },
            event: self.event.bind(g)?,
            wemb: g.param("scn.wemb")?,
            wp: g.param("scn.out.w")?,
            bp: g.param("scn.out.b")?,
            wc: g.param("scn.tda.wc")?,
            wv: g.param("scn.tda.wv")?,
            wh: g.param("scn.tda.wh")?,
            walpha: g.param("scn.tda.walpha")?,
            wz: g.param("scn.cg.wz")?,
            wvbar: g.param("scn.cg.wvbar")?,
            wk: g.param("scn.cg.wk")?,
        })
    }

    fn zeros(&self, g: &Graph) -> Var {
        g.constant_vec(vec![0.0; self.config.hidden])
    }

    /// Episode-LSTM step on `[vis; g_prev]`. Returns `r_t` (the new hidden state) and the state.
    pub fn episode_step(&self, b: &BoundScn, g: &Graph, vis: Var, g_prev: Var, state: LstmState) -> Result<LstmState> {
        let cell = b.episode.as_ref().expect("episode step needs a contextual model");
        Ok(cell.step(g, g.concat(&[vis, g_prev]), state)?)
    }

    pub fn event_inputs(&self, b: &BoundScn, g: &Graph, ctx: &EventContext) -> Result<EventInputs> {
        let c = &self.config;
        if ctx.seg_feats.cols() != c.d_feat || ctx.vis.len() != c.vis_dim {
            return Err(Error::Nn(densecap_nn::NnError::Shape {
                op: "event context",
                expected: vec![c.d_feat, c.vis_dim],
                actual: vec![ctx.seg_feats.cols(), ctx.vis.len()],
            }));
        }
        let feats = g.input(ctx.seg_feats.clone());
        let vis = g.constant_vec(ctx.vis.clone());
        Ok(EventInputs {
            feats,
            feats_proj: g.matmul_nt(feats, b.wc),
            vis_proj: g.matvec(b.wv, vis),
            vbar: g.tanh(g.matvec(b.wvbar, vis)),
        })
    }

    /// Temporal dynamic attention; returns `(a, z)`.
    pub fn tda_attend(&self, b: &BoundScn, g: &Graph, ev: &EventInputs, h_prev: Var) -> Result<(Var, Var)> {
        let bias = g.add(ev.vis_proj, g.matvec(b.wh, h_prev));
        let alpha = g.matvec(g.tanh(g.add_row_vec(ev.feats_proj, bias)), b.walpha);
        let a = g.softmax(alpha, 0)?;
        Ok((a, g.matvec_t(ev.feats, a)))
    }

    /// Context gating; returns `(k, o)`.
    pub fn context_gate(&self, b: &BoundScn, g: &Graph, ev: &EventInputs, z: Var, x: Var, h_prev: Var) -> (Var, Var) {
        let zbar = g.tanh(g.matvec(b.wz, z));
        let k = g.sigmoid(g.matvec(b.wk, g.concat(&[zbar, ev.vbar, x, h_prev])));
        let o = g.concat(&[g.mul(g.one_minus(k), zbar), g.mul(k, ev.vbar)]);
        (k, o)
    }

    /// One word step from the previous word embedding `x` and state.
    pub fn word_step(&self, b: &BoundScn, g: &Graph, ev: &EventInputs, x: Var, state: LstmState) -> Result<WordStep> {
        let (attention, z) = self.tda_attend(b, g, ev, state.h)?;
        let (gate, o) = self.context_gate(b, g, ev, z, x, state.h);
        let state = b.event.step(g, g.concat(&[o, x]), state)?;
        let logits = g.linear(b.wp, b.bp, state.h);
        Ok(WordStep {
            attention,
            gate,
            o,
            state,
            logits,
        })
    }

    fn mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.config.vocab];
        m[PAD] = MASKED;
        m[BOS] = MASKED;
        m
    }

    /// Writes one caption starting from `h_0^e = r`, `c_0 = 0`.
    pub fn decode_caption<R: Rng>(&self, b: &BoundScn, g: &Graph, ctx: &EventContext, r: Var, mode: Decode<'_>, rng: &mut R) -> Result<Decoded> {
        let ev = self.event_inputs(b, g, ctx)?;
        let mask = self.mask();
        let mut state = LstmState { h: r, c: self.zeros(g) };
        let mut prev = BOS;
        let mut tokens = Vec::new();
        let mut terms = Vec::new();
        let limit = match mode {
            Decode::Forced(ids) => {
                // trailing PAD after EOS is ignored
                let len = ids.iter().rposition(|&i| i != PAD).map_or(0, |p| p + 1);
                if ids[..len].last() != Some(&EOS) && len != self.config.max_len {
                    return Err(Error::Corpus(
                        "forced caption must end with EOS or fill max_len".into(),
                    ));
                }
                len
            }
            _ => self.config.max_len,
        };
        while tokens.len() < limit {
            let x = g.embed_one(b.wemb, prev)?;
            let step = self.word_step(b, g, &ev, x, state)?;
            state = step.state;
            let logits = match mode {
                Decode::Sample { temperature } if temperature != 1.0 => g.scale(step.logits, 1.0 / temperature),
                _ => step.logits,
            };
            let logp = g.log_softmax(g.add_const(logits, &mask));
            let next = match mode {
                Decode::Greedy => argmax(g.value(logp).data()),
                Decode::Sample { .. } => sample_index(g.value(logp).data(), rng),
                Decode::Forced(ids) => {
                    let id = ids[tokens.len()];
                    if id >= self.config.vocab {
                        return Err(Error::Nn(densecap_nn::NnError::OutOfVocabulary {
                            id,
                            size: self.config.vocab,
                        }));
                    }
                    id
                }
            };
            terms.push(g.index(logp, next));
            tokens.push(next);
            prev = next;
            if next == EOS {
                break;
            }
        }
        Ok(Decoded {
            tokens,
            feature: state.h,
            logp: g.add_n(&terms),
        })
    }

    /// Captions events in order, threading `r` and `g` between them. `mode(i)` picks the
    /// decoding of event `i`.
    pub fn caption_sequence<'m, R: Rng>(
        &self,
        b: &BoundScn,
        g: &Graph,
        events: &[EventContext],
        mode: impl Fn(usize) -> Decode<'m>,
        rng: &mut R,
    ) -> Result<Vec<Decoded>> {
        let mut episode = LstmState {
            h: self.zeros(g),
            c: self.zeros(g),
        };
        let mut g_prev = self.zeros(g);
        let mut out = Vec::with_capacity(events.len());
        for (i, ctx) in events.iter().enumerate() {
            let r = if self.contextual {
                let vis = g.constant_vec(ctx.vis.clone());
                episode = self.episode_step(b, g, vis, g_prev, episode)?;
                episode.h
            } else {
                self.zeros(g)
            };
            let d = self.decode_caption(b, g, ctx, r, mode(i), rng)?;
            g_prev = d.feature;
            out.push(d);
        }
        Ok(out)
    }

    /// Teacher-forced negative log-likelihood of `captions` (each ending in EOS).
    pub fn nll(&self, g: &Graph, events: &[EventContext], captions: &[&[usize]]) -> Result<Var> {
        let b = self.bind(g)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let decoded = self.caption_sequence(&b, g, events, |i| Decode::Forced(captions[i]), &mut rng)?;
        let total = g.add_n(&decoded.iter().map(|d| d.logp).collect::<Vec<_>>());
        Ok(g.scale(total, -1.0))
    }

    /// Greedy captions with frozen parameters.
    pub fn greedy(&self, store: &ParamStore, events: &[EventContext]) -> Result<Vec<Vec<usize>>> {
        if events.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::inference(store);
        let b = self.bind(&g)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let decoded = self.caption_sequence(&b, &g, events, |_| Decode::Greedy, &mut rng)?;
        Ok(decoded.into_iter().map(|d| d.tokens).collect())
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from log-probabilities.
pub fn sample_index<R: Rng>(logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &lp) in logp.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
