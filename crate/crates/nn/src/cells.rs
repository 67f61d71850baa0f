//! Recurrent cells.
//!
//! Both cells store stacked gate weights: GRU rows are ordered
//! (reset, update, candidate), LSTM rows (input, forget, cell, output).

use rand::Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

fn check_vec(g: &Graph, v: Var, len: usize, op: &'static str) -> Result<()> {
    let shape = g.shape(v);
    if shape != [len] {
        return Err(NnError::Shape {
            op,
            expected: vec![len],
            actual: shape,
        });
    }
    Ok(())
}

/// Names and dimensions of one GRU cell's parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruCell {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

/// A [`GruCell`] whose parameters are bound to a graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundGru {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        GruCell {
            prefix: prefix.to_string(),
            input,
            hidden,
        }
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, scale: f64, rng: &mut R) -> Result<()> {
        let (i, h) = (self.input, self.hidden);
        store.insert_uniform(&self.name("w_ih"), &[3 * h, i], scale, rng)?;
        store.insert_uniform(&self.name("w_hh"), &[3 * h, h], scale, rng)?;
        store.insert_uniform(&self.name("b_ih"), &[3 * h], scale, rng)?;
        store.insert_uniform(&self.name("b_hh"), &[3 * h], scale, rng)?;
        Ok(())
    }

    pub fn bind(&self, g: &Graph) -> Result<BoundGru> {
        Ok(BoundGru {
            w_ih: g.param(&self.name("w_ih"))?,
            w_hh: g.param(&self.name("w_hh"))?,
            b_ih: g.param(&self.name("b_ih"))?,
            b_hh: g.param(&self.name("b_hh"))?,
            input: self.input,
            hidden: self.hidden,
        })
    }

    /// One GRU step: `h' = (1 - z) ⊙ n + z ⊙ h`.
    pub fn step(&self, g: &Graph, x: Var, h: Var) -> Result<Var> {
        self.bind(g)?.step(g, x, h)
    }
}

impl BoundGru {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, g: &Graph, x: Var, h: Var) -> Result<Var> {
        check_vec(g, x, self.input, "gru_step input")?;
        check_vec(g, h, self.hidden, "gru_step hidden")?;
        let n = self.hidden;
        let gi = g.linear(self.w_ih, self.b_ih, x);
        let gh = g.linear(self.w_hh, self.b_hh, h);
        let r = g.sigmoid(g.add(g.slice(gi, 0, n), g.slice(gh, 0, n)));
        let z = g.sigmoid(g.add(g.slice(gi, n, n), g.slice(gh, n, n)));
        let cand = g.tanh(g.add(g.slice(gi, 2 * n, n), g.mul(r, g.slice(gh, 2 * n, n))));
        // n + z ⊙ (h - n)
        Ok(g.add(cand, g.mul(z, g.sub(h, cand))))
    }
}

/// Names and dimensions of one LSTM cell's parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    w_ih: Var,
    w_hh: Var,
    b: Var,
    input: usize,
    hidden: usize,
}

/// LSTM hidden and cell state.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        LstmCell {
            prefix: prefix.to_string(),
            input,
            hidden,
        }
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    pub fn init<R: Rng>(&self, store: &mut ParamStore, scale: f64, rng: &mut R) -> Result<()> {
        let (i, h) = (self.input, self.hidden);
        store.insert_uniform(&self.name("w_ih"), &[4 * h, i], scale, rng)?;
        store.insert_uniform(&self.name("w_hh"), &[4 * h, h], scale, rng)?;
        store.insert_uniform(&self.name("b"), &[4 * h], scale, rng)?;
        Ok(())
    }

    pub fn bind(&self, g: &Graph) -> Result<BoundLstm> {
        Ok(BoundLstm {
            w_ih: g.param(&self.name("w_ih"))?,
            w_hh: g.param(&self.name("w_hh"))?,
            b: g.param(&self.name("b"))?,
            input: self.input,
            hidden: self.hidden,
        })
    }

    pub fn step(&self, g: &Graph, x: Var, state: LstmState) -> Result<LstmState> {
        self.bind(g)?.step(g, x, state)
    }
}

impl BoundLstm {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Zero hidden and cell state.
    pub fn zero_state(&self, g: &Graph) -> LstmState {
        LstmState {
            h: g.constant_vec(vec![0.0; self.hidden]),
            c: g.constant_vec(vec![0.0; self.hidden]),
        }
    }

    pub fn step(&self, g: &Graph, x: Var, state: LstmState) -> Result<LstmState> {
        check_vec(g, x, self.input, "lstm_step input")?;
        check_vec(g, state.h, self.hidden, "lstm_step hidden")?;
        check_vec(g, state.c, self.hidden, "lstm_step cell")?;
        let n = self.hidden;
        let gates = g.add(
            g.linear(self.w_ih, self.b, x),
            g.matvec(self.w_hh, state.h),
        );
        let i = g.sigmoid(g.slice(gates, 0, n));
        let f = g.sigmoid(g.slice(gates, n, n));
        let cand = g.tanh(g.slice(gates, 2 * n, n));
        let o = g.sigmoid(g.slice(gates, 3 * n, n));
        let c = g.add(g.mul(f, state.c), g.mul(i, cand));
        let h = g.mul(o, g.tanh(c));
        Ok(LstmState { h, c })
    }
}
