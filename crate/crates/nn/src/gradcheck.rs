//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values; it shares no code
//! with the backward pass it checks.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Magnitude below which errors are measured absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (tensor, element, analytic, numeric) at the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, name: &str, k: usize, a: f64, n: f64) {
        self.checked += 1;
        let e = rel_err(a, n);
        if self.worst.is_none() || e > self.max_rel_err {
            self.max_rel_err = e;
            self.worst = Some((name.to_string(), k, a, n));
        }
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Compares backward gradients of every parameter in `store` with central differences of `f`.
pub fn check_params<F>(store: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Graph) -> Result<Var>,
{
    let analytic = {
        let g = Graph::new(store);
        let loss = f(&g)?;
        g.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let g = Graph::inference(s);
        let loss = f(&g)?;
        Ok(g.item(loss))
    };
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let n = store.get(&name).expect("listed").len();
        let zeros;
        let a = match analytic.param(&name) {
            Some(t) => t.data(),
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        for k in 0..n {
            let orig = work.get(&name).expect("listed").data()[k];
            work.get_mut(&name).expect("listed").data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(&name).expect("listed").data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(&name).expect("listed").data_mut()[k] = orig;
            report.record(&name, k, a[k], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// Same as [`check_params`] but differentiates with respect to free-standing inputs.
pub fn check_inputs<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::detached();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_grad(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let g = Graph::detached();
        let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
        let loss = f(&g, &vars)?;
        Ok(g.item(loss))
    };
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport::default();
    for (i, v) in vars.iter().enumerate() {
        let n = inputs[i].len();
        let a: Vec<f64> = grads
            .wrt(*v)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        for k in 0..n {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[k] = orig;
            report.record(&format!("input{i}"), k, a[k], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}
