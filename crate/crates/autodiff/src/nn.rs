//! Layers built from tape primitives.

use rand::Rng;

use crate::graph::softmax_slice;
use crate::{Error, Graph, ParamId, ParamStore, Result, Var};

/// Weights of a single GRU cell.
///
/// The reset gate multiplies the previous hidden state before the candidate's
/// recurrent matrix, as in the original formulation:
///
/// ```text
/// r  = σ(W_r x + U_r h + b_r)
/// z  = σ(W_z x + U_z h + b_z)
/// n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = z ⊙ h + (1 - z) ⊙ n
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub input_size: usize,
    pub hidden_size: usize,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_n: ParamId,
}

impl Gru {
    /// Registers `{prefix}.{w,u,b}_{r,z,n}`: weights uniform in
    /// `[-range, range]`, biases zero.
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        range: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w = |g: &str, store: &mut ParamStore, rng: &mut R| {
            store.insert_uniform(&format!("{prefix}.w_{g}"), &[hidden_size, input_size], range, rng)
        };
        let w_r = w("r", store, rng)?;
        let w_z = w("z", store, rng)?;
        let w_n = w("n", store, rng)?;
        let u = |g: &str, store: &mut ParamStore, rng: &mut R| {
            store.insert_uniform(&format!("{prefix}.u_{g}"), &[hidden_size, hidden_size], range, rng)
        };
        let u_r = u("r", store, rng)?;
        let u_z = u("z", store, rng)?;
        let u_n = u("n", store, rng)?;
        let b_r = store.insert_zeros(&format!("{prefix}.b_r"), &[hidden_size])?;
        let b_z = store.insert_zeros(&format!("{prefix}.b_z"), &[hidden_size])?;
        let b_n = store.insert_zeros(&format!("{prefix}.b_n"), &[hidden_size])?;
        Ok(Gru {
            input_size,
            hidden_size,
            w_r,
            u_r,
            b_r,
            w_z,
            u_z,
            b_z,
            w_n,
            u_n,
            b_n,
        })
    }

    /// Re-binds to an existing store by name.
    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let id = |s: &str| store.id(&format!("{prefix}.{s}"));
        let w_r = id("w_r")?;
        let shape = store.get(w_r).shape();
        let (hidden_size, input_size) = (shape[0], shape[1]);
        Ok(Gru {
            input_size,
            hidden_size,
            w_r,
            u_r: id("u_r")?,
            b_r: id("b_r")?,
            w_z: id("w_z")?,
            u_z: id("u_z")?,
            b_z: id("b_z")?,
            w_n: id("w_n")?,
            u_n: id("u_n")?,
            b_n: id("b_n")?,
        })
    }

    pub fn bias_ids(&self) -> [ParamId; 3] {
        [self.b_r, self.b_z, self.b_n]
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        gru_cell(g, x, h, self)
    }
}

pub fn gru_cell(g: &mut Graph, x: Var, h_prev: Var, cell: &Gru) -> Result<Var> {
    if g.shape(x) != [cell.input_size] {
        return Err(Error::dim("gru_cell input", cell.input_size, format!("{:?}", g.shape(x))));
    }
    if g.shape(h_prev) != [cell.hidden_size] {
        return Err(Error::dim(
            "gru_cell hidden",
            cell.hidden_size,
            format!("{:?}", g.shape(h_prev)),
        ));
    }
    let gate = |g: &mut Graph, w: ParamId, u: ParamId, b: ParamId, h: Var| {
        let (w, u, b) = (g.param(w), g.param(u), g.param(b));
        let wx = g.matvec(w, x);
        let uh = g.matvec(u, h);
        let s = g.add(wx, uh);
        g.add(s, b)
    };
    let r = gate(g, cell.w_r, cell.u_r, cell.b_r, h_prev);
    let r = g.sigmoid(r);
    let z = gate(g, cell.w_z, cell.u_z, cell.b_z, h_prev);
    let z = g.sigmoid(z);
    let rh = g.mul(r, h_prev);
    let n = gate(g, cell.w_n, cell.u_n, cell.b_n, rh);
    let n = g.tanh(n);
    // h' = n + z ⊙ (h - n)
    let d = g.sub(h_prev, n);
    let zd = g.mul(z, d);
    Ok(g.add(n, zd))
}

/// Numerically stable softmax of a plain score vector.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("softmax of non-finite scores".into()));
    }
    Ok(softmax_slice(scores))
}
