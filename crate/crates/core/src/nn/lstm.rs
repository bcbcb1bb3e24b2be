use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// One LSTM layer. Gate blocks are stacked in the order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    /// `[4H × in]`
    pub w_ih: ParamId,
    /// `[4H × H]`
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Stacked unidirectional LSTM with zero initial state.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
    pub input: usize,
    pub hidden: usize,
}

pub struct LstmOutput {
    /// Top-layer hidden states `[T × H]`.
    pub states: Var,
    /// Final top-layer hidden state `[H]`.
    pub last: Var,
}

impl Lstm {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 || num_layers == 0 {
            return Err(Error::config(format!(
                "{name}: lstm needs positive input ({input}), hidden ({hidden}) and layers ({num_layers})"
            )));
        }
        let init = Init::Uniform {
            bound: 1.0 / (hidden as f64).sqrt(),
        };
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input } else { hidden };
                let p = format!("{name}.layer{l}");
                LstmLayer {
                    w_ih: store.insert(format!("{p}.w_ih"), init.sample(&[4 * hidden, inp], rng)),
                    w_hh: store.insert(format!("{p}.w_hh"), init.sample(&[4 * hidden, hidden], rng)),
                    b_ih: store.insert(format!("{p}.b_ih"), init.sample(&[4 * hidden], rng)),
                    b_hh: store.insert(format!("{p}.b_hh"), init.sample(&[4 * hidden], rng)),
                    input: inp,
                    hidden,
                }
            })
            .collect();
        Ok(Self {
            layers,
            input,
            hidden,
        })
    }

    /// Parameter count of a stacked LSTM, `4H(in + H + 2)` for the first layer
    /// and `4H(2H + 2)` for every further one.
    pub fn count(input: usize, hidden: usize, num_layers: usize) -> u64 {
        let h = hidden as u64;
        let first = 4 * h * (input as u64 + h + 2);
        first + (num_layers as u64 - 1) * 4 * h * (2 * h + 2)
    }

    pub fn num_params(&self) -> u64 {
        Self::count(self.input, self.hidden, self.layers.len())
    }

    /// Run the recurrence over `seq: [T × D]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, seq: Var) -> Result<LstmOutput> {
        let shape = g.shape(seq).to_vec();
        if shape.len() != 2 || shape[1] != self.input {
            return Err(Error::dim("lstm", &shape, &[self.input]));
        }
        let steps = shape[0];
        let mut x = seq;
        let mut last = None;
        for layer in &self.layers {
            let (states, h) = layer.run(g, x, steps)?;
            x = states;
            last = Some(h);
        }
        let last = g.reshape(last.expect("at least one layer"), [self.hidden])?;
        Ok(LstmOutput { states: x, last })
    }
}

impl LstmLayer {
    /// One cell update from `x_proj` (`x W_ihᵀ + b_ih`, shape `[1 × 4H]`) and state `(h, c)`.
    pub fn cell<T: Scalar>(&self, g: &mut Graph<T>, x_proj: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let w_hh = g.param(self.w_hh);
        let b_hh = g.param(self.b_hh);
        let hp = g.matmul_t(h, w_hh)?;
        let hp = g.add_row(hp, b_hh)?;
        let z = g.add(x_proj, hp)?;
        let zi = g.slice(z, 1, 0, hd)?;
        let zf = g.slice(z, 1, hd, hd)?;
        let zg = g.slice(z, 1, 2 * hd, hd)?;
        let zo = g.slice(z, 1, 3 * hd, hd)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    fn run<T: Scalar>(&self, g: &mut Graph<T>, x: Var, steps: usize) -> Result<(Var, Var)> {
        let w_ih = g.param(self.w_ih);
        let b_ih = g.param(self.b_ih);
        let xp = g.matmul_t(x, w_ih)?;
        let xp = g.add_row(xp, b_ih)?;
        let mut h = g.constant(Tensor::zeros([1, self.hidden]));
        let mut c = g.constant(Tensor::zeros([1, self.hidden]));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = g.slice(xp, 0, t, 1)?;
            let (hn, cn) = self.cell(g, xt, h, c)?;
            h = hn;
            c = cn;
            states.push(h);
        }
        let all = g.concat(&states, 0)?;
        Ok((all, h))
    }
}
