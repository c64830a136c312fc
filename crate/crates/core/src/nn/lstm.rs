//! Multi-layer LSTM with gate order input, forget, candidate, output.

use super::init::Init;
use super::{Bound, NnError, ParamBuilder, ParamId, ParamStore, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Hidden and cell state, each `[N, H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize) -> Self {
        Self { h: tape.constant(Tensor::zeros([batch, hidden])), c: tape.constant(Tensor::zeros([batch, hidden])) }
    }
}

/// One LSTM layer: `w_ih` is `[4H, in]`, `w_hh` is `[4H, H]`, `b` is `[4H]`.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

/// Layer weights transposed once on the tape so every step is two matmuls.
#[derive(Clone, Copy, Debug)]
pub struct PreparedLstm {
    w_ih_t: Var,
    w_hh_t: Var,
    bias: Var,
    input_size: usize,
    hidden_size: usize,
}

impl LstmLayer {
    pub fn new(pb: &mut ParamBuilder<'_>, input_size: usize, hidden_size: usize) -> Result<Self> {
        let h = hidden_size;
        let init = Init::FanInUniform { fan_in: h };
        let w_ih = pb.create("w_ih", &[4 * h, input_size], init)?;
        let w_hh = pb.create("w_hh", &[4 * h, h], init)?;
        let mut b = Tensor::zeros([4 * h]);
        b.data_mut()[h..2 * h].fill(1.0);
        let bias = pb.create_value("b", b)?;
        Ok(Self { w_ih, w_hh, bias, input_size, hidden_size })
    }

    pub fn prepare(&self, tape: &mut Tape, p: &Bound) -> Result<PreparedLstm> {
        Ok(PreparedLstm {
            w_ih_t: tape.transpose(p[self.w_ih])?,
            w_hh_t: tape.transpose(p[self.w_hh])?,
            bias: p[self.bias],
            input_size: self.input_size,
            hidden_size: self.hidden_size,
        })
    }

    /// Single step on `[N, in]` input.
    pub fn step(&self, tape: &mut Tape, p: &Bound, x: Var, state: LstmState) -> Result<LstmState> {
        let prepared = self.prepare(tape, p)?;
        prepared.step(tape, x, state)
    }
}

impl PreparedLstm {
    pub fn step(&self, tape: &mut Tape, x: Var, state: LstmState) -> Result<LstmState> {
        let xs = tape.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != self.input_size {
            return Err(NnError::Config(format!(
                "lstm_step: input shape {xs:?} does not match input size {}",
                self.input_size
            )));
        }
        let h = self.hidden_size;
        let gx = tape.matmul(x, self.w_ih_t)?;
        let gh = tape.matmul(state.h, self.w_hh_t)?;
        let gates = tape.add(gx, gh)?;
        let gates = tape.bias_add(gates, self.bias)?;
        let i = tape.slice(gates, 1, 0, h)?;
        let f = tape.slice(gates, 1, h, 2 * h)?;
        let g = tape.slice(gates, 1, 2 * h, 3 * h)?;
        let o = tape.slice(gates, 1, 3 * h, 4 * h)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Stacked LSTM; layer `l > 0` consumes the hidden output of layer `l − 1`.
#[derive(Clone, Debug)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

impl LstmStack {
    pub fn new(pb: &mut ParamBuilder<'_>, input_size: usize, hidden_size: usize, num_layers: usize) -> Result<Self> {
        if num_layers == 0 || hidden_size == 0 {
            return Err(NnError::Config("lstm needs at least one layer and a positive hidden size".into()));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let inp = if l == 0 { input_size } else { hidden_size };
            layers.push(LstmLayer::new(&mut pb.scope(&format!("l{l}")), inp, hidden_size)?);
        }
        Ok(Self { layers })
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> Vec<LstmState> {
        let h = self.hidden_size();
        (0..self.layers.len()).map(|_| LstmState::zeros(tape, batch, h)).collect()
    }

    /// Runs the stack over `inputs` (each `[N, in]`). Returns the top-layer
    /// hidden output per step and the final state of every layer.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        inputs: &[Var],
        init: Vec<LstmState>,
    ) -> Result<(Vec<Var>, Vec<LstmState>)> {
        if init.len() != self.layers.len() {
            return Err(NnError::Config(format!(
                "lstm: {} initial states for {} layers",
                init.len(),
                self.layers.len()
            )));
        }
        let prepared = self.layers.iter().map(|l| l.prepare(tape, p)).collect::<Result<Vec<_>>>()?;
        let mut states = init;
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let mut inp = x;
            for (layer, state) in prepared.iter().zip(states.iter_mut()) {
                *state = layer.step(tape, inp, *state)?;
                inp = state.h;
            }
            outputs.push(inp);
        }
        Ok((outputs, states))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w_ih, l.w_hh, l.bias]).collect()
    }

    pub fn zero(&self, store: &mut ParamStore) {
        for id in self.param_ids() {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn sigmoid_f64(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn build(input: usize, hidden: usize, layers: usize, seed: u64) -> (ParamStore, LstmStack) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack =
            LstmStack::new(&mut ParamBuilder::new(&mut store, &mut rng).scope("lstm"), input, hidden, layers).unwrap();
        (store, stack)
    }

    fn step_values(store: &ParamStore, layer: &LstmLayer, x: Tensor, h: Tensor, c: Tensor) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(x);
        let state = LstmState { h: tape.constant(h), c: tape.constant(c) };
        let out = layer.step(&mut tape, &p, x, state).unwrap();
        (tape.value(out.h).clone(), tape.value(out.c).clone())
    }

    /// Direct per-unit evaluation of the gate equations.
    fn scalar_step(store: &ParamStore, layer: &LstmLayer, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hs = layer.hidden_size;
        let w_ih = store.get(layer.w_ih).data();
        let w_hh = store.get(layer.w_hh).data();
        let b = store.get(layer.bias).data();
        let pre = |row: usize| {
            let mut s = b[row];
            for (j, xv) in x.iter().enumerate() {
                s += w_ih[row * x.len() + j] * xv;
            }
            for (j, hv) in h.iter().enumerate() {
                s += w_hh[row * hs + j] * hv;
            }
            s
        };
        let mut h2 = vec![0.0; hs];
        let mut c2 = vec![0.0; hs];
        for u in 0..hs {
            let i = sigmoid_f64(pre(u));
            let f = sigmoid_f64(pre(hs + u));
            let g = pre(2 * hs + u).tanh();
            let o = sigmoid_f64(pre(3 * hs + u));
            c2[u] = f * c[u] + i * g;
            h2[u] = o * c2[u].tanh();
        }
        (h2, c2)
    }

    #[test]
    fn zero_weights_and_state_give_zero_output() {
        let (mut store, stack) = build(3, 4, 1, 0);
        stack.zero(&mut store);
        let (h, c) =
            step_values(&store, &stack.layers[0], Tensor::zeros([1, 3]), Tensor::zeros([1, 4]), Tensor::zeros([1, 4]));
        assert!(h.data().iter().chain(c.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_carries_cell() {
        let (mut store, stack) = build(3, 4, 1, 1);
        let layer = &stack.layers[0];
        let b = store.get_mut(layer.bias).data_mut();
        b[..4].fill(f64::NEG_INFINITY);
        b[4..8].fill(f64::INFINITY);
        let c = Tensor::new([1, 4], vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let x = Tensor::new([1, 3], vec![0.5, -0.5, 0.1]).unwrap();
        let h = Tensor::new([1, 4], vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let (_, c2) = step_values(&store, layer, x, h, c.clone());
        assert_eq!(c2, c);
    }

    #[test]
    fn step_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..5 {
            let (store, stack) = build(5, 6, 1, seed);
            let layer = &stack.layers[0];
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (th, tc) = step_values(
                &store,
                layer,
                Tensor::new([1, 5], x.clone()).unwrap(),
                Tensor::new([1, 6], h.clone()).unwrap(),
                Tensor::new([1, 6], c.clone()).unwrap(),
            );
            let (oh, oc) = scalar_step(&store, layer, &x, &h, &c);
            for (a, b) in th.data().iter().zip(&oh).chain(tc.data().iter().zip(&oc)) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn sequence_equals_chained_steps() {
        let (store, stack) = build(3, 4, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Tensor> = (0..4).map(|_| Tensor::from_fn([2, 3], |_| rng.random_range(-1.0..1.0))).collect();

        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let init = stack.zero_state(&mut tape, 2);
        let (outs, _) = stack.forward(&mut tape, &p, &vars, init).unwrap();
        let seq: Vec<Tensor> = outs.iter().map(|&v| tape.value(v).clone()).collect();

        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let mut states = stack.zero_state(&mut tape, 2);
        for (t, x) in xs.iter().enumerate() {
            let mut inp = tape.constant(x.clone());
            for (layer, state) in stack.layers.iter().zip(states.iter_mut()) {
                *state = layer.step(&mut tape, &p, inp, *state).unwrap();
                inp = state.h;
            }
            assert_eq!(tape.value(inp), &seq[t]);
        }
    }

    #[test]
    fn gate_shapes_and_forget_bias() {
        let (store, stack) = build(7, 5, 3, 0);
        for (l, layer) in stack.layers.iter().enumerate() {
            let inp = if l == 0 { 7 } else { 5 };
            assert_eq!(store.get(layer.w_ih).shape(), &[20, inp]);
            assert_eq!(store.get(layer.w_hh).shape(), &[20, 5]);
            let b = store.get(layer.bias).data();
            assert!(b[5..10].iter().all(|&v| v == 1.0));
            assert!(b[..5].iter().chain(&b[10..]).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let (store, stack) = build(3, 4, 1, 0);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros([1, 2]));
        let s = LstmState::zeros(&mut tape, 1, 4);
        assert!(stack.layers[0].step(&mut tape, &p, x, s).is_err());
    }
}
