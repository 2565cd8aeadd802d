//! Single-layer LSTM with a scalar dense head, forward pass and BPTT.
//!
//! Parameter layout (flat vector), for each gate in the order input, forget,
//! cell candidate, output:
//!
//! ```text
//! W_gate  h x f  (row-major, row = hidden unit)
//! U_gate  h x h
//! b_gate  h
//! ```
//!
//! followed by the dense weights (h) and the dense bias (1).

use serde::{Deserialize, Serialize};

pub(crate) const GATES: usize = 4;
const INPUT: usize = 0;
const FORGET: usize = 1;
const CELL: usize = 2;
const OUTPUT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    /// Input features per step.
    pub features: usize,
    pub hidden: usize,
}

impl LstmShape {
    pub fn new(features: usize, hidden: usize) -> Self {
        Self { features, hidden }
    }

    /// `4h(f + h) + 4h` gate parameters plus `h + 1` for the dense head.
    pub fn param_count(&self) -> usize {
        let (f, h) = (self.features, self.hidden);
        GATES * h * (f + h) + GATES * h + h + 1
    }

    fn block(&self) -> usize {
        let (f, h) = (self.features, self.hidden);
        h * f + h * h + h
    }

    pub(crate) fn w(&self, gate: usize) -> usize {
        gate * self.block()
    }

    pub(crate) fn u(&self, gate: usize) -> usize {
        self.w(gate) + self.hidden * self.features
    }

    pub(crate) fn b(&self, gate: usize) -> usize {
        self.u(gate) + self.hidden * self.hidden
    }

    pub(crate) fn dense_w(&self) -> usize {
        GATES * self.block()
    }

    pub(crate) fn dense_b(&self) -> usize {
        self.dense_w() + self.hidden
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    steps: usize,
    /// Activated gates per step: `steps x 4 x h`.
    gates: Vec<f64>,
    /// Cell states `c_0..c_steps` (`c_0 = 0`).
    cells: Vec<f64>,
    /// Hidden states `h_0..h_steps` (`h_0 = 0`).
    hiddens: Vec<f64>,
    tanh_cells: Vec<f64>,
    dh: Vec<f64>,
    dh_prev: Vec<f64>,
    dc: Vec<f64>,
    dz: Vec<f64>,
}

impl Workspace {
    fn prepare(&mut self, shape: LstmShape, steps: usize) {
        let h = shape.hidden;
        self.steps = steps;
        self.gates.resize(steps * GATES * h, 0.0);
        self.cells.resize((steps + 1) * h, 0.0);
        self.hiddens.resize((steps + 1) * h, 0.0);
        self.tanh_cells.resize(steps * h, 0.0);
        self.cells[..h].fill(0.0);
        self.hiddens[..h].fill(0.0);
        self.dh.resize(h, 0.0);
        self.dh_prev.resize(h, 0.0);
        self.dc.resize(h, 0.0);
        self.dz.resize(GATES * h, 0.0);
    }
}

/// Runs the recurrence over `input` (`steps x f`, time-major) from zero
/// state and returns the dense output of the final hidden state.
pub fn forward(shape: LstmShape, params: &[f64], input: &[f64], ws: &mut Workspace) -> f64 {
    let (f, h) = (shape.features, shape.hidden);
    debug_assert_eq!(params.len(), shape.param_count());
    debug_assert_eq!(input.len() % f, 0);
    let steps = input.len() / f;
    ws.prepare(shape, steps);

    for t in 0..steps {
        let x = &input[t * f..(t + 1) * f];
        let (prev_h, _) = ws.hiddens[t * h..].split_at(h);
        let gates = &mut ws.gates[t * GATES * h..(t + 1) * GATES * h];
        for g in 0..GATES {
            let w = &params[shape.w(g)..shape.w(g) + h * f];
            let u = &params[shape.u(g)..shape.u(g) + h * h];
            let b = &params[shape.b(g)..shape.b(g) + h];
            for k in 0..h {
                let wk = &w[k * f..(k + 1) * f];
                let uk = &u[k * h..(k + 1) * h];
                let mut z = b[k];
                for (a, xv) in wk.iter().zip(x) {
                    z += a * xv;
                }
                for (a, hv) in uk.iter().zip(prev_h) {
                    z += a * hv;
                }
                gates[g * h + k] = if g == CELL { z.tanh() } else { sigmoid(z) };
            }
        }
        for k in 0..h {
            let i = gates[INPUT * h + k];
            let fg = gates[FORGET * h + k];
            let c = gates[CELL * h + k];
            let o = gates[OUTPUT * h + k];
            let cell = fg * ws.cells[t * h + k] + i * c;
            let tc = cell.tanh();
            ws.cells[(t + 1) * h + k] = cell;
            ws.tanh_cells[t * h + k] = tc;
            ws.hiddens[(t + 1) * h + k] = o * tc;
        }
    }

    let last = &ws.hiddens[steps * h..(steps + 1) * h];
    let dw = &params[shape.dense_w()..shape.dense_w() + h];
    params[shape.dense_b()] + dw.iter().zip(last).map(|(a, b)| a * b).sum::<f64>()
}

/// Accumulates `dy * d(output)/d(params)` into `grad`, using the activations
/// left in `ws` by the preceding [`forward`] call on the same input.
pub fn backward(
    shape: LstmShape,
    params: &[f64],
    input: &[f64],
    ws: &mut Workspace,
    dy: f64,
    grad: &mut [f64],
) {
    let (f, h) = (shape.features, shape.hidden);
    let steps = ws.steps;
    if dy == 0.0 {
        return;
    }

    let dense_w = shape.dense_w();
    for k in 0..h {
        grad[dense_w + k] += dy * ws.hiddens[steps * h + k];
        ws.dh[k] = dy * params[dense_w + k];
        ws.dc[k] = 0.0;
    }
    grad[shape.dense_b()] += dy;

    for t in (0..steps).rev() {
        let x = &input[t * f..(t + 1) * f];
        let gates = &ws.gates[t * GATES * h..(t + 1) * GATES * h];
        for k in 0..h {
            let i = gates[INPUT * h + k];
            let fg = gates[FORGET * h + k];
            let c = gates[CELL * h + k];
            let o = gates[OUTPUT * h + k];
            let tc = ws.tanh_cells[t * h + k];
            let dh = ws.dh[k];
            let dc = ws.dc[k] + dh * o * (1.0 - tc * tc);
            let c_prev = ws.cells[t * h + k];
            ws.dz[INPUT * h + k] = dc * c * i * (1.0 - i);
            ws.dz[FORGET * h + k] = dc * c_prev * fg * (1.0 - fg);
            ws.dz[CELL * h + k] = dc * i * (1.0 - c * c);
            ws.dz[OUTPUT * h + k] = dh * tc * o * (1.0 - o);
            ws.dc[k] = dc * fg;
        }

        let prev_h = &ws.hiddens[t * h..(t + 1) * h];
        ws.dh_prev.fill(0.0);
        for g in 0..GATES {
            let (w0, u0, b0) = (shape.w(g), shape.u(g), shape.b(g));
            for k in 0..h {
                let dz = ws.dz[g * h + k];
                if dz == 0.0 {
                    continue;
                }
                let gw = &mut grad[w0 + k * f..w0 + (k + 1) * f];
                for (gv, xv) in gw.iter_mut().zip(x) {
                    *gv += dz * xv;
                }
                let gu = &mut grad[u0 + k * h..u0 + (k + 1) * h];
                for (gv, hv) in gu.iter_mut().zip(prev_h) {
                    *gv += dz * hv;
                }
                grad[b0 + k] += dz;
                let uk = &params[u0 + k * h..u0 + (k + 1) * h];
                for (d, a) in ws.dh_prev.iter_mut().zip(uk) {
                    *d += dz * a;
                }
            }
        }
        std::mem::swap(&mut ws.dh, &mut ws.dh_prev);
    }
}
