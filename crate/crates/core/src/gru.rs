//! Convolutional GRU.
//!
//! ```text
//! z  = σ(W_zh ∗ s + W_zx ∗ x)
//! v  = σ(W_rh ∗ s + W_rx ∗ x)
//! s̃  = tanh(W_sh ∗ (v ∘ s) + W_sx ∗ x)
//! s' = (1 − z) ∘ s + z ∘ s̃
//! ```
//!
//! No bias terms. State and input keep their `n_1 × n_1` spatial layout.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::numeric::{Tape, Tensor, Var};

/// The six convolution kernels, each `[k, k, c_in, C_s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_zh: Tensor,
    pub w_zx: Tensor,
    pub w_rh: Tensor,
    pub w_rx: Tensor,
    pub w_sh: Tensor,
    pub w_sx: Tensor,
}

pub const GRU_GROUPS: [&str; 6] = ["w_zh", "w_zx", "w_rh", "w_rx", "w_sh", "w_sx"];

impl GruParams {
    pub fn zeros(kernel: usize, input_channels: usize, state_channels: usize) -> Self {
        let h = [kernel, kernel, state_channels, state_channels];
        let x = [kernel, kernel, input_channels, state_channels];
        Self {
            w_zh: Tensor::zeros(&h),
            w_zx: Tensor::zeros(&x),
            w_rh: Tensor::zeros(&h),
            w_rx: Tensor::zeros(&x),
            w_sh: Tensor::zeros(&h),
            w_sx: Tensor::zeros(&x),
        }
    }

    /// Uniform in `[-r, r]` with `r = 1/√fan_in`, `fan_in = k·k·c_in`.
    pub fn init<R: Rng + ?Sized>(
        kernel: usize,
        input_channels: usize,
        state_channels: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(kernel, input_channels, state_channels);
        for t in p.tensors_mut() {
            let fan_in = (t.shape()[0] * t.shape()[1] * t.shape()[2]) as f64;
            let r = 1.0 / fan_in.sqrt();
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-r..=r));
        }
        p
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.w_zh, &self.w_zx, &self.w_rh, &self.w_rx, &self.w_sh, &self.w_sx,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w_zh,
            &mut self.w_zx,
            &mut self.w_rh,
            &mut self.w_rx,
            &mut self.w_sh,
            &mut self.w_sx,
        ]
    }

    pub fn state_channels(&self) -> usize {
        self.w_zh.shape()[3]
    }

    pub fn input_channels(&self) -> usize {
        self.w_zx.shape()[2]
    }

    fn validate(&self) -> Result<()> {
        let k = self.w_zh.shape()[0];
        let cs = self.state_channels();
        let c = self.input_channels();
        let expect_h = [k, k, cs, cs];
        let expect_x = [k, k, c, cs];
        for (name, t) in GRU_GROUPS.iter().zip(self.tensors()) {
            let want: &[usize] = if name.ends_with('h') { &expect_h } else { &expect_x };
            if t.shape() != want {
                return Err(shape_err(format!(
                    "GRU kernel {name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Kernels registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_zh: Var,
    pub w_zx: Var,
    pub w_rh: Var,
    pub w_rx: Var,
    pub w_sh: Var,
    pub w_sx: Var,
}

impl GruVars {
    pub fn register(tape: &mut Tape, p: &GruParams, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Self {
            w_zh: leaf(&p.w_zh),
            w_zx: leaf(&p.w_zx),
            w_rh: leaf(&p.w_rh),
            w_rx: leaf(&p.w_rx),
            w_sh: leaf(&p.w_sh),
            w_sx: leaf(&p.w_sx),
        }
    }

    pub fn vars(&self) -> [Var; 6] {
        [
            self.w_zh, self.w_zx, self.w_rh, self.w_rx, self.w_sh, self.w_sx,
        ]
    }
}

/// Test seam: replaces the update gate with a constant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum GateOverride {
    #[default]
    None,
    UpdateGate(f64),
}

/// All-zero state of shape `[n1, n1, state_channels]`.
pub fn init_state(n1: usize, state_channels: usize) -> Tensor {
    Tensor::zeros(&[n1, n1, state_channels])
}

/// One GRU update recorded on `tape`.
pub fn gru_step(tape: &mut Tape, s_prev: Var, x: Var, p: &GruVars) -> Result<Var> {
    gru_step_with(tape, s_prev, x, p, GateOverride::None)
}

pub fn gru_step_with(
    tape: &mut Tape,
    s_prev: Var,
    x: Var,
    p: &GruVars,
    gate: GateOverride,
) -> Result<Var> {
    let z = match gate {
        GateOverride::None => {
            let zh = tape.conv2d(s_prev, p.w_zh)?;
            let zx = tape.conv2d(x, p.w_zx)?;
            let pre = tape.add(zh, zx)?;
            tape.sigmoid(pre)
        }
        GateOverride::UpdateGate(value) => {
            let shape = tape.value(s_prev).shape().to_vec();
            tape.constant(Tensor::filled(&shape, value))
        }
    };
    let rh = tape.conv2d(s_prev, p.w_rh)?;
    let rx = tape.conv2d(x, p.w_rx)?;
    let r_pre = tape.add(rh, rx)?;
    let v = tape.sigmoid(r_pre);
    let vs = tape.mul(v, s_prev)?;
    let sh = tape.conv2d(vs, p.w_sh)?;
    let sx = tape.conv2d(x, p.w_sx)?;
    let cand_pre = tape.add(sh, sx)?;
    let cand = tape.tanh(cand_pre);
    let keep = tape.affine(z, -1.0, 1.0);
    let old = tape.mul(keep, s_prev)?;
    let new = tape.mul(z, cand)?;
    tape.add(old, new)
}

/// Tape-free convenience wrapper around [`gru_step`].
pub fn gru_step_values(s_prev: &Tensor, x: &Tensor, p: &GruParams) -> Result<Tensor> {
    p.validate()?;
    let mut tape = Tape::new();
    let vars = GruVars::register(&mut tape, p, false);
    let s = tape.constant(s_prev.clone());
    let xv = tape.constant(x.clone());
    let out = gru_step(&mut tape, s, xv, &vars)?;
    Ok(tape.value(out).clone())
}
