use rand::Rng;

use crate::diffcore::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{ensure_dim, Result};

/// Gate weights act on `[h_prev; x]`, so each is `hidden × (hidden + input)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParameters {
    pub hidden: usize,
    pub input: usize,
    pub w_update: ParamId,
    pub w_reset: ParamId,
    pub w_candidate: ParamId,
    pub b_update: ParamId,
    pub b_reset: ParamId,
    pub b_candidate: ParamId,
}

impl GruParameters {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        hidden: usize,
        input: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = hidden + input;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut weight = |name: &str| {
            params.insert(
                format!("{prefix}.{name}"),
                Tensor::uniform(&[hidden, fan_in], bound, rng),
            )
        };
        let (w_update, w_reset, w_candidate) = (weight("w_update"), weight("w_reset"), weight("w_candidate"));
        let mut bias = |name: &str| params.insert(format!("{prefix}.{name}"), Tensor::zeros(&[hidden]));
        GruParameters {
            hidden,
            input,
            w_update,
            w_reset,
            w_candidate,
            b_update: bias("b_update"),
            b_reset: bias("b_reset"),
            b_candidate: bias("b_candidate"),
        }
    }

    pub fn ids(&self) -> [ParamId; 6] {
        [
            self.w_update,
            self.w_reset,
            self.w_candidate,
            self.b_update,
            self.b_reset,
            self.b_candidate,
        ]
    }

    pub fn bind(&self, tape: &mut Tape<'_>) -> BoundGru {
        BoundGru {
            hidden: self.hidden,
            input: self.input,
            w_update: tape.param(self.w_update),
            w_reset: tape.param(self.w_reset),
            w_candidate: tape.param(self.w_candidate),
            b_update: tape.param(self.b_update),
            b_reset: tape.param(self.b_reset),
            b_candidate: tape.param(self.b_candidate),
        }
    }
}

/// GRU parameters placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    pub hidden: usize,
    pub input: usize,
    pub w_update: Var,
    pub w_reset: Var,
    pub w_candidate: Var,
    pub b_update: Var,
    pub b_reset: Var,
    pub b_candidate: Var,
}

/// One GRU update:
/// `z = σ(W_z[h;x] + b_z)`, `r = σ(W_r[h;x] + b_r)`,
/// `h̃ = tanh(W_h[r⊙h; x] + b_h)`, `h' = (1 − z)⊙h + z⊙h̃`.
pub fn gru_step(tape: &mut Tape<'_>, cell: &BoundGru, h_prev: Var, x: Var) -> Result<Var> {
    ensure_dim!(
        tape.value(h_prev).len() == cell.hidden,
        "hidden state has {} values, cell expects {}",
        tape.value(h_prev).len(),
        cell.hidden
    );
    ensure_dim!(
        tape.value(x).len() == cell.input,
        "cell input has {} values, cell expects {}",
        tape.value(x).len(),
        cell.input
    );
    let hx = tape.concat(&[h_prev, x])?;
    let z_pre = tape.linear(hx, cell.w_update, cell.b_update)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = tape.linear(hx, cell.w_reset, cell.b_reset)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let rhx = tape.concat(&[rh, x])?;
    let cand_pre = tape.linear(rhx, cell.w_candidate, cell.b_candidate)?;
    let cand = tape.tanh(cand_pre);
    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, h_prev)?;
    let fresh = tape.mul(z, cand)?;
    tape.add(kept, fresh)
}
