use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Tape handles of one LSTM cell's parameters.
///
/// `w_x` is `[input, 4H]`, `w_h` is `[H, 4H]`, `bias` is `[4H]`; the four
/// column blocks are the input, forget, candidate and output gates in that
/// order.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
}

impl LstmVars {
    pub fn state_size(&self, tape: &Tape) -> usize {
        tape.value(self.w_h).shape()[0]
    }
}

/// One step of a standard LSTM cell over a batch of rows.
///
/// `x` is `[B, input]`, `h_prev` and `c_prev` are `[B, H]`.
pub fn lstm_step(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let wh = tape.value(p.w_h).shape().to_vec();
    let hidden = wh[0];
    if wh.len() != 2 || wh[1] != 4 * hidden {
        return Err(Error::dim("lstm_step", &wh, &[hidden, 4 * hidden]));
    }
    for v in [h_prev, c_prev] {
        if tape.value(v).cols() != hidden {
            return Err(Error::dim("lstm_step", tape.value(v).shape(), &wh));
        }
    }
    let xw = tape.matmul(x, p.w_x)?;
    let hw = tape.matmul(h_prev, p.w_h)?;
    let pre = tape.add(xw, hw)?;
    let pre = tape.add_bias(pre, p.bias)?;

    let i = tape.narrow_cols(pre, 0, hidden)?;
    let f = tape.narrow_cols(pre, hidden, hidden)?;
    let g = tape.narrow_cols(pre, 2 * hidden, hidden)?;
    let o = tape.narrow_cols(pre, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}
