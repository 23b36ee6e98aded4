//! Layers built from tape ops: linear maps, the GRU cell, Gaussian helpers.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::AutodiffError;

/// Affine map `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        Ok(Linear {
            weight: store.uniform(&format!("{name}.weight"), in_dim, out_dim, rng)?,
            bias: store.uniform_bias(&format!("{name}.bias"), in_dim, out_dim, rng)?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// GRU weights. Input-path weights for the update, reset and candidate gates
/// are packed as `[in, 3H]`; hidden-path weights for update and reset as
/// `[H, 2H]`, and the candidate hidden path separately as `[H, H]` because
/// the reset gate multiplies the hidden state before that transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruParams {
    pub w_input: ParamId,
    pub b_input: ParamId,
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
    pub w_candidate: ParamId,
    pub b_candidate: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, AutodiffError> {
        let h = hidden_dim;
        Ok(GruParams {
            w_input: store.uniform(&format!("{name}.w_input"), input_dim, 3 * h, rng)?,
            b_input: store.uniform_bias(&format!("{name}.b_input"), h, 3 * h, rng)?,
            w_hidden: store.uniform(&format!("{name}.w_hidden"), h, 2 * h, rng)?,
            b_hidden: store.uniform_bias(&format!("{name}.b_hidden"), h, 2 * h, rng)?,
            w_candidate: store.uniform(&format!("{name}.w_candidate"), h, h, rng)?,
            b_candidate: store.uniform_bias(&format!("{name}.b_candidate"), h, h, rng)?,
            input_dim,
            hidden_dim,
        })
    }

    pub fn ids(&self) -> [ParamId; 6] {
        [
            self.w_input,
            self.b_input,
            self.w_hidden,
            self.b_hidden,
            self.w_candidate,
            self.b_candidate,
        ]
    }
}

/// One GRU step:
///
/// ```text
/// z  = σ(x W_z + b_z + h U_z + c_z)
/// r  = σ(x W_r + b_r + h U_r + c_r)
/// h̃  = tanh(x W_n + b_n + (r ⊙ h) U_n + c_n)
/// h' = (1 - z) ⊙ h̃ + z ⊙ h
/// ```
pub fn gru_cell(
    tape: &mut Tape,
    store: &ParamStore,
    p: &GruParams,
    x: Var,
    h: Var,
) -> Result<Var, AutodiffError> {
    let hd = p.hidden_dim;
    let (bx, _) = tape.shape(x);
    let (bh, hc) = tape.shape(h);
    if bx != bh || hc != hd {
        return Err(AutodiffError::ShapeMismatch(format!(
            "gru_cell: input batch {bx}, hidden {bh}x{hc}, expected hidden width {hd}"
        )));
    }
    let wi = tape.param(store, p.w_input);
    let bi = tape.param(store, p.b_input);
    let wh = tape.param(store, p.w_hidden);
    let bh_ = tape.param(store, p.b_hidden);
    let wc = tape.param(store, p.w_candidate);
    let bc = tape.param(store, p.b_candidate);

    let gx = tape.matmul(x, wi)?;
    let gx = tape.add_row(gx, bi)?;
    let gh = tape.matmul(h, wh)?;
    let gh = tape.add_row(gh, bh_)?;

    let x_zr = tape.slice_cols(gx, 0, 2 * hd)?;
    let x_n = tape.slice_cols(gx, 2 * hd, 3 * hd)?;
    let zr = tape.add(x_zr, gh)?;
    let zr = tape.sigmoid(zr);
    let z = tape.slice_cols(zr, 0, hd)?;
    let r = tape.slice_cols(zr, hd, 2 * hd)?;

    let rh = tape.mul(r, h)?;
    let hn = tape.matmul(rh, wc)?;
    let hn = tape.add_row(hn, bc)?;
    let n = tape.add(x_n, hn)?;
    let n = tape.tanh(n);

    // h' = n + z ⊙ (h - n)
    let diff = tape.sub(h, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}

/// `mu + exp(logvar / 2) ⊙ noise`; `noise` enters as a constant.
pub fn reparameterized_sample(
    tape: &mut Tape,
    mu: Var,
    logvar: Var,
    noise: Var,
) -> Result<Var, AutodiffError> {
    let (sm, sl, sn) = (tape.shape(mu), tape.shape(logvar), tape.shape(noise));
    if sm != sl || sm != sn {
        return Err(AutodiffError::ShapeMismatch(format!(
            "reparameterized_sample: {sm:?} {sl:?} {sn:?}"
        )));
    }
    let half = tape.scale(logvar, 0.5);
    let std = tape.exp(half);
    let eps = tape.mul(std, noise)?;
    tape.add(mu, eps)
}

/// KL(q ‖ p) between diagonal Gaussians given as (mean, log-variance),
/// summed over dimensions and averaged over the batch rows.
pub fn kl_diag_gaussians(
    tape: &mut Tape,
    mu_q: Var,
    logvar_q: Var,
    mu_p: Var,
    logvar_p: Var,
) -> Result<Var, AutodiffError> {
    let per_row = kl_diag_gaussians_rows(tape, mu_q, logvar_q, mu_p, logvar_p)?;
    Ok(tape.mean(per_row))
}

/// Per-row KL, `[B, d] -> [B, 1]`.
pub fn kl_diag_gaussians_rows(
    tape: &mut Tape,
    mu_q: Var,
    logvar_q: Var,
    mu_p: Var,
    logvar_p: Var,
) -> Result<Var, AutodiffError> {
    let shapes = [
        tape.shape(mu_q),
        tape.shape(logvar_q),
        tape.shape(mu_p),
        tape.shape(logvar_p),
    ];
    if shapes.iter().any(|s| *s != shapes[0]) {
        return Err(AutodiffError::ShapeMismatch(format!("kl_diag_gaussians: {shapes:?}")));
    }
    // 0.5 * (lv_p - lv_q + (exp(lv_q) + (mu_q - mu_p)^2) * exp(-lv_p) - 1)
    let var_q = tape.exp(logvar_q);
    let d = tape.sub(mu_q, mu_p)?;
    let d2 = tape.square(d);
    let num = tape.add(var_q, d2)?;
    let neg_lvp = tape.neg(logvar_p);
    let inv_var_p = tape.exp(neg_lvp);
    let ratio = tape.mul(num, inv_var_p)?;
    let lv_diff = tape.sub(logvar_p, logvar_q)?;
    let inner = tape.add(lv_diff, ratio)?;
    let inner = tape.add_scalar(inner, -1.0);
    let summed = tape.sum_cols(inner);
    Ok(tape.scale(summed, 0.5))
}

/// Closed-form KL on plain slices, used where no tape is needed.
pub fn kl_diag_gaussians_value(mu_q: &[f64], logvar_q: &[f64], mu_p: &[f64], logvar_p: &[f64]) -> f64 {
    mu_q.iter()
        .zip(logvar_q)
        .zip(mu_p.iter().zip(logvar_p))
        .map(|((mq, lq), (mp, lp))| 0.5 * (lp - lq + (lq.exp() + (mq - mp).powi(2)) / lp.exp() - 1.0))
        .sum()
}
