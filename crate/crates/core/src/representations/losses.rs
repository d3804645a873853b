//! Per-sample training losses. Each function returns the loss and adds its
//! parameter gradients into the supplied buffers (one per network).

use crate::error::{Error, Result};
use crate::nn::{log_softmax, softmax, Mlp};

/// Added under the square root of the ARC norm so its gradient exists at 0.
pub const NORM_EPS: f64 = 1e-8;

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn one_hot(a: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[a] = 1.0;
    v
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// `(sqrt(‖φ(x1) − φ(x2)‖² + ε) − d)²`.
pub fn loss_arc(phi: &Mlp, x1: &[f64], x2: &[f64], d_act: f64, g_phi: &mut [f64]) -> Result<f64> {
    if !(d_act >= 0.0) {
        return Err(Error::InvalidParameter(format!("target distance {d_act} must be >= 0")));
    }
    let (z1, t1) = phi.forward_tape(x1)?;
    let (z2, t2) = phi.forward_tape(x2)?;
    let diff: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a - b).collect();
    let norm = (diff.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
    let r = norm - d_act;
    let up: Vec<f64> = diff.iter().map(|v| 2.0 * r * v / norm).collect();
    phi.backward(&t1, &up, g_phi)?;
    let down: Vec<f64> = up.iter().map(|v| -v).collect();
    phi.backward(&t2, &down, g_phi)?;
    Ok(r * r)
}

/// Splits a Gaussian encoder output into `(μ, log σ)`.
fn split_gaussian(out: &[f64]) -> (&[f64], &[f64]) {
    out.split_at(out.len() / 2)
}

fn vae_core(
    enc: &Mlp,
    dec: &Mlp,
    x: &[f64],
    beta: f64,
    noise: &[f64],
    extra_dmu: Option<&[f64]>,
    g_enc: &mut [f64],
    g_dec: &mut [f64],
) -> Result<f64> {
    let d = dec.input_dim();
    check_dim(2 * d, enc.output_dim())?;
    check_dim(d, noise.len())?;
    check_dim(x.len(), dec.output_dim())?;
    let (out, t_enc) = enc.forward_tape(x)?;
    let (mu, log_sigma) = split_gaussian(&out);
    let sigma: Vec<f64> = log_sigma.iter().map(|l| l.exp()).collect();
    let z: Vec<f64> = (0..d).map(|k| mu[k] + sigma[k] * noise[k]).collect();
    let (xhat, t_dec) = dec.forward_tape(&z)?;
    let n = x.len() as f64;
    let recon = xhat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let kl = 0.5
        * (0..d)
            .map(|k| mu[k] * mu[k] + sigma[k] * sigma[k] - 1.0 - 2.0 * log_sigma[k])
            .sum::<f64>();
    let dxhat: Vec<f64> = xhat.iter().zip(x).map(|(a, b)| 2.0 * (a - b) / n).collect();
    let dz = dec.backward(&t_dec, &dxhat, g_dec)?;
    let mut dout = vec![0.0; 2 * d];
    for k in 0..d {
        dout[k] = dz[k] + beta * mu[k] + extra_dmu.map_or(0.0, |e| e[k]);
        dout[d + k] = dz[k] * sigma[k] * noise[k] + beta * (sigma[k] * sigma[k] - 1.0);
    }
    enc.backward(&t_enc, &dout, g_enc)?;
    Ok(recon + beta * kl)
}

/// Reconstruction MSE of a reparameterized sample plus `β·KL(q ‖ N(0, I))`.
/// `enc` outputs `(μ, log σ)`; `noise` is the standard normal draw.
pub fn loss_vae(
    enc: &Mlp,
    dec: &Mlp,
    x: &[f64],
    beta: f64,
    noise: &[f64],
    g_enc: &mut [f64],
    g_dec: &mut [f64],
) -> Result<f64> {
    vae_core(enc, dec, x, beta, noise, None, g_enc, g_dec)
}

/// VAE loss on `x_t` plus `α_slow·‖μ(x_next) − μ(x_t)‖`.
#[allow(clippy::too_many_arguments)]
pub fn loss_slowness(
    enc: &Mlp,
    dec: &Mlp,
    x_t: &[f64],
    x_next: &[f64],
    alpha_slow: f64,
    beta: f64,
    noise: &[f64],
    g_enc: &mut [f64],
    g_dec: &mut [f64],
) -> Result<f64> {
    let d = dec.input_dim();
    let out0 = enc.forward(x_t)?;
    let (out1, t1) = enc.forward_tape(x_next)?;
    let v: Vec<f64> = (0..d).map(|k| out1[k] - out0[k]).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (mut up1, mut dmu0) = (vec![0.0; 2 * d], vec![0.0; d]);
    if norm > 0.0 && alpha_slow != 0.0 {
        for k in 0..d {
            up1[k] = alpha_slow * v[k] / norm;
            dmu0[k] = -up1[k];
        }
        enc.backward(&t1, &up1, g_enc)?;
    }
    let vae = vae_core(enc, dec, x_t, beta, noise, Some(&dmu0), g_enc, g_dec)?;
    Ok(vae + alpha_slow * norm)
}

/// `‖x_next − ψ(f(φ(x_t), onehot(a)))‖²`.
#[allow(clippy::too_many_arguments)]
pub fn loss_predictive(
    phi: &Mlp,
    f: &Mlp,
    psi: &Mlp,
    x_t: &[f64],
    action: usize,
    num_actions: usize,
    x_next: &[f64],
    g_phi: &mut [f64],
    g_f: &mut [f64],
    g_psi: &mut [f64],
) -> Result<f64> {
    let d = phi.output_dim();
    check_dim(d + num_actions, f.input_dim())?;
    check_dim(x_next.len(), psi.output_dim())?;
    let (h, t_phi) = phi.forward_tape(x_t)?;
    let (z, t_f) = f.forward_tape(&concat(&h, &one_hot(action, num_actions)))?;
    let (y, t_psi) = psi.forward_tape(&z)?;
    let r: Vec<f64> = y.iter().zip(x_next).map(|(a, b)| a - b).collect();
    let up: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    let dz = psi.backward(&t_psi, &up, g_psi)?;
    let du = f.backward(&t_f, &dz, g_f)?;
    phi.backward(&t_phi, &du[..d], g_phi)?;
    Ok(r.iter().map(|v| v * v).sum())
}

/// `CE(g(φ(x_t), φ(x_next)), a) + β·‖φ(x_next) − f(φ(x_t), onehot(a))‖²`.
#[allow(clippy::too_many_arguments)]
pub fn loss_inverse(
    phi: &Mlp,
    f: &Mlp,
    g: &Mlp,
    x_t: &[f64],
    action: usize,
    num_actions: usize,
    x_next: &[f64],
    beta: f64,
    g_phi: &mut [f64],
    g_f: &mut [f64],
    g_g: &mut [f64],
) -> Result<f64> {
    let d = phi.output_dim();
    check_dim(d + num_actions, f.input_dim())?;
    check_dim(2 * d, g.input_dim())?;
    check_dim(num_actions, g.output_dim())?;
    let (h0, t0) = phi.forward_tape(x_t)?;
    let (h1, t1) = phi.forward_tape(x_next)?;
    let (logits, t_g) = g.forward_tape(&concat(&h0, &h1))?;
    let ce = -log_softmax(&logits)[action];
    let mut dlogits = softmax(&logits);
    dlogits[action] -= 1.0;
    let dh = g.backward(&t_g, &dlogits, g_g)?;
    let (z, t_f) = f.forward_tape(&concat(&h0, &one_hot(action, num_actions)))?;
    let r: Vec<f64> = h1.iter().zip(&z).map(|(a, b)| a - b).collect();
    let dz: Vec<f64> = r.iter().map(|v| -2.0 * beta * v).collect();
    let du = f.backward(&t_f, &dz, g_f)?;
    let dh0: Vec<f64> = (0..d).map(|k| dh[k] + du[k]).collect();
    let dh1: Vec<f64> = (0..d).map(|k| dh[d + k] + 2.0 * beta * r[k]).collect();
    phi.backward(&t0, &dh0, g_phi)?;
    phi.backward(&t1, &dh1, g_phi)?;
    Ok(ce + beta * r.iter().map(|v| v * v).sum::<f64>())
}
