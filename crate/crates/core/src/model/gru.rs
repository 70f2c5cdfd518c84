//! Forward pass, teacher-forced probabilities, weighted sequence loss with
//! exact gradients, and greedy decoding.

use super::linalg::{sigmoid, softmax, Matrix};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::reweight::WeightVector;
use crate::synth::{BOS, EOS};

/// Activations of one recurrent step, kept for back-propagation.
struct Step {
    input: u32,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

fn initial_state(p: &ModelParams, condition: &[f64]) -> Vec<f64> {
    let mut a = p.cond_bias.data.clone();
    p.cond.matvec_acc(condition, &mut a);
    a.iter_mut().for_each(|x| *x = x.tanh());
    a
}

fn gate(w: &Matrix, u: &Matrix, b: &Matrix, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut a = b.data.clone();
    w.matvec_acc(x, &mut a);
    u.matvec_acc(h, &mut a);
    a
}

/// Condition terms shared by every step: the input offset `cond_in c` and the
/// logit offset `cond_out c + out_bias`.
struct CondTerms {
    input: Vec<f64>,
    logits: Vec<f64>,
}

fn cond_terms(p: &ModelParams, condition: &[f64]) -> CondTerms {
    let mut input = vec![0.0; p.config.d_emb];
    p.cond_in.matvec_acc(condition, &mut input);
    let mut logits = p.out_bias.data.clone();
    p.cond_out.matvec_acc(condition, &mut logits);
    CondTerms { input, logits }
}

fn cell(p: &ModelParams, ct: &CondTerms, input: u32, h_prev: &[f64]) -> Step {
    let cx = &ct.input;
    let x: Vec<f64> = p.embed.row(input as usize).iter().zip(cx).map(|(a, b)| a + b).collect();
    let x = &x[..];
    let z: Vec<f64> = gate(&p.w_z, &p.u_z, &p.b_z, x, h_prev).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(&p.w_r, &p.u_r, &p.b_r, x, h_prev).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let n: Vec<f64> = gate(&p.w_n, &p.u_n, &p.b_n, x, &rh).into_iter().map(f64::tanh).collect();
    let h: Vec<f64> = (0..h_prev.len())
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
        .collect();
    let mut logits = ct.logits.clone();
    p.out.matvec_acc(&h, &mut logits);
    Step {
        input,
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        h,
        probs: softmax(&logits),
    }
}

fn check_tokens(p: &ModelParams, tokens: &[u32]) -> Result<()> {
    if let Some(t) = tokens.iter().find(|&&t| t as usize >= p.config.vocab_size) {
        return Err(Error::Shape(format!(
            "token {t} outside vocabulary of size {}",
            p.config.vocab_size
        )));
    }
    Ok(())
}

fn run(p: &ModelParams, condition: &[f64], inputs: &[u32]) -> Vec<Step> {
    let mut h = initial_state(p, condition);
    let ct = cond_terms(p, condition);
    let mut steps = Vec::with_capacity(inputs.len());
    for &tok in inputs {
        let s = cell(p, &ct, tok, &h);
        h.clone_from(&s.h);
        steps.push(s);
    }
    steps
}

/// Next-token distribution `p(. | prefix, condition)`.
pub fn forward(p: &ModelParams, condition: &[f64], prefix: &[u32]) -> Result<Vec<f64>> {
    p.check_condition(condition)?;
    if prefix.first() != Some(&BOS) {
        return Err(Error::InvalidArgument("prefix must start with <bos>".into()));
    }
    check_tokens(p, prefix)?;
    let steps = run(p, condition, prefix);
    Ok(steps.into_iter().last().map(|s| s.probs).unwrap_or_default())
}

/// Teacher-forced probability of every target token of `sequence`
/// (`sequence[1..]`), conditioned on the true prefix.
pub fn target_probs(p: &ModelParams, condition: &[f64], sequence: &[u32]) -> Result<Vec<f64>> {
    validate_sequence(p, condition, sequence)?;
    let steps = run(p, condition, &sequence[..sequence.len() - 1]);
    Ok(steps
        .iter()
        .zip(&sequence[1..])
        .map(|(s, &y)| s.probs[y as usize])
        .collect())
}

fn validate_sequence(p: &ModelParams, condition: &[f64], sequence: &[u32]) -> Result<()> {
    p.check_condition(condition)?;
    if sequence.len() < 2 || sequence[0] != BOS {
        return Err(Error::InvalidArgument(
            "sequence must start with <bos> and contain at least one target".into(),
        ));
    }
    check_tokens(p, sequence)
}

/// Forward pass whose activations are kept for a later weighted backward.
pub struct Tape {
    steps: Vec<Step>,
    targets: Vec<u32>,
    h0: Vec<f64>,
}

impl Tape {
    pub fn record(p: &ModelParams, condition: &[f64], sequence: &[u32]) -> Result<Tape> {
        validate_sequence(p, condition, sequence)?;
        let h0 = initial_state(p, condition);
        let steps = run(p, condition, &sequence[..sequence.len() - 1]);
        Ok(Tape {
            steps,
            targets: sequence[1..].to_vec(),
            h0,
        })
    }

    pub fn target_probs(&self) -> Vec<f64> {
        self.steps
            .iter()
            .zip(&self.targets)
            .map(|(s, &y)| s.probs[y as usize])
            .collect()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Loss `-(1/T) sum_t w_t log p(y_t)` and its gradient. The weights are
    /// treated as constants.
    pub fn backward(&self, p: &ModelParams, condition: &[f64], weights: &WeightVector) -> Result<(f64, ModelParams)> {
        let t_len = self.targets.len();
        if weights.seq_len() != t_len {
            return Err(Error::Shape(format!(
                "{} weights for {} target tokens",
                weights.seq_len(),
                t_len
            )));
        }
        let w = weights.weights();
        let inv_t = 1.0 / t_len as f64;
        let loss = -inv_t
            * self
                .steps
                .iter()
                .zip(&self.targets)
                .zip(w)
                .map(|((s, &y), &wt)| wt * s.probs[y as usize].ln())
                .sum::<f64>();

        let hd = p.config.d_hid;
        let cx = cond_terms(p, condition).input;
        let mut dcx = vec![0.0; p.config.d_emb];
        let mut dlogit_sum = vec![0.0; p.config.vocab_size];
        let mut g = ModelParams::zeros(p.config);
        let mut dh_next = vec![0.0; hd];
        for (t, s) in self.steps.iter().enumerate().rev() {
            let y = self.targets[t] as usize;
            let scale = w[t] * inv_t;
            let mut dlogits: Vec<f64> = s.probs.iter().map(|&q| scale * q).collect();
            dlogits[y] -= scale;
            g.out.outer_acc(&dlogits, &s.h);
            add(&mut g.out_bias.data, &dlogits);
            add(&mut dlogit_sum, &dlogits);
            let mut dh = dh_next;
            p.out.matvec_t_acc(&dlogits, &mut dh);

            let mut dh_prev = vec![0.0; hd];
            let mut da_z = vec![0.0; hd];
            let mut da_n = vec![0.0; hd];
            for i in 0..hd {
                let dn = dh[i] * (1.0 - s.z[i]);
                let dz = dh[i] * (s.h_prev[i] - s.n[i]);
                dh_prev[i] = dh[i] * s.z[i];
                da_n[i] = dn * (1.0 - s.n[i] * s.n[i]);
                da_z[i] = dz * s.z[i] * (1.0 - s.z[i]);
            }
            let x: Vec<f64> = p.embed.row(s.input as usize).iter().zip(&cx).map(|(a, b)| a + b).collect();
            let x = &x[..];
            let rh: Vec<f64> = s.r.iter().zip(&s.h_prev).map(|(a, b)| a * b).collect();

            g.w_n.outer_acc(&da_n, x);
            g.u_n.outer_acc(&da_n, &rh);
            add(&mut g.b_n.data, &da_n);
            let mut drh = vec![0.0; hd];
            p.u_n.matvec_t_acc(&da_n, &mut drh);
            let mut da_r = vec![0.0; hd];
            for i in 0..hd {
                dh_prev[i] += drh[i] * s.r[i];
                da_r[i] = drh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i]);
            }

            g.w_r.outer_acc(&da_r, x);
            g.u_r.outer_acc(&da_r, &s.h_prev);
            add(&mut g.b_r.data, &da_r);
            p.u_r.matvec_t_acc(&da_r, &mut dh_prev);

            g.w_z.outer_acc(&da_z, x);
            g.u_z.outer_acc(&da_z, &s.h_prev);
            add(&mut g.b_z.data, &da_z);
            p.u_z.matvec_t_acc(&da_z, &mut dh_prev);

            let mut dx = vec![0.0; p.config.d_emb];
            p.w_z.matvec_t_acc(&da_z, &mut dx);
            p.w_r.matvec_t_acc(&da_r, &mut dx);
            p.w_n.matvec_t_acc(&da_n, &mut dx);
            add(g.embed.row_mut(s.input as usize), &dx);
            add(&mut dcx, &dx);

            dh_next = dh_prev;
        }
        let da0: Vec<f64> = dh_next
            .iter()
            .zip(&self.h0)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        g.cond.outer_acc(&da0, condition);
        add(&mut g.cond_bias.data, &da0);
        g.cond_in.outer_acc(&dcx, condition);
        g.cond_out.outer_acc(&dlogit_sum, condition);
        Ok((loss, g))
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Weighted teacher-forced loss of `sequence` (starting with `<bos>`), with
/// one weight per target token, and its exact gradient.
pub fn sequence_loss(
    p: &ModelParams,
    condition: &[f64],
    sequence: &[u32],
    weights: &WeightVector,
) -> Result<(f64, ModelParams)> {
    Tape::record(p, condition, sequence)?.backward(p, condition, weights)
}

/// Greedy decoding from `<bos>` until `<eos>` or `max_len` tokens (including
/// `<bos>`).
pub fn generate(p: &ModelParams, condition: &[f64], max_len: usize) -> Result<Vec<u32>> {
    p.check_condition(condition)?;
    if max_len < 2 {
        return Err(Error::InvalidArgument("max_len must be at least 2".into()));
    }
    let mut out = vec![BOS];
    let mut h = initial_state(p, condition);
    let ct = cond_terms(p, condition);
    while out.len() < max_len {
        let s = cell(p, &ct, *out.last().expect("non-empty"), &h);
        let next = argmax(&s.probs);
        h = s.h;
        out.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(out)
}

fn argmax(p: &[f64]) -> u32 {
    // First maximum wins on ties.
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best as u32
}
