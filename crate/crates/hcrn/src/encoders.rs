//! Input-side representation: linear feature projections, an LSTM cell, a
//! bidirectional question encoder and the clip-motion summarizer.
//!
//! The question encoder embeds token ids with a trainable table, runs a
//! forward and a backward LSTM of hidden size `d/2` each and concatenates
//! their final hidden states, so its output extent is exactly `d` for any
//! question length.

use rand::Rng;

use crate::params::{ModelError, ModelParams, TapeBinder};
use crate::tensor::{Tape, Tensor, TensorId};

/// Gate layout within the fused LSTM weight matrix `[d_x + d_h, 4*d_h]`:
/// input, forget, cell, output.
const GATES: usize = 4;

/// `y = x W + b` under the binder's parameter names.
pub fn project(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    name: &str,
    x: TensorId,
) -> Result<TensorId, ModelError> {
    let w = binder.bind(tape, &format!("{name}.w"))?;
    let b = binder.bind(tape, &format!("{name}.b"))?;
    Ok(tape.linear(x, w, Some(b))?)
}

/// One LSTM cell update. `state` is `(h, c)`; returns `(h', c')`.
pub fn lstm_step(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    prefix: &str,
    x: TensorId,
    state: (TensorId, TensorId),
) -> Result<(TensorId, TensorId), ModelError> {
    let (h, c) = state;
    let d_h = tape.shape(h)[0];
    let joined = tape.concat(&[x, h], 0)?;
    let w = binder.bind(tape, &format!("{prefix}.w"))?;
    let b = binder.bind(tape, &format!("{prefix}.b"))?;
    let gates = tape.linear(joined, w, Some(b))?;
    let i_pre = tape.slice_last(gates, 0, d_h)?;
    let f_pre = tape.slice_last(gates, d_h, d_h)?;
    let g_pre = tape.slice_last(gates, 2 * d_h, d_h)?;
    let o_pre = tape.slice_last(gates, 3 * d_h, d_h)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let keep = tape.hadamard(f, c)?;
    let write = tape.hadamard(i, g)?;
    let c_next = tape.add(keep, write)?;
    let c_act = tape.tanh(c_next);
    let h_next = tape.hadamard(o, c_act)?;
    Ok((h_next, c_next))
}

/// Run an LSTM over a sequence from zero state; returns the final hidden state.
pub fn lstm_final(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    prefix: &str,
    xs: &[TensorId],
    d_h: usize,
) -> Result<TensorId, ModelError> {
    if xs.is_empty() {
        return Err(ModelError::BadInput("empty sequence for LSTM".into()));
    }
    let mut h = tape.value(Tensor::zeros(vec![d_h]));
    let mut c = tape.value(Tensor::zeros(vec![d_h]));
    for &x in xs {
        let (h2, c2) = lstm_step(tape, binder, prefix, x, (h, c))?;
        h = h2;
        c = c2;
    }
    Ok(h)
}

/// Embed token ids and encode with a biLSTM; output extent is `d`.
pub fn encode_question(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    prefix: &str,
    tokens: &[usize],
    d: usize,
) -> Result<TensorId, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::BadInput("empty token sequence".into()));
    }
    if d % 2 != 0 {
        return Err(ModelError::BadInput(format!(
            "question encoder needs even d, got {d}"
        )));
    }
    let table = binder.bind(tape, &format!("{prefix}.embed"))?;
    let mut embedded = Vec::with_capacity(tokens.len());
    for &id in tokens {
        embedded.push(tape.row_select(table, id)?);
    }
    let fwd = lstm_final(tape, binder, &format!("{prefix}.q_fwd"), &embedded, d / 2)?;
    let reversed: Vec<TensorId> = embedded.iter().rev().copied().collect();
    let bwd = lstm_final(tape, binder, &format!("{prefix}.q_bwd"), &reversed, d / 2)?;
    Ok(tape.concat(&[fwd, bwd], 0)?)
}

/// LSTM over projected clip-motion features in clip order; final state.
pub fn summarize_motion(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    prefix: &str,
    clip_motion: &[TensorId],
    d: usize,
) -> Result<TensorId, ModelError> {
    lstm_final(tape, binder, &format!("{prefix}.motion_lstm"), clip_motion, d)
}

pub fn init_lstm<R: Rng>(params: &mut ModelParams, prefix: &str, d_x: usize, d_h: usize, rng: &mut R) {
    params.init_linear(&format!("{prefix}.w"), d_x + d_h, GATES * d_h, rng);
    // forget-gate bias starts at 1
    let mut bias = vec![0.0; GATES * d_h];
    for v in bias.iter_mut().take(2 * d_h).skip(d_h) {
        *v = 1.0;
    }
    params.insert(&format!("{prefix}.b"), Tensor::vector(bias));
}

/// All encoder parameters: projections, embedding table, question biLSTM and
/// the motion LSTM.
pub fn init_encoders<R: Rng>(
    params: &mut ModelParams,
    prefix: &str,
    vocab_size: usize,
    embed_dim: usize,
    d_in: usize,
    d: usize,
    rng: &mut R,
) {
    params.init_linear(&format!("{prefix}.app_proj.w"), d_in, d, rng);
    params.init_zeros(&format!("{prefix}.app_proj.b"), vec![d]);
    params.init_linear(&format!("{prefix}.mot_proj.w"), d_in, d, rng);
    params.init_zeros(&format!("{prefix}.mot_proj.b"), vec![d]);
    params.init_uniform(&format!("{prefix}.embed"), vec![vocab_size, embed_dim], 0.08, rng);
    init_lstm(params, &format!("{prefix}.q_fwd"), embed_dim, d / 2, rng);
    init_lstm(params, &format!("{prefix}.q_bwd"), embed_dim, d / 2, rng);
    init_lstm(params, &format!("{prefix}.motion_lstm"), d, d, rng);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    /// Independent scalar LSTM for oracle comparisons.
    fn scalar_lstm_step(
        w: &[f64],
        b: &[f64],
        d_x: usize,
        d_h: usize,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let joined: Vec<f64> = x.iter().chain(h.iter()).copied().collect();
        let cols = 4 * d_h;
        let mut pre = b.to_vec();
        for (i, &v) in joined.iter().enumerate() {
            for j in 0..cols {
                pre[j] += v * w[i * cols + j];
            }
        }
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h2 = vec![0.0; d_h];
        let mut c2 = vec![0.0; d_h];
        for j in 0..d_h {
            let i_g = sig(pre[j]);
            let f_g = sig(pre[d_h + j]);
            let g_g = pre[2 * d_h + j].tanh();
            let o_g = sig(pre[3 * d_h + j]);
            c2[j] = f_g * c[j] + i_g * g_g;
            h2[j] = o_g * c2[j].tanh();
        }
        let _ = d_x;
        (h2, c2)
    }

    fn step_once(params: &ModelParams, x: Vec<f64>, h: Vec<f64>, c: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(params);
        let xi = tape.value(Tensor::vector(x));
        let hi = tape.value(Tensor::vector(h));
        let ci = tape.value(Tensor::vector(c));
        let (h2, c2) = lstm_step(&mut tape, &mut binder, "m", xi, (hi, ci)).unwrap();
        (tape.data(h2).to_vec(), tape.data(c2).to_vec())
    }

    #[test]
    fn projection_identity_passthrough_and_bias() {
        let d = 2;
        let mut params = ModelParams::new();
        params.insert(
            "p.w",
            Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        );
        params.init_zeros("p.b", vec![d]);
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(&params);
        let x = tape.value(Tensor::vector(vec![0.25, -4.0]));
        let y = project(&mut tape, &mut binder, "p", x).unwrap();
        assert_eq!(tape.data(y), &[0.25, -4.0]);

        let mut params2 = ModelParams::new();
        params2.insert("p.w", Tensor::matrix(&[vec![3.0, 1.0], vec![2.0, 5.0]]).unwrap());
        params2.insert("p.b", Tensor::vector(vec![0.5, -0.5]));
        let mut tape2 = Tape::new();
        let mut binder2 = TapeBinder::new(&params2);
        let zero = tape2.value(Tensor::vector(vec![0.0, 0.0]));
        let y0 = project(&mut tape2, &mut binder2, "p", zero).unwrap();
        assert_eq!(tape2.data(y0), &[0.5, -0.5]);
        // random 2x2 hand check: [1,2] W + b
        let x2 = tape2.value(Tensor::vector(vec![1.0, 2.0]));
        let y2 = project(&mut tape2, &mut binder2, "p", x2).unwrap();
        assert_eq!(tape2.data(y2), &[1.0 * 3.0 + 2.0 * 2.0 + 0.5, 1.0 + 10.0 - 0.5]);
    }

    #[test]
    fn lstm_zero_weights_zero_state_gives_zero_h() {
        let mut params = ModelParams::new();
        params.init_zeros("m.w", vec![4, 8]);
        params.init_zeros("m.b", vec![8]);
        let (h2, _) = step_once(&params, vec![1.0, -1.0], vec![0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(h2, vec![0.0, 0.0]);
    }

    #[test]
    fn lstm_gate_semantics_forget_open_input_closed() {
        let d_h = 2;
        let mut params = ModelParams::new();
        params.init_zeros("m.w", vec![4, 8]);
        let mut b = vec![0.0; 8];
        for j in 0..d_h {
            b[j] = -60.0; // input gate closed
            b[d_h + j] = 60.0; // forget gate open
        }
        params.insert("m.b", Tensor::vector(b));
        let c0 = vec![0.37, -1.4];
        let (_, c2) = step_once(&params, vec![0.5, 0.5], vec![0.1, 0.2], c0.clone());
        for (a, b) in c2.iter().zip(&c0) {
            assert!((a - b).abs() < 1e-12, "cell must carry through: {a} vs {b}");
        }
    }

    #[test]
    fn lstm_step_matches_scalar_oracle() {
        let mut rng = seed::rng(31);
        let mut params = ModelParams::new();
        init_lstm(&mut params, "m", 2, 2, &mut rng);
        let x = vec![0.3, -0.8];
        let h = vec![0.15, 0.4];
        let c = vec![-0.2, 0.9];
        let (h2, c2) = step_once(&params, x.clone(), h.clone(), c.clone());
        let (oh, oc) = scalar_lstm_step(
            &params.get("m.w").unwrap().data,
            &params.get("m.b").unwrap().data,
            2,
            2,
            &x,
            &h,
            &c,
        );
        for (a, b) in h2.iter().zip(&oh) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in c2.iter().zip(&oc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn question_params(vocab: usize, e: usize, d: usize, seed_v: u64) -> ModelParams {
        let mut rng = seed::rng(seed_v);
        let mut params = ModelParams::new();
        params.init_uniform("enc.embed", vec![vocab, e], 0.08, &mut rng);
        init_lstm(&mut params, "enc.q_fwd", e, d / 2, &mut rng);
        init_lstm(&mut params, "enc.q_bwd", e, d / 2, &mut rng);
        params
    }

    #[test]
    fn question_length_one_halves_agree_when_directions_share_weights() {
        let (vocab, e, d) = (5, 3, 4);
        let mut params = question_params(vocab, e, d, 3);
        let fwd_w = params.get("enc.q_fwd.w").unwrap().clone();
        let fwd_b = params.get("enc.q_fwd.b").unwrap().clone();
        params.insert("enc.q_bwd.w", fwd_w);
        params.insert("enc.q_bwd.b", fwd_b);
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(&params);
        let q = encode_question(&mut tape, &mut binder, "enc", &[2], d).unwrap();
        let qd = tape.data(q);
        assert_eq!(qd.len(), d);
        assert_eq!(&qd[..d / 2], &qd[d / 2..]);
    }

    #[test]
    fn question_output_extent_is_d_for_any_length() {
        let (vocab, e, d) = (6, 3, 4);
        let params = question_params(vocab, e, d, 4);
        for len in 1..=5 {
            let tokens: Vec<usize> = (0..len).map(|i| i % vocab).collect();
            let mut tape = Tape::new();
            let mut binder = TapeBinder::new(&params);
            let q = encode_question(&mut tape, &mut binder, "enc", &tokens, d).unwrap();
            assert_eq!(tape.shape(q), &[d]);
        }
    }

    #[test]
    fn question_unknown_token_rejected() {
        let params = question_params(4, 3, 4, 5);
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(&params);
        assert!(encode_question(&mut tape, &mut binder, "enc", &[9], 4).is_err());
    }

    #[test]
    fn question_degenerate_recurrence_sees_only_adjacent_token() {
        // with zero recurrent weights and the forget gate shut, the forward
        // final state is a function of the last token only
        let (vocab, e, d) = (6, 3, 4);
        let mut params = question_params(vocab, e, d, 6);
        let d_h = d / 2;
        {
            let w = params.get_mut("enc.q_fwd.w").unwrap();
            for r in e..e + d_h {
                for c in 0..4 * d_h {
                    w.data[r * 4 * d_h + c] = 0.0;
                }
            }
        }
        {
            let b = params.get_mut("enc.q_fwd.b").unwrap();
            for j in 0..d_h {
                b.data[d_h + j] = -60.0;
            }
        }
        let run = |tokens: &[usize]| {
            let mut tape = Tape::new();
            let mut binder = TapeBinder::new(&params);
            let q = encode_question(&mut tape, &mut binder, "enc", tokens, d).unwrap();
            tape.data(q)[..d_h].to_vec() // forward half
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[3, 4, 2]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = run(&[0, 1, 5]);
        assert!(a.iter().zip(&c).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn question_length_three_matches_unrolled_oracle() {
        let (vocab, e, d) = (5, 2, 4);
        let params = question_params(vocab, e, d, 7);
        let tokens = [1usize, 3, 0];
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(&params);
        let q = encode_question(&mut tape, &mut binder, "enc", &tokens, d).unwrap();

        let embed = &params.get("enc.embed").unwrap().data;
        let emb = |t: usize| embed[t * e..(t + 1) * e].to_vec();
        let d_h = d / 2;
        let run_dir = |prefix: &str, order: &[usize]| {
            let w = &params.get(&format!("{prefix}.w")).unwrap().data;
            let b = &params.get(&format!("{prefix}.b")).unwrap().data;
            let mut h = vec![0.0; d_h];
            let mut c = vec![0.0; d_h];
            for &t in order {
                let (h2, c2) = scalar_lstm_step(w, b, e, d_h, &emb(t), &h, &c);
                h = h2;
                c = c2;
            }
            h
        };
        let fwd = run_dir("enc.q_fwd", &tokens);
        let bwd = run_dir("enc.q_bwd", &[0, 3, 1]);
        let expect: Vec<f64> = fwd.into_iter().chain(bwd).collect();
        for (a, b) in tape.data(q).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn motion_summary_single_clip_is_one_step_from_zero() {
        let d = 2;
        let mut rng = seed::rng(8);
        let mut params = ModelParams::new();
        init_lstm(&mut params, "enc.motion_lstm", d, d, &mut rng);
        let x = vec![0.4, -0.6];
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(&params);
        let xi = tape.value(Tensor::vector(x.clone()));
        let out = summarize_motion(&mut tape, &mut binder, "enc", &[xi], d).unwrap();
        let (oh, _) = scalar_lstm_step(
            &params.get("enc.motion_lstm.w").unwrap().data,
            &params.get("enc.motion_lstm.b").unwrap().data,
            d,
            d,
            &x,
            &[0.0, 0.0],
            &[0.0, 0.0],
        );
        for (a, b) in tape.data(out).iter().zip(&oh) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn motion_summary_is_order_sensitive_and_matches_oracle() {
        let d = 2;
        let mut rng = seed::rng(9);
        let mut params = ModelParams::new();
        init_lstm(&mut params, "enc.motion_lstm", d, d, &mut rng);
        let clips = [vec![0.5, 0.1], vec![-0.3, 0.7], vec![0.9, -0.9]];
        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let mut binder = TapeBinder::new(&params);
            let xs: Vec<TensorId> = order
                .iter()
                .map(|&i| tape.value(Tensor::vector(clips[i].clone())))
                .collect();
            let out = summarize_motion(&mut tape, &mut binder, "enc", &xs, d).unwrap();
            tape.data(out).to_vec()
        };
        let fwd = run(&[0, 1, 2]);
        let perm = run(&[2, 1, 0]);
        assert!(fwd.iter().zip(&perm).any(|(a, b)| (a - b).abs() > 1e-9));

        let w = &params.get("enc.motion_lstm.w").unwrap().data;
        let b = &params.get("enc.motion_lstm.b").unwrap().data;
        let mut h = vec![0.0; d];
        let mut c = vec![0.0; d];
        for clip in &clips {
            let (h2, c2) = scalar_lstm_step(w, b, d, d, clip, &h, &c);
            h = h2;
            c = c2;
        }
        for (a, b) in fwd.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn motion_summary_empty_rejected() {
        let params = ModelParams::new();
        let mut tape = Tape::new();
        let mut binder = TapeBinder::new(&params);
        assert!(summarize_motion(&mut tape, &mut binder, "enc", &[], 2).is_err());
    }
}
