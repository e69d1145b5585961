//! Central finite-difference checking of tape gradients.
//!
//! The checker re-evaluates a caller-supplied forward closure on perturbed
//! copies of the parameters; it never looks at the backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, NodeId, ParamId, ParamRef, ParamSet, RnnWeights, Tape, Tensor};

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative error with a small floor so that two values near zero compare
/// by their absolute difference.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares analytic gradients of `forward` with central differences of step
/// `h` for every entry of every tensor in `params`.
pub fn check_gradients<F>(
    params: &ParamSet,
    h: f64,
    forward: F,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape<'_>) -> Result<NodeId, AutodiffError>,
{
    let analytic = {
        let mut tape = Tape::new(vec![params]);
        let loss = forward(&mut tape)?;
        tape.backward(loss)?.remove(0)
    };
    let eval = |p: &ParamSet| -> Result<f64, AutodiffError> {
        let mut tape = Tape::inference(vec![p]);
        let loss = forward(&mut tape)?;
        Ok(tape.scalar(loss))
    };

    let mut report = GradCheckReport {
        entries_checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = params.clone();
    for (id, name, t) in params.iter() {
        for k in 0..t.len() {
            let orig = t.data()[k];
            probe.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id)[k];
            let rel = relative_error(a, numeric);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((name.to_string(), k, a, numeric));
            }
        }
    }
    Ok(report)
}

/// A randomly sized small network exercising every primitive: input
/// embedding, an RNN unrolled over a random symbol sequence, concatenation,
/// body layer, softmax and log-probability heads, and a squared term.
#[derive(Clone, Debug)]
pub struct RandomGraph {
    pub params: ParamSet,
    pub input: Vec<f64>,
    pub symbols: Vec<usize>,
    pub target: usize,
    pub mix: Vec<f64>,
}

impl RandomGraph {
    /// Dimensions are drawn in `1..=8`; the unrolled length is `steps`.
    pub fn generate(seed: u64, steps: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dim = || rng.random_range(1..=8usize);
        let (n_in, n_emb, n_hid, n_out, vocab) = (dim(), dim(), dim(), dim().max(2), dim().max(2));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut mk = |shape: &[usize]| {
            let len: usize = shape.iter().product();
            Tensor::from_vec(
                shape,
                (0..len).map(|_| rng.random_range(-0.8..0.8)).collect(),
            )
            .unwrap()
        };
        let mut ps = ParamSet::new();
        ps.add("in.w", mk(&[n_hid, n_in]));
        ps.add("in.b", mk(&[n_hid]));
        ps.add("emb", mk(&[vocab, n_emb]));
        ps.add("rnn.w_ih", mk(&[n_hid, n_emb]));
        ps.add("rnn.b_ih", mk(&[n_hid]));
        ps.add("rnn.w_hh", mk(&[n_hid, n_hid]));
        ps.add("rnn.b_hh", mk(&[n_hid]));
        ps.add("body.w", mk(&[n_hid, 2 * n_hid]));
        ps.add("body.b", mk(&[n_hid]));
        ps.add("head.w", mk(&[n_out, n_hid]));
        ps.add("head.b", mk(&[n_out]));
        ps.add("scale", mk(&[n_out]));
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
        let input = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let symbols = (0..steps).map(|_| rng.random_range(0..vocab)).collect();
        let target = rng.random_range(0..n_out);
        let mix = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self {
            params: ps,
            input,
            symbols,
            target,
            mix,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>) -> Result<NodeId, AutodiffError> {
        let p = |i: usize| ParamRef::new(0, ParamId(i));
        let rnn = RnnWeights {
            w_ih: p(3),
            b_ih: p(4),
            w_hh: p(5),
            b_hh: p(6),
        };
        let x = tape.constant(self.input.clone())?;
        let lin = tape.linear(x, p(0), Some(p(1)))?;
        let e = tape.tanh(lin)?;
        let n_hid = tape.value(e).len();
        let mut h = tape.constant(vec![0.0; n_hid])?;
        for &s in &self.symbols {
            let xs = tape.embedding(p(2), s)?;
            h = tape.rnn_cell(h, xs, &rnn)?;
        }
        let cat = tape.concat(&[h, e])?;
        let body_lin = tape.linear(cat, p(7), Some(p(8)))?;
        let body = tape.tanh(body_lin)?;
        let logits = tape.linear(body, p(9), Some(p(10)))?;
        let lp = tape.log_prob(logits, self.target)?;
        let probs = tape.softmax(logits)?;
        let sc = tape.param_node(p(11))?;
        let weighted = tape.mul(probs, sc)?;
        let mix = tape.constant(self.mix.clone())?;
        let mixed = tape.mul(weighted, mix)?;
        let m = tape.sum(mixed)?;
        let sq = tape.square(body)?;
        let sq_sum = tape.sum(sq)?;
        let sq_term = tape.scale(sq_sum, 0.1)?;
        let shifted = tape.add_scalar(lp, 0.5)?;
        tape.add_all(&[shifted, m, sq_term])
    }

    pub fn check(&self, h: f64) -> Result<GradCheckReport, AutodiffError> {
        check_gradients(&self.params, h, |t| self.forward(t))
    }
}
