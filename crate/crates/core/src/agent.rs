//! The symmetric agent: input embedders, message encoder, body, message
//! decoder and choice decoder.
//!
//! One [`AgentParameters`] serves as both Fruit Player and Tool Player; the
//! role is only visible through which input it embeds. Forward passes are
//! written against a [`Tape`] so the same code drives training (recording),
//! rollouts and the causal analysis (inference tapes).

use rand::Rng as _;
use thiserror::Error;

use crate::autodiff::{
    softmax, AutodiffError, NodeId, ParamId, ParamRef, ParamSet, RnnWeights, Tape, Tensor,
};
use crate::dataset::{NUM_FRUIT_FEATURES, NUM_TOOL_FEATURES};
use crate::rng::Rng;

/// Regular message symbols.
pub const VOCAB_SIZE: usize = 10;
/// Index of the dummy message m⁰ in the symbol table; never emitted.
pub const DUMMY_MESSAGE: usize = VOCAB_SIZE;
pub const SYMBOL_DIM: usize = 50;
pub const HIDDEN: usize = 100;
pub const TOOL_EMBED: usize = 50;
/// Choice 0 continues the conversation, 1 and 2 pick a tool.
pub const NUM_CHOICES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected {expected} values, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("message index {0} out of range")]
    Message(usize),
}

/// What an agent sees this episode.
#[derive(Clone, Copy, Debug)]
pub enum AgentInput<'a> {
    Fruit(&'a [f64]),
    Tools(&'a [f64], &'a [f64]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Argmax,
}

#[derive(Clone, Copy, Debug)]
struct AgentIds {
    fruit_w: ParamId,
    fruit_b: ParamId,
    tool_w: ParamId,
    tool_b: ParamId,
    symbols: ParamId,
    enc: [ParamId; 4],
    body_w: ParamId,
    body_b: ParamId,
    dec: [ParamId; 4],
    dec_out_w: ParamId,
    dec_out_b: ParamId,
    choice_w: ParamId,
    choice_b: ParamId,
}

/// All learnable weights of one agent.
///
/// Parameter names (used in checkpoints, prefixed by `agentA.`/`agentB.`):
/// `fruit_embedder.{weight,bias}` 100×11, `tool_embedder.{weight,bias}` 50×30,
/// `symbols` 11×50 (row 10 is m⁰, kept at zero), `encoder.{w_ih,b_ih,w_hh,b_hh}`,
/// `body.{weight,bias}` 100×300, `decoder.{w_ih,b_ih,w_hh,b_hh}`,
/// `decoder_out.{weight,bias}` 10×100, `choice.{weight,bias}` 3×100.
/// Weight matrices are `[out, in]`.
#[derive(Clone, Debug)]
pub struct AgentParameters {
    pub params: ParamSet,
    ids: AgentIds,
}

/// One computed turn.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentStepTrace {
    pub incoming_message: usize,
    pub encoder_hidden: Vec<f64>,
    pub prev_state: Vec<f64>,
    pub input_embedding: Vec<f64>,
    pub state: Vec<f64>,
    pub choice_dist: [f64; NUM_CHOICES],
    pub message_dist: [f64; VOCAB_SIZE],
    pub choice: usize,
    pub message: usize,
    pub choice_logp: f64,
    pub message_logp: f64,
}

/// Tape nodes of one turn, for building losses.
#[derive(Clone, Copy, Debug)]
pub struct StepNodes {
    pub encoder_hidden: NodeId,
    pub state: NodeId,
    pub choice_logits: NodeId,
    pub message_logits: NodeId,
}

fn uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("shape matches data length")
}

impl AgentParameters {
    /// Uniform initialisation in ±1/√fan_in; the m⁰ row of the symbol table
    /// is zero.
    pub fn init(rng: &mut Rng) -> Self {
        Self::build(|name, shape, fan_in| {
            let mut t = uniform(rng, shape, fan_in);
            if name == "symbols" {
                t.row_mut(DUMMY_MESSAGE).fill(0.0);
            }
            t
        })
    }

    /// Every parameter zero.
    pub fn zeros() -> Self {
        Self::build(|_, shape, _| Tensor::zeros(shape))
    }

    fn build(mut make: impl FnMut(&str, &[usize], usize) -> Tensor) -> Self {
        let mut p = ParamSet::new();
        let mut add = |p: &mut ParamSet, name: &str, shape: &[usize], fan_in: usize| {
            let t = make(name, shape, fan_in);
            p.add(name, t)
        };
        let two_tools = 2 * NUM_TOOL_FEATURES;
        let fruit_w = add(
            &mut p,
            "fruit_embedder.weight",
            &[HIDDEN, NUM_FRUIT_FEATURES],
            NUM_FRUIT_FEATURES,
        );
        let fruit_b = add(&mut p, "fruit_embedder.bias", &[HIDDEN], NUM_FRUIT_FEATURES);
        let tool_w = add(
            &mut p,
            "tool_embedder.weight",
            &[TOOL_EMBED, two_tools],
            two_tools,
        );
        let tool_b = add(&mut p, "tool_embedder.bias", &[TOOL_EMBED], two_tools);
        let symbols = add(&mut p, "symbols", &[VOCAB_SIZE + 1, SYMBOL_DIM], 1);
        let rnn_shapes: [(&str, Vec<usize>); 4] = [
            ("w_ih", vec![HIDDEN, SYMBOL_DIM]),
            ("b_ih", vec![HIDDEN]),
            ("w_hh", vec![HIDDEN, HIDDEN]),
            ("b_hh", vec![HIDDEN]),
        ];
        let enc = rnn_shapes
            .clone()
            .map(|(n, shape)| add(&mut p, &format!("encoder.{n}"), &shape, HIDDEN));
        let body_w = add(&mut p, "body.weight", &[HIDDEN, 3 * HIDDEN], 3 * HIDDEN);
        let body_b = add(&mut p, "body.bias", &[HIDDEN], 3 * HIDDEN);
        let dec = rnn_shapes.map(|(n, shape)| add(&mut p, &format!("decoder.{n}"), &shape, HIDDEN));
        let dec_out_w = add(&mut p, "decoder_out.weight", &[VOCAB_SIZE, HIDDEN], HIDDEN);
        let dec_out_b = add(&mut p, "decoder_out.bias", &[VOCAB_SIZE], HIDDEN);
        let choice_w = add(&mut p, "choice.weight", &[NUM_CHOICES, HIDDEN], HIDDEN);
        let choice_b = add(&mut p, "choice.bias", &[NUM_CHOICES], HIDDEN);
        Self {
            params: p,
            ids: AgentIds {
                fruit_w,
                fruit_b,
                tool_w,
                tool_b,
                symbols,
                enc,
                body_w,
                body_b,
                dec,
                dec_out_w,
                dec_out_b,
                choice_w,
                choice_b,
            },
        }
    }

    /// Rebuilds the id map after `params` was replaced wholesale (e.g. loaded).
    pub fn from_params(params: ParamSet) -> Option<Self> {
        let mut out = Self::zeros();
        for (id, name, t) in out.params.iter() {
            let other = params.get(params.id_of(name)?);
            if other.shape() != t.shape() || params.name(id) != name {
                return None;
            }
        }
        out.params = params;
        Some(out)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }

    /// Zeroes the gradient of parameters that are fixed by construction
    /// (the m⁰ symbol row).
    pub fn mask_fixed_grads(&self, grads: &mut crate::autodiff::GradSet) {
        let g = grads.get_mut(self.ids.symbols);
        g[DUMMY_MESSAGE * SYMBOL_DIM..].fill(0.0);
    }

    fn rnn(&self, group: usize, ids: &[ParamId; 4]) -> RnnWeights {
        RnnWeights {
            w_ih: ParamRef::new(group, ids[0]),
            b_ih: ParamRef::new(group, ids[1]),
            w_hh: ParamRef::new(group, ids[2]),
            b_hh: ParamRef::new(group, ids[3]),
        }
    }

    /// `tanh(linear(input))`; tool embeddings are zero-padded to 100.
    pub fn embed_input_node(
        &self,
        tape: &mut Tape<'_>,
        group: usize,
        input: AgentInput<'_>,
    ) -> Result<NodeId, AgentError> {
        let r = |id| ParamRef::new(group, id);
        match input {
            AgentInput::Fruit(f) => {
                check_arity("fruit input", NUM_FRUIT_FEATURES, f.len())?;
                let x = tape.constant(f.to_vec())?;
                let l = tape.linear(x, r(self.ids.fruit_w), Some(r(self.ids.fruit_b)))?;
                Ok(tape.tanh(l)?)
            }
            AgentInput::Tools(t1, t2) => {
                check_arity("tool1 input", NUM_TOOL_FEATURES, t1.len())?;
                check_arity("tool2 input", NUM_TOOL_FEATURES, t2.len())?;
                let mut v = Vec::with_capacity(2 * NUM_TOOL_FEATURES);
                v.extend_from_slice(t1);
                v.extend_from_slice(t2);
                let x = tape.constant(v)?;
                let l = tape.linear(x, r(self.ids.tool_w), Some(r(self.ids.tool_b)))?;
                let e = tape.tanh(l)?;
                let pad = tape.constant(vec![0.0; HIDDEN - TOOL_EMBED])?;
                Ok(tape.concat(&[e, pad])?)
            }
        }
    }

    /// Body and both decoders for one turn. The m⁰ embedding enters as a
    /// constant so its row never receives gradient.
    pub fn step_nodes(
        &self,
        tape: &mut Tape<'_>,
        group: usize,
        prev_state: NodeId,
        incoming: usize,
        input_embedding: NodeId,
    ) -> Result<StepNodes, AgentError> {
        if incoming > DUMMY_MESSAGE {
            return Err(AgentError::Message(incoming));
        }
        check_arity("prev_state", HIDDEN, tape.value(prev_state).len())?;
        check_arity("input_embedding", HIDDEN, tape.value(input_embedding).len())?;
        let r = |id| ParamRef::new(group, id);
        let msg = self.symbol_node(tape, group, incoming)?;
        let h0 = tape.constant(vec![0.0; HIDDEN])?;
        let encoder_hidden = tape.rnn_cell(h0, msg, &self.rnn(group, &self.ids.enc))?;
        let cat = tape.concat(&[encoder_hidden, prev_state, input_embedding])?;
        let pre = tape.linear(cat, r(self.ids.body_w), Some(r(self.ids.body_b)))?;
        let state = tape.tanh(pre)?;
        let start = self.symbol_node(tape, group, DUMMY_MESSAGE)?;
        let dec_h = tape.rnn_cell(state, start, &self.rnn(group, &self.ids.dec))?;
        let message_logits =
            tape.linear(dec_h, r(self.ids.dec_out_w), Some(r(self.ids.dec_out_b)))?;
        let choice_logits = tape.linear(state, r(self.ids.choice_w), Some(r(self.ids.choice_b)))?;
        Ok(StepNodes {
            encoder_hidden,
            state,
            choice_logits,
            message_logits,
        })
    }

    fn symbol_node(
        &self,
        tape: &mut Tape<'_>,
        group: usize,
        symbol: usize,
    ) -> Result<NodeId, AgentError> {
        if symbol == DUMMY_MESSAGE {
            let row = self
                .params
                .get(self.ids.symbols)
                .row(DUMMY_MESSAGE)
                .to_vec();
            Ok(tape.constant(row)?)
        } else {
            Ok(tape.embedding(ParamRef::new(group, self.ids.symbols), symbol)?)
        }
    }

    /// Input embedding without recording gradients.
    pub fn embed_input(&self, input: AgentInput<'_>) -> Result<Vec<f64>, AgentError> {
        let mut tape = Tape::inference(vec![&self.params]);
        let n = self.embed_input_node(&mut tape, 0, input)?;
        Ok(tape.value(n).to_vec())
    }

    /// One turn: runs the networks, then draws (sample mode) or takes the
    /// modes of (argmax mode) both distributions.
    pub fn step(
        &self,
        prev_state: &[f64],
        incoming: usize,
        input_embedding: &[f64],
        mode: ActionMode,
        rng: &mut Rng,
    ) -> Result<AgentStepTrace, AgentError> {
        let mut tape = Tape::inference(vec![&self.params]);
        let s = tape.constant(prev_state.to_vec())?;
        let i = tape.constant(input_embedding.to_vec())?;
        let nodes = self.step_nodes(&mut tape, 0, s, incoming, i)?;
        Ok(trace_from_nodes(&tape, &nodes, s, i, incoming, mode, rng))
    }

    /// The full choice and message distributions for given inputs, with no
    /// sampling and no side effects.
    pub fn conditional_distributions(
        &self,
        prev_state: &[f64],
        message: usize,
        input_embedding: &[f64],
    ) -> Result<([f64; NUM_CHOICES], [f64; VOCAB_SIZE]), AgentError> {
        let mut tape = Tape::inference(vec![&self.params]);
        let s = tape.constant(prev_state.to_vec())?;
        let i = tape.constant(input_embedding.to_vec())?;
        let nodes = self.step_nodes(&mut tape, 0, s, message, i)?;
        Ok((
            to_array(&softmax(tape.value(nodes.choice_logits))),
            to_array(&softmax(tape.value(nodes.message_logits))),
        ))
    }
}

fn check_arity(what: &'static str, expected: usize, got: usize) -> Result<(), AgentError> {
    if expected == got {
        Ok(())
    } else {
        Err(AgentError::Arity {
            what,
            expected,
            got,
        })
    }
}

fn to_array<const N: usize>(v: &[f64]) -> [f64; N] {
    let mut out = [0.0; N];
    out.copy_from_slice(v);
    out
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a normalised distribution.
pub fn sample_index(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave `acc` a hair below 1; fall back to the last
    // index with non-zero mass.
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

/// Reads a turn's values off the tape and picks the actions.
pub(crate) fn trace_from_nodes(
    tape: &Tape<'_>,
    nodes: &StepNodes,
    prev_state: NodeId,
    input_embedding: NodeId,
    incoming: usize,
    mode: ActionMode,
    rng: &mut Rng,
) -> AgentStepTrace {
    let choice_dist: [f64; NUM_CHOICES] = to_array(&softmax(tape.value(nodes.choice_logits)));
    let message_dist: [f64; VOCAB_SIZE] = to_array(&softmax(tape.value(nodes.message_logits)));
    let (choice, message) = match mode {
        ActionMode::Argmax => (argmax(&choice_dist), argmax(&message_dist)),
        ActionMode::Sample => (
            sample_index(&choice_dist, rng),
            sample_index(&message_dist, rng),
        ),
    };
    let lp = |logits: NodeId, i: usize| crate::autodiff::log_softmax(tape.value(logits))[i];
    AgentStepTrace {
        incoming_message: incoming,
        encoder_hidden: tape.value(nodes.encoder_hidden).to_vec(),
        prev_state: tape.value(prev_state).to_vec(),
        input_embedding: tape.value(input_embedding).to_vec(),
        state: tape.value(nodes.state).to_vec(),
        choice_dist,
        message_dist,
        choice,
        message,
        choice_logp: lp(nodes.choice_logits, choice),
        message_logp: lp(nodes.message_logits, message),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    #[test]
    fn parameter_count_and_shapes() {
        let a = AgentParameters::init(&mut Seed::new(1).rng());
        let expected = 100 * 11
            + 100
            + 50 * 30
            + 50
            + 11 * 50
            + 2 * (100 * 50 + 100 + 100 * 100 + 100)
            + 100 * 300
            + 100
            + 10 * 100
            + 10
            + 3 * 100
            + 3;
        assert_eq!(a.num_scalars(), expected);
        let sym = a.params.get(a.params.id_of("symbols").unwrap());
        assert!(sym.row(DUMMY_MESSAGE).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let a = AgentParameters::init(&mut Seed::new(2).rng());
        let w = a.params.get(a.params.id_of("body.weight").unwrap());
        let bound = 1.0 / 300f64.sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn from_params_round_trip() {
        let a = AgentParameters::init(&mut Seed::new(3).rng());
        let b = AgentParameters::from_params(a.params.clone()).unwrap();
        let e = a.embed_input(AgentInput::Fruit(&[0.5; 11])).unwrap();
        assert_eq!(e, b.embed_input(AgentInput::Fruit(&[0.5; 11])).unwrap());
    }

    #[test]
    fn rejects_bad_message() {
        let a = AgentParameters::zeros();
        let z = vec![0.0; HIDDEN];
        assert!(a.conditional_distributions(&z, 11, &z).is_err());
    }
}
