//! Turn-based episode engine.
//!
//! Agents alternate starting from position 1. At each turn the acting agent
//! receives the other agent's last message (m⁰ at t=0, or always m⁰ when
//! communication is ablated) and its own state from two turns earlier (s⁰
//! before its first turn, or always s⁰ when memory is ablated). Choice 0
//! continues; 1 or 2 picks a tool and ends the game.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{
    argmax, sample_index, trace_from_nodes, ActionMode, AgentError, AgentInput, AgentParameters,
    AgentStepTrace, StepNodes, DUMMY_MESSAGE, HIDDEN, NUM_CHOICES, VOCAB_SIZE,
};
use crate::autodiff::{NodeId, Tape};
use crate::dataset::{best_tool, CategoryTable, DatasetError, GameSample, UtilityMatrices};
use crate::rng::{Rng, Seed};

pub const DEFAULT_MAX_TURNS: usize = 20;

#[derive(Debug, Error)]
pub enum GameError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("episode statistics need at least one trajectory")]
    Empty,
    #[error("max_turns must be at least 1")]
    NoTurns,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentId {
    A,
    B,
}

impl AgentId {
    pub fn index(self) -> usize {
        match self {
            AgentId::A => 0,
            AgentId::B => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            AgentId::A => AgentId::B,
            AgentId::B => AgentId::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::A => "A",
            AgentId::B => "B",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Fruit,
    Tool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub memory: bool,
    pub communication: bool,
    pub max_turns: usize,
    pub mode: ActionMode,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            memory: true,
            communication: true,
            max_turns: DEFAULT_MAX_TURNS,
            mode: ActionMode::Sample,
        }
    }
}

/// Who plays the tools and who moves first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub tool_player: AgentId,
    pub position1: AgentId,
}

impl Assignment {
    /// The four role × position configurations, in a fixed order.
    pub const ALL: [Assignment; 4] = [
        Assignment::new(AgentId::A, AgentId::A),
        Assignment::new(AgentId::A, AgentId::B),
        Assignment::new(AgentId::B, AgentId::A),
        Assignment::new(AgentId::B, AgentId::B),
    ];

    pub const fn new(tool_player: AgentId, position1: AgentId) -> Self {
        Self {
            tool_player,
            position1,
        }
    }

    /// Roles and positions uniform and independent.
    pub fn random(rng: &mut Rng) -> Self {
        let pick = |b: bool| if b { AgentId::A } else { AgentId::B };
        let tool_player = pick(rng.random());
        let position1 = pick(rng.random());
        Self {
            tool_player,
            position1,
        }
    }

    /// Configuration `i` of [`Assignment::ALL`].
    pub fn forced(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    pub fn config_index(&self) -> usize {
        Self::ALL
            .iter()
            .position(|a| a == self)
            .expect("all configurations listed")
    }

    pub fn role_of(&self, agent: AgentId) -> Role {
        if agent == self.tool_player {
            Role::Tool
        } else {
            Role::Fruit
        }
    }

    /// Acting agent at turn `t`.
    pub fn agent_at(&self, t: usize) -> AgentId {
        if t.is_multiple_of(2) {
            self.position1
        } else {
            self.position1.other()
        }
    }

    /// Short label such as `1T/2F`.
    pub fn label(&self) -> String {
        let r = |a| match self.role_of(a) {
            Role::Fruit => "F",
            Role::Tool => "T",
        };
        format!(
            "A={}{}",
            r(AgentId::A),
            if self.position1 == AgentId::A {
                "1"
            } else {
                "2"
            }
        ) + &format!(
            ",B={}{}",
            r(AgentId::B),
            if self.position1 == AgentId::B {
                "1"
            } else {
                "2"
            }
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    pub agent: AgentId,
    pub role: Role,
    pub trace: AgentStepTrace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Tool 1 or 2 was picked by `by`.
    Chose {
        tool: usize,
        by: AgentId,
    },
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub assignment: Assignment,
    pub sample: GameSample,
    pub turns: Vec<Turn>,
    pub outcome: Outcome,
    pub reward: f64,
    /// Turns with choice 0.
    pub conversation_length: usize,
}

impl Trajectory {
    /// Whether the message sent at turn `t` reached the other agent.
    pub fn heard(&self, t: usize) -> bool {
        t + 1 < self.turns.len()
    }

    pub fn ended_by(&self, role: Role) -> bool {
        matches!(self.outcome, Outcome::Chose { by, .. } if self.assignment.role_of(by) == role)
    }

    /// Heard symbols in turn order with the speaker's role.
    pub fn utterances(&self) -> Vec<(Role, usize)> {
        (0..self.turns.len())
            .filter(|&t| self.heard(t))
            .map(|t| (self.turns[t].role, self.turns[t].trace.message))
            .collect()
    }
}

/// Something that can act for both agents. Implemented for real agents
/// (with and without gradient recording) and for scripted test agents.
pub trait Players {
    type Embedding;
    type State: Clone;

    fn embed(
        &mut self,
        agent: AgentId,
        input: AgentInput<'_>,
    ) -> Result<Self::Embedding, AgentError>;

    /// The s⁰ state.
    fn initial_state(&mut self) -> Result<Self::State, AgentError>;

    fn act(
        &mut self,
        agent: AgentId,
        prev_state: &Self::State,
        incoming: usize,
        input: &Self::Embedding,
        mode: ActionMode,
        rng: &mut Rng,
    ) -> Result<(Self::State, AgentStepTrace), AgentError>;
}

/// Plays one game.
pub fn play_episode<P: Players>(
    players: &mut P,
    sample: &GameSample,
    assignment: Assignment,
    config: &EpisodeConfig,
    utility: &UtilityMatrices,
    rng: &mut Rng,
) -> Result<Trajectory, GameError> {
    if config.max_turns == 0 {
        return Err(GameError::NoTurns);
    }
    let input_of = |agent| match assignment.role_of(agent) {
        Role::Fruit => AgentInput::Fruit(&sample.fruit.values),
        Role::Tool => AgentInput::Tools(&sample.tool1.values, &sample.tool2.values),
    };
    let embeddings = [
        players.embed(AgentId::A, input_of(AgentId::A))?,
        players.embed(AgentId::B, input_of(AgentId::B))?,
    ];
    let s0 = players.initial_state()?;
    let mut last_state: [Option<P::State>; 2] = [None, None];
    let mut incoming = DUMMY_MESSAGE;
    let mut turns = Vec::new();
    let mut outcome = Outcome::Timeout;
    for t in 0..config.max_turns {
        let agent = assignment.agent_at(t);
        let prev = match (&last_state[agent.index()], config.memory) {
            (Some(s), true) => s.clone(),
            _ => s0.clone(),
        };
        let (state, trace) = players.act(
            agent,
            &prev,
            incoming,
            &embeddings[agent.index()],
            config.mode,
            rng,
        )?;
        if config.memory {
            last_state[agent.index()] = Some(state);
        }
        let choice = trace.choice;
        incoming = if config.communication {
            trace.message
        } else {
            DUMMY_MESSAGE
        };
        turns.push(Turn {
            agent,
            role: assignment.role_of(agent),
            trace,
        });
        if choice != 0 {
            outcome = Outcome::Chose {
                tool: choice,
                by: agent,
            };
            break;
        }
    }
    let reward = match outcome {
        Outcome::Chose { tool, .. } if best_tool(sample, utility)?[tool - 1] => 1.0,
        _ => 0.0,
    };
    let conversation_length = turns.iter().filter(|t| t.trace.choice == 0).count();
    Ok(Trajectory {
        assignment,
        sample: sample.clone(),
        turns,
        outcome,
        reward,
        conversation_length,
    })
}

/// Plays `jobs` in parallel, game `i` drawing from `seed / "game" i`.
/// Results come back in job order, so the output does not depend on the
/// number of threads.
pub fn play_games<P, F>(
    make_players: F,
    jobs: &[(&GameSample, Assignment)],
    config: &EpisodeConfig,
    utility: &UtilityMatrices,
    seed: Seed,
) -> Result<Vec<Trajectory>, GameError>
where
    P: Players,
    F: Fn() -> P + Sync + Send,
{
    jobs.par_iter()
        .enumerate()
        .map_init(&make_players, |players, (i, (sample, assignment))| {
            let mut rng = seed.child("game", i as u64).rng();
            play_episode(players, sample, *assignment, config, utility, &mut rng)
        })
        .collect()
}

/// Real agents evaluated without gradient recording.
pub struct InferencePlayers<'a> {
    pub agents: [&'a AgentParameters; 2],
}

impl<'a> InferencePlayers<'a> {
    pub fn new(a: &'a AgentParameters, b: &'a AgentParameters) -> Self {
        Self { agents: [a, b] }
    }
}

impl Players for InferencePlayers<'_> {
    type Embedding = Vec<f64>;
    type State = Vec<f64>;

    fn embed(&mut self, agent: AgentId, input: AgentInput<'_>) -> Result<Vec<f64>, AgentError> {
        self.agents[agent.index()].embed_input(input)
    }

    fn initial_state(&mut self) -> Result<Vec<f64>, AgentError> {
        Ok(vec![0.0; HIDDEN])
    }

    fn act(
        &mut self,
        agent: AgentId,
        prev_state: &Vec<f64>,
        incoming: usize,
        input: &Vec<f64>,
        mode: ActionMode,
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, AgentStepTrace), AgentError> {
        let trace = self.agents[agent.index()].step(prev_state, incoming, input, mode, rng)?;
        Ok((trace.state.clone(), trace))
    }
}

/// A turn recorded on a gradient tape.
#[derive(Clone, Copy, Debug)]
pub struct RecordedTurn {
    pub agent: AgentId,
    pub nodes: StepNodes,
    pub choice: usize,
    pub message: usize,
}

/// Real agents recorded on a shared tape; agent A's parameters are tape
/// group 0 and agent B's group 1.
pub struct RecordingPlayers<'t, 'p> {
    pub tape: &'t mut Tape<'p>,
    pub agents: [&'p AgentParameters; 2],
    pub turns: Vec<RecordedTurn>,
    s0: Option<NodeId>,
}

impl<'t, 'p> RecordingPlayers<'t, 'p> {
    pub fn new(tape: &'t mut Tape<'p>, a: &'p AgentParameters, b: &'p AgentParameters) -> Self {
        Self {
            tape,
            agents: [a, b],
            turns: Vec::new(),
            s0: None,
        }
    }
}

impl Players for RecordingPlayers<'_, '_> {
    type Embedding = NodeId;
    type State = NodeId;

    fn embed(&mut self, agent: AgentId, input: AgentInput<'_>) -> Result<NodeId, AgentError> {
        self.agents[agent.index()].embed_input_node(self.tape, agent.index(), input)
    }

    fn initial_state(&mut self) -> Result<NodeId, AgentError> {
        if let Some(s) = self.s0 {
            return Ok(s);
        }
        let s = self.tape.constant(vec![0.0; HIDDEN])?;
        self.s0 = Some(s);
        Ok(s)
    }

    fn act(
        &mut self,
        agent: AgentId,
        prev_state: &NodeId,
        incoming: usize,
        input: &NodeId,
        mode: ActionMode,
        rng: &mut Rng,
    ) -> Result<(NodeId, AgentStepTrace), AgentError> {
        let nodes = self.agents[agent.index()].step_nodes(
            self.tape,
            agent.index(),
            *prev_state,
            incoming,
            *input,
        )?;
        let trace = trace_from_nodes(self.tape, &nodes, *prev_state, *input, incoming, mode, rng);
        self.turns.push(RecordedTurn {
            agent,
            nodes,
            choice: trace.choice,
            message: trace.message,
        });
        Ok((nodes.state, trace))
    }
}

/// What a scripted agent sees on its turn.
#[derive(Clone, Debug)]
pub struct StubView<'a> {
    pub agent: AgentId,
    pub role: Role,
    /// Raw input features (fruit, or the two tools concatenated).
    pub input: &'a [f64],
    pub incoming: usize,
    /// Previous state; a scripted agent's state records `[turns seen through
    /// memory, last incoming message, 0, ...]`.
    pub prev_state: &'a [f64],
}

/// Scripted agents for engine tests: the policy returns the choice and
/// message distributions, actions are drawn as for real agents.
pub struct StubPlayers<F> {
    pub policy: F,
}

/// Embedding used by [`StubPlayers`]: the role and the raw features.
#[derive(Clone, Debug)]
pub struct StubInput {
    role: Role,
    values: Vec<f64>,
}

impl<F> Players for StubPlayers<F>
where
    F: FnMut(&StubView<'_>) -> ([f64; NUM_CHOICES], [f64; VOCAB_SIZE]),
{
    type Embedding = StubInput;
    type State = Vec<f64>;

    fn embed(&mut self, _agent: AgentId, input: AgentInput<'_>) -> Result<StubInput, AgentError> {
        Ok(match input {
            AgentInput::Fruit(f) => StubInput {
                role: Role::Fruit,
                values: f.to_vec(),
            },
            AgentInput::Tools(a, b) => StubInput {
                role: Role::Tool,
                values: a.iter().chain(b).copied().collect(),
            },
        })
    }

    fn initial_state(&mut self) -> Result<Vec<f64>, AgentError> {
        Ok(vec![0.0; HIDDEN])
    }

    fn act(
        &mut self,
        agent: AgentId,
        prev_state: &Vec<f64>,
        incoming: usize,
        input: &StubInput,
        mode: ActionMode,
        rng: &mut Rng,
    ) -> Result<(Vec<f64>, AgentStepTrace), AgentError> {
        let view = StubView {
            agent,
            role: input.role,
            input: &input.values,
            incoming,
            prev_state,
        };
        let (choice_dist, message_dist) = (self.policy)(&view);
        let (choice, message) = match mode {
            ActionMode::Argmax => (argmax(&choice_dist), argmax(&message_dist)),
            ActionMode::Sample => (
                sample_index(&choice_dist, rng),
                sample_index(&message_dist, rng),
            ),
        };
        let mut state = vec![0.0; HIDDEN];
        state[0] = prev_state[0] + 1.0;
        state[1] = incoming as f64;
        let trace = AgentStepTrace {
            incoming_message: incoming,
            encoder_hidden: vec![0.0; HIDDEN],
            prev_state: prev_state.clone(),
            input_embedding: vec![0.0; HIDDEN],
            state: state.clone(),
            choice_dist,
            message_dist,
            choice,
            message,
            choice_logp: choice_dist[choice].ln(),
            message_logp: message_dist[message].ln(),
        };
        Ok((state, trace))
    }
}

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
    pub n: usize,
}

impl MeanSem {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sem = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sem, n }
    }
}

/// Summary of a set of games; performance and T-chooses in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub games: usize,
    pub performance: MeanSem,
    pub conversation_length: MeanSem,
    pub tool_chooses: MeanSem,
    pub timeouts: usize,
}

pub fn episode_stats(trajectories: &[Trajectory]) -> Result<EpisodeStats, GameError> {
    if trajectories.is_empty() {
        return Err(GameError::Empty);
    }
    let col = |f: &dyn Fn(&Trajectory) -> f64| trajectories.iter().map(f).collect::<Vec<_>>();
    Ok(EpisodeStats {
        games: trajectories.len(),
        performance: MeanSem::of(&col(&|t| 100.0 * t.reward)),
        conversation_length: MeanSem::of(&col(&|t| t.conversation_length as f64)),
        tool_chooses: MeanSem::of(&col(&|t| if t.ended_by(Role::Tool) { 100.0 } else { 0.0 })),
        timeouts: trajectories
            .iter()
            .filter(|t| t.outcome == Outcome::Timeout)
            .count(),
    })
}

fn symbol(m: usize) -> String {
    if m == DUMMY_MESSAGE {
        "-".to_string()
    } else {
        m.to_string()
    }
}

/// One episode per line: configuration, fruit, tool1, tool2, the turns as
/// `agent:m_in:c:m_out:heard` separated by spaces, and the reward.
pub fn dump_trajectory(t: &Trajectory, table: &CategoryTable) -> String {
    let mut turns = String::new();
    for (i, turn) in t.turns.iter().enumerate() {
        if i > 0 {
            turns.push(' ');
        }
        let _ = write!(
            turns,
            "{}:{}:{}:{}:{}",
            turn.agent.as_str(),
            symbol(turn.trace.incoming_message),
            turn.trace.choice,
            symbol(turn.trace.message),
            u8::from(t.heard(i))
        );
    }
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        t.assignment.label(),
        table.fruits[t.sample.fruit.category].name,
        table.tools[t.sample.tool1.category].name,
        table.tools[t.sample.tool2.category].name,
        turns,
        t.reward
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    #[test]
    fn forced_configurations_cover_all() {
        for i in 0..4 {
            assert_eq!(Assignment::forced(i).config_index(), i);
        }
        let labels: Vec<_> = Assignment::ALL.iter().map(|a| a.label()).collect();
        assert_eq!(labels[0], "A=T1,B=F2");
    }

    #[test]
    fn assignment_is_seeded() {
        let a: Vec<_> = (0..20)
            .map(|i| Assignment::random(&mut Seed::new(i).rng()))
            .collect();
        let b: Vec<_> = (0..20)
            .map(|i| Assignment::random(&mut Seed::new(i).rng()))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_sem() {
        let m = MeanSem::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.sem - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
