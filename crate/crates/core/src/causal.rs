//! Message Effect: how much a received message shifts the receiver's next
//! (choice, message) distribution relative to a uniform intervention over
//! counterfactual messages, with the receiver's state and input held fixed.

use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{sample_index, AgentError, AgentParameters, NUM_CHOICES, VOCAB_SIZE};
use crate::dataset::{GameSample, UtilityMatrices};
use crate::game::{
    episode_stats, play_games, Assignment, EpisodeConfig, GameError, InferencePlayers, MeanSem,
    Role, Trajectory,
};
use crate::rng::{Rng, Seed};

/// Size of the joint outcome space z = (c, m), indexed `c * VOCAB_SIZE + m`.
pub const JOINT: usize = NUM_CHOICES * VOCAB_SIZE;
/// Lower bound applied to the intervened marginal.
pub const MARGINAL_FLOOR: f64 = 1e-12;

pub type JointDist = [f64; JOINT];

#[derive(Debug, Error)]
pub enum CausalError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("invalid ME configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeConfig {
    /// Samples of z per message.
    pub k: usize,
    /// Counterfactual messages drawn per message.
    pub j: usize,
    pub theta: f64,
    /// Exact KL against the full-vocabulary marginal instead of sampling.
    pub exhaustive: bool,
}

impl Default for MeConfig {
    fn default() -> Self {
        Self {
            k: 10,
            j: 10,
            theta: 0.1,
            exhaustive: false,
        }
    }
}

impl MeConfig {
    pub fn validate(&self) -> Result<(), CausalError> {
        if self.k == 0 || self.j == 0 || self.theta.is_nan() || self.theta <= 0.0 {
            return Err(CausalError::Config(
                "k and j must be at least 1 and theta positive".into(),
            ));
        }
        Ok(())
    }
}

/// One ME value; `floored` is set when the marginal had to be floored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeValue {
    pub value: f64,
    pub floored: bool,
}

/// `p(c, m) = p(c) p(m)`.
pub fn joint(choice: &[f64; NUM_CHOICES], message: &[f64; VOCAB_SIZE]) -> JointDist {
    let mut out = [0.0; JOINT];
    for (c, pc) in choice.iter().enumerate() {
        for (m, pm) in message.iter().enumerate() {
            out[c * VOCAB_SIZE + m] = pc * pm;
        }
    }
    out
}

/// Mean of distributions, computed as `d₀ + mean(dᵢ - d₀)` so identical
/// inputs give back `d₀` bit for bit.
fn mean_dist<const N: usize>(dists: &[&[f64; N]]) -> [f64; N] {
    let first = dists[0];
    let mut out = *first;
    let n = dists.len() as f64;
    for z in 0..N {
        let shift: f64 = dists.iter().map(|d| d[z] - first[z]).sum();
        out[z] += shift / n;
    }
    out
}

fn log_ratio(p: f64, marginal: f64, floored: &mut bool) -> f64 {
    let q = if marginal < MARGINAL_FLOOR {
        *floored = true;
        MARGINAL_FLOOR
    } else {
        marginal
    };
    (p / q).ln()
}

/// ME of one received message.
///
/// `responder(m')` returns the receiver's joint distribution had it received
/// `m'`; `support` is the intervention support (uniform). In sampling mode:
/// draw `k` outcomes from `p(·|observed)`, `j` counterfactuals with
/// replacement, and average `ln p(z|observed) / p̃(z)` with
/// `p̃(z) = (1/j) Σ p(z|m'ⱼ)`. In exhaustive mode: `KL(p(·|observed) ‖ p̃)`
/// with `p̃` the mean over the whole support. Natural logarithm.
pub fn message_effect<E>(
    mut responder: impl FnMut(usize) -> Result<JointDist, E>,
    observed: usize,
    support: &[usize],
    config: &MeConfig,
    rng: &mut Rng,
) -> Result<MeValue, E> {
    let p = responder(observed)?;
    let mut cache: Vec<Option<JointDist>> = vec![None; support.len()];
    let mut dist_of = |i: usize,
                       responder: &mut dyn FnMut(usize) -> Result<JointDist, E>|
     -> Result<JointDist, E> {
        if cache[i].is_none() {
            cache[i] = Some(if support[i] == observed {
                p
            } else {
                responder(support[i])?
            });
        }
        Ok(cache[i].expect("filled above"))
    };
    let mut floored = false;
    if config.exhaustive {
        let all = (0..support.len())
            .map(|i| dist_of(i, &mut responder))
            .collect::<Result<Vec<_>, E>>()?;
        let refs: Vec<&JointDist> = all.iter().collect();
        let marginal = mean_dist(&refs);
        let mut kl = 0.0;
        for z in 0..JOINT {
            if p[z] > 0.0 {
                kl += p[z] * log_ratio(p[z], marginal[z], &mut floored);
            }
        }
        return Ok(MeValue { value: kl, floored });
    }
    let zs: Vec<usize> = (0..config.k).map(|_| sample_index(&p, rng)).collect();
    let picks: Vec<usize> = (0..config.j)
        .map(|_| rng.random_range(0..support.len()))
        .collect();
    let drawn = picks
        .iter()
        .map(|&i| dist_of(i, &mut responder))
        .collect::<Result<Vec<_>, E>>()?;
    let refs: Vec<&JointDist> = drawn.iter().collect();
    let marginal = mean_dist(&refs);
    let total: f64 = zs
        .iter()
        .map(|&z| log_ratio(p[z], marginal[z], &mut floored))
        .sum();
    Ok(MeValue {
        value: total / config.k as f64,
        floored,
    })
}

/// ME of the message received at one turn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TurnMe {
    /// Turn of the receiver.
    pub turn: usize,
    pub speaker_role: Role,
    /// 1 or 2.
    pub speaker_position: usize,
    pub value: MeValue,
}

/// Per-game ME values and direction averages.
#[derive(Clone, Debug, PartialEq)]
pub struct GameMe {
    pub assignment: Assignment,
    pub turns: Vec<TurnMe>,
}

impl GameMe {
    fn mean_where(&self, f: impl Fn(&TurnMe) -> bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .turns
            .iter()
            .filter(|t| f(t))
            .map(|t| t.value.value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean ME of messages spoken by `role`, if any.
    pub fn by_role(&self, role: Role) -> Option<f64> {
        self.mean_where(|t| t.speaker_role == role)
    }

    /// Mean ME of messages spoken from `position` (1 or 2), if any.
    pub fn by_position(&self, position: usize) -> Option<f64> {
        self.mean_where(|t| t.speaker_position == position)
    }

    /// At least one turn above `theta` in each direction.
    pub fn bilateral(&self, theta: f64) -> bool {
        bilateral(
            &self.values_by_role(Role::Fruit),
            &self.values_by_role(Role::Tool),
            theta,
        )
    }

    fn values_by_role(&self, role: Role) -> Vec<f64> {
        self.turns
            .iter()
            .filter(|t| t.speaker_role == role)
            .map(|t| t.value.value)
            .collect()
    }
}

/// True iff some value in each direction strictly exceeds `theta`.
pub fn bilateral(a_to_b: &[f64], b_to_a: &[f64], theta: f64) -> bool {
    a_to_b.iter().any(|&v| v > theta) && b_to_a.iter().any(|&v| v > theta)
}

/// The receiver's joint distribution given a counterfactual incoming message,
/// holding its previous state and input embedding fixed.
pub fn responder<'a>(
    agent: &'a AgentParameters,
    prev_state: &'a [f64],
    input_embedding: &'a [f64],
) -> impl FnMut(usize) -> Result<JointDist, AgentError> + 'a {
    move |m| {
        let (c, msg) = agent.conditional_distributions(prev_state, m, input_embedding)?;
        Ok(joint(&c, &msg))
    }
}

/// ME for every message received in a game, including the m⁰ received at
/// t=0 (attributed to the position-2 agent). Messages sent with a stopping
/// choice are never received and so never appear.
pub fn trajectory_me(
    traj: &Trajectory,
    agents: [&AgentParameters; 2],
    config: &MeConfig,
    rng: &mut Rng,
) -> Result<GameMe, AgentError> {
    let support: Vec<usize> = (0..VOCAB_SIZE).collect();
    let mut turns = Vec::with_capacity(traj.turns.len());
    for (t, turn) in traj.turns.iter().enumerate() {
        let receiver = agents[turn.agent.index()];
        let tr = &turn.trace;
        let value = message_effect(
            responder(receiver, &tr.prev_state, &tr.input_embedding),
            tr.incoming_message,
            &support,
            config,
            rng,
        )?;
        let receiver_position = if turn.agent == traj.assignment.position1 {
            1
        } else {
            2
        };
        turns.push(TurnMe {
            turn: t,
            speaker_role: match turn.role {
                Role::Fruit => Role::Tool,
                Role::Tool => Role::Fruit,
            },
            speaker_position: 3 - receiver_position,
            value,
        });
    }
    Ok(GameMe {
        assignment: traj.assignment,
        turns,
    })
}

/// Test protocol sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalProtocol {
    pub test_seeds: usize,
    pub batches_per_config: usize,
    pub games_per_batch: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            test_seeds: 20,
            batches_per_config: 3,
            games_per_batch: 100,
        }
    }
}

impl EvalProtocol {
    pub fn games_per_config(&self) -> usize {
        self.batches_per_config * self.games_per_batch
    }
}

/// Direction aggregates of one evaluation: performance in %, ME in nats,
/// bilateral communication and T-chooses in %. `MeanSem` spreads are over
/// test seeds (or over training seeds after [`combine_reports`]).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MeReport {
    pub performance: MeanSem,
    pub me_fruit_to_tool: MeanSem,
    pub me_tool_to_fruit: MeanSem,
    pub me_1_to_2: MeanSem,
    pub me_2_to_1: MeanSem,
    /// Tool Player in position 1.
    pub me_fruit_to_tool_1t2f: MeanSem,
    pub me_tool_to_fruit_1t2f: MeanSem,
    /// Fruit Player in position 1.
    pub me_fruit_to_tool_1f2t: MeanSem,
    pub me_tool_to_fruit_1f2t: MeanSem,
    pub bilateral: MeanSem,
    pub conversation_length: MeanSem,
    pub tool_chooses: MeanSem,
    /// Floored marginals encountered.
    pub floored: usize,
    pub games: usize,
    /// Per game: test seed, configuration, F→T, T→F, 1→2, 2→1 (absent
    /// directions as NaN), bilateral flag.
    pub raw: Vec<RawGame>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawGame {
    pub test_seed: usize,
    pub config: usize,
    pub fruit_to_tool: f64,
    pub tool_to_fruit: f64,
    pub one_to_two: f64,
    pub two_to_one: f64,
    pub bilateral: bool,
    pub reward: f64,
}

/// Per-seed aggregate scalars, averaged per configuration then across
/// configurations.
#[derive(Clone, Copy, Debug, Default)]
struct SeedAggregate {
    performance: f64,
    ft: f64,
    tf: f64,
    p12: f64,
    p21: f64,
    ft_1t: f64,
    tf_1t: f64,
    ft_1f: f64,
    tf_1f: f64,
    bilateral: f64,
    length: f64,
    tool_chooses: f64,
}

/// The test-time protocol: for each test seed, `batches_per_config ×
/// games_per_batch` argmax games in each of the four forced configurations,
/// samples drawn uniformly from `games`. Per-game ME averages (a direction
/// with no message in a game counts as 0) are averaged within each
/// configuration, then across configurations, then across test seeds.
pub fn evaluate(
    a: &AgentParameters,
    b: &AgentParameters,
    games: &[GameSample],
    episode: &EpisodeConfig,
    me: &MeConfig,
    protocol: &EvalProtocol,
    utility: &UtilityMatrices,
    seed: Seed,
) -> Result<MeReport, CausalError> {
    me.validate()?;
    if games.is_empty() || protocol.test_seeds == 0 || protocol.games_per_config() == 0 {
        return Err(CausalError::Config(
            "evaluation needs games, test seeds and games per configuration".into(),
        ));
    }
    let per = protocol.games_per_config();
    let mut aggregates = Vec::with_capacity(protocol.test_seeds);
    let mut raw = Vec::new();
    let mut floored = 0;
    for ts in 0..protocol.test_seeds {
        let ts_seed = seed.child("test_seed", ts as u64);
        let mut pick = ts_seed.child("samples", 0).rng();
        let jobs: Vec<(&GameSample, Assignment)> = (0..4 * per)
            .map(|i| {
                (
                    &games[pick.random_range(0..games.len())],
                    Assignment::forced(i / per),
                )
            })
            .collect();
        let trajs = play_games(
            || InferencePlayers::new(a, b),
            &jobs,
            episode,
            utility,
            ts_seed.child("play", 0),
        )?;
        let mes: Vec<GameMe> = trajs
            .par_iter()
            .enumerate()
            .map(|(i, t)| trajectory_me(t, [a, b], me, &mut ts_seed.child("me", i as u64).rng()))
            .collect::<Result<_, _>>()?;
        floored += mes
            .iter()
            .flat_map(|g| &g.turns)
            .filter(|t| t.value.floored)
            .count();

        let mut per_config = [SeedAggregate::default(); 4];
        let stats_of = |c: usize| episode_stats(&trajs[c * per..(c + 1) * per]);
        for (c, agg) in per_config.iter_mut().enumerate() {
            let range = c * per..(c + 1) * per;
            let g = &mes[range.clone()];
            let mean = |f: &dyn Fn(&GameMe) -> f64| g.iter().map(f).sum::<f64>() / per as f64;
            let st = stats_of(c)?;
            *agg = SeedAggregate {
                performance: st.performance.mean,
                ft: mean(&|m| m.by_role(Role::Fruit).unwrap_or(0.0)),
                tf: mean(&|m| m.by_role(Role::Tool).unwrap_or(0.0)),
                p12: mean(&|m| m.by_position(1).unwrap_or(0.0)),
                p21: mean(&|m| m.by_position(2).unwrap_or(0.0)),
                bilateral: 100.0 * mean(&|m| f64::from(u8::from(m.bilateral(me.theta)))),
                length: st.conversation_length.mean,
                tool_chooses: st.tool_chooses.mean,
                ..Default::default()
            };
            for (m, t) in g.iter().zip(&trajs[range]) {
                let nan = f64::NAN;
                raw.push(RawGame {
                    test_seed: ts,
                    config: c,
                    fruit_to_tool: m.by_role(Role::Fruit).unwrap_or(nan),
                    tool_to_fruit: m.by_role(Role::Tool).unwrap_or(nan),
                    one_to_two: m.by_position(1).unwrap_or(nan),
                    two_to_one: m.by_position(2).unwrap_or(nan),
                    bilateral: m.bilateral(me.theta),
                    reward: t.reward,
                });
            }
        }
        let avg = |f: &dyn Fn(&SeedAggregate) -> f64, cs: &[usize]| {
            cs.iter().map(|&c| f(&per_config[c])).sum::<f64>() / cs.len() as f64
        };
        let all = [0, 1, 2, 3];
        let tool_first: Vec<usize> = (0..4)
            .filter(|&c| Assignment::forced(c).tool_player == Assignment::forced(c).position1)
            .collect();
        let fruit_first: Vec<usize> = (0..4).filter(|c| !tool_first.contains(c)).collect();
        aggregates.push(SeedAggregate {
            performance: avg(&|s| s.performance, &all),
            ft: avg(&|s| s.ft, &all),
            tf: avg(&|s| s.tf, &all),
            p12: avg(&|s| s.p12, &all),
            p21: avg(&|s| s.p21, &all),
            ft_1t: avg(&|s| s.ft, &tool_first),
            tf_1t: avg(&|s| s.tf, &tool_first),
            ft_1f: avg(&|s| s.ft, &fruit_first),
            tf_1f: avg(&|s| s.tf, &fruit_first),
            bilateral: avg(&|s| s.bilateral, &all),
            length: avg(&|s| s.length, &all),
            tool_chooses: avg(&|s| s.tool_chooses, &all),
        });
    }
    let col = |f: &dyn Fn(&SeedAggregate) -> f64| {
        MeanSem::of(&aggregates.iter().map(f).collect::<Vec<_>>())
    };
    Ok(MeReport {
        performance: col(&|s| s.performance),
        me_fruit_to_tool: col(&|s| s.ft),
        me_tool_to_fruit: col(&|s| s.tf),
        me_1_to_2: col(&|s| s.p12),
        me_2_to_1: col(&|s| s.p21),
        me_fruit_to_tool_1t2f: col(&|s| s.ft_1t),
        me_tool_to_fruit_1t2f: col(&|s| s.tf_1t),
        me_fruit_to_tool_1f2t: col(&|s| s.ft_1f),
        me_tool_to_fruit_1f2t: col(&|s| s.tf_1f),
        bilateral: col(&|s| s.bilateral),
        conversation_length: col(&|s| s.length),
        tool_chooses: col(&|s| s.tool_chooses),
        floored,
        games: aggregates.len() * 4 * per,
        raw,
    })
}

/// Combines per-training-seed reports: means of the means, SEM across
/// training seeds. Raw games are concatenated.
pub fn combine_reports(reports: &[MeReport]) -> MeReport {
    let col = |f: &dyn Fn(&MeReport) -> MeanSem| {
        MeanSem::of(&reports.iter().map(|r| f(r).mean).collect::<Vec<_>>())
    };
    MeReport {
        performance: col(&|r| r.performance),
        me_fruit_to_tool: col(&|r| r.me_fruit_to_tool),
        me_tool_to_fruit: col(&|r| r.me_tool_to_fruit),
        me_1_to_2: col(&|r| r.me_1_to_2),
        me_2_to_1: col(&|r| r.me_2_to_1),
        me_fruit_to_tool_1t2f: col(&|r| r.me_fruit_to_tool_1t2f),
        me_tool_to_fruit_1t2f: col(&|r| r.me_tool_to_fruit_1t2f),
        me_fruit_to_tool_1f2t: col(&|r| r.me_fruit_to_tool_1f2t),
        me_tool_to_fruit_1f2t: col(&|r| r.me_tool_to_fruit_1f2t),
        bilateral: col(&|r| r.bilateral),
        conversation_length: col(&|r| r.conversation_length),
        tool_chooses: col(&|r| r.tool_chooses),
        floored: reports.iter().map(|r| r.floored).sum(),
        games: reports.iter().map(|r| r.games).sum(),
        raw: reports.iter().flat_map(|r| r.raw.iter().copied()).collect(),
    }
}

/// Report rows as `name<TAB>mean<TAB>sem`.
pub fn report_rows(r: &MeReport) -> Vec<(&'static str, MeanSem)> {
    vec![
        ("Av. perf. (%)", r.performance),
        ("ME F->T", r.me_fruit_to_tool),
        ("ME T->F", r.me_tool_to_fruit),
        ("ME 1->2", r.me_1_to_2),
        ("ME 2->1", r.me_2_to_1),
        ("ME F->T (1T/2F)", r.me_fruit_to_tool_1t2f),
        ("ME T->F (1T/2F)", r.me_tool_to_fruit_1t2f),
        ("ME F->T (1F/2T)", r.me_fruit_to_tool_1f2t),
        ("ME T->F (1F/2T)", r.me_tool_to_fruit_1f2t),
        ("Bi. comm. (%)", r.bilateral),
        ("Conv. length", r.conversation_length),
        ("T chooses (%)", r.tool_chooses),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_dist_of_identical_is_exact() {
        let d = [0.1f64, 0.7, 0.2];
        let m = mean_dist(&[&d, &d, &d, &d, &d, &d, &d, &d, &d, &d]);
        assert_eq!(m, d);
    }

    #[test]
    fn joint_sums_to_one() {
        let j = joint(&[0.2, 0.3, 0.5], &[0.1; 10]);
        assert!((j.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
