//! REINFORCE training of both agents with a learned scalar baseline.
//!
//! Per batch: roll out `batch_size` episodes in sample mode, back-propagate
//! `-(R - (1+b)) Σ log π + ((1+b) - R)²` per episode, average over the batch,
//! clip, and take one RMSProp step for each agent and for `b`.
//!
//! Episodes are reduced in fixed chunks of [`REDUCTION_CHUNK`] in batch index
//! order, so gradients are bitwise identical for any thread count.

use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{ActionMode, AgentError, AgentParameters};
use crate::autodiff::{
    clip_gradients, AutodiffError, Checkpoint, CheckpointError, ClipMode, GradSet, NodeId, ParamId,
    ParamRef, ParamSet, RmsPropConfig, RmsPropState, Tape, Tensor,
};
use crate::dataset::{GameSample, UtilityMatrices};
use crate::game::{
    play_episode, play_games, Assignment, EpisodeConfig, GameError, InferencePlayers, RecordedTurn,
    RecordingPlayers, Trajectory,
};
use crate::rng::Seed;

pub const REDUCTION_CHUNK: usize = 8;
/// Initial baseline, so that `1 + b` starts at the chance reward.
pub const INITIAL_BASELINE: f64 = -0.5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite value at batch {batch}: {detail}")]
    NonFinite { batch: usize, detail: String },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("empty {0} set")]
    EmptyData(&'static str),
}

impl From<AgentError> for TrainError {
    fn from(e: AgentError) -> Self {
        TrainError::Game(GameError::Agent(e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_batches: usize,
    pub rmsprop: RmsPropConfig,
    pub clip: f64,
    pub clip_mode: ClipMode,
    pub validation_every: usize,
    pub validation_games: usize,
    pub success_threshold: f64,
    /// Include the log-probability of messages nobody heard.
    pub credit_unheard: bool,
    pub memory: bool,
    pub communication: bool,
    pub max_turns: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            total_batches: 50_000,
            rmsprop: RmsPropConfig::default(),
            clip: 0.1,
            clip_mode: ClipMode::Value,
            validation_every: 500,
            validation_games: 1200,
            success_threshold: 0.85,
            credit_unheard: true,
            memory: true,
            communication: true,
            max_turns: crate::game::DEFAULT_MAX_TURNS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0
            || self.total_batches == 0
            || self.validation_every == 0
            || self.max_turns == 0
        {
            return bad(
                "batch_size, total_batches, validation_every and max_turns must be positive",
            );
        }
        if self.validation_games == 0 || !self.validation_games.is_multiple_of(4) {
            return bad("validation_games must be a positive multiple of 4");
        }
        if !(self.success_threshold > 0.0 && self.success_threshold < 1.0) {
            return bad("success_threshold must lie in (0,1)");
        }
        if !(self.clip > 0.0 && self.rmsprop.lr > 0.0) {
            return bad("clip and learning rate must be positive");
        }
        Ok(())
    }

    pub fn episode(&self, mode: ActionMode) -> EpisodeConfig {
        EpisodeConfig {
            memory: self.memory,
            communication: self.communication,
            max_turns: self.max_turns,
            mode,
        }
    }
}

/// Loss nodes of one episode.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub policy: NodeId,
    pub baseline: NodeId,
}

/// REINFORCE loss for one recorded episode. `baseline` points at the scalar
/// `b`; the advantage `R - (1+b)` is a constant in the policy term.
pub fn reinforce_loss(
    tape: &mut Tape<'_>,
    turns: &[RecordedTurn],
    reward: f64,
    baseline: ParamRef,
    credit_unheard: bool,
) -> Result<LossNodes, AutodiffError> {
    let b = tape.param_node(baseline)?;
    let advantage = reward - (1.0 + tape.scalar(b));
    let mut logps = Vec::with_capacity(2 * turns.len());
    for (t, turn) in turns.iter().enumerate() {
        logps.push(tape.log_prob(turn.nodes.choice_logits, turn.choice)?);
        let heard = t + 1 < turns.len();
        if heard || credit_unheard {
            logps.push(tape.log_prob(turn.nodes.message_logits, turn.message)?);
        }
    }
    let sum = if logps.is_empty() {
        tape.constant(vec![0.0])?
    } else {
        tape.add_all(&logps)?
    };
    let policy = tape.scale(sum, -advantage)?;
    let gap = tape.add_scalar(b, 1.0 - reward)?;
    let baseline_term = tape.square(gap)?;
    let total = tape.add(policy, baseline_term)?;
    Ok(LossNodes {
        total,
        policy,
        baseline: baseline_term,
    })
}

/// Fraction of games won, overall and per forced configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationResult {
    pub accuracy: f64,
    pub per_config: [f64; 4],
    pub games: usize,
}

/// Argmax-mode rollouts: `n` games, `n/4` in each forced configuration,
/// drawing samples from `games` in order (wrapping around).
pub fn validation_jobs(games: &[GameSample], n: usize) -> Vec<(&GameSample, Assignment)> {
    let per = n / 4;
    (0..n)
        .map(|i| (&games[i % games.len()], Assignment::forced(i / per.max(1))))
        .collect()
}

pub fn summarize_validation(trajs: &[Trajectory]) -> ValidationResult {
    let mut won = [0.0; 4];
    let mut count = [0usize; 4];
    for t in trajs {
        let c = t.assignment.config_index();
        won[c] += t.reward;
        count[c] += 1;
    }
    let per_config = std::array::from_fn(|c| {
        if count[c] > 0 {
            won[c] / count[c] as f64
        } else {
            0.0
        }
    });
    ValidationResult {
        accuracy: won.iter().sum::<f64>() / trajs.len().max(1) as f64,
        per_config,
        games: trajs.len(),
    }
}

pub fn validate(
    a: &AgentParameters,
    b: &AgentParameters,
    games: &[GameSample],
    config: &TrainConfig,
    utility: &UtilityMatrices,
) -> Result<ValidationResult, TrainError> {
    if games.is_empty() {
        return Err(TrainError::EmptyData("validation"));
    }
    let jobs = validation_jobs(games, config.validation_games);
    let trajs = play_games(
        || InferencePlayers::new(a, b),
        &jobs,
        &config.episode(ActionMode::Argmax),
        utility,
        Seed::new(0),
    )?;
    Ok(summarize_validation(&trajs))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub batch: usize,
    /// Mean training reward over the batches since the previous row.
    pub train_reward_ma: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub mean_reward: f64,
    pub mean_loss: f64,
    pub max_abs_grad: f64,
}

/// Everything that changes during training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub seed: u64,
    pub agents: [AgentParameters; 2],
    pub baseline: ParamSet,
    pub optimizers: [RmsPropState; 3],
    /// Batches completed.
    pub batch: usize,
    pub curve: Vec<CurveRow>,
    reward_since_row: f64,
}

const BASELINE_NAME: &str = "b";

impl Trainer {
    pub fn new(config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let root = Seed::new(seed);
        let a = AgentParameters::init(&mut root.child("init", 0).rng());
        let b = AgentParameters::init(&mut root.child("init", 1).rng());
        let mut baseline = ParamSet::new();
        baseline.add(BASELINE_NAME, Tensor::scalar(INITIAL_BASELINE));
        Ok(Self::assemble(config, seed, [a, b], baseline))
    }

    fn assemble(
        config: TrainConfig,
        seed: u64,
        agents: [AgentParameters; 2],
        baseline: ParamSet,
    ) -> Self {
        let optimizers = [
            RmsPropState::new(&agents[0].params, config.rmsprop),
            RmsPropState::new(&agents[1].params, config.rmsprop),
            RmsPropState::new(&baseline, config.rmsprop),
        ];
        Self {
            config,
            seed,
            agents,
            baseline,
            optimizers,
            batch: 0,
            curve: Vec::new(),
            reward_since_row: 0.0,
        }
    }

    pub fn baseline_value(&self) -> f64 {
        self.baseline.get(ParamId(0)).data()[0]
    }

    pub fn is_done(&self) -> bool {
        self.batch >= self.config.total_batches
    }

    /// Runs one batch of episodes and one optimizer step.
    pub fn run_batch(
        &mut self,
        train: &[GameSample],
        utility: &UtilityMatrices,
    ) -> Result<BatchStats, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyData("training"));
        }
        let batch_seed = Seed::new(self.seed).child("batch", self.batch as u64);
        let mut pick = batch_seed.child("samples", 0).rng();
        let jobs: Vec<(usize, Assignment)> = (0..self.config.batch_size)
            .map(|_| {
                let idx = pick.random_range(0..train.len());
                (idx, Assignment::random(&mut pick))
            })
            .collect();

        let episode = self.config.episode(ActionMode::Sample);
        let (a, b, base) = (&self.agents[0], &self.agents[1], &self.baseline);
        let credit_unheard = self.config.credit_unheard;
        let batch_index = self.batch;
        let chunks: Vec<ChunkResult> = jobs
            .par_chunks(REDUCTION_CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut acc = ChunkResult::new(a, b, base);
                for (k, &(idx, assignment)) in chunk.iter().enumerate() {
                    let i = ci * REDUCTION_CHUNK + k;
                    let mut rng = batch_seed.child("episode", i as u64).rng();
                    let mut tape = Tape::new(vec![&a.params, &b.params, base]);
                    let (reward, turns) = {
                        let mut players = RecordingPlayers::new(&mut tape, a, b);
                        let traj = play_episode(
                            &mut players,
                            &train[idx],
                            assignment,
                            &episode,
                            utility,
                            &mut rng,
                        )?;
                        (traj.reward, players.turns)
                    };
                    let loss = reinforce_loss(
                        &mut tape,
                        &turns,
                        reward,
                        ParamRef::new(2, ParamId(0)),
                        credit_unheard,
                    )?;
                    let value = tape.scalar(loss.total);
                    if !value.is_finite() {
                        return Err(TrainError::NonFinite {
                            batch: batch_index,
                            detail: format!("episode {i} loss {value}"),
                        });
                    }
                    tape.backward_into(loss.total, &mut acc.grads)?;
                    acc.reward += reward;
                    acc.loss += value;
                }
                Ok(acc)
            })
            .collect::<Result<_, TrainError>>()?;

        let mut chunks = chunks.into_iter();
        let mut total = chunks.next().expect("batch_size > 0");
        for c in chunks {
            for (g, o) in total.grads.iter_mut().zip(&c.grads) {
                g.add_assign(o);
            }
            total.reward += c.reward;
            total.loss += c.loss;
        }
        let n = self.config.batch_size as f64;
        let [ga, gb, gbase] = &mut total.grads;
        for g in [&mut *ga, &mut *gb, &mut *gbase] {
            g.scale(1.0 / n);
        }
        self.agents[0].mask_fixed_grads(ga);
        self.agents[1].mask_fixed_grads(gb);
        if !(ga.is_finite() && gb.is_finite() && gbase.is_finite()) {
            return Err(TrainError::NonFinite {
                batch: self.batch,
                detail: "gradient".into(),
            });
        }
        clip_gradients(
            &mut [&mut *ga, &mut *gb, &mut *gbase],
            self.config.clip_mode,
            self.config.clip,
        );
        let max_abs_grad = ga.max_abs().max(gb.max_abs()).max(gbase.max_abs());
        self.optimizers[0].step(&mut self.agents[0].params, ga);
        self.optimizers[1].step(&mut self.agents[1].params, gb);
        self.optimizers[2].step(&mut self.baseline, gbase);
        self.batch += 1;
        let mean_reward = total.reward / n;
        self.reward_since_row += mean_reward;
        Ok(BatchStats {
            mean_reward,
            mean_loss: total.loss / n,
            max_abs_grad,
        })
    }

    pub fn validate(
        &self,
        games: &[GameSample],
        utility: &UtilityMatrices,
    ) -> Result<ValidationResult, TrainError> {
        validate(
            &self.agents[0],
            &self.agents[1],
            games,
            &self.config,
            utility,
        )
    }

    /// Trains until `total_batches`, validating every `validation_every`
    /// batches and at the end. `on_row` sees each curve row as it is added
    /// (e.g. to checkpoint).
    pub fn train(
        &mut self,
        train: &[GameSample],
        validation: &[GameSample],
        utility: &UtilityMatrices,
        mut on_row: impl FnMut(&Trainer) -> Result<(), TrainError>,
    ) -> Result<TrainSummary, TrainError> {
        while !self.is_done() {
            self.run_batch(train, utility)?;
            if self.batch.is_multiple_of(self.config.validation_every) || self.is_done() {
                self.add_curve_row(validation, utility)?;
                on_row(self)?;
            }
        }
        Ok(self.summary())
    }

    /// Validates and appends a curve row covering the batches since the last one.
    pub fn add_curve_row(
        &mut self,
        validation: &[GameSample],
        utility: &UtilityMatrices,
    ) -> Result<(), TrainError> {
        let since = self.curve.last().map_or(0, |r| r.batch);
        let span = (self.batch - since).max(1) as f64;
        let val = self.validate(validation, utility)?;
        self.curve.push(CurveRow {
            batch: self.batch,
            train_reward_ma: self.reward_since_row / span,
            val_accuracy: val.accuracy,
        });
        self.reward_since_row = 0.0;
        Ok(())
    }

    pub fn summary(&self) -> TrainSummary {
        let final_validation = self.curve.last().map_or(0.0, |r| r.val_accuracy);
        TrainSummary {
            batches: self.batch,
            final_validation,
            successful: final_validation >= self.config.success_threshold,
        }
    }

    /// Parameters, optimizer state, baseline, progress and curve.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (i, prefix) in ["agentA.", "agentB."].iter().enumerate() {
            ck.put_params(prefix, &self.agents[i].params);
            ck.put_params(
                &format!("optim.{prefix}"),
                &accumulators(&self.agents[i].params, &self.optimizers[i]),
            );
        }
        ck.put_params("baseline.", &self.baseline);
        ck.put_params(
            "optim.baseline.",
            &accumulators(&self.baseline, &self.optimizers[2]),
        );
        ck.set_meta("seed", self.seed);
        ck.set_meta("batch", self.batch);
        ck.set_meta("reward_since_row", format!("{:?}", self.reward_since_row));
        ck.set_meta("rmsprop.lr", format!("{:?}", self.config.rmsprop.lr));
        ck.set_meta("rmsprop.decay", format!("{:?}", self.config.rmsprop.decay));
        ck.set_meta("rmsprop.eps", format!("{:?}", self.config.rmsprop.eps));
        ck.set_meta("init", "uniform(+-1/sqrt(fan_in)), symbols row 10 = 0");
        ck.set_meta("tool_embedding", "zero-padded 50->100");
        let curve: Vec<String> = self
            .curve
            .iter()
            .map(|r| format!("{}:{:?}:{:?}", r.batch, r.train_reward_ma, r.val_accuracy))
            .collect();
        ck.set_meta("curve", curve.join(","));
        ck
    }

    /// Restores a trainer written by [`Trainer::to_checkpoint`].
    pub fn from_checkpoint(config: TrainConfig, ck: &Checkpoint) -> Result<Self, TrainError> {
        config.validate()?;
        let meta = |k: &str| {
            ck.meta(k)
                .ok_or_else(|| CheckpointError::Missing(format!("meta {k}")))
        };
        let parse_err = |k: &str| CheckpointError::Parse {
            line: 0,
            msg: format!("bad meta {k}"),
        };
        let seed: u64 = meta("seed")?.parse().map_err(|_| parse_err("seed"))?;
        let (mut a, mut b) = (AgentParameters::zeros(), AgentParameters::zeros());
        ck.load_params("agentA.", &mut a.params)?;
        ck.load_params("agentB.", &mut b.params)?;
        let mut baseline = ParamSet::new();
        baseline.add(BASELINE_NAME, Tensor::scalar(0.0));
        ck.load_params("baseline.", &mut baseline)?;
        let mut t = Self::assemble(config, seed, [a, b], baseline);
        for (i, prefix) in ["agentA.", "agentB."].iter().enumerate() {
            let mut acc = accumulators(&t.agents[i].params, &t.optimizers[i]);
            ck.load_params(&format!("optim.{prefix}"), &mut acc)?;
            t.optimizers[i].square_avg = acc.iter().map(|(_, _, x)| x.data().to_vec()).collect();
        }
        let mut acc = accumulators(&t.baseline, &t.optimizers[2]);
        ck.load_params("optim.baseline.", &mut acc)?;
        t.optimizers[2].square_avg = acc.iter().map(|(_, _, x)| x.data().to_vec()).collect();
        t.batch = meta("batch")?.parse().map_err(|_| parse_err("batch"))?;
        t.reward_since_row = meta("reward_since_row")?
            .parse()
            .map_err(|_| parse_err("reward_since_row"))?;
        let curve = meta("curve")?;
        if !curve.is_empty() {
            for row in curve.split(',') {
                let f: Vec<&str> = row.split(':').collect();
                if f.len() != 3 {
                    return Err(parse_err("curve").into());
                }
                t.curve.push(CurveRow {
                    batch: f[0].parse().map_err(|_| parse_err("curve"))?,
                    train_reward_ma: f[1].parse().map_err(|_| parse_err("curve"))?,
                    val_accuracy: f[2].parse().map_err(|_| parse_err("curve"))?,
                });
            }
        }
        Ok(t)
    }
}

fn accumulators(params: &ParamSet, opt: &RmsPropState) -> ParamSet {
    let mut out = ParamSet::new();
    for ((_, name, t), v) in params.iter().zip(&opt.square_avg) {
        out.add(
            name,
            Tensor::from_vec(t.shape(), v.clone()).expect("accumulator matches parameter shape"),
        );
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSummary {
    pub batches: usize,
    pub final_validation: f64,
    pub successful: bool,
}

struct ChunkResult {
    grads: [GradSet; 3],
    reward: f64,
    loss: f64,
}

impl ChunkResult {
    fn new(a: &AgentParameters, b: &AgentParameters, base: &ParamSet) -> Self {
        Self {
            grads: [
                a.params.zero_grads(),
                b.params.zero_grads(),
                base.zero_grads(),
            ],
            reward: 0.0,
            loss: 0.0,
        }
    }
}

/// Curve as TSV rows (no header).
pub fn curve_tsv(curve: &[CurveRow]) -> String {
    let mut out = String::from("batch\ttrain_reward_ma\tval_accuracy\n");
    for r in curve {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\n",
            r.batch, r.train_reward_ma, r.val_accuracy
        ));
    }
    out
}
