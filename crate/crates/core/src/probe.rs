//! Probe classifiers over emergent conversations.
//!
//! A probe only ever sees the sequence of heard symbols and the labels of
//! the game it came from: symbols are embedded, run through an RNN, and the
//! final hidden state is classified into fruit, tool-1 or tool-2 categories.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{ActionMode, AgentError, AgentParameters, VOCAB_SIZE};
use crate::autodiff::{
    AutodiffError, ParamId, ParamRef, ParamSet, RmsPropConfig, RmsPropState, RnnWeights, Tape,
    Tensor,
};
use crate::dataset::{GameSample, UtilityMatrices};
use crate::game::{
    play_games, AgentId, Assignment, EpisodeConfig, GameError, InferencePlayers, MeanSem, Role,
};
use crate::rng::Seed;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("could not partition so that train covers every category; missing: {0}")]
    Coverage(String),
    #[error("no usable conversations ({0})")]
    Empty(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ProbeTask {
    Fruit,
    Tool1,
    Tool2,
}

impl ProbeTask {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fruit" => Some(ProbeTask::Fruit),
            "tool1" => Some(ProbeTask::Tool1),
            "tool2" => Some(ProbeTask::Tool2),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeTask::Fruit => "fruit",
            ProbeTask::Tool1 => "tool1",
            ProbeTask::Tool2 => "tool2",
        }
    }

    pub fn label(&self, e: &Conversation) -> usize {
        match self {
            ProbeTask::Fruit => e.fruit,
            ProbeTask::Tool1 => e.tool1,
            ProbeTask::Tool2 => e.tool2,
        }
    }

    pub fn num_classes(&self, fruits: usize, tools: usize) -> usize {
        match self {
            ProbeTask::Fruit => fruits,
            _ => tools,
        }
    }
}

/// Which speaker's symbols a probe reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UtteranceFilter {
    Both,
    Fruit,
    Tool,
}

impl UtteranceFilter {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Both" | "both" => Some(UtteranceFilter::Both),
            "F" | "f" => Some(UtteranceFilter::Fruit),
            "T" | "t" => Some(UtteranceFilter::Tool),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            UtteranceFilter::Both => "Both",
            UtteranceFilter::Fruit => "F",
            UtteranceFilter::Tool => "T",
        }
    }

    /// The kept symbols, in turn order.
    pub fn view(&self, utterances: &[(Role, usize)]) -> Vec<usize> {
        utterances
            .iter()
            .filter(|(r, _)| match self {
                UtteranceFilter::Both => true,
                UtteranceFilter::Fruit => *r == Role::Fruit,
                UtteranceFilter::Tool => *r == Role::Tool,
            })
            .map(|&(_, m)| m)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub embedding: usize,
    pub hidden: usize,
    pub partition_seeds: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub rmsprop: RmsPropConfig,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    /// Test games played to collect conversations (0: the whole set).
    pub games: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            embedding: 50,
            hidden: 100,
            partition_seeds: 20,
            epochs: 50,
            patience: 5,
            batch_size: 32,
            rmsprop: RmsPropConfig::default(),
            train_fraction: 0.8,
            validation_fraction: 0.1,
            games: 0,
        }
    }
}

/// One successful game as the probe sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    /// Index of the game in the source list.
    pub game: usize,
    pub utterances: Vec<(Role, usize)>,
    pub fruit: usize,
    pub tool1: usize,
    pub tool2: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeDataset {
    pub assignment: Assignment,
    pub conversations: Vec<Conversation>,
    pub games_played: usize,
}

/// The fixed configuration used for probe data: A is the Fruit Player and
/// moves first.
pub const PROBE_ASSIGNMENT: Assignment = Assignment::new(AgentId::B, AgentId::A);
/// The same with roles swapped: B is the Fruit Player and moves first.
pub const INVERTED_ASSIGNMENT: Assignment = Assignment::new(AgentId::A, AgentId::B);

/// Argmax games in one fixed configuration; only successful games are kept.
pub fn build_probe_dataset(
    a: &AgentParameters,
    b: &AgentParameters,
    games: &[GameSample],
    assignment: Assignment,
    episode: &EpisodeConfig,
    utility: &UtilityMatrices,
) -> Result<ProbeDataset, ProbeError> {
    let episode = EpisodeConfig {
        mode: ActionMode::Argmax,
        ..*episode
    };
    let jobs: Vec<(&GameSample, Assignment)> = games.iter().map(|g| (g, assignment)).collect();
    let trajs = play_games(
        || InferencePlayers::new(a, b),
        &jobs,
        &episode,
        utility,
        Seed::new(0),
    )?;
    let conversations = trajs
        .iter()
        .enumerate()
        .filter(|(_, t)| t.reward == 1.0)
        .map(|(i, t)| Conversation {
            game: i,
            utterances: t.utterances(),
            fruit: t.sample.fruit.category,
            tool1: t.sample.tool1.category,
            tool2: t.sample.tool2.category,
        })
        .collect();
    Ok(ProbeDataset {
        assignment,
        conversations,
        games_played: games.len(),
    })
}

/// Indices into a list of items, split train/validation/test.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Game ids of the test part, sorted.
    pub test_games: Vec<usize>,
}

pub const MAX_PARTITION_ATTEMPTS: usize = 100;

/// Shuffles `n` game ids and cuts them by the configured fractions, retrying
/// until every fruit category and every tool category in each position that
/// occurs in `conversations` also occurs in the train part.
pub fn partition(
    conversations: &[Conversation],
    n_games: usize,
    config: &ProbeConfig,
    seed: Seed,
) -> Result<Partition, ProbeError> {
    let need = |pick: fn(&Conversation) -> usize,
                set: &mut dyn Iterator<Item = &Conversation>|
     -> BTreeSet<usize> { set.map(pick).collect() };
    let fruits = need(|c| c.fruit, &mut conversations.iter());
    let t1 = need(|c| c.tool1, &mut conversations.iter());
    let t2 = need(|c| c.tool2, &mut conversations.iter());
    let mut game_to_conv = vec![Vec::new(); n_games];
    for (i, c) in conversations.iter().enumerate() {
        game_to_conv[c.game].push(i);
    }
    let mut missing = String::new();
    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let mut ids: Vec<usize> = (0..n_games).collect();
        ids.shuffle(&mut seed.child("partition", attempt as u64).rng());
        let n_train = (config.train_fraction * n_games as f64).round() as usize;
        let n_val = (config.validation_fraction * n_games as f64).round() as usize;
        let expand = |games: &[usize]| -> Vec<usize> {
            let mut v: Vec<usize> = games
                .iter()
                .flat_map(|&g| game_to_conv[g].iter().copied())
                .collect();
            v.sort_unstable();
            v
        };
        let cut = (n_train + n_val).min(n_games);
        let mut test_games = ids[cut..].to_vec();
        test_games.sort_unstable();
        let p = Partition {
            train: expand(&ids[..n_train]),
            validation: expand(&ids[n_train..cut]),
            test: expand(&ids[cut..]),
            test_games,
        };
        let train: Vec<&Conversation> = p.train.iter().map(|&i| &conversations[i]).collect();
        let have = |pick: fn(&Conversation) -> usize| -> BTreeSet<usize> {
            train.iter().map(|c| pick(c)).collect()
        };
        let gaps: Vec<String> = [
            ("fruit", &fruits, have(|c| c.fruit)),
            ("tool1", &t1, have(|c| c.tool1)),
            ("tool2", &t2, have(|c| c.tool2)),
        ]
        .iter()
        .flat_map(|(name, want, got)| want.difference(got).map(move |c| format!("{name} {c}")))
        .collect();
        if gaps.is_empty() {
            return Ok(p);
        }
        missing = gaps.join(", ");
    }
    Err(ProbeError::Coverage(missing))
}

/// Expected accuracy of guessing by sampling the train label distribution:
/// `Σ_c p_train(c) p_test(c)`.
pub fn stats_baseline(train: &[usize], test: &[usize]) -> f64 {
    if train.is_empty() || test.is_empty() {
        return 0.0;
    }
    let classes = train.iter().chain(test).max().map_or(0, |m| m + 1);
    let hist = |v: &[usize]| {
        let mut h = vec![0.0; classes];
        for &c in v {
            h[c] += 1.0 / v.len() as f64;
        }
        h
    };
    hist(train).iter().zip(hist(test)).map(|(a, b)| a * b).sum()
}

/// Accuracy of always predicting the most frequent train label.
pub fn majority_baseline(train: &[usize], test: &[usize]) -> f64 {
    if train.is_empty() || test.is_empty() {
        return 0.0;
    }
    let classes = train.iter().max().map_or(0, |m| m + 1);
    let mut h = vec![0usize; classes];
    for &c in train {
        h[c] += 1;
    }
    let best = crate::agent::argmax(&h.iter().map(|&x| x as f64).collect::<Vec<_>>());
    test.iter().filter(|&&c| c == best).count() as f64 / test.len() as f64
}

/// Symbol embedding → RNN → linear classifier.
#[derive(Clone, Debug)]
pub struct ProbeModel {
    pub params: ParamSet,
    classes: usize,
}

impl ProbeModel {
    pub fn init(config: &ProbeConfig, classes: usize, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let mut p = ParamSet::new();
        let mut add = |name: &str, shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            p.add(name, Tensor::from_vec(shape, data).expect("shape matches"));
        };
        let (e, h) = (config.embedding, config.hidden);
        add("symbols", &[VOCAB_SIZE, e], 1);
        add("rnn.w_ih", &[h, e], h);
        add("rnn.b_ih", &[h], h);
        add("rnn.w_hh", &[h, h], h);
        add("rnn.b_hh", &[h], h);
        add("out.weight", &[classes, h], h);
        add("out.bias", &[classes], h);
        Self { params: p, classes }
    }

    fn logits(
        &self,
        tape: &mut Tape<'_>,
        symbols: &[usize],
    ) -> Result<crate::autodiff::NodeId, AutodiffError> {
        let r = |i| ParamRef::new(0, ParamId(i));
        let rnn = RnnWeights {
            w_ih: r(1),
            b_ih: r(2),
            w_hh: r(3),
            b_hh: r(4),
        };
        let hidden = self.params.get(ParamId(3)).rows();
        let mut h = tape.constant(vec![0.0; hidden])?;
        for &s in symbols {
            let x = tape.embedding(r(0), s)?;
            h = tape.rnn_cell(h, x, &rnn)?;
        }
        tape.linear(h, r(5), Some(r(6)))
    }

    pub fn predict(&self, symbols: &[usize]) -> Result<usize, AutodiffError> {
        let mut tape = Tape::inference(vec![&self.params]);
        let l = self.logits(&mut tape, symbols)?;
        Ok(crate::agent::argmax(tape.value(l)))
    }

    pub fn accuracy(&self, data: &[(Vec<usize>, usize)]) -> Result<f64, AutodiffError> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut right = 0;
        for (s, y) in data {
            if self.predict(s)? == *y {
                right += 1;
            }
        }
        Ok(right as f64 / data.len() as f64)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

/// Cross-entropy training with RMSProp on minibatches, early stopping on
/// validation accuracy; returns the best-validation model.
pub fn fit_probe(
    train: &[(Vec<usize>, usize)],
    validation: &[(Vec<usize>, usize)],
    classes: usize,
    config: &ProbeConfig,
    seed: Seed,
) -> Result<ProbeModel, ProbeError> {
    if train.is_empty() {
        return Err(ProbeError::Empty("probe train set"));
    }
    let mut model = ProbeModel::init(config, classes, seed.child("init", 0));
    let mut opt = RmsPropState::new(&model.params, config.rmsprop);
    let mut best = (model.accuracy(validation)?, model.params.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut seed.child("epoch", epoch as u64).rng());
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut grads = model.params.zero_grads();
            for &i in chunk {
                let (s, y) = &train[i];
                let mut tape = Tape::new(vec![&model.params]);
                let l = model.logits(&mut tape, s)?;
                let lp = tape.log_prob(l, *y)?;
                let loss = tape.scale(lp, -1.0)?;
                tape.backward_into(loss, std::slice::from_mut(&mut grads))?;
            }
            grads.scale(1.0 / chunk.len() as f64);
            opt.step(&mut model.params, &grads);
        }
        let acc = model.accuracy(validation)?;
        if acc > best.0 {
            best = (acc, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    model.params = best.1;
    Ok(model)
}

/// Probe accuracy and the Stats baseline, each as a mean over partition
/// seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub task: ProbeTask,
    pub filter: UtteranceFilter,
    pub accuracy: MeanSem,
    pub stats: MeanSem,
    pub per_seed: Vec<f64>,
    /// Conversations dropped because the filtered sequence was empty.
    pub skipped: usize,
    pub conversations: usize,
}

fn labelled(
    convs: &[Conversation],
    idx: &[usize],
    task: ProbeTask,
    filter: UtteranceFilter,
) -> (Vec<(Vec<usize>, usize)>, usize) {
    let mut out = Vec::with_capacity(idx.len());
    let mut skipped = 0;
    for &i in idx {
        let s = filter.view(&convs[i].utterances);
        if s.is_empty() {
            skipped += 1;
        } else {
            out.push((s, task.label(&convs[i])));
        }
    }
    (out, skipped)
}

fn labels(d: &[(Vec<usize>, usize)]) -> Vec<usize> {
    d.iter().map(|(_, y)| *y).collect()
}

/// Trains one probe per partition seed (in parallel) on `train_set`'s train
/// part and tests on `test_set`'s test part. Both sets must come from the
/// same list of `n_games` games so partitions line up by game.
#[allow(clippy::too_many_arguments)]
pub fn train_probe_across(
    train_set: &[Conversation],
    test_set: &[Conversation],
    n_games: usize,
    task: ProbeTask,
    filter: UtteranceFilter,
    classes: usize,
    config: &ProbeConfig,
    seed: Seed,
) -> Result<ProbeResult, ProbeError> {
    let test_pos: std::collections::HashMap<usize, usize> = test_set
        .iter()
        .enumerate()
        .map(|(i, c)| (c.game, i))
        .collect();
    let runs: Vec<(f64, f64, usize)> = (0..config.partition_seeds)
        .into_par_iter()
        .map(|ps| {
            let pseed = seed.child("partition_seed", ps as u64);
            let part = partition(train_set, n_games, config, pseed)?;
            let mut test_idx: Vec<usize> = part
                .test_games
                .iter()
                .filter_map(|g| test_pos.get(g).copied())
                .collect();
            test_idx.sort_unstable();
            let (tr, s1) = labelled(train_set, &part.train, task, filter);
            let (va, s2) = labelled(train_set, &part.validation, task, filter);
            let (te, s3) = labelled(test_set, &test_idx, task, filter);
            let model = fit_probe(&tr, &va, classes, config, pseed)?;
            let acc = model.accuracy(&te)?;
            Ok((
                100.0 * acc,
                100.0 * stats_baseline(&labels(&tr), &labels(&te)),
                s1 + s2 + s3,
            ))
        })
        .collect::<Result<_, ProbeError>>()?;
    let per_seed: Vec<f64> = runs.iter().map(|r| r.0).collect();
    Ok(ProbeResult {
        task,
        filter,
        accuracy: MeanSem::of(&per_seed),
        stats: MeanSem::of(&runs.iter().map(|r| r.1).collect::<Vec<_>>()),
        per_seed,
        skipped: runs.first().map_or(0, |r| r.2),
        conversations: train_set.len(),
    })
}

/// Train and test on the same conversation set.
pub fn train_probe(
    dataset: &ProbeDataset,
    task: ProbeTask,
    filter: UtteranceFilter,
    classes: usize,
    config: &ProbeConfig,
    seed: Seed,
) -> Result<ProbeResult, ProbeError> {
    let c = &dataset.conversations;
    train_probe_across(
        c,
        c,
        dataset.games_played,
        task,
        filter,
        classes,
        config,
        seed,
    )
}

/// One row of the inverted-roles table.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedRow {
    pub train_on: Assignment,
    pub test_on: Assignment,
    pub result: ProbeResult,
}

/// Trains on conversations from one fixed configuration and tests on the
/// same or the role-inverted configuration, over the same games. Only
/// conversations with at least two utterances are used.
#[allow(clippy::too_many_arguments)]
pub fn inverted_roles_eval(
    a: &AgentParameters,
    b: &AgentParameters,
    games: &[GameSample],
    episode: &EpisodeConfig,
    utility: &UtilityMatrices,
    task: ProbeTask,
    filter: UtteranceFilter,
    classes: usize,
    config: &ProbeConfig,
    seed: Seed,
) -> Result<Vec<InvertedRow>, ProbeError> {
    let long = |d: ProbeDataset| -> Vec<Conversation> {
        d.conversations
            .into_iter()
            .filter(|c| c.utterances.len() >= 2)
            .collect()
    };
    let x = long(build_probe_dataset(
        a,
        b,
        games,
        PROBE_ASSIGNMENT,
        episode,
        utility,
    )?);
    let y = long(build_probe_dataset(
        a,
        b,
        games,
        INVERTED_ASSIGNMENT,
        episode,
        utility,
    )?);
    if x.is_empty() || y.is_empty() {
        return Err(ProbeError::Empty(
            "conversations with at least two utterances",
        ));
    }
    let n = games.len();
    let mut rows = Vec::new();
    for (train_on, test_on, tr, te) in [
        (PROBE_ASSIGNMENT, PROBE_ASSIGNMENT, &x, &x),
        (PROBE_ASSIGNMENT, INVERTED_ASSIGNMENT, &x, &y),
        (INVERTED_ASSIGNMENT, INVERTED_ASSIGNMENT, &y, &y),
        (INVERTED_ASSIGNMENT, PROBE_ASSIGNMENT, &y, &x),
    ] {
        let result = train_probe_across(tr, te, n, task, filter, classes, config, seed)?;
        rows.push(InvertedRow {
            train_on,
            test_on,
            result,
        });
    }
    Ok(rows)
}

/// Mean performance (%) over `seeds` rounds of argmax games in all four
/// configurations.
pub fn pair_performance(
    a: &AgentParameters,
    b: &AgentParameters,
    games: &[GameSample],
    episode: &EpisodeConfig,
    utility: &UtilityMatrices,
    games_per_config: usize,
    seeds: usize,
    seed: Seed,
) -> Result<MeanSem, ProbeError> {
    let episode = EpisodeConfig {
        mode: ActionMode::Argmax,
        ..*episode
    };
    let mut perf = Vec::with_capacity(seeds);
    for s in 0..seeds {
        let ts = seed.child("test_seed", s as u64);
        let mut pick = ts.child("samples", 0).rng();
        let jobs: Vec<(&GameSample, Assignment)> = (0..4 * games_per_config)
            .map(|i| {
                (
                    &games[pick.random_range(0..games.len())],
                    Assignment::forced(i / games_per_config),
                )
            })
            .collect();
        let t = play_games(
            || InferencePlayers::new(a, b),
            &jobs,
            &episode,
            utility,
            ts.child("play", 0),
        )?;
        perf.push(100.0 * t.iter().map(|t| t.reward).sum::<f64>() / t.len() as f64);
    }
    Ok(MeanSem::of(&perf))
}

/// Paired performance next to each agent playing with a copy of itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfPlayResult {
    pub paired: MeanSem,
    pub self_play_a: MeanSem,
    pub self_play_b: MeanSem,
}

pub fn self_play_eval(
    a: &AgentParameters,
    b: &AgentParameters,
    games: &[GameSample],
    episode: &EpisodeConfig,
    utility: &UtilityMatrices,
    games_per_config: usize,
    seeds: usize,
    seed: Seed,
) -> Result<SelfPlayResult, ProbeError> {
    let run = |x, y| pair_performance(x, y, games, episode, utility, games_per_config, seeds, seed);
    Ok(SelfPlayResult {
        paired: run(a, b)?,
        self_play_a: run(a, a)?,
        self_play_b: run(b, b)?,
    })
}
