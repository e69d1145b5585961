use fruit_tools::agent::{ActionMode, AgentInput, AgentParameters, HIDDEN};
use fruit_tools::autodiff::{
    clip_gradients, ClipMode, ParamId, ParamRef, ParamSet, RmsPropConfig, RmsPropState, Tape,
    Tensor,
};
use fruit_tools::dataset::{
    best_tool, generate_split, CategoryTable, GameSample, SplitCounts, UtilityMatrices,
};
use fruit_tools::game::{
    play_episode, AgentId, Assignment, EpisodeConfig, RecordedTurn, RecordingPlayers, Role,
    StubPlayers, StubView, Trajectory,
};
use fruit_tools::rng::Seed;
use fruit_tools::trainer::{
    reinforce_loss, summarize_validation, validation_jobs, TrainConfig, Trainer,
};

fn pool(n: usize) -> Vec<GameSample> {
    generate_split(
        &CategoryTable::shipped(),
        2,
        SplitCounts {
            train: n,
            other: 40,
        },
    )
    .unwrap()
    .in_domain_train
}

fn baseline_set(b: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.add("b", Tensor::scalar(b));
    p
}

struct Recorded {
    traj: Trajectory,
    turns: Vec<RecordedTurn>,
}

fn record<'p>(
    tape: &mut Tape<'p>,
    a: &'p AgentParameters,
    b: &'p AgentParameters,
    sample: &GameSample,
    seed: u64,
) -> Recorded {
    let cfg = EpisodeConfig {
        max_turns: 6,
        ..EpisodeConfig::default()
    };
    let mut players = RecordingPlayers::new(tape, a, b);
    let traj = play_episode(
        &mut players,
        sample,
        Assignment::forced((seed % 4) as usize),
        &cfg,
        &UtilityMatrices::default(),
        &mut Seed::new(seed).rng(),
    )
    .unwrap();
    Recorded {
        traj,
        turns: players.turns,
    }
}

/// Independent oracle: replays the recorded actions through the inference
/// path and sums the log-probabilities of every choice and message.
fn replay_logp(agents: [&AgentParameters; 2], t: &Trajectory) -> f64 {
    let input = |id: AgentId| match t.assignment.role_of(id) {
        Role::Fruit => AgentInput::Fruit(&t.sample.fruit.values),
        Role::Tool => AgentInput::Tools(&t.sample.tool1.values, &t.sample.tool2.values),
    };
    let emb = [
        agents[0].embed_input(input(AgentId::A)).unwrap(),
        agents[1].embed_input(input(AgentId::B)).unwrap(),
    ];
    let mut last = [vec![0.0; HIDDEN], vec![0.0; HIDDEN]];
    let mut total = 0.0;
    for turn in &t.turns {
        let i = turn.agent.index();
        let (c, m) = agents[i]
            .conditional_distributions(&last[i], turn.trace.incoming_message, &emb[i])
            .unwrap();
        total += c[turn.trace.choice].ln() + m[turn.trace.message].ln();
        let step = agents[i]
            .step(
                &last[i],
                turn.trace.incoming_message,
                &emb[i],
                ActionMode::Argmax,
                &mut Seed::new(0).rng(),
            )
            .unwrap();
        last[i] = step.state;
    }
    total
}

#[test]
fn zero_advantage_gives_zero_policy_gradient() {
    let a = AgentParameters::init(&mut Seed::new(1).rng());
    let b = AgentParameters::init(&mut Seed::new(2).rng());
    let games = pool(40);
    for (k, s) in games.iter().take(6).enumerate() {
        let reward = f64::from(u8::from(
            best_tool(s, &UtilityMatrices::default()).unwrap()[0],
        ));
        // With b = R - 1 the advantage is exactly zero.
        let base = baseline_set(reward - 1.0);
        let mut tape = Tape::new(vec![&a.params, &b.params, &base]);
        let rec = record(&mut tape, &a, &b, s, k as u64);
        let r = rec.traj.reward;
        if r != reward {
            continue;
        }
        let loss =
            reinforce_loss(&mut tape, &rec.turns, r, ParamRef::new(2, ParamId(0)), true).unwrap();
        assert_eq!(tape.scalar(loss.total), 0.0);
        let grads = tape.backward(loss.total).unwrap();
        assert_eq!(grads[0].max_abs(), 0.0);
        assert_eq!(grads[1].max_abs(), 0.0);
        assert_eq!(grads[2].max_abs(), 0.0);
    }
}

#[test]
fn unit_advantage_loss_is_negative_log_likelihood_plus_one() {
    let a = AgentParameters::init(&mut Seed::new(3).rng());
    let b = AgentParameters::init(&mut Seed::new(4).rng());
    let games = pool(20);
    // R = 0 with b = -2 gives advantage 1 and baseline term (−1 − 0)² = 1.
    let base = baseline_set(-2.0);
    for (k, s) in games.iter().take(8).enumerate() {
        let mut tape = Tape::new(vec![&a.params, &b.params, &base]);
        let rec = record(&mut tape, &a, &b, s, 10 + k as u64);
        let loss = reinforce_loss(
            &mut tape,
            &rec.turns,
            0.0,
            ParamRef::new(2, ParamId(0)),
            true,
        )
        .unwrap();
        let nll = -replay_logp([&a, &b], &rec.traj);
        assert!((tape.scalar(loss.policy) - nll).abs() < 1e-9);
        assert!((tape.scalar(loss.baseline) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn unheard_message_excluded_when_not_credited() {
    let a = AgentParameters::init(&mut Seed::new(5).rng());
    let b = AgentParameters::init(&mut Seed::new(6).rng());
    let s = &pool(10)[0];
    let base = baseline_set(-2.0);
    let mut tape = Tape::new(vec![&a.params, &b.params, &base]);
    let rec = record(&mut tape, &a, &b, s, 1);
    let with = reinforce_loss(
        &mut tape,
        &rec.turns,
        0.0,
        ParamRef::new(2, ParamId(0)),
        true,
    )
    .unwrap();
    let without = reinforce_loss(
        &mut tape,
        &rec.turns,
        0.0,
        ParamRef::new(2, ParamId(0)),
        false,
    )
    .unwrap();
    let last = rec.traj.turns.last().unwrap();
    let unheard = -last.trace.message_dist[last.trace.message].ln();
    assert!((tape.scalar(with.policy) - tape.scalar(without.policy) - unheard).abs() < 1e-9);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let a = AgentParameters::init(&mut Seed::new(7).rng());
    let b = AgentParameters::init(&mut Seed::new(8).rng());
    let s = &pool(10)[3];
    let bval = -0.3;
    let base = baseline_set(bval);
    let (rec, grads, reward) = {
        let mut tape = Tape::new(vec![&a.params, &b.params, &base]);
        let rec = record(&mut tape, &a, &b, s, 21);
        let reward = rec.traj.reward;
        let loss = reinforce_loss(
            &mut tape,
            &rec.turns,
            reward,
            ParamRef::new(2, ParamId(0)),
            true,
        )
        .unwrap();
        let grads = tape.backward(loss.total).unwrap();
        (rec.traj, grads, reward)
    };
    let advantage = reward - (1.0 + bval);
    // Surrogate with the advantage held fixed, as the estimator prescribes.
    let surrogate =
        |x: &AgentParameters, y: &AgentParameters| -advantage * replay_logp([x, y], &rec);
    let h = 1e-6;
    let mut checked = 0;
    for (which, agent) in [(0usize, &a), (1, &b)] {
        for name in [
            "choice.weight",
            "decoder_out.bias",
            "body.weight",
            "encoder.w_ih",
            "fruit_embedder.bias",
            "tool_embedder.weight",
        ] {
            let id = agent.params.id_of(name).unwrap();
            for k in [0usize, 7, 31] {
                if k >= agent.params.get(id).len() {
                    continue;
                }
                let perturbed = |d: f64| {
                    let mut p = agent.clone();
                    p.params.get_mut(id).data_mut()[k] += d;
                    if which == 0 {
                        surrogate(&p, &b)
                    } else {
                        surrogate(&a, &p)
                    }
                };
                let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
                let an = grads[which].get(id)[k];
                assert!(
                    (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{name}[{k}] agent {which}: fd {fd} analytic {an}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 20);
    let db = grads[2].get(ParamId(0))[0];
    assert!((db - 2.0 * (1.0 + bval - reward)).abs() < 1e-12);
}

#[test]
fn baseline_tracks_mean_reward() {
    // Minimising E[((1+b) − R)²] over Bernoulli(0.7) rewards drives 1+b to 0.7.
    let mut base = baseline_set(-0.5);
    let mut opt = RmsPropState::new(
        &base,
        RmsPropConfig {
            lr: 0.01,
            ..RmsPropConfig::default()
        },
    );
    let mut rng = Seed::new(9).rng();
    use rand::Rng;
    for _ in 0..4000 {
        let mut g = base.zero_grads();
        for _ in 0..64 {
            let r = f64::from(u8::from(rng.random::<f64>() < 0.7));
            let mut tape = Tape::new(vec![&base]);
            let b = tape.param_node(ParamRef::new(0, ParamId(0))).unwrap();
            let gap = tape.add_scalar(b, 1.0 - r).unwrap();
            let l = tape.square(gap).unwrap();
            let gs = tape.backward(l).unwrap();
            g.add_assign(&gs[0]);
        }
        g.scale(1.0 / 64.0);
        opt.step(&mut base, &g);
    }
    let b = base.get(ParamId(0)).data()[0];
    assert!((1.0 + b - 0.7).abs() < 0.05, "1+b = {}", 1.0 + b);
}

#[test]
fn value_clipping_bounds_components() {
    let a = AgentParameters::init(&mut Seed::new(1).rng());
    let mut g = a.params.zero_grads();
    for (i, v) in g.iter_mut().enumerate() {
        v.iter_mut()
            .enumerate()
            .for_each(|(j, x)| *x = ((i * 31 + j) as f64).sin() * 5.0);
    }
    clip_gradients(&mut [&mut g], ClipMode::Value, 0.1);
    assert!(g.max_abs() <= 0.1);
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        total_batches: 4,
        validation_every: 2,
        validation_games: 40,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let data = pool(300);
    let utility = UtilityMatrices::default();
    let run = || {
        let mut t = Trainer::new(small_config(), 42).unwrap();
        t.train(&data, &data[..40], &utility, |_| Ok(())).unwrap();
        t
    };
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(run);
    let three = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(run);
    assert_eq!(one.agents[0].params, three.agents[0].params);
    assert_eq!(one.agents[1].params, three.agents[1].params);
    assert_eq!(one.curve, three.curve);
    assert_ne!(
        one.agents[0].params,
        Trainer::new(small_config(), 42).unwrap().agents[0].params
    );
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let data = pool(300);
    let utility = UtilityMatrices::default();
    let mut straight = Trainer::new(small_config(), 5).unwrap();
    straight
        .train(&data, &data[..40], &utility, |_| Ok(()))
        .unwrap();

    let mut first = Trainer::new(small_config(), 5).unwrap();
    let mut saved = None;
    first
        .train(&data, &data[..40], &utility, |t| {
            if t.batch == 2 {
                saved = Some(t.to_checkpoint().to_text());
            }
            Ok(())
        })
        .unwrap();
    let ck = fruit_tools::autodiff::Checkpoint::from_text(&saved.unwrap()).unwrap();
    let mut resumed = Trainer::from_checkpoint(small_config(), &ck).unwrap();
    assert_eq!(resumed.batch, 2);
    resumed
        .train(&data, &data[..40], &utility, |_| Ok(()))
        .unwrap();
    assert_eq!(resumed.agents[0].params, straight.agents[0].params);
    assert_eq!(resumed.agents[1].params, straight.agents[1].params);
    assert_eq!(resumed.baseline, straight.baseline);
    assert_eq!(resumed.optimizers, straight.optimizers);
    assert_eq!(resumed.curve, straight.curve);
}

#[test]
fn invalid_configs_rejected() {
    let bad = TrainConfig {
        validation_games: 30,
        ..TrainConfig::default()
    };
    assert!(Trainer::new(bad, 1).is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(Trainer::new(bad, 1).is_err());
}

fn stub_validation(data: &[GameSample], oracle: bool) -> f64 {
    let utility = UtilityMatrices::default();
    let jobs = validation_jobs(data, 1200);
    let cfg = EpisodeConfig {
        mode: ActionMode::Sample,
        ..EpisodeConfig::default()
    };
    let trajs: Vec<Trajectory> = jobs
        .iter()
        .enumerate()
        .map(|(i, (s, asg))| {
            let best = best_tool(s, &utility).unwrap();
            let pick = if best[0] { 1 } else { 2 };
            let mut players = StubPlayers {
                policy: move |_: &StubView<'_>| {
                    let mut c = [0.0, 0.5, 0.5];
                    if oracle {
                        c = [0.0, 0.0, 0.0];
                        c[pick] = 1.0;
                    }
                    (c, [0.1; 10])
                },
            };
            play_episode(
                &mut players,
                s,
                *asg,
                &cfg,
                &utility,
                &mut Seed::new(i as u64).rng(),
            )
            .unwrap()
        })
        .collect();
    let v = summarize_validation(&trajs);
    assert_eq!(v.games, 1200);
    v.accuracy
}

#[test]
fn validation_scores_oracle_and_coin_flip() {
    let data = pool(600);
    assert_eq!(stub_validation(&data, true), 1.0);
    let utility = UtilityMatrices::default();
    let tie_rate = data
        .iter()
        .filter(|s| best_tool(s, &utility).unwrap() == [true, true])
        .count() as f64
        / data.len() as f64;
    let coin = stub_validation(&data, false);
    let expect = 0.5 + 0.5 * tie_rate;
    assert!(
        (coin - expect).abs() < 0.04,
        "coin {coin} expected {expect}"
    );
}

#[test]
fn validation_jobs_cover_configurations_evenly() {
    let data = pool(50);
    let jobs = validation_jobs(&data, 1200);
    for c in 0..4 {
        assert_eq!(
            jobs.iter().filter(|(_, a)| a.config_index() == c).count(),
            300
        );
    }
}
