use fruit_tools::agent::{ActionMode, AgentParameters};
use fruit_tools::dataset::{generate_split, CategoryTable, SplitCounts, UtilityMatrices};
use fruit_tools::game::{EpisodeConfig, Role};
use fruit_tools::probe::{
    build_probe_dataset, fit_probe, majority_baseline, partition, self_play_eval, stats_baseline,
    train_probe_across, Conversation, ProbeConfig, ProbeTask, UtteranceFilter, PROBE_ASSIGNMENT,
};
use fruit_tools::rng::Seed;
use rand::Rng;

fn conv(game: usize, fruit: usize, utterances: Vec<(Role, usize)>) -> Conversation {
    Conversation {
        game,
        utterances,
        fruit,
        tool1: game % 3,
        tool2: 3 + game % 2,
    }
}

#[test]
fn stats_baseline_matches_hand_values() {
    assert!((stats_baseline(&[0, 0, 1], &[0, 1]) - 0.5).abs() < 1e-12);
    let uniform: Vec<usize> = (0..31).collect();
    assert!((stats_baseline(&uniform, &uniform) - 1.0 / 31.0).abs() < 1e-12);
    assert_eq!(stats_baseline(&[], &[1]), 0.0);
}

#[test]
fn majority_baseline_matches_hand_values() {
    assert!((majority_baseline(&[2, 2, 1], &[2, 1, 1]) - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(majority_baseline(&[4], &[4, 4]), 1.0);
}

#[test]
fn filters_select_by_speaker_role() {
    let u = vec![
        (Role::Fruit, 1),
        (Role::Tool, 2),
        (Role::Fruit, 3),
        (Role::Tool, 4),
    ];
    assert_eq!(UtteranceFilter::Fruit.view(&u), vec![1, 3]);
    assert_eq!(UtteranceFilter::Tool.view(&u), vec![2, 4]);
    assert_eq!(UtteranceFilter::Both.view(&u), vec![1, 2, 3, 4]);
    assert_eq!(UtteranceFilter::parse("F"), Some(UtteranceFilter::Fruit));
    assert_eq!(ProbeTask::parse("tool2"), Some(ProbeTask::Tool2));
    assert!(ProbeTask::parse("colour").is_none());
}

fn synthetic(n: usize, seed: u64) -> Vec<Conversation> {
    let mut rng = Seed::new(seed).rng();
    let mut out = Vec::new();
    for g in 0..n {
        let fruit = rng.random_range(0..5);
        let noise = rng.random_range(0..10);
        if rng.random::<f64>() < 0.9 {
            out.push(conv(
                g,
                fruit,
                vec![(Role::Fruit, fruit), (Role::Tool, noise)],
            ));
        }
    }
    out
}

#[test]
fn partition_is_deterministic_disjoint_and_covering() {
    let convs = synthetic(400, 1);
    let cfg = ProbeConfig::default();
    let p = partition(&convs, 400, &cfg, Seed::new(3)).unwrap();
    assert_eq!(p, partition(&convs, 400, &cfg, Seed::new(3)).unwrap());
    assert_ne!(p, partition(&convs, 400, &cfg, Seed::new(4)).unwrap());
    let mut all: Vec<usize> = p
        .train
        .iter()
        .chain(&p.validation)
        .chain(&p.test)
        .copied()
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..convs.len()).collect::<Vec<_>>());
    assert_eq!(p.test_games.len(), 40);
    for &i in &p.test {
        assert!(p.test_games.binary_search(&convs[i].game).is_ok());
    }
    for f in 0..5 {
        assert!(p.train.iter().any(|&i| convs[i].fruit == f));
    }
}

#[test]
fn partition_fails_when_coverage_impossible() {
    // Every game has its own fruit, so held-out games always hold unseen fruit.
    let convs: Vec<Conversation> = (0..20)
        .map(|g| conv(g, g, vec![(Role::Fruit, 0)]))
        .collect();
    assert!(partition(&convs, 20, &ProbeConfig::default(), Seed::new(1)).is_err());
}

fn quick() -> ProbeConfig {
    ProbeConfig {
        partition_seeds: 3,
        epochs: 15,
        hidden: 20,
        embedding: 10,
        rmsprop: fruit_tools::autodiff::RmsPropConfig {
            lr: 0.01,
            ..Default::default()
        },
        ..ProbeConfig::default()
    }
}

#[test]
fn probe_learns_a_readable_code() {
    let data: Vec<(Vec<usize>, usize)> = (0..200).map(|i| (vec![i % 5, 7], i % 5)).collect();
    let model = fit_probe(&data, &data[..50], 5, &quick(), Seed::new(1)).unwrap();
    assert_eq!(model.accuracy(&data).unwrap(), 1.0);
}

#[test]
fn probe_beats_stats_only_when_symbols_carry_the_label() {
    let convs = synthetic(500, 2);
    let cfg = quick();
    let r = train_probe_across(
        &convs,
        &convs,
        500,
        ProbeTask::Fruit,
        UtteranceFilter::Fruit,
        5,
        &cfg,
        Seed::new(1),
    )
    .unwrap();
    assert!(r.accuracy.mean > 95.0, "{r:?}");
    assert!(r.stats.mean < 30.0);
    assert_eq!(r.per_seed.len(), 3);
    // Tool-player symbols here are noise.
    let noise = train_probe_across(
        &convs,
        &convs,
        500,
        ProbeTask::Fruit,
        UtteranceFilter::Tool,
        5,
        &cfg,
        Seed::new(1),
    )
    .unwrap();
    assert!(noise.accuracy.mean < 45.0, "{noise:?}");
    let again = train_probe_across(
        &convs,
        &convs,
        500,
        ProbeTask::Fruit,
        UtteranceFilter::Fruit,
        5,
        &cfg,
        Seed::new(1),
    )
    .unwrap();
    assert_eq!(r, again);
}

#[test]
fn probe_dataset_keeps_only_wins_in_fixed_configuration() {
    let a = AgentParameters::init(&mut Seed::new(1).rng());
    let b = AgentParameters::init(&mut Seed::new(2).rng());
    let games = generate_split(
        &CategoryTable::shipped(),
        4,
        SplitCounts {
            train: 40,
            other: 200,
        },
    )
    .unwrap()
    .in_domain_test;
    let d = build_probe_dataset(
        &a,
        &b,
        &games,
        PROBE_ASSIGNMENT,
        &EpisodeConfig::default(),
        &UtilityMatrices::default(),
    )
    .unwrap();
    assert_eq!(d.games_played, 200);
    assert!(!d.conversations.is_empty() && d.conversations.len() < 200);
    for c in &d.conversations {
        assert_eq!(c.fruit, games[c.game].fruit.category);
        // A speaks first as the Fruit Player, so heard turns alternate F, T, ...
        for (k, (role, _)) in c.utterances.iter().enumerate() {
            assert_eq!(*role, if k % 2 == 0 { Role::Fruit } else { Role::Tool });
        }
    }
}

#[test]
fn self_play_of_identical_agents_equals_paired() {
    let a = AgentParameters::init(&mut Seed::new(5).rng());
    let games = generate_split(
        &CategoryTable::shipped(),
        4,
        SplitCounts {
            train: 40,
            other: 100,
        },
    )
    .unwrap()
    .in_domain_test;
    let episode = EpisodeConfig {
        mode: ActionMode::Argmax,
        ..EpisodeConfig::default()
    };
    let r = self_play_eval(
        &a,
        &a,
        &games,
        &episode,
        &UtilityMatrices::default(),
        20,
        3,
        Seed::new(1),
    )
    .unwrap();
    assert_eq!(r.paired, r.self_play_a);
    assert_eq!(r.paired, r.self_play_b);
}
