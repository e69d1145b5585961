//! `fruit-tools`: generate data, train agent pairs, analyse message effects
//! and probe conversations.
//!
//! Every output starts with `# config_hash=<16 hex> seed=<n>`; reruns with
//! the same effective configuration write byte-identical files for any
//! `--threads` value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fruit_tools::agent::ActionMode;
use fruit_tools::agent::AgentParameters;
use fruit_tools::autodiff::Checkpoint;
use fruit_tools::causal::{evaluate, report_rows, MeReport};
use fruit_tools::config::ExperimentConfig;
use fruit_tools::dataset::{
    generate_split, CategoryTable, DatasetSplit, SplitCounts, SplitName, UtilityMatrices,
    GENERATOR_VERSION,
};
use fruit_tools::game::MeanSem;
use fruit_tools::probe::{
    build_probe_dataset, inverted_roles_eval, self_play_eval, train_probe, ProbeTask,
    UtteranceFilter, PROBE_ASSIGNMENT,
};
use fruit_tools::rng::Seed;
use fruit_tools::trainer::{curve_tsv, Trainer};

/// Output directory used when `--out` is not given.
const OUT_ENV: &str = "FRUIT_TOOLS_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "fruit-tools",
    version,
    about = "Fruit-and-tools emergent communication workbench"
)]
struct Cli {
    /// Worker threads (0: all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the four dataset splits and a manifest.
    GenData(GenDataArgs),
    /// Train one agent pair.
    Train(TrainArgs),
    /// Message-effect and performance report for a trained pair.
    Analyze(AnalyzeArgs),
    /// Probe classifiers, inverted roles and self-play.
    Probe(ProbeArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $FRUIT_TOOLS_OUT, else `runs`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    /// Category table (default: the shipped table).
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `TRAIN,OTHER` sample counts.
    #[arg(long)]
    counts: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ablate_memory: bool,
    #[arg(long)]
    ablate_comm: bool,
    /// Split directory from `gen-data` (default: regenerate from the config).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory, if any.
    #[arg(long)]
    resume: bool,
    /// Stop after this many batches in this invocation (for staged runs).
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Checkpoint file; `config.txt` next to it supplies the configuration
    /// unless `--config` is given.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `in` (in-domain test), `transfer` or `validation`.
    #[arg(long, default_value = "in")]
    split: String,
    #[arg(long)]
    test_seeds: Option<usize>,
    /// Exact KL instead of sampled estimates.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write one line per game with raw ME values to this file.
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `fruit`, `tool1` or `tool2`.
    #[arg(long, default_value = "fruit")]
    task: String,
    /// `Both`, `F` or `T`.
    #[arg(long, default_value = "F")]
    filter: String,
    /// Train on A-is-Fruit conversations, test on the role-inverted ones.
    #[arg(long)]
    inverted: bool,
    /// Paired performance next to self-play performance.
    #[arg(long)]
    self_play: bool,
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Analyze(a) => analyze(a),
        Command::Probe(a) => probe(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Ok(ExperimentConfig::from_text(&text)?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn load_table(config: &ExperimentConfig) -> Result<CategoryTable> {
    if config.data.table.is_empty() {
        Ok(CategoryTable::shipped())
    } else {
        CategoryTable::load(Path::new(&config.data.table))
            .with_context(|| format!("loading table {}", config.data.table))
    }
}

fn load_split(
    config: &ExperimentConfig,
    table: &CategoryTable,
    data: Option<&Path>,
) -> Result<DatasetSplit> {
    match data {
        Some(dir) => DatasetSplit::read_dir(dir, table)
            .with_context(|| format!("reading splits from {}", dir.display())),
        None => Ok(generate_split(table, config.data.seed, config.data.counts)?),
    }
}

/// Writes via a temporary file so readers never see partial output.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut config = load_config(args.common.config.as_deref())?;
    if let Some(t) = &args.table {
        config.data.table = t.display().to_string();
    }
    if let Some(s) = args.seed {
        config.data.seed = s;
    }
    if let Some(c) = &args.counts {
        let (train, other) = c.split_once(',').context("--counts expects TRAIN,OTHER")?;
        config.data.counts = SplitCounts {
            train: train.trim().parse().context("--counts TRAIN")?,
            other: other.trim().parse().context("--counts OTHER")?,
        };
    }
    let table = load_table(&config)?;
    let split = generate_split(&table, config.data.seed, config.data.counts)?;
    let dir = out_dir(args.common.out.as_deref());
    let stamp = format!(
        "# config_hash={} seed={}\n",
        config.hash(),
        config.data.seed
    );
    split.write_dir(&dir, &table, &stamp)?;

    let names = |idx: &[usize]| {
        idx.iter()
            .map(|&i| table.fruits[i].name.as_str())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut m = stamp.clone();
    m.push_str("key\tvalue\n");
    let _ = writeln!(m, "generator\t{GENERATOR_VERSION}");
    let _ = writeln!(m, "data_seed\t{}", config.data.seed);
    let _ = writeln!(
        m,
        "table\t{}",
        if config.data.table.is_empty() {
            "shipped"
        } else {
            &config.data.table
        }
    );
    for name in SplitName::ALL {
        let _ = writeln!(m, "samples.{}\t{}", name.file_stem(), split.get(name).len());
    }
    let _ = writeln!(m, "fruits.in_domain\t{}", names(&split.in_domain_fruits));
    let _ = writeln!(m, "fruits.validation\t{}", names(&split.validation_fruits));
    let _ = writeln!(m, "fruits.transfer\t{}", names(&split.transfer_fruits));
    write_atomic(&dir.join("manifest.tsv"), &m)?;
    write_atomic(&dir.join("config.txt"), &config.to_text())?;
    eprintln!("wrote splits to {}", dir.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if args.ablate_memory {
        config.train.memory = false;
    }
    if args.ablate_comm {
        config.train.communication = false;
    }
    let dir = out_dir(args.common.out.as_deref());
    fs::create_dir_all(&dir)?;
    let table = load_table(&config)?;
    let split = load_split(&config, &table, args.data.as_deref())?;
    let utility = UtilityMatrices::default();
    let hash = config.hash();
    let ck_path = dir.join("checkpoint.txt");

    let mut trainer = if args.resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        if ck.meta("config_hash") != Some(hash.as_str()) {
            bail!(
                "checkpoint {} was written under a different configuration",
                ck_path.display()
            );
        }
        Trainer::from_checkpoint(config.train.clone(), &ck)?
    } else {
        Trainer::new(config.train.clone(), config.seed)?
    };
    write_atomic(&dir.join("config.txt"), &config.to_text())?;

    let stop_at = args.stop_after.map(|k| trainer.batch + k);
    let save = |t: &Trainer| -> Result<()> {
        let mut ck = t.to_checkpoint();
        ck.set_meta("config_hash", &hash);
        ck.save(&ck_path)?;
        write_atomic(
            &dir.join("curve.tsv"),
            &format!("{}\n{}", config.stamp(), curve_tsv(&t.curve)),
        )?;
        Ok(())
    };
    while !trainer.is_done() {
        if stop_at.is_some_and(|s| trainer.batch >= s) {
            save(&trainer)?;
            eprintln!("stopped at batch {}", trainer.batch);
            return Ok(());
        }
        trainer.run_batch(&split.in_domain_train, &utility)?;
        if trainer.batch % config.train.validation_every == 0 || trainer.is_done() {
            trainer.add_curve_row(&split.validation, &utility)?;
            save(&trainer)?;
            let r = trainer.curve.last().expect("row just added");
            eprintln!(
                "batch {} train_reward {:.4} val {:.4}",
                r.batch, r.train_reward_ma, r.val_accuracy
            );
        }
    }
    save(&trainer)?;
    let s = trainer.summary();
    let mut out = config.stamp();
    out.push_str("\nkey\tvalue\n");
    let _ = writeln!(out, "batches\t{}", s.batches);
    let _ = writeln!(out, "final_validation\t{:.6}", s.final_validation);
    let _ = writeln!(out, "success_threshold\t{}", config.train.success_threshold);
    let _ = writeln!(out, "successful\t{}", s.successful);
    let _ = writeln!(out, "memory\t{}", config.train.memory);
    let _ = writeln!(out, "communication\t{}", config.train.communication);
    write_atomic(&dir.join("summary.tsv"), &out)?;
    eprintln!(
        "final validation {:.4} ({})",
        s.final_validation,
        if s.successful {
            "successful"
        } else {
            "unsuccessful"
        }
    );
    Ok(())
}

struct Loaded {
    config: ExperimentConfig,
    agents: [AgentParameters; 2],
    split: DatasetSplit,
}

fn load_run(checkpoint: &Path, config: Option<&Path>, data: Option<&Path>) -> Result<Loaded> {
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join("config.txt"),
    };
    let config = load_config(Some(&cfg_path))?;
    let ck = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let mut a = AgentParameters::zeros();
    let mut b = AgentParameters::zeros();
    ck.load_params("agentA.", &mut a.params)?;
    ck.load_params("agentB.", &mut b.params)?;
    let table = load_table(&config)?;
    let split = load_split(&config, &table, data)?;
    Ok(Loaded {
        config,
        agents: [a, b],
        split,
    })
}

fn split_by_name(name: &str) -> Result<SplitName> {
    match SplitName::parse(name) {
        Some(SplitName::InDomainTrain) | None => {
            bail!("--split must be in, transfer or validation")
        }
        Some(s) => Ok(s),
    }
}

fn fmt_ms(m: &MeanSem) -> String {
    format!("{:.6}\t{:.6}", m.mean, m.sem)
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let Loaded {
        mut config,
        agents: [a, b],
        split,
    } = load_run(
        &args.checkpoint,
        args.config.as_deref(),
        args.data.as_deref(),
    )?;
    if let Some(t) = args.test_seeds {
        config.eval.test_seeds = t;
    }
    if args.exhaustive {
        config.me.exhaustive = true;
    }
    let which = split_by_name(&args.split)?;
    let episode = config.train.episode(ActionMode::Argmax);
    let seed = Seed::new(config.seed).child("analyze", which as u64);
    let report = evaluate(
        &a,
        &b,
        split.get(which),
        &episode,
        &config.me,
        &config.eval,
        &UtilityMatrices::default(),
        seed,
    )?;
    let mut out = config.stamp();
    let _ = writeln!(
        out,
        "\n# report: performance and message effect; split={} test_seeds={} me={} memory={} communication={}",
        which.file_stem(),
        config.eval.test_seeds,
        if config.me.exhaustive { "exhaustive" } else { "sampled" },
        config.train.memory,
        config.train.communication
    );
    out.push_str(&report_tsv(&report));
    emit(args.out.as_deref(), &out)?;
    if let Some(raw) = &args.raw {
        let mut r = config.stamp();
        r.push_str(
            "\ntest_seed\tconfig\tme_f_to_t\tme_t_to_f\tme_1_to_2\tme_2_to_1\tbilateral\treward\n",
        );
        for g in &report.raw {
            let _ = writeln!(
                r,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
                g.test_seed,
                g.config,
                g.fruit_to_tool,
                g.tool_to_fruit,
                g.one_to_two,
                g.two_to_one,
                u8::from(g.bilateral),
                g.reward
            );
        }
        write_atomic(raw, &r)?;
    }
    Ok(())
}

fn report_tsv(r: &MeReport) -> String {
    let mut out = String::from("metric\tmean\tsem\n");
    for (name, m) in report_rows(r) {
        let _ = writeln!(out, "{name}\t{}", fmt_ms(&m));
    }
    let _ = writeln!(out, "games\t{}\t", r.games);
    let _ = writeln!(out, "floored_marginals\t{}\t", r.floored);
    out
}

fn probe(args: ProbeArgs) -> Result<()> {
    let Loaded {
        config,
        agents: [a, b],
        split,
    } = load_run(
        &args.checkpoint,
        args.config.as_deref(),
        args.data.as_deref(),
    )?;
    let task = ProbeTask::parse(&args.task).context("--task must be fruit, tool1 or tool2")?;
    let filter = UtteranceFilter::parse(&args.filter).context("--filter must be Both, F or T")?;
    let utility = UtilityMatrices::default();
    let episode = config.train.episode(ActionMode::Argmax);
    let games = {
        let all = split.get(SplitName::InDomainTest);
        if config.probe.games == 0 {
            all
        } else {
            &all[..config.probe.games.min(all.len())]
        }
    };
    let table = load_table(&config)?;
    let classes = task.num_classes(table.fruits.len(), table.tools.len());
    let seed = Seed::new(config.seed).child("probe", 0);
    let mut out = config.stamp();
    out.push('\n');
    if args.self_play {
        let r = self_play_eval(
            &a,
            &b,
            split.get(SplitName::InDomainTest),
            &episode,
            &utility,
            config.eval.games_per_config(),
            config.eval.test_seeds,
            seed.child("self_play", 0),
        )?;
        out.push_str("# report: paired versus self-play performance (%)\npairing\tmean\tsem\n");
        let _ = writeln!(out, "A+B\t{}", fmt_ms(&r.paired));
        let _ = writeln!(out, "A+A\t{}", fmt_ms(&r.self_play_a));
        let _ = writeln!(out, "B+B\t{}", fmt_ms(&r.self_play_b));
    } else if args.inverted {
        let rows = inverted_roles_eval(
            &a,
            &b,
            games,
            &episode,
            &utility,
            task,
            filter,
            classes,
            &config.probe,
            seed,
        )?;
        out.push_str("# report: probe accuracy (%) across role assignments, conversations with >= 2 utterances\n");
        out.push_str("filter\ttrain_on\ttest_on\taccuracy\tsem\tstats\tstats_sem\n");
        let who = |a: fruit_tools::game::Assignment| {
            if a == PROBE_ASSIGNMENT {
                "A is F"
            } else {
                "B is F"
            }
        };
        for r in rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                filter.as_str(),
                who(r.train_on),
                who(r.test_on),
                fmt_ms(&r.result.accuracy),
                fmt_ms(&r.result.stats)
            );
        }
    } else {
        let ds = build_probe_dataset(&a, &b, games, PROBE_ASSIGNMENT, &episode, &utility)?;
        let r = train_probe(&ds, task, filter, classes, &config.probe, seed)?;
        out.push_str("# report: probe accuracy (%) from utterances, mean over partition seeds\n");
        out.push_str("task\tfilter\taccuracy\tsem\tstats\tstats_sem\tconversations\tskipped\n");
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            task.as_str(),
            filter.as_str(),
            fmt_ms(&r.accuracy),
            fmt_ms(&r.stats),
            r.conversations,
            r.skipped
        );
    }
    emit(args.out.as_deref(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn env_var_sets_default_out() {
        assert_eq!(out_dir(Some(Path::new("x"))), PathBuf::from("x"));
    }

    #[test]
    fn split_names() {
        assert!(split_by_name("train").is_err());
        assert_eq!(split_by_name("transfer").unwrap(), SplitName::Transfer);
    }
}
