use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{sample_instance, CategoryTable, DatasetError, GameSample, Instance, ObjectKind};
use crate::rng::Seed;

pub const GENERATOR_VERSION: &str = "fruit-tools-split/1";

const IN_DOMAIN_FRUITS: usize = 21;
const HELD_OUT_FRUITS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    /// In-domain training samples.
    pub train: usize,
    /// Samples in each of in-domain test, validation and transfer.
    pub other: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 210_000,
            other: 25_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitName {
    InDomainTrain,
    InDomainTest,
    Validation,
    Transfer,
}

impl SplitName {
    pub const ALL: [SplitName; 4] = [
        SplitName::InDomainTrain,
        SplitName::InDomainTest,
        SplitName::Validation,
        SplitName::Transfer,
    ];

    pub fn file_stem(&self) -> &'static str {
        match self {
            SplitName::InDomainTrain => "in_domain_train",
            SplitName::InDomainTest => "in_domain_test",
            SplitName::Validation => "validation",
            SplitName::Transfer => "transfer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in_domain_train" | "train" => Some(SplitName::InDomainTrain),
            "in_domain_test" | "test" | "in" => Some(SplitName::InDomainTest),
            "validation" | "val" => Some(SplitName::Validation),
            "transfer" => Some(SplitName::Transfer),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub seed: u64,
    pub in_domain_fruits: Vec<usize>,
    pub validation_fruits: Vec<usize>,
    pub transfer_fruits: Vec<usize>,
    pub in_domain_train: Vec<GameSample>,
    pub in_domain_test: Vec<GameSample>,
    pub validation: Vec<GameSample>,
    pub transfer: Vec<GameSample>,
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> &[GameSample] {
        match name {
            SplitName::InDomainTrain => &self.in_domain_train,
            SplitName::InDomainTest => &self.in_domain_test,
            SplitName::Validation => &self.validation,
            SplitName::Transfer => &self.transfer,
        }
    }

    /// Writes one file per split into `dir`, each starting with the
    /// comment lines in `preamble` (may be empty).
    pub fn write_dir(
        &self,
        dir: &Path,
        table: &CategoryTable,
        preamble: &str,
    ) -> Result<(), DatasetError> {
        std::fs::create_dir_all(dir)?;
        for name in SplitName::ALL {
            let text = format!(
                "{preamble}{}",
                write_samples(self.get(name), table, name, self.seed)
            );
            std::fs::write(dir.join(format!("{}.tsv", name.file_stem())), text)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path, table: &CategoryTable) -> Result<Self, DatasetError> {
        let mut sets = Vec::new();
        let mut seed = 0;
        for name in SplitName::ALL {
            let text = std::fs::read_to_string(dir.join(format!("{}.tsv", name.file_stem())))?;
            let (s, samples) = read_samples(&text, table)?;
            seed = s;
            sets.push(samples);
        }
        let fruits_of = |v: &[GameSample]| {
            let mut f: Vec<usize> = v.iter().map(|s| s.fruit.category).collect();
            f.sort_unstable();
            f.dedup();
            f
        };
        let transfer = sets.pop().unwrap();
        let validation = sets.pop().unwrap();
        let in_domain_test = sets.pop().unwrap();
        let in_domain_train = sets.pop().unwrap();
        Ok(Self {
            seed,
            in_domain_fruits: fruits_of(&in_domain_train),
            validation_fruits: fruits_of(&validation),
            transfer_fruits: fruits_of(&transfer),
            in_domain_train,
            in_domain_test,
            validation,
            transfer,
        })
    }
}

/// Generates the four splits. Fruit categories are partitioned 21/5/5 by a
/// seeded shuffle; tool categories are shared. Within each split, samples are
/// balanced over (fruit category × unordered tool-category pair) cells: when
/// the count does not divide evenly, a seeded subset of cells gets one extra
/// sample, so cell sizes differ by at most one.
pub fn generate_split(
    table: &CategoryTable,
    seed: u64,
    counts: SplitCounts,
) -> Result<DatasetSplit, DatasetError> {
    table.validate()?;
    let root = Seed::new(seed);
    let mut fruits: Vec<usize> = (0..table.fruits.len()).collect();
    fruits.shuffle(&mut root.child("partition", 0).rng());
    let in_domain: Vec<usize> = fruits[..IN_DOMAIN_FRUITS].to_vec();
    let validation: Vec<usize> =
        fruits[IN_DOMAIN_FRUITS..IN_DOMAIN_FRUITS + HELD_OUT_FRUITS].to_vec();
    let transfer: Vec<usize> = fruits[IN_DOMAIN_FRUITS + HELD_OUT_FRUITS..].to_vec();

    let set =
        |idx: u64, cats: &[usize], n: usize| generate_set(table, cats, n, root.child("split", idx));
    Ok(DatasetSplit {
        seed,
        in_domain_train: set(0, &in_domain, counts.train)?,
        in_domain_test: set(1, &in_domain, counts.other)?,
        validation: set(2, &validation, counts.other)?,
        transfer: set(3, &transfer, counts.other)?,
        in_domain_fruits: in_domain,
        validation_fruits: validation,
        transfer_fruits: transfer,
    })
}

fn generate_set(
    table: &CategoryTable,
    fruits: &[usize],
    n: usize,
    seed: Seed,
) -> Result<Vec<GameSample>, DatasetError> {
    let n_tools = table.tools.len();
    let mut cells = Vec::new();
    for &f in fruits {
        for a in 0..n_tools {
            for b in a + 1..n_tools {
                cells.push((f, a, b));
            }
        }
    }
    let base = n / cells.len();
    let mut extra = vec![false; cells.len()];
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.shuffle(&mut seed.child("extra", 0).rng());
    for &i in &order[..n % cells.len()] {
        extra[i] = true;
    }

    let per_cell: Vec<Vec<GameSample>> = cells
        .par_iter()
        .enumerate()
        .map(|(ci, &(f, a, b))| {
            let mut rng = seed.child("cell", ci as u64).rng();
            let count = base + usize::from(extra[ci]);
            let fruit_groups = table.exclusion_groups_for(ObjectKind::Fruit);
            let tool_groups = table.exclusion_groups_for(ObjectKind::Tool);
            (0..count)
                .map(|_| {
                    let fruit =
                        sample_instance(&table.fruits[f], f, fruit_groups.clone(), &mut rng)?;
                    let ta = sample_instance(&table.tools[a], a, tool_groups.clone(), &mut rng)?;
                    let tb = sample_instance(&table.tools[b], b, tool_groups.clone(), &mut rng)?;
                    let (tool1, tool2) = if rng.random::<bool>() {
                        (ta, tb)
                    } else {
                        (tb, ta)
                    };
                    Ok(GameSample {
                        fruit,
                        tool1,
                        tool2,
                    })
                })
                .collect::<Result<Vec<_>, DatasetError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut all: Vec<GameSample> = per_cell.into_iter().flatten().collect();
    all.shuffle(&mut seed.child("shuffle", 0).rng());
    Ok(all)
}

/// Serialises samples: a `#` header naming split, seed and generator, a
/// column header, then one sample per line with category names followed by
/// fruit, tool1 and tool2 values at six decimals.
pub fn write_samples(
    samples: &[GameSample],
    table: &CategoryTable,
    name: SplitName,
    seed: u64,
) -> String {
    let mut out = String::with_capacity(samples.len() * 360);
    let _ = writeln!(
        out,
        "# split={} seed={} generator={} samples={}",
        name.file_stem(),
        seed,
        GENERATOR_VERSION,
        samples.len()
    );
    let mut cols = vec![
        "fruit_category".to_string(),
        "tool1_category".into(),
        "tool2_category".into(),
    ];
    for (prefix, names) in [
        ("fruit", &table.fruit_feature_names),
        ("tool1", &table.tool_feature_names),
        ("tool2", &table.tool_feature_names),
    ] {
        cols.extend(names.iter().map(|n| format!("{prefix}:{n}")));
    }
    out.push_str(&cols.join("\t"));
    out.push('\n');
    for s in samples {
        out.push_str(&table.fruits[s.fruit.category].name);
        out.push('\t');
        out.push_str(&table.tools[s.tool1.category].name);
        out.push('\t');
        out.push_str(&table.tools[s.tool2.category].name);
        for v in s
            .fruit
            .values
            .iter()
            .chain(&s.tool1.values)
            .chain(&s.tool2.values)
        {
            let _ = write!(out, "\t{v:.6}");
        }
        out.push('\n');
    }
    out
}

/// Parses [`write_samples`] output, returning the recorded seed.
pub fn read_samples(
    text: &str,
    table: &CategoryTable,
) -> Result<(u64, Vec<GameSample>), DatasetError> {
    let perr = |line: usize, msg: String| DatasetError::Parse { line, msg };
    let mut lines = text.lines().enumerate().peekable();
    let mut seed = None;
    // Leading `#` lines are comments; the one naming the split carries the
    // seed and generator.
    while let Some((i, line)) = lines.next_if(|(_, l)| l.starts_with('#')) {
        if !line.contains("split=") {
            continue;
        }
        if !line.contains(&format!("generator={GENERATOR_VERSION}")) {
            return Err(perr(
                i + 1,
                format!("unsupported generator (want {GENERATOR_VERSION})"),
            ));
        }
        seed = line
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix("seed="))
            .and_then(|s| s.parse::<u64>().ok());
    }
    let seed = seed.ok_or_else(|| perr(1, "header lacks split= ... seed=".into()))?;
    lines.next();
    let nf = table.fruit_feature_names.len();
    let nt = table.tool_feature_names.len();
    let mut samples = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 3 + nf + 2 * nt {
            return Err(perr(
                ln,
                format!(
                    "expected {} columns, found {}",
                    3 + nf + 2 * nt,
                    cells.len()
                ),
            ));
        }
        let cat = |kind, name: &str| {
            table.category_index(kind, name).ok_or_else(|| {
                perr(
                    ln,
                    format!("unknown {} category {name:?}", ObjectKind::as_str(&kind)),
                )
            })
        };
        let vals = cells[3..]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| perr(ln, e.to_string()))?;
        let inst = |kind, category, v: &[f64]| Instance {
            kind,
            category,
            values: v.to_vec(),
        };
        samples.push(GameSample {
            fruit: inst(
                ObjectKind::Fruit,
                cat(ObjectKind::Fruit, cells[0])?,
                &vals[..nf],
            ),
            tool1: inst(
                ObjectKind::Tool,
                cat(ObjectKind::Tool, cells[1])?,
                &vals[nf..nf + nt],
            ),
            tool2: inst(
                ObjectKind::Tool,
                cat(ObjectKind::Tool, cells[2])?,
                &vals[nf + nt..],
            ),
        });
    }
    Ok((seed, samples))
}
