use std::path::Path;

use super::{
    Category, DatasetError, FeatureKind, ObjectKind, NUM_FRUIT_CATEGORIES, NUM_TOOL_CATEGORIES,
};

pub const FRUIT_FEATURES: [&str; 11] = [
    "is crunchy",
    "has skin",
    "has peel",
    "is small",
    "has rough skin",
    "has a pit",
    "has milk",
    "has a shell",
    "has hair",
    "is prickly",
    "has seeds",
];

pub const TOOL_FEATURES: [&str; 15] = [
    "has a handle",
    "is sharp",
    "has a blade",
    "has a head",
    "is small",
    "has a sheath",
    "has prongs",
    "is loud",
    "is serrated",
    "has handles",
    "has blades",
    "has a round end",
    "is adorned with feathers",
    "is heavy",
    "has jaws",
];

/// Tool features that may never be present together.
pub const BLADE_GROUP: [&str; 3] = ["has prongs", "has a blade", "has blades"];

const DEFAULT_TABLE: &str = include_str!("../../data/categories.tsv");

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryTable {
    pub fruits: Vec<Category>,
    pub tools: Vec<Category>,
    pub fruit_feature_names: Vec<String>,
    pub tool_feature_names: Vec<String>,
    /// Feature-index sets over one object kind; at most one member may be > 0.
    pub exclusion_groups: Vec<(ObjectKind, Vec<usize>)>,
}

impl CategoryTable {
    /// The synthetic table shipped with the crate.
    pub fn shipped() -> Self {
        Self::parse(DEFAULT_TABLE).expect("shipped category table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn categories(&self, kind: ObjectKind) -> &[Category] {
        match kind {
            ObjectKind::Fruit => &self.fruits,
            ObjectKind::Tool => &self.tools,
        }
    }

    pub fn exclusion_groups_for(
        &self,
        kind: ObjectKind,
    ) -> impl Iterator<Item = &[usize]> + Clone + '_ {
        self.exclusion_groups
            .iter()
            .filter(move |(k, _)| *k == kind)
            .map(|(_, g)| g.as_slice())
    }

    pub fn category_index(&self, kind: ObjectKind, name: &str) -> Option<usize> {
        self.categories(kind).iter().position(|c| c.name == name)
    }

    /// Parses the tab-separated table format:
    ///
    /// ```text
    /// features  fruit  <11 names>
    /// features  tool   <15 names>
    /// exclusive tool   <names...>          (optional, repeatable)
    /// fruit     <name> <feature>=<mean>:<b|c> ...
    /// tool      <name> <feature>=<mean>:<b|c> ...
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut fruit_names: Option<Vec<String>> = None;
        let mut tool_names: Option<Vec<String>> = None;
        let mut fruits = Vec::new();
        let mut tools = Vec::new();
        let mut exclusive: Vec<(usize, ObjectKind, Vec<String>)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let perr = |msg: String| DatasetError::Parse { line: line_no, msg };
            let kind_of = |s: &str| match s {
                "fruit" => Ok(ObjectKind::Fruit),
                "tool" => Ok(ObjectKind::Tool),
                other => Err(perr(format!("unknown object kind {other:?}"))),
            };
            match fields[0] {
                "features" => {
                    let kind = kind_of(fields.get(1).copied().unwrap_or(""))?;
                    let names: Vec<String> = fields[2..].iter().map(|s| s.to_string()).collect();
                    check_feature_header(kind, &names).map_err(perr)?;
                    match kind {
                        ObjectKind::Fruit => fruit_names = Some(names),
                        ObjectKind::Tool => tool_names = Some(names),
                    }
                }
                "exclusive" => {
                    let kind = kind_of(fields.get(1).copied().unwrap_or(""))?;
                    exclusive.push((
                        line_no,
                        kind,
                        fields[2..].iter().map(|s| s.to_string()).collect(),
                    ));
                }
                "fruit" | "tool" => {
                    let kind = kind_of(fields[0])?;
                    let header = match kind {
                        ObjectKind::Fruit => fruit_names.as_ref(),
                        ObjectKind::Tool => tool_names.as_ref(),
                    }
                    .ok_or_else(|| {
                        perr(format!(
                            "{} record before its features header",
                            kind.as_str()
                        ))
                    })?;
                    let name = fields
                        .get(1)
                        .filter(|n| !n.is_empty())
                        .ok_or_else(|| perr("missing category name".into()))?;
                    let cat = parse_record(kind, name, &fields[2..], header).map_err(perr)?;
                    match kind {
                        ObjectKind::Fruit => fruits.push(cat),
                        ObjectKind::Tool => tools.push(cat),
                    }
                }
                other => return Err(perr(format!("unknown record type {other:?}"))),
            }
        }

        let fruit_feature_names = fruit_names
            .ok_or_else(|| DatasetError::Invariant("missing fruit features header".into()))?;
        let tool_feature_names = tool_names
            .ok_or_else(|| DatasetError::Invariant("missing tool features header".into()))?;

        let blade_group: Vec<usize> = BLADE_GROUP
            .iter()
            .map(|n| TOOL_FEATURES.iter().position(|f| f == n).unwrap())
            .collect();
        let mut exclusion_groups = vec![(ObjectKind::Tool, blade_group)];
        for (line, kind, names) in exclusive {
            let header = match kind {
                ObjectKind::Fruit => &fruit_feature_names,
                ObjectKind::Tool => &tool_feature_names,
            };
            let mut idx = names
                .iter()
                .map(|n| {
                    header
                        .iter()
                        .position(|h| h == n)
                        .ok_or_else(|| DatasetError::Parse {
                            line,
                            msg: format!("unknown feature {n:?} in exclusion group"),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            idx.sort_unstable();
            idx.dedup();
            if idx.len() >= 2
                && !exclusion_groups
                    .iter()
                    .any(|(k, g)| *k == kind && *g == idx)
            {
                exclusion_groups.push((kind, idx));
            }
        }

        let table = CategoryTable {
            fruits,
            tools,
            fruit_feature_names,
            tool_feature_names,
            exclusion_groups,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let inv = |m: String| Err(DatasetError::Invariant(m));
        if self.fruits.len() != NUM_FRUIT_CATEGORIES {
            return inv(format!(
                "expected {NUM_FRUIT_CATEGORIES} fruit categories, found {}",
                self.fruits.len()
            ));
        }
        if self.tools.len() != NUM_TOOL_CATEGORIES {
            return inv(format!(
                "expected {NUM_TOOL_CATEGORIES} tool categories, found {}",
                self.tools.len()
            ));
        }
        for kind in [ObjectKind::Fruit, ObjectKind::Tool] {
            let cats = self.categories(kind);
            for (i, c) in cats.iter().enumerate() {
                if cats[..i].iter().any(|o| o.name == c.name) {
                    return inv(format!("duplicate {} category {}", kind.as_str(), c.name));
                }
                if c.means.len() != kind.num_features() || c.kinds.len() != kind.num_features() {
                    return inv(format!(
                        "{} {}: expected {} {} features",
                        kind.as_str(),
                        c.name,
                        kind.num_features(),
                        kind.as_str()
                    ));
                }
                if let Some((f, m)) = c
                    .means
                    .iter()
                    .enumerate()
                    .find(|(_, m)| !(0.0..=1.0).contains(*m))
                {
                    return inv(format!(
                        "{} {}: mean out of [0,1] for feature {} ({m})",
                        kind.as_str(),
                        c.name,
                        f
                    ));
                }
            }
        }
        Ok(())
    }
}

fn check_feature_header(kind: ObjectKind, names: &[String]) -> Result<(), String> {
    let expected: &[&str] = match kind {
        ObjectKind::Fruit => &FRUIT_FEATURES,
        ObjectKind::Tool => &TOOL_FEATURES,
    };
    if names.len() != expected.len() {
        return Err(format!(
            "expected {} {} features, found {}",
            expected.len(),
            kind.as_str(),
            names.len()
        ));
    }
    if let Some((got, want)) = names.iter().zip(expected).find(|(g, w)| g != *w) {
        return Err(format!(
            "{} feature {got:?} where {want:?} was expected",
            kind.as_str()
        ));
    }
    Ok(())
}

fn parse_record(
    kind: ObjectKind,
    name: &str,
    cells: &[&str],
    header: &[String],
) -> Result<Category, String> {
    if cells.len() != header.len() {
        return Err(format!(
            "{name}: expected {} {} features, found {}",
            header.len(),
            kind.as_str(),
            cells.len()
        ));
    }
    let mut means = Vec::with_capacity(cells.len());
    let mut kinds = Vec::with_capacity(cells.len());
    for (cell, feat) in cells.iter().zip(header) {
        let (fname, rest) = cell
            .split_once('=')
            .ok_or_else(|| format!("{name}: malformed cell {cell:?}"))?;
        if fname != feat {
            return Err(format!(
                "{name}: feature {fname:?} out of order, expected {feat:?}"
            ));
        }
        let (mean, flag) = rest
            .split_once(':')
            .ok_or_else(|| format!("{name}: cell {cell:?} lacks a :b or :c flag"))?;
        let mean: f64 = mean
            .trim()
            .parse()
            .map_err(|_| format!("{name}: bad mean {mean:?}"))?;
        if !(0.0..=1.0).contains(&mean) {
            return Err(format!("{name}: mean out of [0,1] for {fname:?} ({mean})"));
        }
        let fk = match flag.trim() {
            "b" => FeatureKind::Binary,
            "c" => FeatureKind::Continuous,
            other => return Err(format!("{name}: unknown feature flag {other:?}")),
        };
        means.push(mean);
        kinds.push(fk);
    }
    Ok(Category {
        name: name.to_string(),
        kind,
        means,
        kinds,
    })
}
