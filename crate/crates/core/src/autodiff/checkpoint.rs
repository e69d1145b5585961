use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::tensor::{ParamSet, Tensor};

const MAGIC: &str = "fruit-tools-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("tensor {name}: shape {got:?} does not match expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

/// Text container of named tensors plus string metadata.
///
/// Layout, one item per line:
///
/// ```text
/// fruit-tools-checkpoint 1
/// meta <key> <value...>
/// tensor <name> <d0>x<d1>...
/// <v0> <v1> ...                      (row-major, shortest round-trip decimal)
/// ```
///
/// Tensor names are hierarchical and dot separated (`agentA.body.weight`,
/// `optim.agentA.body.weight`, `baseline.b`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    /// Stores every tensor of `params` under `prefix` + name.
    pub fn put_params(&mut self, prefix: &str, params: &ParamSet) {
        for (_, name, t) in params.iter() {
            self.tensors.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Overwrites every tensor of `params` from entries under `prefix`.
    pub fn load_params(&self, prefix: &str, params: &mut ParamSet) -> Result<(), CheckpointError> {
        let ids: Vec<_> = params
            .iter()
            .map(|(id, n, _)| (id, n.to_string()))
            .collect();
        for (id, name) in ids {
            let key = format!("{prefix}{name}");
            let src = self
                .tensors
                .get(&key)
                .ok_or_else(|| CheckpointError::Missing(key.clone()))?;
            let dst = params.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(CheckpointError::Shape {
                    name: key,
                    expected: dst.shape().to_vec(),
                    got: src.shape().to_vec(),
                });
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "tensor {name} {}", dims.join("x"));
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let err = |line: usize, msg: &str| CheckpointError::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty checkpoint"))?;
        if head != format!("{MAGIC} {VERSION}") {
            return Err(err(1, "unrecognised header"));
        }
        let mut ck = Checkpoint::new();
        while let Some((ln, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let (name, dims) = rest
                    .rsplit_once(' ')
                    .ok_or_else(|| err(ln, "tensor line needs a shape"))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err(ln, "bad shape"))?;
                let (vln, vline) = lines
                    .next()
                    .ok_or_else(|| err(ln + 1, "missing tensor values"))?;
                let data = vline
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err(vln, "bad number"))?;
                let t = Tensor::from_vec(&shape, data).map_err(|e| err(vln, &e.to_string()))?;
                ck.tensors.insert(name.to_string(), t);
            } else {
                return Err(err(ln, "unknown record"));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
