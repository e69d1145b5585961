use super::{
    DatasetError, GameSample, Instance, ObjectKind, NUM_FRUIT_FEATURES, NUM_TOOL_FEATURES,
};

pub const NUM_FUNCTIONAL: usize = 6;

/// Maps raw features into functional spaces and scores tool/fruit pairs:
/// `U(t, f) = (f M_F) Mᵀ (t M_T)ᵀ + offset`.
///
/// Tool functional features: cut, spear, lift, break, peel, pit remover.
/// Fruit functional features: hard, pit, shell, pick, peel, empty inside.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityMatrices {
    /// 15 × 6, tool features → tool functions.
    pub tool_map: [[f64; NUM_FUNCTIONAL]; NUM_TOOL_FEATURES],
    /// 11 × 6, fruit features → fruit functions.
    pub fruit_map: [[f64; NUM_FUNCTIONAL]; NUM_FRUIT_FEATURES],
    /// 6 × 6, rows are tool functions, columns fruit functions.
    pub functional: [[f64; NUM_FUNCTIONAL]; NUM_FUNCTIONAL],
    pub offset: f64,
}

impl Default for UtilityMatrices {
    fn default() -> Self {
        Self {
            tool_map: [
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],   // has a handle
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],   // is sharp
                [1.0, 0.5, 0.0, 0.0, 1.0, 0.0],   // has a blade
                [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],   // has a head
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.25],  // is small
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],   // has a sheath
                [0.5, 1.0, 0.25, 0.0, 0.25, 0.0], // has prongs
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],   // is loud
                [0.5, 0.0, 0.0, 0.0, 0.0, 0.0],   // is serrated
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],   // has handles
                [1.0, 0.5, 0.0, 0.0, 0.5, 0.0],   // has blades
                [0.25, 0.0, 1.0, 0.0, 0.0, 1.0],  // has a round end
                [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],   // is adorned with feathers
                [0.0, 0.0, 0.0, 0.5, 0.0, 0.0],   // is heavy
                [0.0, 0.0, 1.0, 0.0, 0.0, 0.5],   // has jaws
            ],
            fruit_map: [
                [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], // is crunchy
                [0.0, 0.0, 0.0, 0.0, 1.0, 0.0], // has skin
                [0.0, 0.0, 0.0, 0.0, 1.0, 0.0], // has peel
                [0.0, 0.0, 0.0, 1.0, 0.0, 0.0], // is small
                [0.0, 0.0, 0.5, 0.0, 0.0, 0.0], // has rough skin
                [0.0, 1.0, 0.0, 0.0, 0.0, 0.0], // has a pit
                [0.0, 0.0, 0.0, 0.0, 0.0, 1.0], // has milk
                [0.0, 0.0, 1.0, 0.0, 0.0, 0.0], // has a shell
                [0.0, 0.0, 0.0, 0.0, 0.5, 0.0], // has hair
                [0.0, 0.0, 0.0, 0.0, 0.5, 0.0], // is prickly
                [0.0, 0.0, 0.0, 0.0, 0.0, 1.0], // has seeds
            ],
            functional: [
                [1.0, 0.0, 0.5, 0.0, 0.5, 0.0], // cut
                [0.0, 0.0, 0.0, 1.0, 0.0, 0.0], // spear
                [0.0, 0.0, 0.0, 0.5, 0.0, 1.0], // lift
                [0.5, 0.0, 1.0, 0.0, 0.0, 0.0], // break
                [0.0, 0.0, 0.0, 0.0, 1.0, 0.0], // peel
                [0.0, 1.0, 0.0, 0.0, 0.0, 0.0], // pit remover
            ],
            offset: 0.01,
        }
    }
}

impl UtilityMatrices {
    pub fn utility(&self, tool: &Instance, fruit: &Instance) -> Result<f64, DatasetError> {
        if tool.kind != ObjectKind::Tool || fruit.kind != ObjectKind::Fruit {
            return Err(DatasetError::Dimension(
                "utility expects (tool, fruit)".into(),
            ));
        }
        self.utility_raw(&tool.values, &fruit.values)
    }

    pub fn utility_raw(&self, tool: &[f64], fruit: &[f64]) -> Result<f64, DatasetError> {
        if tool.len() != NUM_TOOL_FEATURES || fruit.len() != NUM_FRUIT_FEATURES {
            return Err(DatasetError::Dimension(format!(
                "tool has {} features (want {NUM_TOOL_FEATURES}), fruit has {} (want {NUM_FRUIT_FEATURES})",
                tool.len(),
                fruit.len()
            )));
        }
        let tool_fn = project(tool, &self.tool_map);
        let fruit_fn = project(fruit, &self.fruit_map);
        let mut u = 0.0;
        for (i, row) in self.functional.iter().enumerate() {
            let mut r = 0.0;
            for (m, f) in row.iter().zip(&fruit_fn) {
                r += m * f;
            }
            u += tool_fn[i] * r;
        }
        Ok(u + self.offset)
    }
}

fn project<const R: usize>(v: &[f64], map: &[[f64; NUM_FUNCTIONAL]; R]) -> [f64; NUM_FUNCTIONAL] {
    let mut out = [0.0; NUM_FUNCTIONAL];
    for (x, row) in v.iter().zip(map) {
        for (o, m) in out.iter_mut().zip(row) {
            *o += x * m;
        }
    }
    out
}

/// For each tool, whether choosing it earns the reward, i.e. its utility is
/// at least that of the other tool. Ties make both tools winners.
pub fn best_tool(sample: &GameSample, m: &UtilityMatrices) -> Result<[bool; 2], DatasetError> {
    let u1 = m.utility(&sample.tool1, &sample.fruit)?;
    let u2 = m.utility(&sample.tool2, &sample.fruit)?;
    Ok([u1 >= u2, u2 >= u1])
}
