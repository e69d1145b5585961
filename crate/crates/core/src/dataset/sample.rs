use rand::Rng;

use super::{Category, DatasetError, FeatureKind, Instance};

const MAX_ATTEMPTS: usize = 1000;

/// Continuous draws are rounded to this many decimals so that instances
/// survive the six-digit split files unchanged.
const DECIMALS: f64 = 1e6;

/// Draws one instance around the category means, resampling the whole
/// vector until no exclusion group has two positive members.
///
/// `category_index` is recorded on the instance; `exclusion_groups` are the
/// feature-index sets for this object kind.
pub fn sample_instance<'g, R: Rng + ?Sized>(
    category: &Category,
    category_index: usize,
    exclusion_groups: impl Iterator<Item = &'g [usize]> + Clone,
    rng: &mut R,
) -> Result<Instance, DatasetError> {
    let mut values = vec![0.0; category.means.len()];
    for _ in 0..MAX_ATTEMPTS {
        for ((v, &mu), kind) in values.iter_mut().zip(&category.means).zip(&category.kinds) {
            *v = match kind {
                FeatureKind::Binary => {
                    if rng.random::<f64>() < mu {
                        1.0
                    } else {
                        0.0
                    }
                }
                FeatureKind::Continuous => {
                    let u = rng.random_range((mu - 0.1)..=(mu + 0.1));
                    (u.clamp(0.0, 1.0) * DECIMALS).round() / DECIMALS
                }
            };
        }
        let ok = exclusion_groups
            .clone()
            .all(|g| g.iter().filter(|&&f| values[f] > 0.0).count() <= 1);
        if ok {
            return Ok(Instance {
                kind: category.kind,
                category: category_index,
                values,
            });
        }
    }
    Err(DatasetError::ExclusionUnsatisfiable(category.name.clone()))
}
