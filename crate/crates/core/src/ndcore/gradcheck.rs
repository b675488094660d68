use rand::seq::index::sample;

use super::tensor::{GradSet, ParamSet};
use crate::error::{Error, Result};

const MAX_CHECKED: usize = 500;

/// Compares `analytic` against central differences of `loss_fn`.
///
/// Returns the largest `|analytic - numeric| / max(1, |numeric|)` over the
/// checked coordinates. Above 500 coordinates a seed-deterministic sample of
/// 500 is checked.
pub fn grad_check<F>(
    mut loss_fn: F,
    params: &ParamSet,
    analytic: &GradSet,
    eps: f64,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(1e-6..=1e-2).contains(&eps) {
        return Err(Error::config(format!("grad_check eps {eps} outside [1e-6, 1e-2]")));
    }
    analytic.check_matches(params)?;

    let coords: Vec<(usize, usize)> = params
        .tensors
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| (0..t.len()).map(move |i| (ti, i)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() > MAX_CHECKED {
        let mut rng = crate::util::rng(seed);
        let mut idx = sample(&mut rng, coords.len(), MAX_CHECKED).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    } else {
        coords
    };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (ti, i) in chosen {
        let orig = probe.tensors[ti].values[i];
        probe.tensors[ti].values[i] = orig + eps;
        let up = loss_fn(&probe)?;
        probe.tensors[ti].values[i] = orig - eps;
        let down = loss_fn(&probe)?;
        probe.tensors[ti].values[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite loss probing {}[{i}]",
                params.tensors[ti].name
            )));
        }
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic.values[ti][i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
