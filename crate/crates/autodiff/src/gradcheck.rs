use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Graph, ParamId, ParamStore, Result, Var};

/// Denominator floor of the relative error, per unit of loss:
/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR · max(1, |loss|))`.
///
/// Central differences carry an absolute rounding error of roughly
/// `ε_machine · |loss| / eps`, so gradients far below the floor cannot be
/// resolved relatively and are effectively compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` for every sample.
    pub samples: Vec<(String, usize, f64, f64)>,
}

/// Compares analytic gradients of `loss_fn` with central differences on
/// `sample` coordinates drawn (seeded) uniformly over all parameter scalars.
pub fn finite_difference_check<F>(
    loss_fn: F,
    params: &ParamStore,
    eps: f64,
    sample: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("finite-difference eps must be > 0, got {eps}")));
    }
    let total = params.num_scalars();
    if total == 0 {
        return Err(Error::Domain("no parameters to check".into()));
    }
    let (grads, loss0) = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        (g.backward(loss)?, g.scalar_value(loss))
    };
    let floor = RELATIVE_ERROR_FLOOR * loss0.abs().max(1.0);
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        Ok(g.scalar_value(loss))
    };

    let offsets: Vec<(ParamId, usize)> = params
        .ids()
        .flat_map(|id| (0..params.get(id).len()).map(move |k| (id, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        samples: Vec::with_capacity(sample),
    };
    for _ in 0..sample {
        let (id, k) = offsets[rng.gen_range(0..total)];
        let orig = params.get(id).data()[k];
        work.values_mut(id)[k] = orig + eps;
        let plus = eval(&work)?;
        work.values_mut(id)[k] = orig - eps;
        let minus = eval(&work)?;
        work.values_mut(id)[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get(id).data()[k];
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        let rel = (analytic - numeric).abs() / denom;
        if rel > report.max_relative_error || rel.is_nan() {
            report.max_relative_error = rel;
        }
        report
            .samples
            .push((params.name(id).to_string(), k, analytic, numeric));
    }
    Ok(report)
}
