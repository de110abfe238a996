//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::param::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor so coordinates with vanishing gradient compare absolutely.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (sampled without replacement).
    pub max_coords_per_param: Option<usize>,
    /// Skip coordinates whose `h` and `h/2` difference quotients disagree by more
    /// than `tol`; this detects a relu kink inside the stencil.
    pub reject_kinks: bool,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-7,
            max_coords_per_param: None,
            reject_kinks: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub passed: bool,
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences for (a sample of) every parameter coordinate in `store`.
///
/// `f` must build the same scalar for the same parameter values; a repeat
/// evaluation that differs bitwise is reported as a harness error.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    if opts.h <= 0.0 {
        return Err(Error::harness("grad_check step h must be positive"));
    }
    let analytic = {
        let mut work = store.clone();
        work.zero_grad();
        let mut g = Graph::new();
        let root = f(&mut g, &work)?;
        scalar_of(&g, root)?;
        let grads = g.backward(root);
        g.accumulate_param_grads(&grads, &mut work)?;
        work
    };

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let root = f(&mut g, store)?;
        scalar_of(&g, root)
    };

    let base = eval(store)?;
    let again = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::harness(format!(
            "function is not deterministic: {base} vs {again}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        passed: true,
    };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let len = store.get(id).value().len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < len => sample(&mut rng, len, k).into_vec(),
            _ => (0..len).collect(),
        };
        for i in coords {
            let a = analytic.get(id).grad().data()[i];
            let numeric = central_difference(store, id, i, opts.h, &mut eval)?;
            if opts.reject_kinks {
                let half = central_difference(store, id, i, opts.h / 2.0, &mut eval)?;
                if relative(numeric, half, opts.floor) > opts.tol {
                    report.skipped_kinks += 1;
                    continue;
                }
            }
            let rel = relative(a, numeric, opts.floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name().to_string(), i));
            }
        }
    }
    report.passed = report.max_rel_error <= opts.tol;
    Ok(report)
}

fn central_difference(
    store: &mut ParamStore,
    id: super::param::ParamId,
    i: usize,
    h: f64,
    eval: &mut impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<f64> {
    let original = store.get(id).value().data()[i];
    store.get_mut(id).value_mut().data_mut()[i] = original + h;
    let plus = eval(store);
    store.get_mut(id).value_mut().data_mut()[i] = original - h;
    let minus = eval(store);
    store.get_mut(id).value_mut().data_mut()[i] = original;
    Ok((plus? - minus?) / (2.0 * h))
}

fn relative(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn scalar_of(g: &Graph, root: Var) -> Result<f64> {
    let v = g.value(root);
    if v.len() != 1 {
        return Err(Error::harness(format!(
            "grad_check needs a scalar function, got shape {}",
            v.shape()
        )));
    }
    Ok(v.item())
}
