//! Central-difference verification of [`Graph::backward`](super::Graph::backward).

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{Array, Graph, Var};

/// Coordinates checked per tensor before subsampling kicks in.
pub const MAX_COORDS_PER_TENSOR: usize = 32;

/// Gradients smaller than this are compared on an absolute scale.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares `backward()` against five-point central differences with step `h`.
///
/// `build` records the scalar loss on a fresh graph given the bound
/// parameters; it is re-run for every perturbed coordinate.
pub fn grad_check<F>(build: F, params: &BTreeMap<String, Array<f64>>, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &BTreeMap<String, Var>) -> Result<Var>,
{
    let eval = |p: &BTreeMap<String, Array<f64>>| -> Result<f64> {
        let mut g = Graph::new();
        let bound = bind(&mut g, p);
        let loss = build(&mut g, &bound)?;
        Ok(g.value(loss).item())
    };
    let analytic = |p: &BTreeMap<String, Array<f64>>| -> Result<BTreeMap<String, Array<f64>>> {
        let mut g = Graph::new();
        let bound = bind(&mut g, p);
        let loss = build(&mut g, &bound)?;
        Ok(g.backward(loss)?.into_named())
    };
    grad_check_with(analytic, eval, params, h)
}

/// Same as [`grad_check`] with the analytic gradient supplied separately,
/// so the checker itself can be tested against a wrong gradient rule.
pub fn grad_check_with<A, E>(
    analytic: A,
    eval: E,
    params: &BTreeMap<String, Array<f64>>,
    h: f64,
) -> Result<GradCheckReport>
where
    A: Fn(&BTreeMap<String, Array<f64>>) -> Result<BTreeMap<String, Array<f64>>>,
    E: Fn(&BTreeMap<String, Array<f64>>) -> Result<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let grads = analytic(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let mut probe = params.clone();
    for (name, value) in params {
        let n = value.numel();
        let coords: Vec<usize> = if n <= MAX_COORDS_PER_TENSOR {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, MAX_COORDS_PER_TENSOR).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let original = value.data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                probe.get_mut(name).expect("cloned").data_mut()[i] = original + offset;
                eval(&probe)
            };
            // Fourth-order central stencil: truncation error O(h⁴).
            let numeric = (-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h);
            probe.get_mut(name).expect("cloned").data_mut()[i] = original;
            let a = grads.get(name).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

fn bind(g: &mut Graph<f64>, params: &BTreeMap<String, Array<f64>>) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(name, value)| (name.clone(), g.param(name.clone(), value.clone())))
        .collect()
}
