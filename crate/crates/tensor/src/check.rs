use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::{ParameterStore, Result, Scalar};

/// Entries checked per parameter before switching to random sampling.
pub const GRAD_CHECK_SAMPLES: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Entries where both gradients sit below the finite-difference noise
    /// floor and agree to within it; these are not counted in `max_rel_error`.
    pub below_noise: usize,
}

/// Multiple of `eps * max(1, |loss|) / h` treated as finite-difference noise.
pub const NOISE_FACTOR: f64 = 1e3;

fn eval<S, F>(store: &ParameterStore<S>, loss_fn: &F) -> Result<f64>
where
    S: Scalar,
    F: for<'g> Fn(&'g Graph<S>, &ParameterStore<S>) -> Result<Var<'g, S>>,
{
    let g = Graph::new();
    let loss = loss_fn(&g, store)?;
    Ok(loss.value().data()[0].to_f64().unwrap_or(f64::NAN))
}

/// Compares reverse-mode gradients against central differences.
///
/// Every entry of a parameter is checked when it has at most
/// [`GRAD_CHECK_SAMPLES`] entries; larger tensors are sampled. Parameters
/// with `requires_grad == false` are skipped. Relative error uses the
/// denominator `max(|a|, |b|, 1e-8)`.
///
/// Central differences cannot resolve gradients smaller than the rounding
/// noise of the loss itself, about `eps * |loss| / h`. Entries where both
/// gradients are below [`NOISE_FACTOR`] times that level, and differ by less
/// than it, are tallied in `below_noise` instead.
pub fn grad_check<S, F>(store: &ParameterStore<S>, loss_fn: F, h: f64, seed: u64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: for<'g> Fn(&'g Graph<S>, &ParameterStore<S>) -> Result<Var<'g, S>>,
{
    let mut work = store.clone();
    work.zero_grad();
    {
        let g = Graph::new();
        let loss = loss_fn(&g, &work)?;
        let grads = g.backward(loss)?;
        work.accumulate(&g, &grads);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        below_noise: 0,
    };
    let base = eval(&work, &loss_fn)?;
    let eps = S::epsilon().to_f64().unwrap_or(f64::EPSILON);
    let noise = NOISE_FACTOR * eps * base.abs().max(1.0) / h;
    let names: Vec<String> = work.names().map(str::to_string).collect();
    for name in names {
        let p = work.get(&name).expect("listed");
        if !p.requires_grad {
            continue;
        }
        let len = p.value.len();
        let analytic: Vec<f64> = match p.grad() {
            Some(g) => g.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
            None => vec![0.0; len],
        };
        let idx: Vec<usize> = if len <= GRAD_CHECK_SAMPLES {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, GRAD_CHECK_SAMPLES).into_vec();
            v.sort_unstable();
            v
        };
        for i in idx {
            let orig = work.value(&name)?.data()[i];
            work.value_mut(&name)?.data_mut()[i] = orig + S::of(h);
            let plus = eval(&work, &loss_fn)?;
            work.value_mut(&name)?.data_mut()[i] = orig - S::of(h);
            let minus = eval(&work, &loss_fn)?;
            work.value_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i];
            if a != numeric && a.abs().max(numeric.abs()) < noise && (a - numeric).abs() < noise {
                report.below_noise += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some((name.clone(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
