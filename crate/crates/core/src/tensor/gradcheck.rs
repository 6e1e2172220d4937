//! Independent finite-difference oracle for every backward rule.
//!
//! The check perturbs one parameter element at a time and compares the
//! central difference `(f(θ+ε) − f(θ−ε)) / 2ε` against the recorded-tape
//! gradient, reporting `|fd − ad| / max(1e-8, |fd| + |ad|)` per parameter.
//! Probes that land within 1e-6 of a ReLU kink are retried with a jittered
//! step, since central differences straddling a kink measure the wrong
//! quantity.

use rand::Rng;

use super::ParamSet;
use crate::rng::{name_salt, substream, Stream};
use crate::{HinError, Result};

/// One scalar evaluation plus how close any ReLU input came to its kink.
#[derive(Clone, Copy, Debug)]
pub struct ProbeEval {
    pub value: f64,
    pub relu_margin: f64,
}

/// Per-parameter outcome.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub probed: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self, tol: f64) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !(c.max_rel_err < tol))
            .map(|c| c.name.clone())
            .collect()
    }

    /// Error unless every parameter is under `tol`.
    pub fn require(&self, tol: f64) -> Result<()> {
        let failures = self.failures(tol);
        if failures.is_empty() {
            Ok(())
        } else {
            Err(HinError::GradCheckFailed {
                failures,
                max_err: self.max_rel_err(),
            })
        }
    }
}

const KINK_MARGIN: f64 = 1e-6;
const LADDER_STEPS: usize = 8;

/// Compare tape gradients of a deterministic scalar function against central
/// differences, probing every element of every differentiable parameter (or
/// a fixed-seed sample of `probe_cap` elements for larger tensors).
///
/// `loss` evaluates the function at the current parameter values; `grads`
/// evaluates it once and returns the tape gradient for each parameter
/// (`None` for frozen ones). Any randomness (dropout) must be disabled in
/// both closures.
pub fn finite_diff_check<F, G>(
    params: &mut ParamSet,
    mut loss: F,
    mut grads: G,
    eps: f64,
    probe_cap: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> Result<ProbeEval>,
    G: FnMut(&ParamSet) -> Result<Vec<Option<Vec<f64>>>>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(HinError::invalid(
            "gradcheck",
            format!("eps {eps:.3e} outside [1e-7, 1e-3]"),
        ));
    }
    let analytic = grads(params)?;
    if analytic.len() != params.len() {
        return Err(HinError::invalid(
            "gradcheck",
            "gradient vector does not align with the parameter set",
        ));
    }
    // Rounding scale of one loss evaluation, for the step-selection error
    // model below.
    let base = loss(params)?;
    let eval_noise = 2.0 * f64::EPSILON * base.value.abs().max(1e-3);

    let mut report = GradCheckReport::default();
    for pid in 0..params.len() {
        let Some(ad) = analytic[pid].clone() else { continue };
        let name = params.get(pid).name.clone();
        let len = params.get(pid).tensor.len();
        let elements = probe_elements(&name, len, probe_cap, seed);

        let mut max_rel = 0.0f64;
        for &e in &elements {
            let fd = central_difference(params, &mut loss, pid, e, eps, eval_noise)?;
            let rel = (fd - ad[e]).abs() / 1e-8f64.max(fd.abs() + ad[e].abs());
            max_rel = max_rel.max(rel);
        }
        report.checks.push(ParamCheck {
            name,
            max_rel_err: max_rel,
            probed: elements.len(),
        });
    }
    Ok(report)
}

fn probe_elements(name: &str, len: usize, cap: usize, seed: u64) -> Vec<usize> {
    if len <= cap {
        return (0..len).collect();
    }
    let mut rng = substream(seed, Stream::Probe, name_salt(name), len as u64);
    let mut picked = Vec::with_capacity(cap);
    let mut seen = std::collections::HashSet::new();
    while picked.len() < cap {
        let e = rng.gen_range(0..len);
        if seen.insert(e) {
            picked.push(e);
        }
    }
    picked
}

fn central_difference<F>(
    params: &mut ParamSet,
    loss: &mut F,
    pid: usize,
    element: usize,
    eps: f64,
    eval_noise: f64,
) -> Result<f64>
where
    F: FnMut(&ParamSet) -> Result<ProbeEval>,
{
    let original = params.get(pid).tensor.data[element];
    let mut probe = |step: f64| -> Result<(f64, f64)> {
        params.get_mut(pid).tensor.data[element] = original + step;
        let hi = loss(params)?;
        params.get_mut(pid).tensor.data[element] = original - step;
        let lo = loss(params)?;
        params.get_mut(pid).tensor.data[element] = original;
        if !hi.value.is_finite() || !lo.value.is_finite() {
            return Err(HinError::invalid(
                "gradcheck",
                format!("non-finite probe for `{}`[{element}]", params.get(pid).name),
            ));
        }
        Ok((
            (hi.value - lo.value) / (2.0 * step),
            hi.relu_margin.min(lo.relu_margin),
        ))
    };

    // Ladder of halving steps from `eps` down. Large steps keep the
    // difference above f64 rounding of the loss (which is what limits
    // strongly attenuated gradient elements); small steps keep the probe
    // interval away from ReLU kinks and high curvature. Each adjacent
    // pair yields an extrapolated value whose truncation term cancels;
    // the pair is scored by its estimated total error — truncation read
    // off the pair's disagreement plus rounding at its step size — and
    // the best-scored pair wins. Steps whose probes land within the kink
    // margin are resampled: pairs touching them are considered only when
    // no clean pair exists.
    let mut diffs = Vec::with_capacity(LADDER_STEPS);
    let mut clean = Vec::with_capacity(LADDER_STEPS);
    let mut steps = Vec::with_capacity(LADDER_STEPS);
    let mut step = eps;
    for _ in 0..LADDER_STEPS {
        if step < 1e-7 {
            break;
        }
        let (d, margin) = probe(step)?;
        diffs.push(d);
        clean.push(margin >= KINK_MARGIN);
        steps.push(step);
        step /= 2.0;
    }
    if diffs.len() == 1 {
        return Ok(diffs[0]);
    }
    let mut best: Option<(f64, f64)> = None; // (estimated error, value)
    for require_clean in [true, false] {
        for k in 0..diffs.len() - 1 {
            if require_clean && !(clean[k] && clean[k + 1]) {
                continue;
            }
            let truncation = (diffs[k] - diffs[k + 1]).abs() / 3.0;
            let rounding = eval_noise / steps[k + 1];
            let score = truncation + rounding;
            let fd = (4.0 * diffs[k + 1] - diffs[k]) / 3.0;
            if best.map_or(true, |(s, _)| score < s) {
                best = Some((score, fd));
            }
        }
        if best.is_some() {
            break;
        }
    }
    Ok(best.expect("at least one adjacent pair").1)
}
