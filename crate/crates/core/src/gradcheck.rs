//! Finite-difference verification of tape gradients in 64-bit precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Bound on `|analytic - numeric| / max(1, |numeric|)`.
    pub tolerance: f64,
    /// One-sided slopes disagreeing by more than this (relative) mark a kink.
    /// An unflagged kink biases the central difference by at most half of
    /// this, so it must stay well below `tolerance`.
    pub kink_threshold: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-6,
            tolerance: 1e-4,
            kink_threshold: 1e-4,
        }
    }
}

/// Location and values of the largest gradient discrepancy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Offender {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: Option<Offender>,
    /// `(input, index)` pairs sitting on a non-differentiable point.
    pub kinks: Vec<(usize, usize)>,
    /// Number of input redraws performed by [`grad_check_resampled`].
    pub resamples: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst_rel_error(&self) -> f64 {
        self.worst.map_or(0.0, |o| o.rel_error)
    }

    pub fn passed(&self) -> bool {
        self.kinks.is_empty() && self.worst_rel_error() <= self.tolerance
    }
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F, projection: &mut Option<Tensor<f64>>) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let out = if tape.value(out).len() == 1 {
        out
    } else {
        let len = tape.value(out).len();
        let w = projection.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
            Tensor::uniform(&[len], -1.0, 1.0, &mut rng)
        });
        tape.project(out, w.clone())?
    };
    Ok((tape, vars, out))
}

/// Compares the tape gradient of `f` against central differences for every
/// element of every input. Non-scalar outputs are reduced by a fixed random
/// projection.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut projection = None;
    let (tape, vars, out) = evaluate(inputs, &f, &mut projection)?;
    let f0 = tape.value(out).data()[0];
    let grads = tape.backward(out)?;
    drop(tape);

    let scalar_at = |inputs: &[Tensor<f64>], projection: &mut Option<Tensor<f64>>| -> Result<f64> {
        let (tape, _, out) = evaluate(inputs, &f, projection)?;
        Ok(tape.value(out).data()[0])
    };

    let mut report = GradCheckReport {
        tolerance: cfg.tolerance,
        ..Default::default()
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ii, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned();
        for idx in 0..inputs[ii].len() {
            let orig = work[ii].data()[idx];
            work[ii].data_mut()[idx] = orig + cfg.step;
            let fp = scalar_at(&work, &mut projection)?;
            work[ii].data_mut()[idx] = orig - cfg.step;
            let fm = scalar_at(&work, &mut projection)?;
            work[ii].data_mut()[idx] = orig;

            let numeric = (fp - fm) / (2.0 * cfg.step);
            let right = (fp - f0) / cfg.step;
            let left = (f0 - fm) / cfg.step;
            report.checked += 1;
            if (right - left).abs() > cfg.kink_threshold * numeric.abs().max(1.0) {
                report.kinks.push((ii, idx));
                continue;
            }
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[idx]);
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if report.worst.is_none_or(|w| rel > w.rel_error) {
                report.worst = Some(Offender {
                    input: ii,
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

/// Runs [`grad_check`] on inputs drawn from `draw(attempt)`, redrawing
/// while a kink is hit, up to `max_attempts` draws.
pub fn grad_check_resampled<D, F>(
    mut draw: D,
    f: F,
    cfg: GradCheckConfig,
    max_attempts: usize,
) -> Result<GradCheckReport>
where
    D: FnMut(u64) -> Vec<Tensor<f64>>,
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut attempt = 0;
    loop {
        let inputs = draw(attempt as u64);
        let mut report = grad_check(&inputs, &f, cfg)?;
        report.resamples = attempt;
        attempt += 1;
        if report.kinks.is_empty() || attempt >= max_attempts {
            return Ok(report);
        }
        log::debug!("grad check hit {} kinks, redrawing", report.kinks.len());
    }
}
