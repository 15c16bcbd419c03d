use std::sync::Arc;

use rayon::prelude::*;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One parameter entry whose analytic gradient disagrees with central
/// differences.
#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_error: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.param(Arc::new(p.clone())))
        .collect();
    let loss = f(&mut tape, &vars)?;
    let v = tape.value(loss);
    if v.numel() != 1 {
        return Err(Error::Shape {
            op: "grad_check",
            detail: format!("objective must be scalar, got shape {:?}", v.shape()),
        });
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Compares the tape's gradient of `f` against central finite differences
/// for every entry of every parameter.
///
/// An entry fails when `|analytic - numeric| / max(1, |numeric|) > tol`.
/// Finite-difference evaluations run in parallel, so `f` must be `Sync`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.param(Arc::new(p.clone())))
        .collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get(v).expect("params require grad"))
        .collect();
    drop(tape);

    let entries: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.numel()).map(move |i| (p, i)))
        .collect();

    let results: Vec<Result<(usize, usize, f64)>> = entries
        .par_iter()
        .map_init(
            || params.to_vec(),
            |local, &(p, i)| {
                let orig = local[p].data()[i];
                local[p].data_mut()[i] = orig + h;
                let plus = evaluate(&f, local);
                local[p].data_mut()[i] = orig - h;
                let minus = evaluate(&f, local);
                local[p].data_mut()[i] = orig;
                Ok((p, i, (plus? - minus?) / (2.0 * h)))
            },
        )
        .collect();

    let mut report = GradCheckReport {
        checked: entries.len(),
        ..Default::default()
    };
    for r in results {
        let (p, i, numeric) = r?;
        let a = analytic[p].data()[i];
        let error = (a - numeric).abs() / numeric.abs().max(1.0);
        report.max_error = report.max_error.max(error);
        if error > tol {
            report.failures.push(GradCheckFailure {
                param: p,
                index: i,
                analytic: a,
                numeric,
                error,
            });
        }
    }
    Ok(report)
}
