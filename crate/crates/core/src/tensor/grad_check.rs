//! Finite-difference verification of backward gradients.

use crate::error::Result;

use super::{backward, Bindings, Parameter, Tape, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn all_within(&self) -> bool {
        self.entries.iter().all(|e| !e.failed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Compare backward gradients of `f` against central differences
/// `(f(p+h) - f(p-h)) / 2h`, elementwise per parameter.
///
/// `f` must be deterministic given its inputs (fix any noise inside the
/// closure). It receives one tensor per parameter, tape-attached for the
/// analytic pass and detached for the perturbed evaluations.
pub fn grad_check<F>(f: F, params: &[Parameter], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    assert!(h > 0.0, "step must be positive");
    let tape = Tape::new();
    let binds = Bindings::new(&tape);
    let bound: Vec<Tensor> = params.iter().map(|p| binds.bind(p)).collect();
    let root = f(&bound)?;
    let grads = backward(&root)?;

    let mut report = GradCheckReport::default();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads
            .wrt(&bound[pi])
            .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()));
        let mut max_err = 0.0;
        let mut worst = 0;
        for j in 0..p.tensor.len() {
            let eval = |delta: f64| -> Result<f64> {
                let inputs: Vec<Tensor> = params
                    .iter()
                    .enumerate()
                    .map(|(qi, q)| {
                        if qi == pi {
                            let mut v = q.tensor.values().to_vec();
                            v[j] += delta;
                            Tensor::new(q.tensor.shape().to_vec(), v)
                        } else {
                            q.tensor.detached()
                        }
                    })
                    .collect();
                Ok(f(&inputs)?.scalar())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let err = rel_err(analytic.values()[j], numeric);
            if err > max_err {
                max_err = err;
                worst = j;
            }
        }
        report.entries.push(GradCheckEntry {
            name: p.name.clone(),
            max_rel_err: max_err,
            worst_index: worst,
            failed: max_err > tol,
        });
    }
    Ok(report)
}
