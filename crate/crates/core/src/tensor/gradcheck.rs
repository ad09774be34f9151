//! Central finite-difference gradient oracle.
//!
//! Used by tests to validate every analytic backward pass. It only evaluates
//! forward passes, so it stays independent of the reverse-mode path it
//! checks. Run at `f64`; `f32` has too little headroom for the difference
//! quotients.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Numeric `d f / d leaves` by central differences with step `h`.
pub fn finite_difference<F>(f: &F, leaves: &[Tensor<f64>], h: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let base: Vec<Vec<f64>> = leaves.iter().map(|t| t.data().to_vec()).collect();
    let mut grads = Vec::with_capacity(leaves.len());
    for li in 0..leaves.len() {
        let mut g = vec![0.0; base[li].len()];
        for i in 0..base[li].len() {
            let eval = |delta: f64| -> Result<f64> {
                let probes: Vec<Tensor<f64>> = leaves
                    .iter()
                    .enumerate()
                    .map(|(lj, t)| {
                        let mut data = base[lj].clone();
                        if lj == li {
                            data[i] += delta;
                        }
                        Tensor::from_vec(t.shape(), data).unwrap()
                    })
                    .collect();
                f(&probes)?.item()
            };
            g[i] = (eval(h)? - eval(-h)?) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `leaves` must be gradient-tracked; any accumulated gradients are cleared
/// first. The relative error uses `max(|analytic|, |numeric|, 1)` as the
/// denominator so near-zero entries degrade to an absolute comparison.
pub fn check_gradients<F>(f: &F, leaves: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    for leaf in leaves {
        leaf.zero_grad();
    }
    let loss = f(leaves)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.grad()
                .ok_or_else(|| TensorError::MissingGrad(format!("leaf {i}")))
        })
        .collect::<Result<_>>()?;
    let numeric = finite_difference(f, leaves, h)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.iter().zip(n) {
            let abs = (av - nv).abs();
            let rel = abs / av.abs().max(nv.abs()).max(1.0);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
        }
    }
    Ok(report)
}
