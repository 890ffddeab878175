//! Exact inference for RBMs small enough to enumerate every joint state.
//!
//! Everything here is computed from the energy function alone, by summing the
//! Gibbs distribution over binary configurations. None of it goes through the
//! sigmoid conditionals in [`crate::rbm`], so the two can check each other.

use crate::error::{Error, Result};
use crate::linalg::DataMatrix;
use crate::rbm::{RbmGradient, RbmParams};

/// Largest `n_visible + n_hidden` accepted for enumeration.
pub const MAX_ENUMERABLE_UNITS: usize = 20;

fn check_size(rbm: &RbmParams) -> Result<()> {
    if rbm.n_visible() + rbm.n_hidden() > MAX_ENUMERABLE_UNITS {
        return Err(Error::TooLargeToEnumerate {
            n_visible: rbm.n_visible(),
            n_hidden: rbm.n_hidden(),
            limit: MAX_ENUMERABLE_UNITS,
        });
    }
    Ok(())
}

/// The binary vector of length `n` encoded by the low bits of `code`.
pub fn state(n: usize, code: usize) -> Vec<f64> {
    (0..n).map(|i| ((code >> i) & 1) as f64).collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn energy(rbm: &RbmParams, v: &[f64], h: &[f64]) -> f64 {
    rbm.energy(v, h).expect("enumerated states have model dimensions")
}

/// `ln Z`, summing `e^{−E(v,h)}` over all `2^(m+n)` states.
pub fn log_partition(rbm: &RbmParams) -> Result<f64> {
    check_size(rbm)?;
    let (m, n) = (rbm.n_visible(), rbm.n_hidden());
    let hs: Vec<Vec<f64>> = (0..1usize << n).map(|c| state(n, c)).collect();
    Ok(log_sum_exp((0..1usize << m).flat_map(|vc| {
        let v = state(m, vc);
        hs.iter().map(move |h| -energy(rbm, &v, h)).collect::<Vec<_>>()
    })))
}

pub fn partition_function(rbm: &RbmParams) -> Result<f64> {
    Ok(log_partition(rbm)?.exp())
}

/// `p(v, h) = e^{−E(v,h)} / Z`.
pub fn joint_probability(rbm: &RbmParams, v: &[f64], h: &[f64]) -> Result<f64> {
    let log_z = log_partition(rbm)?;
    Ok((-rbm.energy(v, h)? - log_z).exp())
}

/// Every joint probability, indexed `[v_code][h_code]`.
pub fn joint_table(rbm: &RbmParams) -> Result<Vec<Vec<f64>>> {
    let log_z = log_partition(rbm)?;
    let (m, n) = (rbm.n_visible(), rbm.n_hidden());
    Ok((0..1usize << m)
        .map(|vc| {
            let v = state(m, vc);
            (0..1usize << n)
                .map(|hc| (-energy(rbm, &v, &state(n, hc)) - log_z).exp())
                .collect()
        })
        .collect())
}

/// `p(H_i = 1 | v)` for each hidden unit, as a ratio of sums of `e^{−E}`.
/// `v` may hold any real values, not only bits.
pub fn hidden_conditional(rbm: &RbmParams, v: &[f64]) -> Result<Vec<f64>> {
    check_size(rbm)?;
    let n = rbm.n_hidden();
    let weights: Vec<(Vec<f64>, f64)> = (0..1usize << n)
        .map(|hc| {
            let h = state(n, hc);
            let e = rbm.energy(v, &h).map(|e| -e);
            e.map(|e| (h, e))
        })
        .collect::<std::result::Result<_, _>>()?;
    let log_norm = log_sum_exp(weights.iter().map(|(_, e)| *e));
    Ok((0..n)
        .map(|i| {
            weights
                .iter()
                .filter(|(h, _)| h[i] == 1.0)
                .map(|(_, e)| (e - log_norm).exp())
                .sum()
        })
        .collect())
}

/// `p(V_j = 1 | h)` for each visible unit.
pub fn visible_conditional(rbm: &RbmParams, h: &[f64]) -> Result<Vec<f64>> {
    check_size(rbm)?;
    let m = rbm.n_visible();
    let weights: Vec<(Vec<f64>, f64)> = (0..1usize << m)
        .map(|vc| {
            let v = state(m, vc);
            rbm.energy(&v, h).map(|e| (v, -e))
        })
        .collect::<std::result::Result<_, _>>()?;
    let log_norm = log_sum_exp(weights.iter().map(|(_, e)| *e));
    Ok((0..m)
        .map(|j| {
            weights
                .iter()
                .filter(|(v, _)| v[j] == 1.0)
                .map(|(_, e)| (e - log_norm).exp())
                .sum()
        })
        .collect())
}

/// Mean over rows of `ln p(v) = ln Σ_h e^{−E(v,h)} − ln Z`.
pub fn mean_log_likelihood(rbm: &RbmParams, data: &DataMatrix) -> Result<f64> {
    let log_z = log_partition(rbm)?;
    let n = rbm.n_hidden();
    let hs: Vec<Vec<f64>> = (0..1usize << n).map(|c| state(n, c)).collect();
    let mut total = 0.0;
    for r in 0..data.rows() {
        let v = data.row(r);
        let mut terms = Vec::with_capacity(hs.len());
        for h in &hs {
            terms.push(-rbm.energy(v, h)?);
        }
        total += log_sum_exp(terms.into_iter()) - log_z;
    }
    Ok(total / data.rows().max(1) as f64)
}

/// Exact gradient of [`mean_log_likelihood`]: data expectations of the
/// sufficient statistics under `p(h|v)` minus their model expectations.
pub fn exact_loglik_grad(rbm: &RbmParams, data: &DataMatrix) -> Result<RbmGradient> {
    check_size(rbm)?;
    let (m, n) = (rbm.n_visible(), rbm.n_hidden());
    let mut grad = RbmGradient::zeros(m, n);

    // data term
    for r in 0..data.rows() {
        let v = data.row(r);
        let ph = hidden_conditional(rbm, v)?;
        for i in 0..n {
            for j in 0..m {
                grad.weights[[i, j]] += ph[i] * v[j];
            }
            grad.hidden_bias[i] += ph[i];
        }
        for j in 0..m {
            grad.visible_bias[j] += v[j];
        }
    }
    grad.scale(1.0 / data.rows().max(1) as f64);

    // model term
    let table = joint_table(rbm)?;
    for (vc, row) in table.iter().enumerate() {
        let v = state(m, vc);
        for (hc, &p) in row.iter().enumerate() {
            let h = state(n, hc);
            for i in 0..n {
                for j in 0..m {
                    grad.weights[[i, j]] -= p * h[i] * v[j];
                }
                grad.hidden_bias[i] -= p * h[i];
            }
            for j in 0..m {
                grad.visible_bias[j] -= p * v[j];
            }
        }
    }
    Ok(grad)
}

/// Central differences of [`mean_log_likelihood`] for every parameter, in the
/// layout of [`RbmGradient::flatten`].
pub fn finite_diff_loglik_grad(rbm: &RbmParams, data: &DataMatrix, eps: f64) -> Result<Vec<f64>> {
    let mut probe = rbm.clone();
    let mut out = Vec::new();
    let f = |p: &RbmParams| mean_log_likelihood(p, data);
    let (m, n) = (rbm.n_visible(), rbm.n_hidden());
    for i in 0..n {
        for j in 0..m {
            let base = probe.weights[[i, j]];
            probe.weights[[i, j]] = base + eps;
            let up = f(&probe)?;
            probe.weights[[i, j]] = base - eps;
            let down = f(&probe)?;
            probe.weights[[i, j]] = base;
            out.push((up - down) / (2.0 * eps));
        }
    }
    for j in 0..m {
        let base = probe.visible_bias[j];
        probe.visible_bias[j] = base + eps;
        let up = f(&probe)?;
        probe.visible_bias[j] = base - eps;
        let down = f(&probe)?;
        probe.visible_bias[j] = base;
        out.push((up - down) / (2.0 * eps));
    }
    for i in 0..n {
        let base = probe.hidden_bias[i];
        probe.hidden_bias[i] = base + eps;
        let up = f(&probe)?;
        probe.hidden_bias[i] = base - eps;
        let down = f(&probe)?;
        probe.hidden_bias[i] = base;
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}
