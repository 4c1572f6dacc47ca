//! Dual empirical log-likelihood of the two-sample DRM and its maximizer.
//!
//! With pooled observations `x_kj` (base sample `k = 0`, target `k = 1`),
//! the dual profile log-EL is
//!
//! ```text
//! ℓ(θ) = −Σ_kj log[n₀ + n₁ exp{θᵀq(x_kj)}] + Σ_j θᵀq(x_1j)
//! ```
//!
//! which is concave in θ. [`fit_mele`] maximizes it by damped Newton.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};

/// Two independent samples: `x0` from the base population, `x1` from the
/// target population.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSampleData {
    x0: Vec<f64>,
    x1: Vec<f64>,
}

impl TwoSampleData {
    pub fn new(x0: Vec<f64>, x1: Vec<f64>) -> Result<Self> {
        if x0.is_empty() || x1.is_empty() {
            return Err(Error::InvalidData("both samples need at least one observation".into()));
        }
        if x0.iter().chain(&x1).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("observations must be finite".into()));
        }
        Ok(Self { x0, x1 })
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn n0(&self) -> usize {
        self.x0.len()
    }

    pub fn n1(&self) -> usize {
        self.x1.len()
    }

    pub fn n(&self) -> usize {
        self.n0() + self.n1()
    }

    /// Sample proportions (n₀/n, n₁/n).
    pub fn proportions(&self) -> (f64, f64) {
        let n = self.n() as f64;
        (self.n0() as f64 / n, self.n1() as f64 / n)
    }

    /// Pooled observations, base block first.
    pub fn pooled(&self) -> impl Iterator<Item = f64> + '_ {
        self.x0.iter().chain(&self.x1).copied()
    }

    /// The same data with the roles of the two samples exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x0: self.x1.clone(),
            x1: self.x0.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Gradient tolerance; the sup-norm test is against `n₁ · tol_grad`.
    pub tol_grad: f64,
    pub tol_step: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-10,
            tol_step: 1e-10,
            max_iter: 100,
        }
    }
}

/// Result of maximizing the dual log-EL.
#[derive(Debug, Clone)]
pub struct DrmFit {
    /// θ̂ = (α̂, β̂ᵀ)ᵀ
    pub theta_hat: DVector<f64>,
    /// Base-measure masses p̂_kj = 1/[n₀ + n₁ exp{θ̂ᵀq(x_kj)}] in pooled order.
    pub weights: Vec<f64>,
    /// Tilted masses p̂_kj exp{θ̂ᵀq(x_kj)} in pooled order (the Ĝ₁ masses).
    pub tilted_weights: Vec<f64>,
    pub log_el_at_max: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
    /// ℓ at θ⁰ and after every accepted Newton step.
    pub objective_trace: Vec<f64>,
}

/// Pooled design matrix in row-major order plus the target-block column sums.
pub(crate) struct Design {
    q: Vec<f64>,
    d: usize,
    n0: f64,
    n1: f64,
    target_sum: Vec<f64>,
}

/// Stable pieces of the per-point term for u = θᵀq.
struct Term {
    /// log[n₀ + n₁ eᵘ]
    log_denom: f64,
    /// w = n₁eᵘ / (n₀ + n₁eᵘ)
    w: f64,
    /// 1 − w
    w_c: f64,
}

impl Design {
    pub(crate) fn new(data: &TwoSampleData, spec: &BasisSpec) -> Result<Self> {
        let d = spec.dimension();
        let mut q = vec![0.0; data.n() * d];
        for (i, (x, row)) in data.pooled().zip(q.chunks_exact_mut(d)).enumerate() {
            spec.fill(x, row).map_err(|reason| Error::DomainAt {
                index: i,
                value: x,
                reason,
            })?;
        }
        let mut target_sum = vec![0.0; d];
        for row in q[data.n0() * d..].chunks_exact(d) {
            for (s, v) in target_sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        Ok(Self {
            q,
            d,
            n0: data.n0() as f64,
            n1: data.n1() as f64,
            target_sum,
        })
    }

    pub(crate) fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.q.chunks_exact(self.d)
    }

    #[inline]
    fn term(&self, u: f64) -> Term {
        if u <= 0.0 {
            let r = (self.n1 / self.n0) * u.exp();
            Term {
                log_denom: self.n0.ln() + r.ln_1p(),
                w: r / (1.0 + r),
                w_c: 1.0 / (1.0 + r),
            }
        } else {
            let r = (self.n0 / self.n1) * (-u).exp();
            Term {
                log_denom: u + self.n1.ln() + r.ln_1p(),
                w: 1.0 / (1.0 + r),
                w_c: r / (1.0 + r),
            }
        }
    }

    #[inline]
    fn tilt(theta: &[f64], row: &[f64]) -> Result<f64> {
        let u: f64 = theta.iter().zip(row).map(|(t, q)| t * q).sum();
        if u.is_finite() {
            Ok(u)
        } else {
            Err(Error::NonFinite("θᵀq(x) overflowed"))
        }
    }

    fn linear_part(&self, theta: &[f64]) -> f64 {
        theta.iter().zip(&self.target_sum).map(|(t, s)| t * s).sum()
    }

    pub(crate) fn value(&self, theta: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for row in self.rows() {
            acc -= self.term(Self::tilt(theta, row)?).log_denom;
        }
        Ok(acc + self.linear_part(theta))
    }

    pub(crate) fn value_grad_hess(
        &self,
        theta: &[f64],
    ) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let d = self.d;
        let mut value = 0.0;
        let mut grad = self.target_sum.clone();
        let mut hess = vec![0.0; d * d];
        for row in self.rows() {
            let t = self.term(Self::tilt(theta, row)?);
            value -= t.log_denom;
            let c = t.w * t.w_c;
            for a in 0..d {
                grad[a] -= t.w * row[a];
                let ca = c * row[a];
                for b in a..d {
                    hess[a * d + b] -= ca * row[b];
                }
            }
        }
        value += self.linear_part(theta);
        let mut h = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in a..d {
                h[(a, b)] = hess[a * d + b];
                h[(b, a)] = hess[a * d + b];
            }
        }
        Ok((value, DVector::from_vec(grad), h))
    }

    /// (p̂, p̂·exp{θᵀq}) for every pooled point.
    pub(crate) fn masses(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.q.len() / self.d;
        let mut base = Vec::with_capacity(n);
        let mut tilted = Vec::with_capacity(n);
        for row in self.rows() {
            let t = self.term(Self::tilt(theta, row)?);
            base.push(t.w_c / self.n0);
            tilted.push(t.w / self.n1);
        }
        Ok((base, tilted))
    }

    /// Condition number of the pooled Gram matrix Σ q qᵀ.
    fn gram_condition(&self) -> f64 {
        let d = self.d;
        let mut g = DMatrix::<f64>::zeros(d, d);
        for row in self.rows() {
            for a in 0..d {
                for b in a..d {
                    g[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        let eig = SymmetricEigen::new(g).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if min <= 0.0 || !min.is_finite() {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

fn check_theta(theta: &DVector<f64>, spec: &BasisSpec) -> Result<()> {
    if theta.len() != spec.dimension() {
        return Err(Error::InvalidArgument(format!(
            "θ has length {} but the basis has dimension {}",
            theta.len(),
            spec.dimension()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("θ must be finite"));
    }
    Ok(())
}

/// ℓₙ(θ), evaluated with overflow-safe per-term log-sum-exp.
pub fn dual_log_el(data: &TwoSampleData, spec: &BasisSpec, theta: &DVector<f64>) -> Result<f64> {
    check_theta(theta, spec)?;
    Design::new(data, spec)?.value(theta.as_slice())
}

/// ∂ℓₙ/∂θ.
pub fn score(data: &TwoSampleData, spec: &BasisSpec, theta: &DVector<f64>) -> Result<DVector<f64>> {
    check_theta(theta, spec)?;
    Ok(Design::new(data, spec)?.value_grad_hess(theta.as_slice())?.1)
}

/// ∂²ℓₙ/∂θ∂θᵀ = −Σ w(1−w) q qᵀ, symmetric negative semi-definite.
pub fn hessian(data: &TwoSampleData, spec: &BasisSpec, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_theta(theta, spec)?;
    Ok(Design::new(data, spec)?.value_grad_hess(theta.as_slice())?.2)
}

const GRAM_CONDITION_LIMIT: f64 = 1e12;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Solves (−H) s = g, ridging −H until s is an ascent direction.
fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Option<DVector<f64>> {
    let neg = -hess;
    let base_ridge = 1e-10 * neg.trace().abs().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for _ in 0..40 {
        let mut m = neg.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            let step = chol.solve(grad);
            if step.iter().all(|v| v.is_finite()) && (grad.dot(&step) > 0.0 || grad.amax() == 0.0) {
                return Some(step);
            }
        }
        ridge = if ridge == 0.0 { base_ridge } else { ridge * 10.0 };
    }
    None
}

/// Maximum empirical likelihood estimate θ̂ = argmax ℓₙ(θ), started from θ = 0.
pub fn fit_mele(data: &TwoSampleData, spec: &BasisSpec, options: &SolverOptions) -> Result<DrmFit> {
    let design = Design::new(data, spec)?;
    let condition = design.gram_condition();
    if condition > GRAM_CONDITION_LIMIT {
        return Err(Error::SingularBasis { condition });
    }

    let n1 = data.n1() as f64;
    let grad_limit = n1 * options.tol_grad;
    let mut theta = DVector::zeros(spec.dimension());
    let (mut value, mut grad, mut hess) = design.value_grad_hess(theta.as_slice())?;
    let mut trace = vec![value];
    let mut last_step = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iter {
        let gnorm = grad.amax();
        let step = match newton_direction(&grad, &hess) {
            Some(s) => s,
            None if gnorm <= grad_limit => {
                converged = true;
                break;
            }
            None => break,
        };
        let step_norm = step.amax();
        if gnorm <= grad_limit && step_norm <= options.tol_step {
            converged = true;
            break;
        }

        // Below this predicted gain, changes in ℓ are lost in rounding.
        let noise = 64.0 * f64::EPSILON * (1.0 + value.abs());
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta + &step * t;
            let v = design.value(cand.as_slice())?;
            let armijo_ok = v >= value + ARMIJO * t * slope;
            let flat_ok = t * slope <= noise && v >= value - noise;
            if armijo_ok || flat_ok {
                accepted = Some((cand, v));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((cand, _)) = accepted else {
            converged = gnorm <= grad_limit;
            break;
        };
        last_step = (step * t).amax();
        theta = cand;
        (value, grad, hess) = design.value_grad_hess(theta.as_slice())?;
        trace.push(value);
        if grad.amax() <= grad_limit && last_step <= options.tol_step {
            converged = true;
            break;
        }
    }

    let final_gradient_norm = grad.amax();
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            gradient_norm: final_gradient_norm,
            last_step,
        });
    }
    let (weights, tilted_weights) = design.masses(theta.as_slice())?;
    Ok(DrmFit {
        theta_hat: theta,
        weights,
        tilted_weights,
        log_el_at_max: value,
        iterations,
        converged,
        final_gradient_norm,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(x0: &[f64], x1: &[f64]) -> TwoSampleData {
        TwoSampleData::new(x0.to_vec(), x1.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(TwoSampleData::new(vec![], vec![1.0]).is_err());
        assert!(TwoSampleData::new(vec![1.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn value_at_zero_is_minus_n_log_n() {
        let dat = data(&[0.3, -1.2, 2.0], &[0.5, 4.0]);
        let v = dual_log_el(&dat, &BasisSpec::quadratic(), &DVector::zeros(3)).unwrap();
        assert!((v + 5.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_single_pair() {
        let dat = data(&[0.0], &[1.0]);
        let theta = DVector::from_vec(vec![0.0, 1.0]);
        let v = dual_log_el(&dat, &BasisSpec::linear(), &theta).unwrap();
        let expected = -(2f64).ln() - (1.0 + 1f64.exp()).ln() + 1.0;
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn score_at_zero() {
        let dat = data(&[0.3, -1.2, 2.0], &[0.5, 4.0]);
        let spec = BasisSpec::linear();
        let g = score(&dat, &spec, &DVector::zeros(2)).unwrap();
        let pooled_sum: f64 = dat.pooled().sum();
        assert!(g[0].abs() < 1e-14);
        assert!((g[1] - (-(2.0 / 5.0) * pooled_sum + 4.5)).abs() < 1e-14);
    }

    #[test]
    fn hessian_hand_case() {
        let dat = data(&[-1.0, 1.0], &[-1.0, 1.0]);
        let h = hessian(&dat, &BasisSpec::linear(), &DVector::zeros(2)).unwrap();
        // −¼ Σ q qᵀ with Σ q qᵀ = [[4, 0], [0, 4]]
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]));
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn extreme_tilts_stay_finite() {
        let dat = data(&[-300.0, 0.0, 300.0], &[1.0; 300]);
        for beta in [-5.0, 5.0] {
            let theta = DVector::from_vec(vec![0.0, beta]);
            let v = dual_log_el(&dat, &BasisSpec::linear(), &theta).unwrap();
            assert!(v.is_finite());
        }
    }

    #[test]
    fn identical_samples_give_zero_tilt() {
        let dat = data(&[-1.0, 0.0, 1.0], &[-1.0, 0.0, 1.0]);
        let spec = BasisSpec::quadratic();
        let g = score(&dat, &spec, &DVector::zeros(3)).unwrap();
        assert!(g.amax() < 1e-14);
        let fit = fit_mele(&dat, &spec, &SolverOptions::default()).unwrap();
        assert!(fit.theta_hat.amax() < 1e-12);
        assert!(fit.weights.iter().all(|&w| (w - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn collinear_basis_is_rejected() {
        // Only two distinct points cannot support a quadratic basis.
        let dat = data(&[1.0, 2.0, 1.0], &[2.0, 1.0]);
        assert!(matches!(
            fit_mele(&dat, &BasisSpec::quadratic(), &SolverOptions::default()),
            Err(Error::SingularBasis { .. })
        ));
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let dat = data(&[0.0, 0.5, 1.0, 1.5], &[0.2, 0.9, 1.7]);
        let opts = SolverOptions {
            max_iter: 1,
            ..Default::default()
        };
        match fit_mele(&dat, &BasisSpec::linear(), &opts) {
            Err(Error::NonConvergence { iterations, .. }) => assert_eq!(iterations, 1),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn wrong_theta_length() {
        let dat = data(&[0.0], &[1.0]);
        assert!(dual_log_el(&dat, &BasisSpec::linear(), &DVector::zeros(3)).is_err());
    }
}
