//! Distribution and quantile estimators built on a fitted DRM, with plug-in
//! asymptotic variances.
//!
//! Ĝ₀ puts mass p̂_kj on each pooled observation and Ĝ₁ puts mass
//! p̂_kj·exp{θ̂ᵀq(x_kj)}. All plug-in moments (Ê₁[q₋], V̂ar₁[q₋], Q̂(x))
//! integrate against Ĝ₁.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::fit::{DrmFit, TwoSampleData};
use crate::nonparametric::{check_level, kde_density, KdeModel};
use crate::normal;

/// A discrete distribution on sorted support points.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCdf {
    support: Vec<f64>,
    mass: Vec<f64>,
    cumulative: Vec<f64>,
}

impl WeightedCdf {
    /// Builds the CDF from unsorted `(value, mass)` pairs, merging ties.
    pub fn from_points(values: &[f64], masses: &[f64]) -> Result<Self> {
        if values.len() != masses.len() || values.is_empty() {
            return Err(Error::InvalidArgument(
                "values and masses must be non-empty and of equal length".into(),
            ));
        }
        if masses.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("masses must be finite and nonnegative".into()));
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

        let mut support = Vec::with_capacity(values.len());
        let mut mass: Vec<f64> = Vec::with_capacity(values.len());
        for i in order {
            match support.last() {
                Some(&last) if last == values[i] => *mass.last_mut().unwrap() += masses[i],
                _ => {
                    support.push(values[i]);
                    mass.push(masses[i]);
                }
            }
        }
        let cumulative = mass
            .iter()
            .scan(0.0, |acc, m| {
                *acc += m;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            support,
            mass,
            cumulative,
        })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// G(x) = Σ mass·1(support ≤ x).
    pub fn eval(&self, x: f64) -> f64 {
        match self.support.partition_point(|&s| s <= x) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    /// G(x⁻) = Σ mass·1(support < x).
    pub fn eval_left(&self, x: f64) -> f64 {
        match self.support.partition_point(|&s| s < x) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }
}

fn require_converged(fit: &DrmFit) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::NotConverged)
    }
}

fn check_fit_shape(fit: &DrmFit, data: &TwoSampleData) -> Result<()> {
    if fit.weights.len() != data.n() || fit.tilted_weights.len() != data.n() {
        return Err(Error::InvalidArgument("fit does not belong to this data".into()));
    }
    Ok(())
}

/// Ĝ₁ from the fitted tilted masses.
pub fn estimate_g1(fit: &DrmFit, data: &TwoSampleData) -> Result<WeightedCdf> {
    require_converged(fit)?;
    check_fit_shape(fit, data)?;
    let pooled: Vec<f64> = data.pooled().collect();
    WeightedCdf::from_points(&pooled, &fit.tilted_weights)
}

/// Ĝ₀ from the fitted base masses.
pub fn estimate_g0(fit: &DrmFit, data: &TwoSampleData) -> Result<WeightedCdf> {
    require_converged(fit)?;
    check_fit_shape(fit, data)?;
    let pooled: Vec<f64> = data.pooled().collect();
    WeightedCdf::from_points(&pooled, &fit.weights)
}

/// ξ̂_p = inf{t : Ĝ(t) ≥ p} over the discrete support.
pub fn drm_quantile(cdf: &WeightedCdf, p: f64) -> Result<f64> {
    check_level(p)?;
    let k = cdf.cumulative.partition_point(|&c| c < p);
    // Rounding can leave the last cumulative a hair below a p close to 1.
    Ok(cdf.support[k.min(cdf.support.len() - 1)])
}

/// Plug-in moments of q₋ under Ĝ₁, plus the pooled rows for Q̂(x).
struct PlugIn {
    values: Vec<f64>,
    tilted: Vec<f64>,
    /// q₋ rows, pooled order, row-major
    q_minus: Vec<f64>,
    dm: usize,
    mean: DVector<f64>,
    var: DMatrix<f64>,
    var_inv: DMatrix<f64>,
    second_moment: DMatrix<f64>,
}

impl PlugIn {
    fn new(fit: &DrmFit, data: &TwoSampleData, spec: &BasisSpec) -> Result<Self> {
        require_converged(fit)?;
        check_fit_shape(fit, data)?;
        let d = spec.dimension();
        let dm = d - 1;
        let values: Vec<f64> = data.pooled().collect();
        let mut q_minus = Vec::with_capacity(values.len() * dm);
        let mut second_moment = DMatrix::<f64>::zeros(d, d);
        let mut row = vec![0.0; d];
        for (i, (&x, &m)) in values.iter().zip(&fit.tilted_weights).enumerate() {
            spec.fill(x, &mut row).map_err(|reason| Error::DomainAt {
                index: i,
                value: x,
                reason,
            })?;
            q_minus.extend_from_slice(&row[1..]);
            for a in 0..d {
                for b in a..d {
                    second_moment[(a, b)] += m * row[a] * row[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                second_moment[(a, b)] = second_moment[(b, a)];
            }
        }
        let total = second_moment[(0, 0)];
        let mean: DVector<f64> = second_moment.view((1, 0), (dm, 1)).column(0).into_owned() / total;
        let var = second_moment.view((1, 1), (dm, dm)).into_owned() / total - &mean * mean.transpose();
        let var = (&var + var.transpose()) * 0.5;
        let var_inv = var
            .clone()
            .cholesky()
            .ok_or(Error::SingularMoment)?
            .inverse();
        Ok(Self {
            values,
            tilted: fit.tilted_weights.clone(),
            q_minus,
            dm,
            mean,
            var,
            var_inv,
            second_moment,
        })
    }

    /// (Q̂(x), Ĝ₁(x))
    fn q_at(&self, x: f64) -> (DVector<f64>, f64) {
        let mut q = DVector::zeros(self.dm);
        let mut g = 0.0;
        for (i, (&v, &m)) in self.values.iter().zip(&self.tilted).enumerate() {
            if v <= x {
                g += m;
                let row = &self.q_minus[i * self.dm..(i + 1) * self.dm];
                for (a, r) in row.iter().enumerate() {
                    q[a] += m * r;
                }
            }
        }
        (q, g)
    }

    fn quadratic_form(&self, b: &DVector<f64>) -> f64 {
        (b.transpose() * &self.var_inv * b)[(0, 0)].max(0.0)
    }
}

/// Plug-in ingredients behind an asymptotic variance.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceIngredients {
    /// Ê₁[q₋]
    pub mean_q: DVector<f64>,
    /// V̂ar₁[q₋]
    pub var_q: DMatrix<f64>,
    /// Q̂ at the evaluation point
    pub q_at: DVector<f64>,
    /// Ĝ₁ at the evaluation point
    pub g1_at: f64,
    /// density plug-in ĝ₁(ξ̂_p)
    pub density_at: f64,
}

/// Variance of the limiting law of √n₁·(estimator − truth).
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticVariance {
    pub value: f64,
    pub quantile: f64,
    pub ingredients: VarianceIngredients,
}

/// Both algebraic forms of the θ̂ covariance:
/// `{Ê₁[q qᵀ]}⁻¹ − e₁e₁ᵀ` and `(−Ê₁[q₋], I)ᵀ V̂ar₁⁻¹ (−Ê₁[q₋], I)`.
pub fn avar_theta_forms(
    fit: &DrmFit,
    data: &TwoSampleData,
    spec: &BasisSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let plug = PlugIn::new(fit, data, spec)?;
    let d = spec.dimension();
    let total = plug.second_moment[(0, 0)];
    let mut direct = (&plug.second_moment / total)
        .cholesky()
        .ok_or(Error::SingularMoment)?
        .inverse();
    direct[(0, 0)] -= 1.0;

    let mut lift = DMatrix::zeros(plug.dm, d);
    for a in 0..plug.dm {
        lift[(a, 0)] = -plug.mean[a];
        lift[(a, a + 1)] = 1.0;
    }
    let factored = lift.transpose() * &plug.var_inv * &lift;
    Ok((direct, factored))
}

/// Plug-in asymptotic covariance of √n₁(θ̂ − θ*).
pub fn avar_theta(fit: &DrmFit, data: &TwoSampleData, spec: &BasisSpec) -> Result<DMatrix<f64>> {
    let (direct, factored) = avar_theta_forms(fit, data, spec)?;
    let scale = factored.amax().max(1.0);
    if (&direct - &factored).amax() > 1e-6 * scale {
        return Err(Error::SingularMoment);
    }
    Ok(factored)
}

/// Plug-in asymptotic variance of √n₁(Ĝ₁(x) − G₁(x)).
pub fn avar_g1_at(fit: &DrmFit, data: &TwoSampleData, spec: &BasisSpec, x: f64) -> Result<f64> {
    let plug = PlugIn::new(fit, data, spec)?;
    let (q, g) = plug.q_at(x);
    Ok(plug.quadratic_form(&(q - &plug.mean * g)))
}

/// Plug-in asymptotic variance of √n₁(ξ̂_p − ξ_p) given a density value at
/// the quantile.
pub fn avar_quantile(
    fit: &DrmFit,
    data: &TwoSampleData,
    spec: &BasisSpec,
    p: f64,
    density_at: f64,
) -> Result<AsymptoticVariance> {
    check_level(p)?;
    if !(density_at > 0.0) {
        return Err(Error::NonpositiveDensity(density_at));
    }
    let plug = PlugIn::new(fit, data, spec)?;
    let xi = drm_quantile(&estimate_g1(fit, data)?, p)?;
    let (q, g) = plug.q_at(xi);
    let bracket = &q - &plug.mean * p;
    let value = plug.quadratic_form(&bracket) / (density_at * density_at);
    Ok(AsymptoticVariance {
        value,
        quantile: xi,
        ingredients: VarianceIngredients {
            mean_q: plug.mean.clone(),
            var_q: plug.var.clone(),
            q_at: q,
            g1_at: g,
            density_at,
        },
    })
}

/// Limiting variance of the DRM quantile when G₀ = G₁ and k = n₀/n₁ is
/// fixed: a (1/(k+1), k/(k+1)) mix of the empirical and parametric variances.
pub fn corollary_variance(k: f64, p: f64, density_at: f64, parametric_avar: f64) -> Result<f64> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::InvalidArgument(format!("k must be finite and nonnegative, got {k}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("level must be in (0, 1), got {p}")));
    }
    if !(density_at > 0.0) {
        return Err(Error::InvalidArgument(format!("density must be positive, got {density_at}")));
    }
    if !(parametric_avar >= 0.0) {
        return Err(Error::InvalidArgument("parametric variance must be nonnegative".into()));
    }
    let empirical = p * (1.0 - p) / (density_at * density_at);
    Ok(empirical / (k + 1.0) + parametric_avar * k / (k + 1.0))
}

/// Estimator tags used in reports and simulation tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "drm")]
    Drm,
    #[serde(rename = "normal")]
    ParametricNormal,
    #[serde(rename = "normal-common")]
    ParametricNormalCommonVar,
    #[serde(rename = "exponential")]
    ParametricExponential,
    #[serde(rename = "empirical")]
    Empirical,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Drm => "drm",
            Method::ParametricNormal => "normal",
            Method::ParametricNormalCommonVar => "normal-common",
            Method::ParametricExponential => "exponential",
            Method::Empirical => "empirical",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "drm" => Ok(Method::Drm),
            "normal" => Ok(Method::ParametricNormal),
            "normal-common" => Ok(Method::ParametricNormalCommonVar),
            "exponential" => Ok(Method::ParametricExponential),
            "empirical" => Ok(Method::Empirical),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// A point estimate of ξ_p with a normal-theory confidence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileEstimate {
    pub level: f64,
    pub point: f64,
    /// sqrt(avar / n₁)
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: Method,
}

impl QuantileEstimate {
    /// `confidence` is the two-sided coverage, e.g. 0.95.
    pub fn from_avar(
        method: Method,
        level: f64,
        point: f64,
        avar: f64,
        n1: usize,
        confidence: f64,
    ) -> Result<Self> {
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "confidence must be in (0, 1), got {confidence}"
            )));
        }
        if !(avar >= 0.0) {
            return Err(Error::InvalidArgument(format!("variance must be nonnegative, got {avar}")));
        }
        let std_error = (avar / n1 as f64).sqrt();
        let z = normal::quantile(0.5 + 0.5 * confidence);
        Ok(Self {
            level,
            point,
            std_error,
            ci_low: point - z * std_error,
            ci_high: point + z * std_error,
            method,
        })
    }
}

/// DRM quantile estimate with a Silverman-KDE density plug-in from `x1`.
pub fn drm_quantile_estimate(
    fit: &DrmFit,
    data: &TwoSampleData,
    spec: &BasisSpec,
    p: f64,
    confidence: f64,
) -> Result<(QuantileEstimate, AsymptoticVariance)> {
    let g1 = estimate_g1(fit, data)?;
    let xi = drm_quantile(&g1, p)?;
    let kde = KdeModel::silverman(data.x1())?;
    let density = kde_density(&kde, xi);
    let avar = avar_quantile(fit, data, spec, p, density)?;
    let est = QuantileEstimate::from_avar(Method::Drm, p, xi, avar.value, data.n1(), confidence)?;
    Ok((est, avar))
}
