//! Parametric MLE baselines: two-sample normal (free or common variance)
//! and exponential models, with closed-form quantile estimators.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisSpec};
use crate::error::{Error, Result};
use crate::estimators::{Method, QuantileEstimate};
use crate::fit::TwoSampleData;
use crate::nonparametric::check_level;
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    #[serde(rename = "normal")]
    NormalFreeVar,
    #[serde(rename = "normal-common")]
    NormalCommonVar,
    #[serde(rename = "exponential")]
    Exponential,
}

impl FamilyTag {
    pub fn method(self) -> Method {
        match self {
            FamilyTag::NormalFreeVar => Method::ParametricNormal,
            FamilyTag::NormalCommonVar => Method::ParametricNormalCommonVar,
            FamilyTag::Exponential => Method::ParametricExponential,
        }
    }

    pub fn from_method(method: Method) -> Option<Self> {
        match method {
            Method::ParametricNormal => Some(FamilyTag::NormalFreeVar),
            Method::ParametricNormalCommonVar => Some(FamilyTag::NormalCommonVar),
            Method::ParametricExponential => Some(FamilyTag::Exponential),
            Method::Drm | Method::Empirical => None,
        }
    }
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method().as_str())
    }
}

impl FromStr for FamilyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<Method>()
            .ok()
            .and_then(FamilyTag::from_method)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown family `{s}`")))
    }
}

/// Fitted two-sample parametric model.
///
/// For `Exponential` the `mu` fields are the means and the `sigma` fields
/// are unused (set equal to the means). For `NormalCommonVar` both sigmas
/// hold the pooled estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametricFamily {
    pub tag: FamilyTag,
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub n0: usize,
    pub n1: usize,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sum_sq_dev(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Maximum likelihood fit of the chosen family to both samples.
///
/// Variances use divisor nₖ. The common-variance model pools squared
/// deviations from each sample's own mean over n = n₀ + n₁.
pub fn fit_parametric(data: &TwoSampleData, tag: FamilyTag) -> Result<ParametricFamily> {
    let (x0, x1) = (data.x0(), data.x1());
    let (m0, m1) = (mean(x0), mean(x1));
    let (n0, n1) = (data.n0(), data.n1());
    let fam = match tag {
        FamilyTag::Exponential => {
            if x0.iter().chain(x1).any(|&x| x <= 0.0) {
                return Err(Error::Domain {
                    value: x0.iter().chain(x1).copied().fold(f64::INFINITY, f64::min),
                    reason: "exponential model requires positive data",
                });
            }
            ParametricFamily {
                tag,
                mu0: m0,
                sigma0: m0,
                mu1: m1,
                sigma1: m1,
                n0,
                n1,
            }
        }
        FamilyTag::NormalFreeVar => {
            if n0 < 2 || n1 < 2 {
                return Err(Error::DegenerateSample(
                    "variance estimation needs at least two points per sample".into(),
                ));
            }
            let s0 = (sum_sq_dev(x0, m0) / n0 as f64).sqrt();
            let s1 = (sum_sq_dev(x1, m1) / n1 as f64).sqrt();
            if !(s0 > 0.0 && s1 > 0.0) {
                return Err(Error::DegenerateSample("sample has zero variance".into()));
            }
            ParametricFamily {
                tag,
                mu0: m0,
                sigma0: s0,
                mu1: m1,
                sigma1: s1,
                n0,
                n1,
            }
        }
        FamilyTag::NormalCommonVar => {
            if n0 + n1 < 3 {
                return Err(Error::DegenerateSample(
                    "pooled variance needs at least three points".into(),
                ));
            }
            let s = ((sum_sq_dev(x0, m0) + sum_sq_dev(x1, m1)) / (n0 + n1) as f64).sqrt();
            if !(s > 0.0) {
                return Err(Error::DegenerateSample("pooled variance is zero".into()));
            }
            ParametricFamily {
                tag,
                mu0: m0,
                sigma0: s,
                mu1: m1,
                sigma1: s,
                n0,
                n1,
            }
        }
    };
    Ok(fam)
}

/// Point value of the MLE quantile ξ̃_p of the target population.
pub fn parametric_quantile_point(family: &ParametricFamily, p: f64) -> Result<f64> {
    check_level(p)?;
    Ok(match family.tag {
        FamilyTag::Exponential => -family.mu1 * (-p).ln_1p(),
        FamilyTag::NormalFreeVar | FamilyTag::NormalCommonVar => {
            family.mu1 + normal::quantile(p) * family.sigma1
        }
    })
}

/// Asymptotic variance of √n₁(ξ̃_p − ξ_p) at the fitted parameters.
pub fn parametric_quantile_avar(family: &ParametricFamily, p: f64) -> Result<f64> {
    check_level(p)?;
    Ok(match family.tag {
        FamilyTag::Exponential => {
            let l = (-p).ln_1p();
            family.mu1 * family.mu1 * l * l
        }
        FamilyTag::NormalFreeVar => {
            let z = normal::quantile(p);
            family.sigma1 * family.sigma1 * (1.0 + z * z / 2.0)
        }
        FamilyTag::NormalCommonVar => {
            // the pooled σ̃ carries n = n₀ + n₁ points of information
            let z = normal::quantile(p);
            let share = family.n1 as f64 / (family.n0 + family.n1) as f64;
            family.sigma1 * family.sigma1 * (1.0 + z * z * share / 2.0)
        }
    })
}

/// MLE quantile with its plug-in standard error and a 95% interval.
pub fn parametric_quantile(family: &ParametricFamily, p: f64) -> Result<QuantileEstimate> {
    parametric_quantile_with(family, p, 0.95)
}

pub fn parametric_quantile_with(
    family: &ParametricFamily,
    p: f64,
    confidence: f64,
) -> Result<QuantileEstimate> {
    let point = parametric_quantile_point(family, p)?;
    let avar = parametric_quantile_avar(family, p)?;
    QuantileEstimate::from_avar(family.tag.method(), p, point, avar, family.n1, confidence)
}

/// G̃₁(x), the fitted target CDF.
pub fn parametric_cdf(family: &ParametricFamily, x: f64) -> f64 {
    match family.tag {
        FamilyTag::Exponential if x <= 0.0 => 0.0,
        FamilyTag::Exponential => -(-x / family.mu1).exp_m1(),
        FamilyTag::NormalFreeVar | FamilyTag::NormalCommonVar => {
            normal::cdf((x - family.mu1) / family.sigma1)
        }
    }
}

/// The DRM tilt θ = (α, β) implied by the fitted pair of distributions,
/// i.e. log g₁(x)/g₀(x) = θᵀq(x).
pub fn theta_from_submodel(family: &ParametricFamily, spec: &BasisSpec) -> Result<DVector<f64>> {
    let (m0, m1) = (family.mu0, family.mu1);
    let unsupported = || {
        Err(Error::UnsupportedCombination(format!(
            "family {} with basis {spec}",
            family.tag
        )))
    };
    match (family.tag, spec.kind()) {
        (FamilyTag::Exponential, BasisKind::Linear) => {
            Ok(DVector::from_vec(vec![(m0 / m1).ln(), 1.0 / m0 - 1.0 / m1]))
        }
        (FamilyTag::NormalCommonVar, BasisKind::Linear) => {
            let v = family.sigma1 * family.sigma1;
            Ok(DVector::from_vec(vec![(m0 * m0 - m1 * m1) / (2.0 * v), (m1 - m0) / v]))
        }
        (FamilyTag::NormalFreeVar | FamilyTag::NormalCommonVar, BasisKind::Quadratic) => {
            let (v0, v1) = (family.sigma0 * family.sigma0, family.sigma1 * family.sigma1);
            let alpha = (family.sigma0 / family.sigma1).ln() - m1 * m1 / (2.0 * v1) + m0 * m0 / (2.0 * v0);
            Ok(DVector::from_vec(vec![
                alpha,
                m1 / v1 - m0 / v0,
                0.5 / v0 - 0.5 / v1,
            ]))
        }
        _ => unsupported(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn data(x0: &[f64], x1: &[f64]) -> TwoSampleData {
        TwoSampleData::new(x0.to_vec(), x1.to_vec()).unwrap()
    }

    fn normal_family(mu1: f64, sigma1: f64) -> ParametricFamily {
        ParametricFamily {
            tag: FamilyTag::NormalFreeVar,
            mu0: 0.0,
            sigma0: 1.0,
            mu1,
            sigma1,
            n0: 100,
            n1: 100,
        }
    }

    fn exp_family(mu0: f64, mu1: f64) -> ParametricFamily {
        ParametricFamily {
            tag: FamilyTag::Exponential,
            mu0,
            sigma0: mu0,
            mu1,
            sigma1: mu1,
            n0: 100,
            n1: 100,
        }
    }

    #[test]
    fn fits_by_hand() {
        let f = fit_parametric(&data(&[0.0, 5.0], &[1.0, 3.0]), FamilyTag::NormalFreeVar).unwrap();
        assert_eq!((f.mu1, f.sigma1), (2.0, 1.0));
        let f = fit_parametric(&data(&[1.0], &[2.0, 4.0]), FamilyTag::Exponential).unwrap();
        assert_eq!(f.mu1, 3.0);
        let f = fit_parametric(&data(&[0.0, 2.0], &[10.0, 12.0]), FamilyTag::NormalCommonVar).unwrap();
        assert_eq!((f.mu0, f.mu1), (1.0, 11.0));
        assert_eq!(f.sigma1 * f.sigma1, 1.0);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_parametric(&data(&[1.0, 2.0], &[3.0, 3.0]), FamilyTag::NormalFreeVar),
            Err(Error::DegenerateSample(_))
        ));
        assert!(matches!(
            fit_parametric(&data(&[1.0, 0.0], &[3.0]), FamilyTag::Exponential),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn quantile_points() {
        assert_eq!(parametric_quantile_point(&normal_family(0.0, 1.0), 0.5).unwrap(), 0.0);
        let e = parametric_quantile_point(&exp_family(1.0, 1.0), 0.99).unwrap();
        assert!((e - 4.605_170_185_988_091).abs() < 1e-12);
        let n = parametric_quantile_point(&normal_family(2.0, 2f64.sqrt()), 0.05).unwrap();
        assert!((n - (2.0 - 1.644_853_626_951_472_2 * 2f64.sqrt())).abs() < 1e-12);
        assert!((n + 0.3262).abs() < 1e-4);
        assert!(parametric_quantile_point(&normal_family(0.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn avar_values() {
        assert_eq!(parametric_quantile_avar(&normal_family(0.0, 1.0), 0.5).unwrap(), 1.0);
        let v = parametric_quantile_avar(&normal_family(0.0, 1.0), 0.01).unwrap();
        assert!((v - 3.7059).abs() < 1e-3, "{v}");
        let v = parametric_quantile_avar(&exp_family(1.0, 1.0), 0.99).unwrap();
        assert!((v - 21.2076).abs() < 1e-3, "{v}");
        // common variance with n₀ ≫ n₁ approaches σ²
        let mut f = normal_family(0.0, 1.0);
        f.tag = FamilyTag::NormalCommonVar;
        f.n0 = 1_000_000;
        f.n1 = 10;
        assert!((parametric_quantile_avar(&f, 0.01).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn cdf_values() {
        assert_eq!(parametric_cdf(&normal_family(0.0, 1.0), 0.0), 0.5);
        assert_eq!(parametric_cdf(&exp_family(1.0, 1.0), 0.0), 0.0);
        assert!((parametric_cdf(&exp_family(1.0, 2.0), 2.0 * 2f64.ln()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn submodel_tilts() {
        let t = theta_from_submodel(&normal_family(0.0, 1.0), &BasisSpec::quadratic()).unwrap();
        assert!(t.amax() < 1e-15);

        let mut f = normal_family(1.0, 1.0);
        f.tag = FamilyTag::NormalCommonVar;
        let t = theta_from_submodel(&f, &BasisSpec::linear()).unwrap();
        assert_eq!(t.as_slice(), &[-0.5, 1.0]);

        let t = theta_from_submodel(&exp_family(1.0, 2.0), &BasisSpec::linear()).unwrap();
        assert!((t[0] - 0.5f64.ln()).abs() < 1e-15);
        assert!((t[1] - 0.5).abs() < 1e-15);

        assert!(matches!(
            theta_from_submodel(&exp_family(1.0, 2.0), &BasisSpec::quadratic()),
            Err(Error::UnsupportedCombination(_))
        ));
    }

    #[test]
    fn free_variance_tilt_reproduces_log_density_ratio() {
        let f = ParametricFamily {
            tag: FamilyTag::NormalFreeVar,
            mu0: 1.0,
            sigma0: 1.5f64.sqrt(),
            mu1: 2.0,
            sigma1: 2f64.sqrt(),
            n0: 10,
            n1: 10,
        };
        let t = theta_from_submodel(&f, &BasisSpec::quadratic()).unwrap();
        for x in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let log_ratio = (normal::pdf((x - f.mu1) / f.sigma1) / f.sigma1).ln()
                - (normal::pdf((x - f.mu0) / f.sigma0) / f.sigma0).ln();
            let tilt = t[0] + t[1] * x + t[2] * x * x;
            assert!((log_ratio - tilt).abs() < 1e-12);
        }
    }

    fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    proptest! {
        #[test]
        fn quantile_inverts_fitted_cdf(
            mu in -5.0f64..5.0,
            sigma in 0.1f64..5.0,
            p in 0.001f64..0.999,
        ) {
            let f = normal_family(mu, sigma);
            let q = parametric_quantile_point(&f, p).unwrap();
            let numeric = bisect(|x| parametric_cdf(&f, x), p, mu - 20.0 * sigma, mu + 20.0 * sigma);
            prop_assert!((q - numeric).abs() < 1e-10);

            let e = exp_family(1.0, sigma);
            let q = parametric_quantile_point(&e, p).unwrap();
            let numeric = bisect(|x| parametric_cdf(&e, x), p, 0.0, 100.0 * sigma);
            prop_assert!((q - numeric).abs() < 1e-10);
        }

        #[test]
        fn normal_avar_symmetric_in_level(sigma in 0.1f64..5.0, p in 0.001f64..0.5) {
            let f = normal_family(0.0, sigma);
            let a = parametric_quantile_avar(&f, p).unwrap();
            let b = parametric_quantile_avar(&f, 1.0 - p).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a);
        }
    }
}
