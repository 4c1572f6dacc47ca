//! Deterministic Monte Carlo comparison of quantile estimators.
//!
//! Replicate `r` of a scenario draws its samples from the ChaCha8 stream
//! `r` under the scenario seed, so results do not depend on how replicates
//! are scheduled across worker threads. Aggregation walks replicates in
//! index order.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::estimators::{drm_quantile, estimate_g1, Method};
use crate::fit::{fit_mele, SolverOptions, TwoSampleData};
use crate::nonparametric::{check_level, sorted_copy, sorted_quantile};
use crate::parametric::{fit_parametric, parametric_quantile_point, FamilyTag};
use crate::normal;

/// Population used to generate one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Generator {
    Normal { mu: f64, sigma: f64 },
    Exponential { mean: f64 },
}

impl Generator {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Generator::Normal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
            Generator::Exponential { mean } => mean > 0.0 && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid generator {self:?}")))
        }
    }

    /// Inverse-CDF draw from a uniform in (0, 1).
    #[inline]
    fn inverse_cdf(&self, u: f64) -> f64 {
        match *self {
            Generator::Normal { mu, sigma } => mu + sigma * normal::quantile(u),
            Generator::Exponential { mean } => -mean * u.ln(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| self.inverse_cdf(rng.sample(rand::distr::Open01)))
            .collect()
    }

    pub fn density(&self, x: f64) -> f64 {
        match *self {
            Generator::Normal { mu, sigma } => normal::pdf((x - mu) / sigma) / sigma,
            Generator::Exponential { mean } if x >= 0.0 => (-x / mean).exp() / mean,
            Generator::Exponential { .. } => 0.0,
        }
    }

    /// Asymptotic variance of the per-sample parametric MLE quantile.
    pub fn parametric_quantile_avar(&self, p: f64) -> Result<f64> {
        check_level(p)?;
        Ok(match *self {
            Generator::Normal { sigma, .. } => {
                let z = normal::quantile(p);
                sigma * sigma * (1.0 + z * z / 2.0)
            }
            Generator::Exponential { mean } => {
                let l = (-p).ln_1p();
                mean * mean * l * l
            }
        })
    }

    fn is_positive(&self) -> bool {
        matches!(self, Generator::Exponential { .. })
    }
}

/// Analytic p-quantile of a generator.
pub fn true_quantile(gen: &Generator, p: f64) -> Result<f64> {
    check_level(p)?;
    Ok(match *gen {
        Generator::Normal { mu, sigma } => mu + sigma * normal::quantile(p),
        Generator::Exponential { mean } => -mean * (-p).ln_1p(),
    })
}

/// Limiting variance of the DRM quantile at each k when both populations
/// equal `gen`.
pub fn corollary_curve(gen: &Generator, p: f64, k_grid: &[f64]) -> Result<Vec<f64>> {
    gen.validate()?;
    let xi = true_quantile(gen, p)?;
    let density = gen.density(xi);
    let parametric = gen.parametric_quantile_avar(p)?;
    k_grid
        .iter()
        .map(|&k| {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidArgument(format!("k must be positive, got {k}")));
            }
            crate::estimators::corollary_variance(k, p, density, parametric)
        })
        .collect()
}

/// A Monte Carlo design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub generator0: Generator,
    pub generator1: Generator,
    pub n1: usize,
    /// n₀ = ratio · n₁
    pub ratio: f64,
    pub basis: BasisSpec,
    pub levels: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
}

impl Scenario {
    pub fn n0(&self) -> usize {
        (self.ratio * self.n1 as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.generator0.validate()?;
        self.generator1.validate()?;
        if self.reps < 1 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if self.n1 < 2 {
            return Err(Error::InvalidArgument("n1 must be at least 2".into()));
        }
        let n0 = self.ratio * self.n1 as f64;
        if !(self.ratio > 0.0) || (n0 - n0.round()).abs() > 1e-9 || n0.round() < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "ratio {} times n1 {} is not a positive integer",
                self.ratio, self.n1
            )));
        }
        if self.levels.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument("levels and methods must be non-empty".into()));
        }
        for &p in &self.levels {
            check_level(p)?;
        }
        if self.methods.contains(&Method::ParametricExponential)
            && !(self.generator0.is_positive() && self.generator1.is_positive())
        {
            return Err(Error::UnsupportedCombination(
                "the exponential method needs positive generators".into(),
            ));
        }
        Ok(())
    }

    /// The two samples of replicate `r`.
    pub fn replicate_samples(&self, r: u64) -> TwoSampleData {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(r);
        let x0 = self.generator0.sample(&mut rng, self.n0());
        let x1 = self.generator1.sample(&mut rng, self.n1);
        TwoSampleData::new(x0, x1).expect("generated samples are finite and non-empty")
    }
}

/// Knobs that affect how, not what, a study runs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    pub solver: SolverOptions,
}

/// Estimates of one replicate, indexed `[level][method]`.
pub type ReplicateEstimates = Vec<Vec<f64>>;

/// Quantile estimates for every (level, method) pair on one data set.
pub(crate) fn estimate_all(
    data: &TwoSampleData,
    basis: &BasisSpec,
    levels: &[f64],
    methods: &[Method],
    solver: &SolverOptions,
) -> Result<ReplicateEstimates> {
    let mut per_method: Vec<Vec<f64>> = Vec::with_capacity(methods.len());
    for &method in methods {
        let values = match method {
            Method::Drm => {
                let fit = fit_mele(data, basis, solver)?;
                let g1 = estimate_g1(&fit, data)?;
                levels
                    .iter()
                    .map(|&p| drm_quantile(&g1, p))
                    .collect::<Result<Vec<_>>>()?
            }
            Method::Empirical => {
                let sorted = sorted_copy(data.x1());
                levels.iter().map(|&p| sorted_quantile(&sorted, p)).collect()
            }
            parametric => {
                let tag = FamilyTag::from_method(parametric).expect("parametric method");
                let fam = fit_parametric(data, tag)?;
                levels
                    .iter()
                    .map(|&p| parametric_quantile_point(&fam, p))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        per_method.push(values);
    }
    Ok((0..levels.len())
        .map(|l| per_method.iter().map(|v| v[l]).collect())
        .collect())
}

/// Runs every replicate; entry `r` is replicate `r`'s outcome.
pub fn run_replicates(s: &Scenario, run: &RunOptions) -> Result<Vec<Result<ReplicateEstimates>>> {
    s.validate()?;
    let one = |r: usize| {
        let data = s.replicate_samples(r as u64);
        estimate_all(&data, &s.basis, &s.levels, &s.methods, &run.solver)
    };
    in_pool(run.workers, || (0..s.reps).into_par_iter().map(one).collect())
}

pub(crate) fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidArgument("workers must be at least 1".into())),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))
            .map(|pool| pool.install(f)),
    }
}

/// One aggregated row of a simulation table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub scenario_id: String,
    pub level: f64,
    pub method: Method,
    /// Basis of a DRM column when a study compares several.
    pub basis: Option<BasisSpec>,
    /// √n₁ · mean(estimate − truth)
    pub scaled_bias: f64,
    /// n₁ · var(estimate), divisor = number of successful replicates
    pub scaled_var: f64,
    /// n₁ · mean((estimate − truth)²)
    pub scaled_mse: f64,
    /// |scaled bias|, or its average over targets in resampling studies
    pub abs_bias: f64,
    pub fail_frac: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationTable {
    pub rows: Vec<TableRow>,
}

impl TableRow {
    /// Method name, suffixed with `:<basis>` for DRM columns of a study.
    pub fn method_label(&self) -> String {
        match &self.basis {
            Some(b) => format!("{}:{b}", self.method),
            None => self.method.to_string(),
        }
    }
}

impl SimulationTable {
    pub fn row(&self, scenario_id: &str, level: f64, method: Method) -> Option<&TableRow> {
        self.rows
            .iter()
            .find(|r| r.scenario_id == scenario_id && r.level == level && r.method == method)
    }

    /// CSV with columns `scenario_id,p,method,scaled_bias,scaled_var,scaled_mse,fail_frac`,
    /// plus a trailing `abs_bias` column when requested.
    pub fn write_csv<W: Write>(&self, out: W, with_abs_bias: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["scenario_id", "p", "method", "scaled_bias", "scaled_var", "scaled_mse", "fail_frac"];
        if with_abs_bias {
            header.push("abs_bias");
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.scenario_id.clone(),
                r.level.to_string(),
                r.method_label(),
                r.scaled_bias.to_string(),
                r.scaled_var.to_string(),
                r.scaled_mse.to_string(),
                r.fail_frac.to_string(),
            ];
            if with_abs_bias {
                rec.push(r.abs_bias.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Moments of estimation errors scaled by the sample size `n`.
pub(crate) struct ErrorSummary {
    pub scaled_bias: f64,
    pub scaled_var: f64,
    pub scaled_mse: f64,
}

pub(crate) fn summarize(estimates: &[f64], truth: f64, n: usize) -> ErrorSummary {
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / r;
    let mse = estimates.iter().map(|e| (e - truth) * (e - truth)).sum::<f64>() / r;
    let nf = n as f64;
    ErrorSummary {
        scaled_bias: nf.sqrt() * (mean - truth),
        scaled_var: nf * var,
        scaled_mse: nf * mse,
    }
}

/// Splits replicate outcomes into successes, enforcing the 1% failure limit.
pub(crate) fn successes(
    outcomes: Vec<Result<ReplicateEstimates>>,
) -> Result<(Vec<ReplicateEstimates>, f64)> {
    let total = outcomes.len();
    let ok: Vec<_> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let failed = total - ok.len();
    let too_many = failed > 0 && failed as f64 >= 0.01 * total as f64;
    if ok.is_empty() || too_many {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok((ok, failed as f64 / total as f64))
}

/// Simulated scaled bias, variance and MSE for every level and method.
pub fn run_scenario(s: &Scenario, run: &RunOptions) -> Result<SimulationTable> {
    let outcomes = run_replicates(s, run)?;
    let (ok, fail_frac) = successes(outcomes)?;
    let mut rows = Vec::with_capacity(s.levels.len() * s.methods.len());
    for (l, &p) in s.levels.iter().enumerate() {
        let truth = true_quantile(&s.generator1, p)?;
        for (m, &method) in s.methods.iter().enumerate() {
            let est: Vec<f64> = ok.iter().map(|rep| rep[l][m]).collect();
            let sum = summarize(&est, truth, s.n1);
            rows.push(TableRow {
                scenario_id: s.id.clone(),
                level: p,
                method,
                basis: None,
                scaled_bias: sum.scaled_bias,
                scaled_var: sum.scaled_var,
                scaled_mse: sum.scaled_mse,
                abs_bias: sum.scaled_bias.abs(),
                fail_frac,
            });
        }
    }
    Ok(SimulationTable { rows })
}

/// Per-replicate remainder of the linearization
/// ξ̂ − ξ − (G₁(ξ) − Ĝ₁(ξ)) / g₁(ξ) of the DRM quantile at level `p`.
///
/// Uses the scenario's basis, seed and sample sizes; its levels and
/// methods are ignored.
pub fn bahadur_remainders(s: &Scenario, p: f64, run: &RunOptions) -> Result<Vec<f64>> {
    s.validate()?;
    let xi = true_quantile(&s.generator1, p)?;
    let g = s.generator1.density(xi);
    let one = |r: usize| -> Result<f64> {
        let data = s.replicate_samples(r as u64);
        let fit = fit_mele(&data, &s.basis, &run.solver)?;
        let g1 = estimate_g1(&fit, &data)?;
        let xi_hat = drm_quantile(&g1, p)?;
        Ok(xi_hat - xi - (p - g1.eval(xi)) / g)
    };
    let outcomes: Vec<Result<f64>> =
        in_pool(run.workers, || (0..s.reps).into_par_iter().map(one).collect())?;
    let total = outcomes.len();
    let ok: Vec<f64> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
    let failed = total - ok.len();
    if ok.is_empty() || (failed > 0 && failed as f64 >= 0.01 * total as f64) {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(ok)
}
