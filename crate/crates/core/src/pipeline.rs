//! CSV ingestion and with-replacement resampling studies on observed
//! populations.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::fit::TwoSampleData;
use crate::nonparametric::{check_level, sorted_copy, sorted_quantile};
use crate::sim::{
    estimate_all, in_pool, successes, summarize, ReplicateEstimates, RunOptions, SimulationTable,
    TableRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ValueTransform {
    #[default]
    None,
    Log,
}

/// Which columns hold the values and the population labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub value_column: String,
    pub group_column: String,
    pub transform: ValueTransform,
}

/// Values per population label, with row accounting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Populations {
    pub groups: BTreeMap<String, Vec<f64>>,
    pub rows_in: usize,
    pub rows_used: usize,
    pub rows_dropped: usize,
}

impl Populations {
    pub fn get(&self, label: &str) -> Result<&[f64]> {
        match self.groups.get(label) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::EmptyGroup(label.to_string())),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "N/A" | "na" | "NaN" | "nan" | "null" | "NULL")
}

pub fn ingest_csv(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<Populations> {
    ingest_reader(std::fs::File::open(path)?, spec)
}

/// Reads populations from CSV text. Rows whose value is missing, or not
/// positive under the log transform, are dropped and counted; a malformed
/// number is an error.
pub fn ingest_reader<R: Read>(reader: R, spec: &ColumnSpec) -> Result<Populations> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let vcol = column(&spec.value_column)?;
    let gcol = column(&spec.group_column)?;

    let mut pops = Populations::default();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        pops.rows_in += 1;
        let group = record.get(gcol).unwrap_or("").to_string();
        let cell = record.get(vcol).unwrap_or("");
        let entry = pops.groups.entry(group).or_default();
        if is_missing(cell) {
            pops.rows_dropped += 1;
            continue;
        }
        let raw: f64 = cell.parse().map_err(|_| Error::Parse {
            line,
            message: format!("`{cell}` is not a number"),
        })?;
        let value = match spec.transform {
            ValueTransform::None => raw,
            ValueTransform::Log if raw > 0.0 => raw.ln(),
            ValueTransform::Log => f64::NAN,
        };
        if value.is_finite() {
            entry.push(value);
            pops.rows_used += 1;
        } else {
            pops.rows_dropped += 1;
        }
    }
    if let Some((label, _)) = pops.groups.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::EmptyGroup(label.clone()));
    }
    Ok(pops)
}

/// A with-replacement resampling design over observed populations.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleStudy {
    /// Label of the large base population.
    pub base: String,
    pub targets: Vec<String>,
    pub n0_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub methods: Vec<Method>,
    /// One DRM column per basis.
    pub bases: Vec<BasisSpec>,
}

/// An estimator column of the study: a method, plus the basis for DRM.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyColumn {
    pub method: Method,
    pub basis: Option<BasisSpec>,
}

impl StudyColumn {
    pub fn label(&self) -> String {
        match &self.basis {
            Some(b) => format!("{}:{b}", self.method),
            None => self.method.to_string(),
        }
    }
}

impl ResampleStudy {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if self.targets.is_empty() || self.n0_grid.is_empty() || self.n_grid.is_empty() {
            return Err(Error::InvalidArgument("targets and size grids must be non-empty".into()));
        }
        if self.n0_grid.iter().chain(&self.n_grid).any(|&n| n < 2) {
            return Err(Error::InvalidArgument("sample sizes must be at least 2".into()));
        }
        if self.levels.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument("levels and methods must be non-empty".into()));
        }
        for &p in &self.levels {
            check_level(p)?;
        }
        if self.methods.contains(&Method::Drm) && self.bases.is_empty() {
            return Err(Error::InvalidArgument("the DRM method needs at least one basis".into()));
        }
        Ok(())
    }

    pub fn columns(&self) -> Vec<StudyColumn> {
        let mut cols = Vec::new();
        for &method in &self.methods {
            if method == Method::Drm {
                cols.extend(self.bases.iter().map(|b| StudyColumn {
                    method,
                    basis: Some(b.clone()),
                }));
            } else {
                cols.push(StudyColumn { method, basis: None });
            }
        }
        cols
    }

    /// Grid cells `(n0, n)` in row-major order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.n0_grid
            .iter()
            .flat_map(|&n0| self.n_grid.iter().map(move |&n| (n0, n)))
            .collect()
    }

    /// Resampled (base, target) pairs of replicate `r` in grid cell `cell`,
    /// one per target in order.
    pub fn replicate_samples(
        &self,
        pops: &Populations,
        cell: usize,
        r: u64,
    ) -> Result<Vec<TwoSampleData>> {
        let (n0, n) = self.cells()[cell];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((cell as u64) << 40) | r);
        let draw = |rng: &mut ChaCha8Rng, pop: &[f64], size: usize| -> Vec<f64> {
            (0..size).map(|_| pop[rng.random_range(0..pop.len())]).collect()
        };
        let base = draw(&mut rng, pops.get(&self.base)?, n0);
        self.targets
            .iter()
            .map(|t| {
                let x1 = draw(&mut rng, pops.get(t)?, n);
                TwoSampleData::new(base.clone(), x1)
            })
            .collect()
    }
}

/// Estimates `[target][level][column]` for one replicate.
fn replicate_estimates(
    study: &ResampleStudy,
    columns: &[StudyColumn],
    pops: &Populations,
    cell: usize,
    r: u64,
    run: &RunOptions,
) -> Result<Vec<ReplicateEstimates>> {
    let fallback = BasisSpec::linear();
    study
        .replicate_samples(pops, cell, r)?
        .iter()
        .map(|data| {
            let mut by_level = vec![Vec::with_capacity(columns.len()); study.levels.len()];
            for col in columns {
                let basis = col.basis.as_ref().unwrap_or(&fallback);
                let est = estimate_all(data, basis, &study.levels, &[col.method], &run.solver)?;
                for (slot, values) in by_level.iter_mut().zip(est) {
                    slot.push(values[0]);
                }
            }
            Ok(by_level)
        })
        .collect()
}

/// Scaled absolute bias, variance and MSE per (cell, level, column),
/// averaged without weights across targets. Truth for each target is the
/// type-1 quantile of its full population.
pub fn run_resample_study(
    study: &ResampleStudy,
    pops: &Populations,
    run: &RunOptions,
) -> Result<SimulationTable> {
    study.validate()?;
    pops.get(&study.base)?;
    let truths: Vec<Vec<f64>> = study
        .targets
        .iter()
        .map(|t| {
            let sorted = sorted_copy(pops.get(t)?);
            Ok(study.levels.iter().map(|&p| sorted_quantile(&sorted, p)).collect())
        })
        .collect::<Result<_>>()?;
    let columns = study.columns();
    let mut rows = Vec::new();

    for (cell, (n0, n)) in study.cells().into_iter().enumerate() {
        let outcomes: Vec<Result<Vec<ReplicateEstimates>>> = in_pool(run.workers, || {
            (0..study.reps)
                .into_par_iter()
                .map(|r| replicate_estimates(study, &columns, pops, cell, r as u64, run))
                .collect()
        })?;
        // Flatten targets into one estimate vector so the shared failure
        // accounting applies per replicate.
        let flat = outcomes
            .into_iter()
            .map(|o| o.map(|per_target| per_target.into_iter().flatten().collect()))
            .collect();
        let (ok, fail_frac) = successes(flat)?;
        let id = format!("n0={n0}/n={n}");
        let nl = study.levels.len();

        for (l, &p) in study.levels.iter().enumerate() {
            for (c, col) in columns.iter().enumerate() {
                let per_target: Vec<_> = truths
                    .iter()
                    .enumerate()
                    .map(|(t, truth)| {
                        let est: Vec<f64> = ok.iter().map(|rep| rep[t * nl + l][c]).collect();
                        summarize(&est, truth[l], n)
                    })
                    .collect();
                let m = per_target.len() as f64;
                let mean_bias = per_target.iter().map(|s| s.scaled_bias).sum::<f64>() / m;
                let rms_bias = (per_target.iter().map(|s| s.scaled_bias.powi(2)).sum::<f64>() / m).sqrt();
                rows.push(TableRow {
                    scenario_id: id.clone(),
                    level: p,
                    method: col.method,
                    basis: col.basis.clone(),
                    scaled_bias: rms_bias.copysign(mean_bias),
                    scaled_var: per_target.iter().map(|s| s.scaled_var).sum::<f64>() / m,
                    scaled_mse: per_target.iter().map(|s| s.scaled_mse).sum::<f64>() / m,
                    abs_bias: per_target.iter().map(|s| s.scaled_bias.abs()).sum::<f64>() / m,
                    fail_frac,
                });
            }
        }
    }
    Ok(SimulationTable { rows })
}
