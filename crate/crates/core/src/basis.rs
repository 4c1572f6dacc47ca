//! Basis functions q(x) of the density ratio model.
//!
//! Every basis starts with the constant 1 followed by an ordered list of
//! scalar transforms, so `q(x) = (1, t₁(x), …, t_{d−1}(x))`. The tilt
//! `exp{θᵀq(x)}` therefore separates into a normalizing intercept `α` and a
//! shape part `βᵀq₋(x)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar transform applied after the implicit constant component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    Square,
    Log,
    Sqrt,
    Reciprocal,
}

impl Transform {
    #[inline]
    fn apply(self, x: f64) -> std::result::Result<f64, &'static str> {
        match self {
            Transform::Identity => Ok(x),
            Transform::Square => Ok(x * x),
            Transform::Log if x > 0.0 => Ok(x.ln()),
            Transform::Log => Err("log requires x > 0"),
            Transform::Sqrt if x >= 0.0 => Ok(x.sqrt()),
            Transform::Sqrt => Err("sqrt requires x >= 0"),
            Transform::Reciprocal if x != 0.0 => Ok(1.0 / x),
            Transform::Reciprocal => Err("reciprocal requires x != 0"),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Transform::Identity => "x",
            Transform::Square => "x2",
            Transform::Log => "log",
            Transform::Sqrt => "sqrt",
            Transform::Reciprocal => "inv",
        }
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "x" | "identity" => Ok(Transform::Identity),
            "x2" | "square" => Ok(Transform::Square),
            "log" => Ok(Transform::Log),
            "sqrt" => Ok(Transform::Sqrt),
            "inv" | "reciprocal" => Ok(Transform::Reciprocal),
            other => Err(Error::InvalidArgument(format!("unknown transform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BasisKind {
    /// q(x) = (1, x)
    Linear,
    /// q(x) = (1, x, x²)
    Quadratic,
    /// q(x) = (1, x, log x)
    LinearLog,
    Custom(Vec<Transform>),
}

/// The prespecified basis q(x), with `evaluate(x)[0] == 1` always.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BasisSpec {
    kind: BasisKind,
    transforms: Vec<Transform>,
}

impl BasisSpec {
    pub fn linear() -> Self {
        Self {
            kind: BasisKind::Linear,
            transforms: vec![Transform::Identity],
        }
    }

    pub fn quadratic() -> Self {
        Self {
            kind: BasisKind::Quadratic,
            transforms: vec![Transform::Identity, Transform::Square],
        }
    }

    pub fn linear_log() -> Self {
        Self {
            kind: BasisKind::LinearLog,
            transforms: vec![Transform::Identity, Transform::Log],
        }
    }

    /// A basis `(1, t₁(x), …)`. At least one transform is required.
    pub fn custom(transforms: Vec<Transform>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::InvalidArgument(
                "a basis needs at least one transform besides the constant".into(),
            ));
        }
        Ok(Self {
            kind: BasisKind::Custom(transforms.clone()),
            transforms,
        })
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    /// Total length of q(x), including the constant.
    pub fn dimension(&self) -> usize {
        self.transforms.len() + 1
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    /// Writes q(x) into `out`, which must have length `dimension()`.
    #[inline]
    pub(crate) fn fill(&self, x: f64, out: &mut [f64]) -> std::result::Result<(), &'static str> {
        debug_assert_eq!(out.len(), self.dimension());
        out[0] = 1.0;
        for (slot, t) in out[1..].iter_mut().zip(&self.transforms) {
            *slot = t.apply(x)?;
        }
        Ok(())
    }

    pub fn evaluate(&self, x: f64) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dimension());
        self.fill(x, out.as_mut_slice())
            .map_err(|reason| Error::Domain { value: x, reason })?;
        Ok(out)
    }

    /// Row `i` of the result is `q(xs[i])`.
    pub fn evaluate_matrix(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dimension();
        let mut m = DMatrix::zeros(xs.len(), d);
        let mut row = vec![0.0; d];
        for (i, &x) in xs.iter().enumerate() {
            self.fill(x, &mut row).map_err(|reason| Error::DomainAt {
                index: i,
                value: x,
                reason,
            })?;
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            BasisKind::Linear => f.write_str("linear"),
            BasisKind::Quadratic => f.write_str("quadratic"),
            BasisKind::LinearLog => f.write_str("linear-log"),
            BasisKind::Custom(ts) => {
                let names: Vec<_> = ts.iter().map(|t| t.name()).collect();
                write!(f, "custom:{}", names.join(","))
            }
        }
    }
}

impl FromStr for BasisSpec {
    type Err = Error;

    /// Accepts `linear`, `quadratic`, `linear-log`, or `custom:<t>,<t>,…`
    /// with transforms from `x`, `x2`, `log`, `sqrt`, `inv`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear" => Ok(Self::linear()),
            "quadratic" => Ok(Self::quadratic()),
            "linear-log" => Ok(Self::linear_log()),
            other => match other.strip_prefix("custom:") {
                Some(list) => Self::custom(
                    list.split(',')
                        .map(str::parse)
                        .collect::<Result<Vec<_>>>()?,
                ),
                None => Err(Error::InvalidArgument(format!("unknown basis `{other}`"))),
            },
        }
    }
}

impl TryFrom<String> for BasisSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BasisSpec> for String {
    fn from(b: BasisSpec) -> Self {
        b.to_string()
    }
}
