//! Saturation map, deadzone and the generalized sector predicate.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Saturation bound `ℓ`. `f64::INFINITY` means no saturation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaturationLevel(f64);

impl SaturationLevel {
    pub const UNBOUNDED: SaturationLevel = SaturationLevel(f64::INFINITY);

    pub fn new(ell: f64) -> Result<Self> {
        if ell.is_nan() || ell <= 0.0 {
            return Err(Error::invalid(
                "ell",
                format!("must be > 0 or \"inf\", got {ell}"),
            ));
        }
        Ok(Self(ell))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_unbounded(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for SaturationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_unbounded() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for SaturationLevel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_unbounded() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for SaturationLevel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let ell = match Raw::deserialize(d)? {
            Raw::Num(v) => v,
            Raw::Text(s) if s.eq_ignore_ascii_case("inf") => f64::INFINITY,
            Raw::Text(s) => return Err(de::Error::custom(format!("invalid ell `{s}`"))),
        };
        SaturationLevel::new(ell).map_err(de::Error::custom)
    }
}

pub fn sat_scalar(s: f64, level: SaturationLevel) -> f64 {
    s.clamp(-level.0, level.0)
}

/// Componentwise clamp to `[-ℓ, ℓ]`.
pub fn sat(u: &DVector<f64>, level: SaturationLevel) -> DVector<f64> {
    u.map(|s| sat_scalar(s, level))
}

/// `φ(u) = sat(u) - u`.
pub fn deadzone(u: &DVector<f64>, level: SaturationLevel) -> DVector<f64> {
    sat(u, level) - u
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SectorReport {
    /// `φ(Kz)ᵀ D (φ(Kz) + Cz)`
    pub value: f64,
    pub holds: bool,
    /// Whether `|((K - C)z)_j| ≤ ℓ` for every channel.
    pub hypothesis: bool,
}

/// Evaluates the generalized sector inequality at `z` with diagonal weight `d`.
pub fn sector_condition(
    z: &DVector<f64>,
    k: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &[f64],
    level: SaturationLevel,
) -> Result<SectorReport> {
    let m = k.nrows();
    if k.ncols() != z.len() || c.shape() != k.shape() || d.len() != m {
        return Err(Error::Dimension(format!(
            "sector: z {}, K {:?}, C {:?}, D {}",
            z.len(),
            k.shape(),
            c.shape(),
            d.len()
        )));
    }
    let kz = k * z;
    let cz = c * z;
    let phi = deadzone(&kz, level);
    let value: f64 = (0..m).map(|j| phi[j] * d[j] * (phi[j] + cz[j])).sum();
    let hypothesis = ((k - c) * z).iter().all(|v| v.abs() <= level.0);
    Ok(SectorReport {
        value,
        holds: value <= 1e-12,
        hypothesis,
    })
}

/// True when the sector inequality holds at `z`.
pub fn sector_holds(
    z: &DVector<f64>,
    k: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &[f64],
    level: SaturationLevel,
) -> Result<bool> {
    sector_condition(z, k, c, d, level).map(|r| r.holds)
}
