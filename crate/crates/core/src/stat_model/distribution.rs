use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use super::StatError;

/// Distribution family for a single filter contribution.
///
/// Every family has support inside `(0, inf)`, so a sampled contribution is
/// always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Uniform on `(location, location + scale)`, `location > 0`.
    UniformPositive,
    /// `exp(location + scale * Z)` with `Z ~ N(0, 1)`.
    LogNormal,
    /// `location + scale * E` with `E ~ Exp(1)`, `location > 0`.
    ShiftedExponential,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::UniformPositive => "uniform",
            Family::LogNormal => "lognormal",
            Family::ShiftedExponential => "shifted-exp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionSpec {
    family: Family,
    location: f64,
    scale: f64,
}

impl DistributionSpec {
    pub fn new(family: Family, location: f64, scale: f64) -> Result<Self, StatError> {
        if !location.is_finite() || !scale.is_finite() {
            return Err(StatError::InvalidDistribution(
                "location and scale must be finite".into(),
            ));
        }
        if scale <= 0.0 {
            return Err(StatError::InvalidDistribution(format!(
                "scale must be > 0, got {scale}"
            )));
        }
        match family {
            Family::UniformPositive | Family::ShiftedExponential if location <= 0.0 => {
                Err(StatError::InvalidDistribution(format!(
                    "{} support must stay away from 0 (location {location} <= 0)",
                    family.name()
                )))
            }
            _ => Ok(Self {
                family,
                location,
                scale,
            }),
        }
    }

    /// Uniform on `(lo, hi)`.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, StatError> {
        Self::new(Family::UniformPositive, lo, hi - lo)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        match self.family {
            Family::UniformPositive => self.location + 0.5 * self.scale,
            Family::LogNormal => (self.location + 0.5 * self.scale * self.scale).exp(),
            Family::ShiftedExponential => self.location + self.scale,
        }
    }

    pub fn variance(&self) -> f64 {
        let s2 = self.scale * self.scale;
        match self.family {
            Family::UniformPositive => s2 / 12.0,
            Family::LogNormal => s2.exp_m1() * (2.0 * self.location + s2).exp(),
            Family::ShiftedExponential => s2,
        }
    }

    /// Supremum of the support (`inf` for unbounded families).
    pub fn upper_bound(&self) -> f64 {
        match self.family {
            Family::UniformPositive => self.location + self.scale,
            _ => f64::INFINITY,
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            Family::UniformPositive => self.location + self.scale * rng.random::<f64>(),
            Family::LogNormal => {
                let z: f64 = rng.sample(StandardNormal);
                (self.location + self.scale * z).exp()
            }
            Family::ShiftedExponential => {
                let e: f64 = rng.sample(Exp1);
                self.location + self.scale * e
            }
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.family.name(), self.location, self.scale)
    }
}

/// Parses `family:location:scale`, e.g. `uniform:0.5:1.0` for U(0.5, 1.5).
impl FromStr for DistributionSpec {
    type Err = StatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(StatError::InvalidDistribution(format!(
                "expected family:location:scale, got `{s}`"
            )));
        }
        let family = match parts[0] {
            "uniform" | "uniform-positive" => Family::UniformPositive,
            "lognormal" => Family::LogNormal,
            "shifted-exp" | "shifted-exponential" => Family::ShiftedExponential,
            other => {
                return Err(StatError::InvalidDistribution(format!(
                    "unknown family `{other}`"
                )))
            }
        };
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| StatError::InvalidDistribution(format!("bad number `{t}`")))
        };
        Self::new(family, num(parts[1])?, num(parts[2])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    #[test]
    fn uniform_moments() {
        let d = DistributionSpec::uniform(0.5, 1.5).unwrap();
        assert_eq!(d.mean(), 1.0);
        assert_eq!(d.variance(), 1.0 / 12.0);
    }

    #[test]
    fn rejects_support_touching_zero() {
        assert!(DistributionSpec::new(Family::UniformPositive, 0.0, 1.0).is_err());
        assert!(DistributionSpec::new(Family::ShiftedExponential, -1.0, 1.0).is_err());
        assert!(DistributionSpec::new(Family::LogNormal, 0.0, 0.0).is_err());
        assert!(DistributionSpec::new(Family::LogNormal, -3.0, 0.5).is_ok());
    }

    #[test]
    fn parse_roundtrip() {
        let d: DistributionSpec = "lognormal:-0.1:0.3".parse().unwrap();
        assert_eq!(d.family(), Family::LogNormal);
        let again: DistributionSpec = d.to_string().parse().unwrap();
        assert_eq!(d, again);
        assert!("gamma:1:1".parse::<DistributionSpec>().is_err());
        assert!("uniform:1".parse::<DistributionSpec>().is_err());
    }

    #[test]
    fn sample_moments_match_closed_form() {
        let specs = [
            DistributionSpec::uniform(0.5, 1.5).unwrap(),
            DistributionSpec::new(Family::LogNormal, 0.0, 0.25).unwrap(),
            DistributionSpec::new(Family::ShiftedExponential, 0.2, 0.5).unwrap(),
        ];
        for d in specs {
            let mut rng = seeding::rng(7);
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
            assert!(xs.iter().all(|&x| x > 0.0));
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (d.variance() / n as f64).sqrt();
            assert!((mean - d.mean()).abs() < 5.0 * se, "{d}: mean {mean}");
            assert!((var / d.variance() - 1.0).abs() < 0.05, "{d}: var {var}");
        }
    }
}
