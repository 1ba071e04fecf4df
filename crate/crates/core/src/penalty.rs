//! Lasso, SCAD and MCP penalties with √n scaling.
//!
//! SCAD and MCP are defined through their derivatives, with the indicator
//! thresholds applied to √n|β|. Penalty values are the closed-form integrals of
//! those derivatives from 0 to |β|.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::ZERO_THRESHOLD;

pub const DEFAULT_SCAD_A: f64 = 3.7;
pub const DEFAULT_MCP_A: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyFamily {
    Lasso,
    Scad,
    Mcp,
}

impl PenaltyFamily {
    pub fn default_a(self) -> f64 {
        match self {
            PenaltyFamily::Lasso => 0.0,
            PenaltyFamily::Scad => DEFAULT_SCAD_A,
            PenaltyFamily::Mcp => DEFAULT_MCP_A,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PenaltyFamily::Lasso => "lasso",
            PenaltyFamily::Scad => "scad",
            PenaltyFamily::Mcp => "mcp",
        }
    }
}

impl fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lasso" => Ok(PenaltyFamily::Lasso),
            "scad" => Ok(PenaltyFamily::Scad),
            "mcp" => Ok(PenaltyFamily::Mcp),
            other => Err(Error::Config(format!("unknown penalty family '{other}'"))),
        }
    }
}

/// Penalty family plus its tuning constants λ and a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda: f64,
    /// Concavity constant; ignored for Lasso.
    pub a: f64,
}

impl PenaltySpec {
    pub fn new(family: PenaltyFamily, lambda: f64, a: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("lambda must be a nonnegative finite number, got {lambda}")));
        }
        match family {
            PenaltyFamily::Scad if !(a > 2.0) => {
                return Err(Error::domain(format!("SCAD requires a > 2, got {a}")));
            }
            PenaltyFamily::Mcp if !(a > 1.0) => {
                return Err(Error::domain(format!("MCP requires a > 1, got {a}")));
            }
            _ => {}
        }
        Ok(Self { family, lambda, a })
    }

    /// Spec with the family's default `a`.
    pub fn with_default_a(family: PenaltyFamily, lambda: f64) -> Result<Self> {
        Self::new(family, lambda, family.default_a())
    }

    pub fn lasso(lambda: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Lasso, lambda, 0.0)
    }

    pub fn scad(lambda: f64, a: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Scad, lambda, a)
    }

    pub fn mcp(lambda: f64, a: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Mcp, lambda, a)
    }

    /// A spec that penalizes nothing.
    pub fn zero() -> Self {
        Self {
            family: PenaltyFamily::Lasso,
            lambda: 0.0,
            a: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.lambda == 0.0
    }

    /// p_n(β), symmetric in β.
    pub fn value(&self, beta: f64, n: usize) -> f64 {
        let rn = (n as f64).sqrt();
        let b = beta.abs();
        let lam = self.lambda;
        match self.family {
            PenaltyFamily::Lasso => lam * rn * b,
            PenaltyFamily::Scad => {
                let a = self.a;
                let t = rn * b;
                if t <= lam {
                    lam * t
                } else if t <= a * lam {
                    (2.0 * a * lam * t - t * t - lam * lam) / (2.0 * (a - 1.0))
                } else {
                    (a + 1.0) * lam * lam / 2.0
                }
            }
            PenaltyFamily::Mcp => {
                let a = self.a;
                let bc = b.min(a * lam / rn);
                (rn * (lam * bc - bc * bc / (2.0 * a))).max(0.0)
            }
        }
    }

    /// p′_n(β) at β ≥ 0 (callers pass |β|); clamped to be nonnegative.
    pub fn derivative(&self, beta: f64, n: usize) -> f64 {
        let rn = (n as f64).sqrt();
        let b = beta.abs();
        let lam = self.lambda;
        let d = match self.family {
            PenaltyFamily::Lasso => lam * rn,
            PenaltyFamily::Scad => {
                let t = rn * b;
                if t <= lam {
                    lam * rn
                } else {
                    rn * (self.a * lam - t).max(0.0) / (self.a - 1.0)
                }
            }
            PenaltyFamily::Mcp => {
                if rn * b <= self.a * lam {
                    rn * (lam - b / self.a)
                } else {
                    0.0
                }
            }
        };
        d.max(0.0)
    }

    /// Curvature p′(|β₀|)/|β₀| of the local quadratic approximation at β₀.
    pub fn lqa_weight(&self, beta0: f64, n: usize) -> Result<f64> {
        let b = beta0.abs();
        if !(b >= ZERO_THRESHOLD) {
            return Err(Error::domain(format!(
                "coefficient {beta0} must be frozen at zero, not approximated"
            )));
        }
        Ok(self.derivative(b, n) / b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lasso_examples() {
        let s = PenaltySpec::lasso(0.5).unwrap();
        assert!((s.value(2.0, 100) - 10.0).abs() < 1e-12);
        assert!((s.value(-2.0, 100) - 10.0).abs() < 1e-12);
        for b in [0.0, 0.3, 12.0] {
            assert!((s.derivative(b, 100) - 5.0).abs() < 1e-12);
        }
        let s = PenaltySpec::lasso(1.0).unwrap();
        assert!((s.lqa_weight(2.0, 1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_at_origin() {
        for s in [
            PenaltySpec::lasso(0.7).unwrap(),
            PenaltySpec::scad(0.7, 3.7).unwrap(),
            PenaltySpec::mcp(0.7, 3.0).unwrap(),
        ] {
            assert_eq!(s.value(0.0, 50), 0.0);
        }
    }

    #[test]
    fn scad_flat_tail_and_origin() {
        let s = PenaltySpec::scad(1.0, 3.7).unwrap();
        assert_eq!(s.derivative(5.0, 1), 0.0);
        assert_eq!(s.lqa_weight(5.0, 1).unwrap(), 0.0);
        assert!((s.derivative(0.0, 1) - 1.0).abs() < 1e-15);
        // n=4, beta=0.3: √n·β = 0.6 ≤ λ, so the value is λ√n|β|.
        assert!((s.value(0.3, 4) - 0.6).abs() < 1e-15);
        assert!((s.value(10.0, 1) - 4.7 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mcp_examples() {
        let s = PenaltySpec::mcp(1.0, 3.0).unwrap();
        assert!((s.derivative(0.0, 1) - 1.0).abs() < 1e-15);
        assert!((s.lqa_weight(1.5, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.derivative(3.5, 1), 0.0);
    }

    #[test]
    fn lqa_rejects_frozen_coefficients() {
        let s = PenaltySpec::lasso(1.0).unwrap();
        assert!(s.lqa_weight(5e-7, 10).is_err());
        assert!(s.lqa_weight(0.0, 10).is_err());
    }

    #[test]
    fn constructor_checks() {
        assert!(PenaltySpec::scad(1.0, 2.0).is_err());
        assert!(PenaltySpec::mcp(1.0, 1.0).is_err());
        assert!(PenaltySpec::lasso(-0.1).is_err());
        assert!(PenaltySpec::lasso(f64::NAN).is_err());
        assert_eq!("SCAD".parse::<PenaltyFamily>().unwrap(), PenaltyFamily::Scad);
        assert!("ridge".parse::<PenaltyFamily>().is_err());
    }
}
