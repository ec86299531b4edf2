//! Nonlinearities `g(s)` of `i u_t = -Δu + g(|u|^2) u`.
//!
//! Focusing built-ins are negative for `s > 0`; a positive decaying ground
//! state of `0 = -Δφ + ωφ + g(φ²)φ` needs `g < 0`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    /// `g(s) = -s / (1 + s)`; existence range `0 < ω < 1`.
    Saturated,
    /// `g(s) = -s³ / (1 + s²)`.
    SaturatedCubic,
    /// `g(s) = -s`; mass is monotone in ω (no minimal-mass point).
    Cubic,
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::Saturated
    }
}

impl Nonlinearity {
    pub fn label(&self) -> &'static str {
        match self {
            Nonlinearity::Saturated => "saturated",
            Nonlinearity::SaturatedCubic => "saturated-cubic",
            Nonlinearity::Cubic => "cubic",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "saturated" => Some(Nonlinearity::Saturated),
            "saturated-cubic" => Some(Nonlinearity::SaturatedCubic),
            "cubic" => Some(Nonlinearity::Cubic),
            _ => None,
        }
    }

    #[inline]
    pub fn g(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Saturated => -s / (1.0 + s),
            Nonlinearity::SaturatedCubic => -s * s * s / (1.0 + s * s),
            Nonlinearity::Cubic => -s,
        }
    }

    #[inline]
    pub fn dg(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Saturated => -1.0 / ((1.0 + s) * (1.0 + s)),
            Nonlinearity::SaturatedCubic => {
                let d = 1.0 + s * s;
                -(s * s * s * s + 3.0 * s * s) / (d * d)
            }
            Nonlinearity::Cubic => -1.0,
        }
    }

    #[inline]
    pub fn d2g(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Saturated => 2.0 / ((1.0 + s) * (1.0 + s) * (1.0 + s)),
            Nonlinearity::SaturatedCubic => {
                let d = 1.0 + s * s;
                (2.0 * s * s * s - 6.0 * s) / (d * d * d)
            }
            Nonlinearity::Cubic => 0.0,
        }
    }

    /// `G(s) = ∫₀ˢ g`.
    #[inline]
    pub fn antiderivative(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Saturated => -(s - s.ln_1p()),
            Nonlinearity::SaturatedCubic => -(0.5 * s * s - 0.5 * (s * s).ln_1p()),
            Nonlinearity::Cubic => -0.5 * s * s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Nonlinearity; 3] = [
        Nonlinearity::Saturated,
        Nonlinearity::SaturatedCubic,
        Nonlinearity::Cubic,
    ];

    #[test]
    fn vanishes_at_zero() {
        for nl in ALL {
            assert_eq!(nl.g(0.0), 0.0);
            assert_eq!(nl.antiderivative(0.0), 0.0);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for nl in ALL {
            for &s in &[0.1, 0.7, 2.0, 9.0] {
                let h = 1e-5;
                let fd1 = (nl.g(s + h) - nl.g(s - h)) / (2.0 * h);
                let fd2 = (nl.dg(s + h) - nl.dg(s - h)) / (2.0 * h);
                let fd0 = (nl.antiderivative(s + h) - nl.antiderivative(s - h)) / (2.0 * h);
                assert!((fd1 - nl.dg(s)).abs() < 1e-7 * (1.0 + fd1.abs()), "{nl:?} g' at {s}");
                assert!((fd2 - nl.d2g(s)).abs() < 1e-7 * (1.0 + fd2.abs()), "{nl:?} g'' at {s}");
                assert!((fd0 - nl.g(s)).abs() < 1e-7 * (1.0 + fd0.abs()), "{nl:?} G' at {s}");
            }
        }
    }

    #[test]
    fn growth_is_subquadratic() {
        for nl in ALL {
            let a = nl.g(1e6).abs() / 1e6f64.powf(1.5);
            assert!(a < 1e-2, "{nl:?}");
        }
    }

    #[test]
    fn labels_round_trip() {
        for nl in ALL {
            assert_eq!(Nonlinearity::from_label(nl.label()), Some(nl));
        }
        assert_eq!(Nonlinearity::from_label("quintic"), None);
    }
}
