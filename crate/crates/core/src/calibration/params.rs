use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::ModelParameters;

/// A model parameter that can be estimated.
///
/// Values are on the normalized scale of a loaded configuration
/// (`sink_needle[1] = 1`, `ring_density[1] = 1`); those two reference values
/// cannot be freed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    R,
    KBeer,
    Sp,
    RingSinkConst,
    RingSinkSlope,
    Lambda,
    RingDensity(usize),
    SinkNeedle(usize),
    SinkInternode(usize),
}

impl ParamId {
    pub fn get(self, p: &ModelParameters) -> f64 {
        match self {
            ParamId::R => p.r,
            ParamId::KBeer => p.k_beer,
            ParamId::Sp => p.s_p,
            ParamId::RingSinkConst => p.ring_sink_const,
            ParamId::RingSinkSlope => p.ring_sink_slope,
            ParamId::Lambda => p.lambda_pressler,
            ParamId::RingDensity(k) => p.ring_density[k - 1],
            ParamId::SinkNeedle(k) => p.sink_needle[k - 1],
            ParamId::SinkInternode(k) => p.sink_internode[k - 1],
        }
    }

    pub fn set(self, p: &mut ModelParameters, value: f64) {
        match self {
            ParamId::R => p.r = value,
            ParamId::KBeer => p.k_beer = value,
            ParamId::Sp => p.s_p = value,
            ParamId::RingSinkConst => p.ring_sink_const = value,
            ParamId::RingSinkSlope => p.ring_sink_slope = value,
            ParamId::Lambda => p.lambda_pressler = value,
            ParamId::RingDensity(k) => p.ring_density[k - 1] = value,
            ParamId::SinkNeedle(k) => p.sink_needle[k - 1] = value,
            ParamId::SinkInternode(k) => p.sink_internode[k - 1] = value,
        }
    }

    /// λ lives in [0, 1]; everything else is positive.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            ParamId::Lambda => (0.0, 1.0),
            _ => (0.0, f64::INFINITY),
        }
    }

    /// PA index for per-PA parameters.
    pub fn pa(self) -> Option<usize> {
        match self {
            ParamId::RingDensity(k) | ParamId::SinkNeedle(k) | ParamId::SinkInternode(k) => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::R => f.write_str("r"),
            ParamId::KBeer => f.write_str("k_beer"),
            ParamId::Sp => f.write_str("s_p"),
            ParamId::RingSinkConst => f.write_str("ring_sink_const"),
            ParamId::RingSinkSlope => f.write_str("ring_sink_slope"),
            ParamId::Lambda => f.write_str("lambda_pressler"),
            ParamId::RingDensity(k) => write!(f, "ring_density[{k}]"),
            ParamId::SinkNeedle(k) => write!(f, "sink_needle[{k}]"),
            ParamId::SinkInternode(k) => write!(f, "sink_internode[{k}]"),
        }
    }
}

/// `name[k]` or `name(k)`.
fn indexed(s: &str) -> Option<(&str, usize)> {
    let open = s.find(['[', '('])?;
    let close = if s.as_bytes()[open] == b'[' { ']' } else { ')' };
    let inner = s[open + 1..].strip_suffix(close)?;
    Some((&s[..open], inner.trim().parse().ok()?))
}

impl FromStr for ParamId {
    type Err = String;

    /// Accepts the configuration field names plus the short forms `P_0`,
    /// `P_1`, `lambda`, `p_rg(k)`, `P_a(k)` and `P_i(k)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let id = match s {
            "r" => ParamId::R,
            "k" | "k_beer" => ParamId::KBeer,
            "s_p" | "S_p" | "sp" => ParamId::Sp,
            "ring_sink_const" | "P_0" | "p0" | "P0" => ParamId::RingSinkConst,
            "ring_sink_slope" | "P_1" | "p1" | "P1" => ParamId::RingSinkSlope,
            "lambda_pressler" | "lambda" | "λ" => ParamId::Lambda,
            _ => {
                let (name, k) = indexed(s).ok_or_else(|| format!("unknown parameter `{s}`"))?;
                if k == 0 {
                    return Err(format!("`{s}`: physiological ages start at 1"));
                }
                let id = match name {
                    "ring_density" | "p_rg" => ParamId::RingDensity(k),
                    "sink_needle" | "P_a" => ParamId::SinkNeedle(k),
                    "sink_internode" | "P_i" => ParamId::SinkInternode(k),
                    _ => return Err(format!("unknown parameter `{s}`")),
                };
                if matches!(id, ParamId::RingDensity(1) | ParamId::SinkNeedle(1)) {
                    return Err(format!(
                        "`{s}` is the normalization reference (fixed at 1) and cannot be estimated"
                    ));
                }
                id
            }
        };
        Ok(id)
    }
}

impl Serialize for ParamId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ParamId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One estimated parameter with its box constraint and starting value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    pub id: ParamId,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
}

impl FreeParameter {
    pub fn new(id: ParamId, initial: f64) -> Self {
        let (lower, upper) = id.default_bounds();
        FreeParameter {
            id,
            lower,
            upper,
            initial,
        }
    }

    /// Unconstrained coordinate: logit for a finite box, log of the distance
    /// to the lower bound otherwise.
    pub(crate) fn to_internal(self, x: f64) -> f64 {
        if self.upper.is_finite() {
            let u = (x - self.lower) / (self.upper - self.lower);
            (u / (1.0 - u)).ln()
        } else {
            (x - self.lower).ln()
        }
    }

    pub(crate) fn to_natural(self, z: f64) -> f64 {
        if self.upper.is_finite() {
            let u = 1.0 / (1.0 + (-z).exp());
            self.lower + (self.upper - self.lower) * u
        } else {
            self.lower + z.exp()
        }
    }

    /// dx/dz at `z`.
    pub(crate) fn natural_slope(&self, z: f64) -> f64 {
        if self.upper.is_finite() {
            let u = 1.0 / (1.0 + (-z).exp());
            (self.upper - self.lower) * u * (1.0 - u)
        } else {
            z.exp()
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_and_print() {
        let cases = [
            ("r", ParamId::R),
            ("P_1", ParamId::RingSinkSlope),
            ("lambda", ParamId::Lambda),
            ("p_rg(2)", ParamId::RingDensity(2)),
            ("ring_density[3]", ParamId::RingDensity(3)),
            ("sink_internode[1]", ParamId::SinkInternode(1)),
            ("s_p", ParamId::Sp),
        ];
        for (text, id) in cases {
            assert_eq!(text.parse::<ParamId>().unwrap(), id);
            assert_eq!(id.to_string().parse::<ParamId>().unwrap(), id);
        }
        assert!("p_rg(1)".parse::<ParamId>().unwrap_err().contains("reference"));
        assert!("sink_needle[1]".parse::<ParamId>().is_err());
        assert!("p_rg(0)".parse::<ParamId>().is_err());
        assert!("height".parse::<ParamId>().is_err());
    }

    #[test]
    fn transforms_invert() {
        let lambda = FreeParameter::new(ParamId::Lambda, 0.01);
        let r = FreeParameter::new(ParamId::R, 1.79);
        for (p, x) in [(lambda, 0.01), (lambda, 0.999), (r, 1.79), (r, 1e-4)] {
            let z = p.to_internal(x);
            assert!((p.to_natural(z) - x).abs() <= 1e-12 * x.max(1.0));
            let h = 1e-6;
            let numeric = (p.to_natural(z + h) - p.to_natural(z - h)) / (2.0 * h);
            assert!((numeric - p.natural_slope(z)).abs() <= 1e-6 * numeric.abs());
        }
        assert!(lambda.contains(lambda.to_natural(40.0)));
        assert!(lambda.contains(lambda.to_natural(-40.0)));
    }
}
