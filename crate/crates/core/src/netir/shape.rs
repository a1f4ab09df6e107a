use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Channel-major feature-map shape of a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidGraph(format!("tensor shape {channels}x{height}x{width} has a zero dimension")));
        }
        Ok(Self { channels, height, width })
    }

    /// Square image shape, e.g. `TensorShape::image(3, 32)`.
    pub fn image(channels: usize, side: usize) -> Self {
        Self { channels, height: side, width: side }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// A rational scale factor in (0, 1], used for channel (α) and
/// feature-map resolution (ρ) scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scale {
    num: u32,
    den: u32,
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Scale {
    pub const ONE: Scale = Scale { num: 1, den: 1 };
    pub const HALF: Scale = Scale { num: 1, den: 2 };
    pub const QUARTER: Scale = Scale { num: 1, den: 4 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::InvalidScale(format!("{num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Self { num: num / g, den: den / g })
    }

    /// Converts a decimal such as `0.5` or `0.125` to an exact rational.
    /// Values are resolved to a denominator of at most 10^6.
    pub fn from_f64(value: f64) -> Result<Self> {
        if !value.is_finite() || value <= 0.0 || value > 1.0 {
            return Err(Error::InvalidScale(value.to_string()));
        }
        const DEN: u32 = 1_000_000;
        let num = (value * DEN as f64).round() as u32;
        if num == 0 {
            return Err(Error::InvalidScale(value.to_string()));
        }
        Self::new(num, DEN)
    }

    pub fn numerator(&self) -> u32 {
        self.num
    }

    pub fn denominator(&self) -> u32 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_one(&self) -> bool {
        self.num == self.den
    }

    /// Channel rule: round half up, never below one.
    pub fn scale_channels(&self, channels: usize) -> usize {
        let num = self.num as u64;
        let den = self.den as u64;
        let scaled = (2 * channels as u64 * num + den) / (2 * den);
        (scaled as usize).max(1)
    }

    /// Spatial rule: floor, never below one.
    pub fn scale_spatial(&self, dim: usize) -> usize {
        let scaled = dim as u64 * self.num as u64 / self.den as u64;
        (scaled as usize).max(1)
    }

    pub fn mul(&self, other: Scale) -> Scale {
        let num = self.num as u64 * other.num as u64;
        let den = self.den as u64 * other.den as u64;
        let g = {
            let (mut a, mut b) = (num, den);
            while b != 0 {
                (a, b) = (b, a % b);
            }
            a
        };
        Scale { num: (num / g) as u32, den: (den / g) as u32 }
    }
}

impl Default for Scale {
    fn default() -> Self {
        Scale::ONE
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Terminating decimals print as decimals, everything else as a fraction.
        let mut den = self.den;
        while den % 2 == 0 {
            den /= 2;
        }
        while den % 5 == 0 {
            den /= 5;
        }
        if den == 1 {
            write!(f, "{}", self.as_f64())
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse().map_err(|_| Error::InvalidScale(s.to_string()))?;
            let d = d.trim().parse().map_err(|_| Error::InvalidScale(s.to_string()))?;
            return Scale::new(n, d);
        }
        let s = s.trim_end_matches(['x', 'X', '×']);
        let v: f64 = s.parse().map_err(|_| Error::InvalidScale(s.to_string()))?;
        Scale::from_f64(v)
    }
}

impl Serialize for Scale {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let text = self.to_string();
        if text.contains('/') {
            serializer.serialize_str(&text)
        } else {
            serializer.serialize_f64(self.as_f64())
        }
    }
}

impl<'de> Deserialize<'de> for Scale {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Scale::from_f64(v),
            Repr::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_rounding_is_half_up_with_floor_of_one() {
        assert_eq!(Scale::HALF.scale_channels(64), 32);
        assert_eq!(Scale::HALF.scale_channels(3), 2);
        assert_eq!(Scale::QUARTER.scale_channels(2), 1);
        assert_eq!(Scale::new(1, 8).unwrap().scale_channels(3), 1);
        assert_eq!(Scale::new(1, 3).unwrap().scale_channels(5), 2);
    }

    #[test]
    fn spatial_rounding_floors() {
        assert_eq!(Scale::HALF.scale_spatial(32), 16);
        assert_eq!(Scale::HALF.scale_spatial(7), 3);
        assert_eq!(Scale::QUARTER.scale_spatial(2), 1);
    }

    #[test]
    fn parses_decimals_and_fractions() {
        assert_eq!("0.5".parse::<Scale>().unwrap(), Scale::HALF);
        assert_eq!("1/4".parse::<Scale>().unwrap(), Scale::QUARTER);
        assert_eq!("0.5x".parse::<Scale>().unwrap(), Scale::HALF);
        assert!("0".parse::<Scale>().is_err());
        assert!("1.5".parse::<Scale>().is_err());
        assert_eq!(Scale::new(1, 3).unwrap().to_string(), "1/3");
        assert_eq!(Scale::new(1, 8).unwrap().to_string(), "0.125");
    }

    #[test]
    fn serde_uses_numbers_for_terminating_decimals() {
        let json = serde_json::to_string(&Scale::HALF).unwrap();
        assert_eq!(json, "0.5");
        let third: Scale = serde_json::from_str("\"1/3\"").unwrap();
        assert_eq!(third, Scale::new(1, 3).unwrap());
        let back: Scale = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Scale::HALF);
    }
}
