use std::fmt;
use std::path::Path;

use anyhow::Result;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::exit::input_error;

/// A rational parameter written as `"p/q"` (or `"p"`).
#[derive(Debug, Clone, PartialEq)]
pub struct Rational(pub BigRational);

impl Rational {
    pub fn parse(s: &str) -> Result<Self, String> {
        let (p, q) = s.split_once('/').unwrap_or((s, "1"));
        let p: BigInt = p.trim().parse().map_err(|_| format!("{s:?} is not of the form \"p/q\""))?;
        let q: BigInt = q.trim().parse().map_err(|_| format!("{s:?} is not of the form \"p/q\""))?;
        if q.is_positive() {
            Ok(Rational(BigRational::new(p, q)))
        } else {
            Err(format!("{s:?} has a non-positive denominator"))
        }
    }

    pub fn value(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// `(p, q)` as machine integers, when both are positive and fit.
    pub fn small_parts(&self) -> Option<(u64, u64)> {
        Some((self.0.numer().to_u64()?, self.0.denom().to_u64()?))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Rational::parse(&s).map_err(serde::de::Error::custom)
    }
}

pub fn default_alpha() -> Rational {
    Rational::parse("1/8").unwrap()
}

/// Parse a config file; an empty object selects every default.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(input_error(msg()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_round_trip() {
        let r = Rational::parse("2/16").unwrap();
        assert_eq!(r.to_string(), "1/8");
        assert_eq!(r.small_parts(), Some((1, 8)));
        assert_eq!(Rational::parse("3").unwrap().to_string(), "3/1");
        assert!(Rational::parse("0.6").is_err());
        assert!(Rational::parse("1/0").is_err());
        assert!(Rational::parse("1/-2").is_err());
    }
}
