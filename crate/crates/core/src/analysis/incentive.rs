//! Minimal forwarding fee that covers the expected committee cost.

use num_rational::BigRational;
use num_traits::{Signed, Zero};

use super::AnalysisError;

/// `2(3f+1)·f_CM / p_S`: forwarding pays off iff the fee strictly exceeds it.
pub fn incentive_threshold(f: u64, f_cm: &BigRational, p_s: &BigRational) -> Result<BigRational, AnalysisError> {
    if p_s.is_zero() || p_s.is_negative() || *p_s > BigRational::from_integer(1.into()) {
        return Err(AnalysisError::Domain(format!("p_S = {p_s} outside (0, 1]")));
    }
    if f_cm.is_negative() {
        return Err(AnalysisError::Domain(format!("f_CM = {f_cm} is negative")));
    }
    let members = BigRational::from_integer((2 * (3 * f + 1)).into());
    Ok(members * f_cm / p_s)
}

pub fn forwarding_is_rational(
    fee: &BigRational,
    f: u64,
    f_cm: &BigRational,
    p_s: &BigRational,
) -> Result<bool, AnalysisError> {
    Ok(*fee > incentive_threshold(f, f_cm, p_s)?)
}

/// Parses `"3"`, `"1/2"` or a terminating decimal such as `"0.25"` exactly.
pub fn parse_rational(s: &str) -> Result<BigRational, AnalysisError> {
    let bad = || AnalysisError::Domain(format!("not a rational number: {s:?}"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: num_bigint::BigInt = a.trim().parse().map_err(|_| bad())?;
        let b: num_bigint::BigInt = b.trim().parse().map_err(|_| bad())?;
        if b.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(a, b));
    }
    match s.split_once('.') {
        Some((int, frac)) => {
            let digits = format!("{int}{frac}");
            let num: num_bigint::BigInt = digits.parse().map_err(|_| bad())?;
            let den = num_bigint::BigInt::from(10u32).pow(frac.len() as u32);
            Ok(BigRational::new(num, den))
        }
        None => Ok(BigRational::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> BigRational {
        parse_rational(s).unwrap()
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(incentive_threshold(1, &r("1"), &r("0.5")).unwrap(), r("16"));
        assert_eq!(incentive_threshold(3, &r("0"), &r("0.1")).unwrap(), r("0"));
        assert_eq!(incentive_threshold(0, &r("3"), &r("1/4")).unwrap(), r("24"));
        assert!(incentive_threshold(1, &r("1"), &r("0")).is_err());
        assert!(incentive_threshold(1, &r("1"), &r("1.5")).is_err());
    }

    #[test]
    fn strict_inequality() {
        assert!(!forwarding_is_rational(&r("16"), 1, &r("1"), &r("1/2")).unwrap());
        assert!(forwarding_is_rational(&r("16.001"), 1, &r("1"), &r("1/2")).unwrap());
    }

    #[test]
    fn parsing() {
        assert_eq!(r("0.25"), r("1/4"));
        assert_eq!(r("-1.5"), r("-3/2"));
        assert!(parse_rational("x").is_err());
        assert!(parse_rational("1/0").is_err());
    }
}
