//! Probability that a committee sampled from a global committee is correct.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use super::AnalysisError;

/// `N` global members, `F` of them faulty, committee of `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SamplingParams {
    pub global: u64,
    pub faulty: u64,
    pub size: u64,
}

impl SamplingParams {
    pub fn new(global: u64, faulty: u64, size: u64) -> Result<Self, AnalysisError> {
        if faulty > global {
            return Err(AnalysisError::Domain(format!("F = {faulty} exceeds N = {global}")));
        }
        if size == 0 || size > global {
            return Err(AnalysisError::Domain(format!("n = {size} outside 1..={global}")));
        }
        Ok(Self { global, faulty, size })
    }
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// `C(F, f) · C(N−F, n−f)` for `f = 0..=n`; entry `f` is the number of
/// committees with exactly `f` faulty members.
pub fn faulty_counts(p: SamplingParams) -> Vec<BigUint> {
    let (n_all, f_all, n) = (p.global, p.faulty, p.size);
    let honest = n_all - f_all;
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut cf = BigUint::one();
    let mut ch = binomial(honest, n);
    for f in 0..=n {
        out.push(&cf * &ch);
        // C(F, f+1) = C(F, f)·(F−f)/(f+1); C(H, m−1) = C(H, m)·m/(H−m+1).
        if f < n {
            cf = if f < f_all {
                cf * (f_all - f) / (f + 1)
            } else {
                BigUint::zero()
            };
            let m = n - f;
            ch = if m <= honest {
                ch * m / (honest - m + 1)
            } else {
                binomial(honest, m - 1)
            };
        }
    }
    out
}

/// `Σ_{f=0}^{⌊n/3⌋} C(F,f)·C(N−F,n−f) / C(N,n)`, exactly.
pub fn committee_correct_exact(p: SamplingParams) -> BigRational {
    let counts = faulty_counts(p);
    let good: BigUint = counts.iter().take((p.size / 3) as usize + 1).sum();
    BigRational::new(BigInt::from(good), BigInt::from(binomial(p.global, p.size)))
}

pub fn committee_correct_probability(p: SamplingParams) -> f64 {
    committee_correct_exact(p).to_f64().expect("probability is finite")
}

/// The `F` values plotted for `N = 1200`.
pub const GRID_FAULTY: [u64; 7] = [300, 325, 350, 375, 400, 425, 450];
pub const GRID_GLOBAL: u64 = 1200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub global: u64,
    pub faulty: u64,
    pub size: u64,
    pub p_correct: f64,
}

/// Committee sizes `3f + 1` for `f = 1..=max_f`.
pub fn bft_sizes(max_f: u64) -> Vec<u64> {
    (1..=max_f).map(|f| 3 * f + 1).collect()
}

pub fn curve(global: u64, faulty: u64, sizes: &[u64]) -> Result<Vec<CurvePoint>, AnalysisError> {
    sizes
        .iter()
        .map(|&size| {
            let p = SamplingParams::new(global, faulty, size)?;
            Ok(CurvePoint {
                global,
                faulty,
                size,
                p_correct: committee_correct_probability(p),
            })
        })
        .collect()
}

/// Every plotted curve over committee sizes 4, 7, …, 601.
pub fn standard_grid() -> Vec<CurvePoint> {
    let sizes = bft_sizes(200);
    GRID_FAULTY
        .iter()
        .flat_map(|&f| curve(GRID_GLOBAL, f, &sizes).expect("grid parameters are valid"))
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("N,F,n,p_correct\n");
    for p in points {
        out.push_str(&format!("{},{},{},{:.12}\n", p.global, p.faulty, p.size, p.p_correct));
    }
    out
}
