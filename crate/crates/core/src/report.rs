//! Shared formatting for report output.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;

/// `num / den` as a percentage with two decimals, truncated (the published
/// response-rate tables truncate: 349,030 of 828,142 prints as 42.14).
/// Integer arithmetic keeps output byte-stable. `0/0` renders as `0.00`.
pub fn pct2(num: u64, den: u64) -> String {
    if den == 0 {
        return "0.00".to_string();
    }
    let scaled = num as u128 * 10_000 / den as u128;
    format!("{}.{:02}", scaled / 100, scaled % 100)
}

/// `num / den` as a percentage with two decimals, rounded half-up (the
/// in-protocol comparison table rounds: 1,108 of 40,439 prints as 2.74).
pub fn pct2_round(num: u64, den: u64) -> String {
    if den == 0 {
        return "0.00".to_string();
    }
    fixed2(num as u128 * 100, den as u128)
}

/// Two-decimal rendering of an arbitrary fraction, half-up.
pub fn fixed2(num: u128, den: u128) -> String {
    if den == 0 {
        return "0.00".to_string();
    }
    let scaled = (num * 200 / den).div_ceil(2);
    format!("{}.{:02}", scaled / 100, scaled % 100)
}

/// Two-decimal, half-up rendering of a non-negative exact rational.
pub fn ratio_fixed2(r: &BigRational) -> String {
    let two = BigInt::from(200);
    let scaled: BigInt = (r.numer() * &two / r.denom() + BigInt::one()) / BigInt::from(2);
    let hundred = BigInt::from(100);
    let (whole, frac) = (&scaled / &hundred, &scaled % &hundred);
    format!("{whole}.{frac:0>2}")
}
