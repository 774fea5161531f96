//! Exact probability that a majority of `n` independent voters is correct.

use num_traits::{FromPrimitive, Num};

use super::SimError;

/// Largest cohort for which binomial coefficients are computed exactly in `u128`.
pub const MAX_EXACT_COHORT: u32 = 101;

fn binomial_coefficient(n: u32, k: u32) -> u128 {
    let k = k.min(n - k);
    // each prefix product is itself a binomial coefficient, so the division is exact
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

/// `sum_{k=(n+1)/2}^{n} C(n,k) p^k (1-p)^(n-k)` for odd `n`.
///
/// Works for any numeric type: `f32`/`f64` give floating results, while
/// `Ratio<BigInt>` gives the exact rational value.
pub fn exact_binomial_majority<T>(p: T, n: u32) -> Result<T, SimError>
where
    T: Num + Clone + PartialOrd + FromPrimitive,
{
    if n.is_multiple_of(2) {
        return Err(SimError::EvenCohort(n));
    }
    if n > MAX_EXACT_COHORT {
        return Err(SimError::CohortTooLarge(n));
    }
    if p < T::zero() || p > T::one() {
        return Err(SimError::InvalidProbability);
    }
    let q = T::one() - p.clone();
    let mut total = T::zero();
    for k in n.div_ceil(2)..=n {
        let coeff = T::from_u128(binomial_coefficient(n, k)).ok_or(SimError::CohortTooLarge(n))?;
        let term = coeff
            * num_traits::pow(p.clone(), k as usize)
            * num_traits::pow(q.clone(), (n - k) as usize);
        total = total + term;
    }
    Ok(total)
}
