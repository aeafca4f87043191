//! Exact probability and hypothesis-testing primitives.
//!
//! Self-contained on purpose: the certification radii and p-values downstream
//! need more precision headroom than a quick-and-dirty erf, and pulling in a
//! stats crate would make bit-stability a moving target. Everything here is a
//! pure function of its arguments and safe to call from any thread.

use thiserror::Error;

/// Largest binomial `trials` the log-factorial table supports.
pub const MAX_TRIALS: u64 = 131_072;

/// Relative tolerance used when comparing binomial pmf values for ties in the
/// two-sided test. Matches common exact-test conventions; results are
/// bit-stable because the threshold is fixed here.
pub const PMF_TIE_RTOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityRange(f64),
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("quantile argument {0} must lie strictly inside (0, 1)")]
    QuantileDomain(f64),
    #[error("invalid binomial observation: successes {successes} > trials {trials}")]
    CountsOrder { successes: u64, trials: u64 },
    #[error("binomial trials must be at least 1")]
    ZeroTrials,
    #[error("binomial trials {0} exceed the supported maximum {max}", max = MAX_TRIALS)]
    TrialsTooLarge(u64),
    #[error("confidence {0} must lie strictly inside (0, 1)")]
    ConfidenceDomain(f64),
}

/// A real number constrained to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self, StatsError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(StatsError::ProbabilityRange(value));
        }
        Ok(Self(value))
    }

    /// Half, handy as a null-hypothesis parameter.
    pub const HALF: Probability = Probability(0.5);

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Clamps into `[eps, 1 - eps]`; callers do this before any quantile call.
    #[inline]
    pub fn clamped(self, eps: f64) -> Probability {
        Probability(self.0.clamp(eps, 1.0 - eps))
    }
}

/// A count of successes out of a positive number of trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinomialObservation {
    successes: u64,
    trials: u64,
}

impl BinomialObservation {
    pub fn new(successes: u64, trials: u64) -> Result<Self, StatsError> {
        if trials == 0 {
            return Err(StatsError::ZeroTrials);
        }
        if trials > MAX_TRIALS {
            return Err(StatsError::TrialsTooLarge(trials));
        }
        if successes > trials {
            return Err(StatsError::CountsOrder { successes, trials });
        }
        Ok(Self { successes, trials })
    }

    pub fn successes(self) -> u64 {
        self.successes
    }

    pub fn trials(self) -> u64 {
        self.trials
    }
}

// ---------------------------------------------------------------------------
// Standard normal CDF (Cody's rational-Chebyshev erfc) and its inverse
// (Acklam's approximation refined with one Newton step).
// ---------------------------------------------------------------------------

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
// 1/sqrt(pi)
const SQRPI: f64 = 5.641_895_835_477_562_9e-1;

const CODY_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const CODY_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const CODY_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const CODY_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const CODY_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const CODY_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];

/// Complementary error function, accurate to ~1 ulp over the full range.
fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let result = if y <= 0.46875 {
        // erfc via 1 - erf on the central interval.
        let z = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut xnum = CODY_A[4] * z;
        let mut xden = z;
        for i in 0..3 {
            xnum = (xnum + CODY_A[i]) * z;
            xden = (xden + CODY_B[i]) * z;
        }
        return 1.0 - x * (xnum + CODY_A[3]) / (xden + CODY_B[3]);
    } else if y <= 4.0 {
        let mut xnum = CODY_C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + CODY_C[i]) * y;
            xden = (xden + CODY_D[i]) * y;
        }
        let r = (xnum + CODY_C[7]) / (xden + CODY_D[7]);
        scaled_by_exp_neg_sq(y, r)
    } else if y < 26.543 {
        let z = 1.0 / (y * y);
        let mut xnum = CODY_P[5] * z;
        let mut xden = z;
        for i in 0..4 {
            xnum = (xnum + CODY_P[i]) * z;
            xden = (xden + CODY_Q[i]) * z;
        }
        let mut r = z * (xnum + CODY_P[4]) / (xden + CODY_Q[4]);
        r = (SQRPI - r) / y;
        scaled_by_exp_neg_sq(y, r)
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Computes `exp(-y^2) * r` while splitting `y^2` to limit cancellation.
#[inline]
fn scaled_by_exp_neg_sq(y: f64, r: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

/// Standard normal cumulative distribution function.
///
/// The input must be finite; the result is exact to well below the 1e-12
/// reflection tolerance documented for `std_normal_cdf(-x) + std_normal_cdf(x)`.
pub fn std_normal_cdf(x: f64) -> Result<Probability, StatsError> {
    if !x.is_finite() {
        return Err(StatsError::NonFinite { name: "x", value: x });
    }
    Ok(Probability(normal_cdf_raw(x)))
}

#[inline]
pub(crate) fn normal_cdf_raw(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

#[inline]
fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

// Acklam's rational approximation coefficients for the normal quantile.
const ACK_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACK_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACK_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACK_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const ACK_P_LOW: f64 = 0.02425;

fn acklam(p: f64) -> f64 {
    if p < ACK_P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((ACK_C[0] * q + ACK_C[1]) * q + ACK_C[2]) * q + ACK_C[3]) * q + ACK_C[4]) * q
            + ACK_C[5])
            / ((((ACK_D[0] * q + ACK_D[1]) * q + ACK_D[2]) * q + ACK_D[3]) * q + 1.0)
    } else if p <= 1.0 - ACK_P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((ACK_A[0] * r + ACK_A[1]) * r + ACK_A[2]) * r + ACK_A[3]) * r + ACK_A[4]) * r
            + ACK_A[5])
            * q
            / (((((ACK_B[0] * r + ACK_B[1]) * r + ACK_B[2]) * r + ACK_B[3]) * r + ACK_B[4]) * r
                + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((ACK_C[0] * q + ACK_C[1]) * q + ACK_C[2]) * q + ACK_C[3]) * q + ACK_C[4]) * q
            + ACK_C[5])
            / ((((ACK_D[0] * q + ACK_D[1]) * q + ACK_D[2]) * q + ACK_D[3]) * q + 1.0)
    }
}

/// Standard normal quantile (inverse CDF).
///
/// Acklam's approximation (~1e-9 on its own) refined with one Newton step
/// against [`std_normal_cdf`], giving absolute error well under 1e-9 across
/// `p in [1e-12, 1 - 1e-12]`. `p` must lie strictly inside (0, 1); callers
/// that can saturate must clamp first.
pub fn std_normal_quantile(p: Probability) -> Result<f64, StatsError> {
    let v = p.value();
    if v <= 0.0 || v >= 1.0 {
        return Err(StatsError::QuantileDomain(v));
    }
    Ok(normal_quantile_raw(v))
}

pub(crate) fn normal_quantile_raw(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    // Work on the lower half; for p in [0.5, 1) the subtraction 1 - p is exact
    // (Sterbenz), so the reflection costs no accuracy.
    if p > 0.5 {
        return -normal_quantile_raw(1.0 - p);
    }
    let x0 = acklam(p);
    // One Newton step: the CDF is accurate to ~1 ulp, so this lands within
    // ~1e-15 of the true quantile for all representable p.
    let pdf = normal_pdf(x0);
    if pdf > 0.0 {
        x0 - (normal_cdf_raw(x0) - p) / pdf
    } else {
        x0
    }
}

// ---------------------------------------------------------------------------
// Binomial pmf in log space.
// ---------------------------------------------------------------------------

/// Cumulative log-factorials `ln(k!)` for `k <= MAX_TRIALS`, Kahan-summed.
fn log_factorials() -> &'static [f64] {
    use once_cell::sync::Lazy;
    static TABLE: Lazy<Vec<f64>> = Lazy::new(|| {
        let n = (MAX_TRIALS + 1) as usize;
        let mut table = vec![0.0f64; n];
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for k in 1..n {
            let term = (k as f64).ln() - comp;
            let next = sum + term;
            comp = (next - sum) - term;
            sum = next;
            table[k] = sum;
        }
        table
    });
    &TABLE
}

/// `ln C(n, k)`, symmetric in `k <-> n - k` bit-for-bit.
#[inline]
fn log_choose(n: u64, k: u64) -> f64 {
    let lf = log_factorials();
    lf[n as usize] - (lf[k as usize] + lf[(n - k) as usize])
}

/// `ln pmf` of Binomial(n, p) at k, for `p` strictly inside (0, 1).
#[inline]
fn log_binom_pmf(k: u64, n: u64, p: f64) -> f64 {
    log_choose(n, k) + (k as f64) * p.ln() + ((n - k) as f64) * (-p).ln_1p()
}

/// Binomial survival function `P[Bin(n, p) >= k]` for `k >= 1`.
///
/// Summation runs upward from `k`; once past the mode the terms decay
/// geometrically, so the loop stops when the remaining tail is provably below
/// 1e-17 of the accumulated mass.
fn binom_survival(k: u64, n: u64, p: f64) -> f64 {
    debug_assert!(k >= 1 && k <= n);
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let mode = (n as f64) * p;
    let mut sum = 0.0f64;
    for i in k..=n {
        let pmf = log_binom_pmf(i, n, p).exp();
        sum += pmf;
        if (i as f64) > mode {
            let remaining = (n - i) as f64;
            if pmf * remaining < sum * 1e-17 {
                break;
            }
        }
    }
    sum.min(1.0)
}

// ---------------------------------------------------------------------------
// Exact two-sided binomial test and Clopper-Pearson lower bound.
// ---------------------------------------------------------------------------

/// Exact two-sided binomial test of `obs_a ~ Binomial(total, p0)`.
///
/// Returns the total probability of all outcomes whose pmf does not exceed
/// `pmf(obs_a) * (1 + PMF_TIE_RTOL)` — the minimum-likelihood definition of
/// the two-sided p-value.
pub fn pvalue_binom(obs_a: u64, total: u64, p0: Probability) -> Result<Probability, StatsError> {
    let obs = BinomialObservation::new(obs_a, total)?;
    let (k, n) = (obs.successes(), obs.trials());
    let p = p0.value();
    // Degenerate null: the pmf is a point mass.
    if p == 0.0 {
        return Ok(Probability(if k == 0 { 1.0 } else { 0.0 }));
    }
    if p == 1.0 {
        return Ok(Probability(if k == n { 1.0 } else { 0.0 }));
    }
    let log_threshold = log_binom_pmf(k, n, p) + PMF_TIE_RTOL.ln_1p();
    let mut sum = 0.0f64;
    let mut included = 0u64;
    for i in 0..=n {
        let lp = log_binom_pmf(i, n, p);
        if lp <= log_threshold {
            sum += lp.exp();
            included += 1;
        }
    }
    if included == n + 1 {
        return Ok(Probability(1.0));
    }
    Ok(Probability(sum.min(1.0)))
}

/// Clopper-Pearson one-sided lower confidence bound for a binomial parameter.
///
/// Returns the largest `L` with `P[Binomial(trials, L) >= successes] <= alpha`
/// where `alpha = 1 - confidence`, found by bisection on the survival function
/// (60 fixed iterations, interval width ~1e-18, well under the documented
/// 1e-10 tolerance). Zero successes force a zero bound; the result never
/// exceeds `successes / trials`.
pub fn lower_conf_bound(
    successes: u64,
    trials: u64,
    confidence: Probability,
) -> Result<Probability, StatsError> {
    let obs = BinomialObservation::new(successes, trials)?;
    let conf = confidence.value();
    if conf <= 0.0 || conf >= 1.0 {
        return Err(StatsError::ConfidenceDomain(conf));
    }
    let (k, n) = (obs.successes(), obs.trials());
    if k == 0 {
        return Ok(Probability(0.0));
    }
    let alpha = 1.0 - conf;
    let mut lo = 0.0f64; // survival(lo) = 0 <= alpha
    let mut hi = 1.0f64; // survival(hi) = 1 > alpha
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if binom_survival(k, n, mid) <= alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // The exact bound cannot exceed the MLE for the confidences we accept;
    // clamp so the documented postcondition holds even for tiny confidences.
    let mle = k as f64 / n as f64;
    Ok(Probability(lo.min(mle)))
}

#[cfg(test)]
mod tests {
    use super::*;

    // -- Independent oracles -------------------------------------------------
    //
    // A high-precision normal CDF built from the erf Taylor series on the
    // center and the Legendre continued fraction on the tails. Shares no code
    // with the implementation above.

    fn erf_series(t: f64) -> f64 {
        // erf(t) = 2/sqrt(pi) * sum_n (-1)^n t^(2n+1) / (n! (2n+1))
        let mut term = t;
        let mut sum = t;
        for n in 1..200 {
            term *= -t * t / n as f64;
            let add = term / (2.0 * n as f64 + 1.0);
            sum += add;
            if add.abs() < 1e-20 * sum.abs() {
                break;
            }
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    fn erfc_cf(t: f64) -> f64 {
        // erfc(t) = exp(-t^2)/sqrt(pi) / (t + (1/2)/(t + 1/(t + (3/2)/(t + ...))))
        let mut f = t;
        for j in (1..=120).rev() {
            f = t + (j as f64 / 2.0) / f;
        }
        (-t * t).exp() / std::f64::consts::PI.sqrt() / f
    }

    fn oracle_cdf(x: f64) -> f64 {
        let t = x / SQRT_2;
        if x < -2.0 {
            0.5 * erfc_cf(-t)
        } else if x > 2.0 {
            1.0 - 0.5 * erfc_cf(t)
        } else {
            0.5 * (1.0 + erf_series(t))
        }
    }

    fn oracle_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0f64, 40.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if oracle_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    // -- std_normal_cdf ------------------------------------------------------

    #[test]
    fn cdf_at_zero_is_half() {
        assert_eq!(std_normal_cdf(0.0).unwrap().value(), 0.5);
    }

    #[test]
    fn cdf_matches_series_oracle() {
        // 1.2815515655 is the oracle-derived 90% quantile.
        let p = std_normal_cdf(1.2815515655).unwrap().value();
        assert!((p - 0.9).abs() < 1e-9, "got {p}");
        for &x in &[-8.0, -5.5, -3.0, -1.0, -0.25, 0.4, 1.7, 2.9, 4.8, 7.5] {
            let got = normal_cdf_raw(x);
            let want = oracle_cdf(x);
            let tol = 1e-14 * want.abs().max(1e-300) + 1e-306;
            assert!(
                (got - want).abs() <= tol.max(want.abs() * 1e-13),
                "cdf({x}): got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn cdf_reflection_identity() {
        for &x in &[0.1, 1.0, 3.0] {
            let a = normal_cdf_raw(x);
            let b = normal_cdf_raw(-x);
            assert!((a + b - 1.0).abs() < 1e-12, "x={x}: {a} + {b}");
        }
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn cdf_is_monotone() {
        let mut prev = 0.0;
        for i in 0..=2000 {
            let x = -10.0 + i as f64 * 0.01;
            let p = normal_cdf_raw(x);
            assert!(p >= prev, "cdf decreased at {x}");
            prev = p;
        }
    }

    // -- std_normal_quantile -------------------------------------------------

    #[test]
    fn quantile_at_half_is_zero() {
        assert_eq!(
            std_normal_quantile(Probability::new(0.5).unwrap()).unwrap(),
            0.0
        );
    }

    #[test]
    fn quantile_matches_oracle_bisection() {
        let q = std_normal_quantile(Probability::new(0.9).unwrap()).unwrap();
        assert!((q - oracle_quantile(0.9)).abs() < 1e-12);
        assert!((q - 1.2815515655).abs() < 1e-9);
    }

    #[test]
    fn quantile_reflection() {
        let p = 0.23;
        let a = normal_quantile_raw(p);
        let b = normal_quantile_raw(1.0 - p);
        assert!((a + b).abs() < 1e-9);
    }

    #[test]
    fn quantile_rejects_boundary() {
        assert!(std_normal_quantile(Probability::new(0.0).unwrap()).is_err());
        assert!(std_normal_quantile(Probability::new(1.0).unwrap()).is_err());
    }

    #[test]
    fn quantile_round_trip_over_random_probabilities() {
        let mut rng = crate::rng::SplitMix64::new(0x5eed);
        for _ in 0..1000 {
            // log-uniform over [1e-10, 1 - 1e-10], both tails
            let u = rng.next_f64();
            let mag = 10f64.powf(-10.0 * rng.next_f64());
            let p = if u < 0.5 { mag.max(1e-10) } else { 1.0 - mag.max(1e-10) };
            let x = normal_quantile_raw(p);
            let back = normal_cdf_raw(x);
            assert!(
                (back - p).abs() <= 1e-9,
                "round trip failed at p={p}: back={back}"
            );
        }
    }

    // -- pvalue_binom ----------------------------------------------------------

    fn oracle_pvalue(k: u64, n: u64, p: f64) -> f64 {
        // Exact integer binomial coefficients; independent of the log-space path.
        let mut coef = vec![0u128; (n + 1) as usize];
        coef[0] = 1;
        for i in 1..=n as usize {
            coef[i] = coef[i - 1] * (n as u128 - i as u128 + 1) / i as u128;
        }
        let pmf = |i: u64| coef[i as usize] as f64 * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32);
        let thresh = pmf(k) * (1.0 + PMF_TIE_RTOL);
        (0..=n).filter(|&i| pmf(i) <= thresh).map(pmf).sum::<f64>().min(1.0)
    }

    #[test]
    fn pvalue_at_mode_is_one() {
        let p = pvalue_binom(5, 10, Probability::HALF).unwrap();
        assert_eq!(p.value(), 1.0);
        let p = pvalue_binom(0, 1, Probability::HALF).unwrap();
        assert_eq!(p.value(), 1.0);
    }

    #[test]
    fn pvalue_all_heads() {
        // Only k = 0 and k = 10 have pmf <= pmf(10); total 2/1024.
        let p = pvalue_binom(10, 10, Probability::HALF).unwrap().value();
        assert!((p - 2.0 / 1024.0).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn pvalue_matches_enumeration_oracle() {
        for n in 1..=40u64 {
            for k in 0..=n {
                let got = pvalue_binom(k, n, Probability::HALF).unwrap().value();
                let want = oracle_pvalue(k, n, 0.5);
                assert!((got - want).abs() < 1e-9, "k={k} n={n}: {got} vs {want}");
            }
        }
        for &(k, n, p0) in &[(3u64, 17u64, 0.3f64), (12, 20, 0.7), (1, 9, 0.05)] {
            let got = pvalue_binom(k, n, Probability::new(p0).unwrap()).unwrap().value();
            let want = oracle_pvalue(k, n, p0);
            assert!((got - want).abs() < 1e-9, "k={k} n={n} p={p0}: {got} vs {want}");
        }
    }

    #[test]
    fn pvalue_symmetric_under_half() {
        for n in 1..=30u64 {
            for k in 0..=n {
                let a = pvalue_binom(k, n, Probability::HALF).unwrap().value();
                let b = pvalue_binom(n - k, n, Probability::HALF).unwrap().value();
                assert_eq!(a.to_bits(), b.to_bits(), "asymmetry at k={k} n={n}");
            }
        }
    }

    #[test]
    fn pvalue_rejects_bad_counts() {
        assert!(pvalue_binom(5, 4, Probability::HALF).is_err());
        assert!(pvalue_binom(0, 0, Probability::HALF).is_err());
    }

    // -- lower_conf_bound ------------------------------------------------------

    fn oracle_survival(k: u64, n: u64, p: f64) -> f64 {
        let mut coef = vec![0u128; (n + 1) as usize];
        coef[0] = 1;
        for i in 1..=n as usize {
            coef[i] = coef[i - 1] * (n as u128 - i as u128 + 1) / i as u128;
        }
        (k..=n)
            .map(|i| coef[i as usize] as f64 * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32))
            .sum()
    }

    fn oracle_lcb(k: u64, n: u64, conf: f64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let alpha = 1.0 - conf;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if oracle_survival(k, n, mid) <= alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn lcb_zero_successes() {
        let l = lower_conf_bound(0, 50, Probability::new(0.999).unwrap()).unwrap();
        assert_eq!(l.value(), 0.0);
    }

    #[test]
    fn lcb_all_successes_closed_form() {
        // For k = n the defining equation reduces to p^n = alpha.
        let l = lower_conf_bound(10, 10, Probability::new(0.95).unwrap()).unwrap().value();
        let want = 0.05f64.powf(0.1);
        assert!((l - want).abs() < 1e-6, "got {l}, want {want}");
        assert!((l - 0.7411).abs() < 1e-3);
    }

    #[test]
    fn lcb_matches_oracle_bisection() {
        let l = lower_conf_bound(5, 10, Probability::new(0.95).unwrap()).unwrap().value();
        let want = oracle_lcb(5, 10, 0.95);
        assert!((l - want).abs() < 1e-6, "got {l}, want {want}");
        assert!((l - 0.222).abs() < 2e-3, "got {l}");
    }

    #[test]
    fn lcb_monotone_grid() {
        for n in [5u64, 17, 50] {
            let mut prev = -1.0;
            for k in 0..=n {
                let l = lower_conf_bound(k, n, Probability::new(0.95).unwrap()).unwrap().value();
                assert!(l >= prev, "not nondecreasing in successes at n={n} k={k}");
                assert!(l <= k as f64 / n as f64 + 1e-12);
                prev = l;
            }
            for k in [1u64, n / 2 + 1, n] {
                let mut prev = 2.0;
                for conf in [0.5, 0.8, 0.9, 0.95, 0.99, 0.999] {
                    let l = lower_conf_bound(k, n, Probability::new(conf).unwrap()).unwrap().value();
                    assert!(l <= prev, "not nonincreasing in confidence at n={n} k={k}");
                    prev = l;
                }
            }
        }
    }

    #[test]
    fn lcb_coverage_simulation() {
        // 10_000 draws from Binomial(100, 0.7); the 95% lower bound may exceed
        // the true parameter in at most 5% + 1% slack of trials.
        let (n, p_true) = (100u64, 0.7f64);
        let conf = Probability::new(0.95).unwrap();
        let mut over = 0u32;
        let mut lcb_cache: Vec<Option<f64>> = vec![None; (n + 1) as usize];
        for trial in 0..10_000u64 {
            let mut k = 0u64;
            for i in 0..n {
                let u = crate::rng::u64_to_open01(crate::rng::counter_u64(0xC0FFEE, trial, i));
                if u < p_true {
                    k += 1;
                }
            }
            let l = *lcb_cache[k as usize].get_or_insert_with(|| {
                lower_conf_bound(k, n, conf).unwrap().value()
            });
            if l > p_true {
                over += 1;
            }
        }
        assert!(over as f64 <= 0.06 * 10_000.0, "coverage violated {over} times");
    }

    #[test]
    fn lcb_rejects_bad_confidence() {
        assert!(lower_conf_bound(5, 10, Probability::new(1.0).unwrap()).is_err());
        assert!(lower_conf_bound(5, 10, Probability::new(0.0).unwrap()).is_err());
    }

    #[test]
    fn probability_rejects_out_of_range() {
        assert!(Probability::new(-0.1).is_err());
        assert!(Probability::new(1.1).is_err());
        assert!(Probability::new(f64::NAN).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_holds_everywhere(p in 1e-10f64..=1.0 - 1e-10) {
                let x = normal_quantile_raw(p);
                prop_assert!((normal_cdf_raw(x) - p).abs() <= 1e-9);
            }

            #[test]
            fn pvalue_symmetric_at_half(n in 1u64..200, k_frac in 0.0f64..1.0) {
                let k = ((n as f64) * k_frac) as u64;
                let a = pvalue_binom(k, n, Probability::HALF).unwrap().value();
                let b = pvalue_binom(n - k, n, Probability::HALF).unwrap().value();
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }

            #[test]
            fn lcb_bounded_by_mle_and_monotone(n in 2u64..80, k_frac in 0.0f64..1.0, conf in 0.5f64..0.999) {
                let k = (((n as f64) * k_frac) as u64).min(n - 1);
                let c = Probability::new(conf).unwrap();
                let at_k = lower_conf_bound(k, n, c).unwrap().value();
                let at_k1 = lower_conf_bound(k + 1, n, c).unwrap().value();
                prop_assert!(at_k <= k as f64 / n as f64 + 1e-12);
                prop_assert!(at_k1 >= at_k);
            }
        }
    }
}
