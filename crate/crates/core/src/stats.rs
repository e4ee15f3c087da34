//! Inference numerics: regularized incomplete beta, Student-t tails,
//! ordinary least squares with slope significance, and Welch's t-test.
//!
//! Everything here is pure and reentrant.

use serde::Serialize;
use thiserror::Error;

/// Iteration cap for the incomplete-beta continued fraction.
pub const CF_MAX_ITERATIONS: usize = 300;
/// Relative convergence tolerance for the continued fraction.
pub const CF_TOLERANCE: f64 = 1e-14;

const TINY: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("continued fraction did not converge within {CF_MAX_ITERATIONS} iterations (a={a}, b={b}, x={x})")]
    NoConvergence { a: f64, b: f64, x: f64 },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("predictor has zero variance")]
    DegenerateX,
    #[error("both groups are constant with unequal means")]
    ZeroVariance,
}

pub type Result<T> = std::result::Result<T, StatsError>;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut series = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        series += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// ln B(a, b)
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta function I_x(a, b).
///
/// Evaluated with the modified Lentz continued fraction. When
/// `x > (a + 1) / (a + b + 2)` the symmetric form `1 - I_{1-x}(b, a)` is
/// used so the fraction always runs in its fast-converging region.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(StatsError::Domain(format!("a must be positive and finite, got {a}")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(StatsError::Domain(format!("b must be positive and finite, got {b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(StatsError::Domain(format!("x must lie in [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }

    let swap = x > (a + 1.0) / (a + b + 2.0);
    let (pa, pb, px, py) = if swap { (b, a, 1.0 - x, x) } else { (a, b, x, 1.0 - x) };

    let ln_front = pa * px.ln() + pb * py.ln() - ln_beta(pa, pb);
    let cf = beta_continued_fraction(pa, pb, px)?;
    let value = ln_front.exp() * cf / pa;

    let value = if swap { 1.0 - value } else { value };
    Ok(value.clamp(0.0, 1.0))
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=CF_MAX_ITERATIONS {
        let m = m as f64;
        let m2 = 2.0 * m;

        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;

        if (delta - 1.0).abs() < CF_TOLERANCE {
            return Ok(h);
        }
    }
    Err(StatsError::NoConvergence { a, b, x })
}

/// Two-sided tail probability P(|T| ≥ |t|) for Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || df.is_infinite() {
        return Err(StatsError::Domain(format!("df must be positive and finite, got {df}")));
    }
    if t.is_nan() {
        return Err(StatsError::Domain("t is NaN".into()));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let t2 = t * t;
    if t2.is_infinite() {
        return Ok(0.0);
    }
    regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t2))
}

/// Positive critical value `c` with P(|T| ≥ c) = alpha, found by bisection
/// on the tail probability.
pub fn student_t_critical(alpha: f64, df: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while student_t_two_sided_p(hi, df)? > alpha {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(StatsError::Domain("critical value out of range".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_two_sided_p(mid, df)? > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Result of a simple linear regression `y = intercept + slope * x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub se_slope: f64,
    pub t_stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub n: usize,
    /// Residuals vanish up to rounding; `se_slope` is 0 and `p_value` is 0.
    pub degenerate_fit: bool,
}

impl RegressionResult {
    /// Two-sided confidence interval for the slope at level `1 - alpha`.
    pub fn slope_interval(&self, alpha: f64) -> Result<(f64, f64)> {
        let crit = student_t_critical(alpha, self.df as f64)?;
        let half = crit * self.se_slope;
        Ok((self.slope - half, self.slope + half))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Ordinary least squares of `ys` on `xs` with a two-sided t-test on the slope.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> Result<RegressionResult> {
    if xs.len() != ys.len() {
        return Err(StatsError::Domain(format!(
            "xs and ys differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::TooFewPoints { needed: 3, got: n });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::Domain("non-finite value in regression input".into()));
    }

    let x_mean = mean(xs);
    let y_mean = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(StatsError::DegenerateX);
    }

    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;

    let mut sse = 0.0;
    let mut y_scale: f64 = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let r = y - (intercept + slope * x);
        sse += r * r;
        y_scale = y_scale.max(y.abs());
    }

    let df = n - 2;
    // Residuals that are zero up to accumulated rounding count as an exact fit.
    let rounding = 8.0 * f64::EPSILON * y_scale.max(f64::MIN_POSITIVE);
    let exact_fit = sse <= n as f64 * rounding * rounding;

    if exact_fit && slope == 0.0 {
        return Ok(RegressionResult {
            slope,
            intercept,
            se_slope: 0.0,
            t_stat: 0.0,
            df,
            p_value: 1.0,
            n,
            degenerate_fit: true,
        });
    }
    if exact_fit {
        return Ok(RegressionResult {
            slope,
            intercept,
            se_slope: 0.0,
            t_stat: f64::INFINITY.copysign(slope),
            df,
            p_value: 0.0,
            n,
            degenerate_fit: true,
        });
    }

    let se_slope = (sse / df as f64 / sxx).sqrt();
    let t_stat = slope / se_slope;
    let p_value = student_t_two_sided_p(t_stat, df as f64)?;
    Ok(RegressionResult {
        slope,
        intercept,
        se_slope,
        t_stat,
        df,
        p_value,
        n,
        degenerate_fit: false,
    })
}

/// Welch's unequal-variance two-sample t-test (two-sided).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelchResult {
    /// mean(a) - mean(b)
    pub mean_diff: f64,
    pub t_stat: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn sample_variance(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    let (n_a, n_b) = (a.len(), b.len());
    if n_a < 2 || n_b < 2 {
        return Err(StatsError::TooFewPoints { needed: 2, got: n_a.min(n_b) });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::Domain("non-finite value in sample".into()));
    }
    let mean_a = mean(a);
    let mean_b = mean(b);
    let va = sample_variance(a, mean_a) / n_a as f64;
    let vb = sample_variance(b, mean_b) / n_b as f64;
    let mean_diff = mean_a - mean_b;

    if va == 0.0 && vb == 0.0 {
        if mean_diff != 0.0 {
            return Err(StatsError::ZeroVariance);
        }
        return Ok(WelchResult {
            mean_diff,
            t_stat: 0.0,
            df: (n_a + n_b - 2) as f64,
            p_value: 1.0,
            n_a,
            n_b,
        });
    }

    let se2 = va + vb;
    let t_stat = mean_diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (n_a - 1) as f64 + vb * vb / (n_b - 1) as f64);
    let p_value = student_t_two_sided_p(t_stat, df)?;
    Ok(WelchResult {
        mean_diff,
        t_stat,
        df,
        p_value,
        n_a,
        n_b,
    })
}
