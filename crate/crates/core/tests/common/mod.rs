//! Reference implementations used as test oracles. They share no code with
//! the library: special functions are obtained by numerical quadrature and
//! the curve by brute-force counting.

#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

use selcov::model::{Nativity, PredictionRecord};
use selcov::phenology::EVENT_PRESENT_CLASS;
use selcov::synth::{PhenoSpec, SpeciesSpec, SyntheticPhenology};

/// Tanh-sinh quadrature of `f` over `[a, b]`.
///
/// `f` receives `(x, x - a, b - x)`; the two distances are computed without
/// cancellation, so integrands singular at an endpoint can be evaluated
/// accurately there.
pub fn tanh_sinh<F: Fn(f64, f64, f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let eval = |t: f64| -> f64 {
        let u = FRAC_PI_2 * t.sinh();
        let cosh_u = u.cosh();
        let weight = half * FRAC_PI_2 * t.cosh() / (cosh_u * cosh_u);
        if weight == 0.0 || !weight.is_finite() {
            return 0.0;
        }
        let dist_lo = half * 2.0 / (1.0 + (-2.0 * u).exp());
        let dist_hi = half * 2.0 / (1.0 + (2.0 * u).exp());
        if dist_lo <= 0.0 || dist_hi <= 0.0 {
            return 0.0;
        }
        let x = if u < 0.0 { a + dist_lo } else { b - dist_hi };
        weight * f(x, dist_lo, dist_hi)
    };
    const T_MAX: f64 = 4.0;
    let mut h = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while k as f64 * h <= T_MAX {
        sum += eval(k as f64 * h) + eval(-(k as f64) * h);
        k += 1;
    }
    let mut estimate = sum * h;
    for _ in 0..10 {
        h *= 0.5;
        // add the new odd nodes
        let mut k = 1;
        while k as f64 * h <= T_MAX {
            sum += eval(k as f64 * h) + eval(-(k as f64) * h);
            k += 2;
        }
        let next = sum * h;
        let converged = (next - estimate).abs() <= 1e-15 * next.abs();
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}

/// I_x(a, b) as the ratio of two beta integrals.
pub fn incomplete_beta_by_quadrature(a: f64, b: f64, x: f64) -> f64 {
    let full = tanh_sinh(|_t, d_lo, d_hi| d_lo.powf(a - 1.0) * d_hi.powf(b - 1.0), 0.0, 1.0);
    // on [0, x], 1 - t = (1 - x) + (x - t)
    let part = tanh_sinh(
        |_t, d_lo, d_hi| d_lo.powf(a - 1.0) * ((1.0 - x) + d_hi).powf(b - 1.0),
        0.0,
        x,
    );
    part / full
}

/// Two-sided Student-t tail P(|T| >= t) by integrating cos^(df-1) over
/// theta = atan(t / sqrt(df)) .. pi/2.
pub fn t_tail_by_quadrature(t: f64, df: f64) -> f64 {
    let theta = (t.abs() / df.sqrt()).atan();
    // cos(theta) = sin(pi/2 - theta) keeps precision near pi/2
    let density = |_x: f64, _d_lo: f64, d_hi: f64| d_hi.sin().powf(df - 1.0);
    let total = tanh_sinh(density, 0.0, FRAC_PI_2);
    let tail = tanh_sinh(density, theta, FRAC_PI_2);
    tail / total
}

/// Slope, intercept and slope standard error from the normal equations.
pub struct NaiveFit {
    pub slope: f64,
    pub intercept: f64,
    pub se_slope: f64,
}

pub fn naive_ols(xs: &[f64], ys: &[f64]) -> NaiveFit {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let s2 = sse / (n - 2.0);
    let se_slope = (s2 * n / det).sqrt();
    NaiveFit {
        slope,
        intercept,
        se_slope,
    }
}

/// (t, df) of Welch's test from textbook formulas.
pub fn naive_welch(a: &[f64], b: &[f64]) -> (f64, f64) {
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, var)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let qa = va / na;
    let qb = vb / nb;
    let t = (ma - mb) / (qa + qb).sqrt();
    let df = (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    (t, df)
}

/// (accepted, correct) at `threshold`, counted one record at a time.
pub fn brute_force_counts(records: &[PredictionRecord], threshold: f64) -> (usize, usize) {
    let mut accepted = 0;
    let mut correct = 0;
    for r in records {
        let probs = r.probabilities();
        let mut best = 0;
        for k in 1..probs.len() {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        if probs[best] >= threshold {
            accepted += 1;
            if r.true_label() == Some(best) {
                correct += 1;
            }
        }
    }
    (accepted, correct)
}

/// Mean and sample standard deviation by Welford's recurrence.
pub fn welford(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    (mean, (m2 / (values.len() - 1) as f64).sqrt())
}

/// Peak resident set size of this process in bytes (Linux only).
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Two nativity groups of 20 species each; introduced means sit 20 days
/// after native ones.
pub fn two_group_spec(label_noise_rate: f64, seed: u64) -> PhenoSpec {
    let mut species = Vec::new();
    for i in 0..20 {
        let base = 210.0 + 2.0 * i as f64;
        let mut native = SpeciesSpec::new(format!("native-{i:02}"), base, 0.0, 10.0, 400);
        native.nativity = Some(Nativity::Native);
        let mut introduced = SpeciesSpec::new(format!("introduced-{i:02}"), base + 20.0, 0.0, 10.0, 400);
        introduced.nativity = Some(Nativity::Introduced);
        species.push(native);
        species.push(introduced);
    }
    PhenoSpec::new(species, label_noise_rate, seed)
}

/// 20 species trending -0.03 days/year and 30 without a trend.
pub fn shift_spec(seed: u64) -> PhenoSpec {
    let mut shifted = SpeciesSpec::new("shifted", 160.0, -0.03, 3.0, 1000);
    shifted.count = Some(20);
    let mut stable = SpeciesSpec::new("stable", 200.0, 0.0, 3.0, 1000);
    stable.count = Some(30);
    let mut spec = PhenoSpec::new(vec![shifted, stable], 0.02, seed);
    spec.absent_fraction = 0.1;
    spec
}

/// Fraction of model-accepted event annotations whose truth is absent.
pub fn effective_noise(pheno: &SyntheticPhenology, threshold: f64) -> f64 {
    let accepted: Vec<_> = pheno
        .specimens
        .iter()
        .filter(|s| {
            let d = s.record.decision();
            d.predicted_class == EVENT_PRESENT_CLASS && d.confidence >= threshold
        })
        .collect();
    accepted.iter().filter(|s| !s.present).count() as f64 / accepted.len() as f64
}
