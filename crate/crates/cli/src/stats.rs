//! Seed-level summary statistics: t-intervals and Welch's unequal-variance
//! t-test.

use attn_marl_core::{Error, Result};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn students_t(dof: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
    pub n: usize,
}

/// Two-sided t-interval for the mean at `level` (e.g. 0.95). A single
/// sample gives a zero-width interval.
pub fn t_interval(xs: &[f64], level: f64) -> Result<Interval> {
    if xs.is_empty() {
        return Err(Error::InsufficientSamples { need: 1, got: 0 });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::config("level", "must lie strictly between 0 and 1"));
    }
    let n = xs.len();
    let m = mean(xs);
    let half = if n < 2 {
        0.0
    } else {
        let q = students_t((n - 1) as f64).inverse_cdf(0.5 + level / 2.0);
        q * (sample_var(xs) / n as f64).sqrt()
    };
    Ok(Interval {
        mean: m,
        low: m - half,
        high: m + half,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchReport {
    pub mean_a: f64,
    pub mean_b: f64,
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

/// Welch's t-test with Welch–Satterthwaite degrees of freedom and a
/// two-sided p-value.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchReport> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(Error::InsufficientSamples { need: 2, got: s.len() });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (qa, qb) = (sample_var(a) / na, sample_var(b) / nb);
    let se2 = qa + qb;
    let diff = ma - mb;
    let (statistic, dof, p_value) = if se2 == 0.0 {
        let dof = na + nb - 2.0;
        if diff == 0.0 {
            (0.0, dof, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, dof, 0.0)
        }
    } else {
        let t = diff / se2.sqrt();
        let dof = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
        let p = 2.0 * students_t(dof).sf(t.abs());
        (t, dof, p.min(1.0))
    };
    Ok(WelchReport {
        mean_a: ma,
        mean_b: mb,
        statistic,
        dof,
        p_value,
    })
}
