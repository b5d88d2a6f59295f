use crate::error::{Error, Result};

/// Clamped spread times clamped bias times time, in the units of the
/// inputs (dB, dB, s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AstRecord {
    pub s: f64,
    pub b: f64,
    pub t: f64,
    pub ast: f64,
}

impl AstRecord {
    pub fn new(s: f64, b: f64, t: f64) -> Result<Self> {
        Ok(Self { s, b, t, ast: ast(s, b, t)? })
    }
}

/// Accuracy-speed tradeoff; spread and bias below 1 dB count as 1 dB.
pub fn ast(s: f64, b: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid("time must be finite and non-negative"));
    }
    if !(s >= 0.0) || !s.is_finite() || !b.is_finite() {
        return Err(Error::invalid("spread must be finite and non-negative"));
    }
    Ok(s.max(1.0) * b.abs().max(1.0) * t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsSummary {
    pub rmse: f64,
    pub bias: f64,
    /// Squared Pearson correlation; absent when either side is constant.
    pub r2: Option<f64>,
    pub n: usize,
}

pub fn compare(pred: &[f64], reference: &[f64]) -> Result<StatsSummary> {
    if pred.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            actual: pred.len(),
        });
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::invalid("comparison needs at least two pairs"));
    }
    let nf = n as f64;
    let d: Vec<f64> = pred.iter().zip(reference).map(|(p, r)| p - r).collect();
    let bias = d.iter().sum::<f64>() / nf;
    let rmse = (d.iter().map(|x| x * x).sum::<f64>() / nf).sqrt();
    let mp = pred.iter().sum::<f64>() / nf;
    let mr = reference.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        sxy += (p - mp) * (r - mr);
        sxx += (p - mp) * (p - mp);
        syy += (r - mr) * (r - mr);
    }
    let r2 = (sxx > 0.0 && syy > 0.0).then(|| (sxy * sxy / (sxx * syy)).min(1.0));
    Ok(StatsSummary { rmse, bias, r2, n })
}

/// Standard deviation of a difference of independent estimates.
pub fn propagate_sd(s_aided: f64, s_unaided: f64) -> f64 {
    s_aided.hypot(s_unaided)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
