//! Rank and classification metrics for comparing annotators.
//!
//! Spearman correlation (average ranks for ties) is the primary comparison
//! metric; macro-F1 and confusion matrices are kept as classification
//! contrast metrics. Significance uses a two-sided Student's t test whose
//! CDF is evaluated through the regularized incomplete beta function
//! implemented in [`special`], so p-values do not depend on any external
//! statistics library.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("paired inputs must have equal length (got {0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {min} observations, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("values must be finite")]
    NonFinite,
    #[error("correlation undefined: {0} values are constant")]
    ConstantInput(&'static str),
    #[error("|rho| must be <= 1, got {0}")]
    RhoOutOfRange(f64),
    #[error("label {0} outside the 0-5 class range")]
    LabelOutOfRange(u8),
}

/// Number of quality classes on the 0-5 scale.
pub const NUM_CLASSES: usize = 6;

/// A validated pair of equally long, finite score vectors with n >= 3.
#[derive(Debug, Clone)]
pub struct PairedScores {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedScores {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, MetricsError> {
        if x.len() != y.len() {
            return Err(MetricsError::LengthMismatch(x.len(), y.len()));
        }
        if x.len() < 3 {
            return Err(MetricsError::TooFewSamples {
                min: 3,
                got: x.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Spearman rank correlation: Pearson correlation of the average-rank
    /// vectors. Errors when either side is constant.
    pub fn spearman(&self) -> Result<f64, MetricsError> {
        let rx = average_ranks(&self.x);
        let ry = average_ranks(&self.y);
        pearson(&rx, &ry)
    }
}

/// Convenience wrapper over [`PairedScores::spearman`].
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    PairedScores::new(x.to_vec(), y.to_vec())?.spearman()
}

/// 1-based ranks with ties resolved to the mean rank of the tied run.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the average of ranks i+1..=j+1
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 {
        return Err(MetricsError::ConstantInput("x"));
    }
    if vy == 0.0 {
        return Err(MetricsError::ConstantInput("y"));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Two-sided p-value for a Spearman coefficient under the t approximation:
/// t = rho * sqrt((n-2) / (1-rho^2)) with n-2 degrees of freedom.
pub fn spearman_pvalue(rho: f64, n: usize) -> Result<f64, MetricsError> {
    if n < 4 {
        return Err(MetricsError::TooFewSamples { min: 4, got: n });
    }
    if !rho.is_finite() || rho.abs() > 1.0 {
        return Err(MetricsError::RhoOutOfRange(rho));
    }
    if rho.abs() == 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    // Two-sided tail of Student's t: I_{df/(df+t^2)}(df/2, 1/2).
    Ok(special::regularized_incomplete_beta(
        df / 2.0,
        0.5,
        df / (df + t * t),
    ))
}

/// 6x6 confusion grid indexed (true, predicted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion(truth: &[u8], pred: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), pred.len()));
    }
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (&t, &p) in truth.iter().zip(pred) {
        if t as usize >= NUM_CLASSES {
            return Err(MetricsError::LabelOutOfRange(t));
        }
        if p as usize >= NUM_CLASSES {
            return Err(MetricsError::LabelOutOfRange(p));
        }
        counts[t as usize][p as usize] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Macro-averaged F1 over the classes present in the true labels.
///
/// Averaging only over classes that occur in `truth` keeps absent classes
/// from diluting or padding the score; reports that carry this number name
/// the convention explicitly.
pub fn macro_f1(truth: &[u8], pred: &[u8]) -> Result<f64, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(MetricsError::TooFewSamples { min: 1, got: 0 });
    }
    let cm = confusion(truth, pred)?;
    let mut sum = 0.0;
    let mut present = 0usize;
    for class in 0..NUM_CLASSES {
        let tp = cm.counts[class][class] as f64;
        let fn_: f64 = (0..NUM_CLASSES)
            .filter(|&p| p != class)
            .map(|p| cm.counts[class][p] as f64)
            .sum();
        let fp: f64 = (0..NUM_CLASSES)
            .filter(|&t| t != class)
            .map(|t| cm.counts[t][class] as f64)
            .sum();
        if tp + fn_ == 0.0 {
            continue; // class absent from truth
        }
        present += 1;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = tp / (tp + fn_);
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(sum / present as f64)
}

/// Log-gamma and the regularized incomplete beta function.
///
/// Lanczos approximation (g = 7, 9 terms) plus the modified Lentz continued
/// fraction; both converge well past the 1e-12 absolute tolerance the
/// p-value contract requires.
pub mod special {
    const LANCZOS: [f64; 9] = [
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

    /// Natural log of the gamma function for x > 0.
    pub fn ln_gamma(x: f64) -> f64 {
        debug_assert!(x > 0.0);
        if x < 0.5 {
            // reflection formula
            let pi = std::f64::consts::PI;
            return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
        }
        let x = x - 1.0;
        let mut acc = LANCZOS[0];
        for (i, c) in LANCZOS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }

    /// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
    pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
        debug_assert!(a > 0.0 && b > 0.0 && (0.0..=1.0).contains(&x));
        if x == 0.0 {
            return 0.0;
        }
        if x == 1.0 {
            return 1.0;
        }
        let ln_front =
            ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
        let front = ln_front.exp();
        if x < (a + 1.0) / (a + b + 2.0) {
            front * beta_continued_fraction(a, b, x) / a
        } else {
            1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
        }
    }

    // Modified Lentz evaluation of the continued fraction in the standard
    // incomplete-beta expansion.
    fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
        const FPMIN: f64 = 1e-300;
        const EPS: f64 = 1e-16;
        const MAX_ITER: usize = 500;

        let qab = a + b;
        let qap = a + 1.0;
        let qam = a - 1.0;
        let mut c = 1.0;
        let mut d = 1.0 - qab * x / qap;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        d = 1.0 / d;
        let mut h = d;
        for m in 1..=MAX_ITER {
            let m = m as f64;
            let m2 = 2.0 * m;
            // even step
            let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = 1.0 + aa / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            h *= d * c;
            // odd step
            let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = 1.0 + aa / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        h
    }
}
