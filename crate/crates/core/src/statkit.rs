//! Descriptive statistics in the layout of a spreadsheet "Descriptive
//! Statistics" report, plus histograms, nearest-rank percentiles and a
//! consistency check for published summary tables.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate sample: standard deviation is zero")]
    Degenerate,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),
    #[error("degrees of freedom must be at least 1")]
    InvalidDegreesOfFreedom,
    #[error("bin count must be at least 1")]
    InvalidBinCount,
    #[error("quantile {0} outside (0, 1]")]
    InvalidQuantile(f64),
    #[error("implied sample size {implied_n} leaves no degrees of freedom")]
    NoDegreesOfFreedom { implied_n: u64 },
    #[error("standard error must be positive")]
    InvalidStandardError,
}

/// Field names follow the row labels of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    #[serde(rename = "Mean")]
    pub mean: f64,
    #[serde(rename = "Standard Error")]
    pub standard_error: f64,
    #[serde(rename = "Median")]
    pub median: f64,
    #[serde(rename = "Standard Deviation")]
    pub standard_deviation: f64,
    #[serde(rename = "Simple Variance")]
    pub sample_variance: f64,
    /// Bias-corrected excess kurtosis.
    #[serde(rename = "Kurtosis")]
    pub kurtosis: f64,
    /// Bias-corrected skewness.
    #[serde(rename = "Skewness")]
    pub skewness: f64,
    #[serde(rename = "Range")]
    pub range: f64,
    #[serde(rename = "Minimum")]
    pub minimum: f64,
    #[serde(rename = "Maximum")]
    pub maximum: f64,
    /// Half-width of the 95% confidence interval of the mean.
    #[serde(rename = "Confidence Level (95%)")]
    pub confidence_level_95: f64,
    #[serde(rename = "Count")]
    pub count: usize,
}

impl StatsSummary {
    /// `(label, value)` rows in report order.
    pub fn rows(&self) -> [(&'static str, f64); 12] {
        [
            ("Mean", self.mean),
            ("Standard Error", self.standard_error),
            ("Median", self.median),
            ("Standard Deviation", self.standard_deviation),
            ("Simple Variance", self.sample_variance),
            ("Kurtosis", self.kurtosis),
            ("Skewness", self.skewness),
            ("Range", self.range),
            ("Minimum", self.minimum),
            ("Maximum", self.maximum),
            ("Confidence Level (95%)", self.confidence_level_95),
            ("Count", self.count as f64),
        ]
    }

    pub fn render_table(&self) -> String {
        let mut out = String::from("Delay (ms)\n");
        for (label, v) in self.rows() {
            if label == "Count" {
                out.push_str(&format!("{label}\t{}\n", self.count));
            } else {
                out.push_str(&format!("{label}\t{v:.2}\n"));
            }
        }
        out
    }
}

fn sorted_finite(samples: &[f64]) -> Result<Vec<f64>, StatsError> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub fn describe(samples: &[f64]) -> Result<StatsSummary, StatsError> {
    let n = samples.len();
    if n < 4 {
        return Err(StatsError::TooFewSamples { needed: 4, got: n });
    }
    let sorted = sorted_finite(samples)?;
    let nf = n as f64;
    let mean = sorted.iter().sum::<f64>() / nf;
    let ss: f64 = sorted.iter().map(|x| (x - mean).powi(2)).sum();
    let variance = ss / (nf - 1.0);
    let sd = variance.sqrt();
    if sd == 0.0 || sd < mean.abs() * 1e-14 {
        return Err(StatsError::Degenerate);
    }
    let (s3, s4) = sorted.iter().fold((0.0, 0.0), |(a, b), x| {
        let z = (x - mean) / sd;
        (a + z.powi(3), b + z.powi(4))
    });
    let skewness = nf / ((nf - 1.0) * (nf - 2.0)) * s3;
    let kurtosis = nf * (nf + 1.0) / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0)) * s4
        - 3.0 * (nf - 1.0).powi(2) / ((nf - 2.0) * (nf - 3.0));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let se = sd / nf.sqrt();
    let t = t_quantile(0.975, (n - 1) as u64)?;
    let (minimum, maximum) = (sorted[0], sorted[n - 1]);
    Ok(StatsSummary {
        mean,
        standard_error: se,
        median,
        standard_deviation: sd,
        sample_variance: variance,
        kurtosis,
        skewness,
        range: maximum - minimum,
        minimum,
        maximum,
        confidence_level_95: t * se,
        count: n,
    })
}

/// Student's t cumulative distribution function.
pub fn t_cdf(t: f64, df: u64) -> f64 {
    let v = df as f64;
    let x = v / (v + t * t);
    let tail = 0.5 * beta_reg(v / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Inverse CDF of Student's t by bisection on [`t_cdf`].
pub fn t_quantile(p: f64, df: u64) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::InvalidProbability(p));
    }
    if df == 0 {
        return Err(StatsError::InvalidDegreesOfFreedom);
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let upper = p > 0.5;
    let target = if upper { p } else { 1.0 - p };
    let mut hi = 1.0;
    while t_cdf(hi, df) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if t_cdf(mid, df) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    Ok(if upper { t } else { -t })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub cumulative_fraction: Vec<f64>,
}

impl HistogramReport {
    /// Columns `bin_upper_ms,count,cumulative_fraction`, one row per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_upper_ms,count,cumulative_fraction\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.bin_edges[i + 1],
                c,
                self.cumulative_fraction[i]
            ));
        }
        out
    }

    /// Cumulative fraction of samples at or below the first bin edge `>= x`.
    pub fn cumulative_at(&self, x: f64) -> f64 {
        self.bin_edges[1..]
            .iter()
            .position(|e| *e >= x)
            .map_or(1.0, |i| self.cumulative_fraction[i])
    }
}

/// Equal-width bins over `[min, max]`; every bin is half-open except the last.
pub fn histogram(samples: &[f64], bins: usize) -> Result<HistogramReport, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    if bins == 0 {
        return Err(StatsError::InvalidBinCount);
    }
    let sorted = sorted_finite(samples)?;
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let bins = if hi > lo { bins } else { 1 };
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
    bin_edges.push(hi);

    let mut counts = vec![0u64; bins];
    for x in &sorted {
        let i = if width > 0.0 {
            (((x - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[i] += 1;
    }
    let n = sorted.len() as f64;
    let mut running = 0u64;
    let mut cumulative_fraction: Vec<f64> = counts
        .iter()
        .map(|c| {
            running += c;
            running as f64 / n
        })
        .collect();
    *cumulative_fraction.last_mut().expect("at least one bin") = 1.0;
    Ok(HistogramReport {
        bin_edges,
        counts,
        cumulative_fraction,
    })
}

/// Nearest-rank percentile: the sorted sample at 1-based rank `ceil(q * n)`.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(StatsError::InvalidQuantile(q));
    }
    let sorted = sorted_finite(samples)?;
    let n = sorted.len();
    // Guard against q * n landing a hair above an integer through rounding.
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

/// Summary rows as printed in a published table; only the rows the checks
/// need are required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishedSummary {
    pub mean: f64,
    pub standard_error: f64,
    pub median: f64,
    pub standard_deviation: f64,
    pub sample_variance: f64,
    pub kurtosis: f64,
    pub skewness: f64,
    pub range: f64,
    pub minimum: f64,
    pub maximum: f64,
    pub confidence_level_95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationCheck {
    pub relation: &'static str,
    pub predicted: f64,
    pub published: f64,
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    /// `round((sd / se)^2)`.
    pub implied_n: u64,
    pub relations: Vec<RelationCheck>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.relations.iter().all(|r| r.pass)
    }
}

fn relation(name: &'static str, predicted: f64, published: f64, tolerance: f64) -> RelationCheck {
    let relative_error = if published == 0.0 {
        predicted.abs()
    } else {
        ((predicted - published) / published).abs()
    };
    RelationCheck {
        relation: name,
        predicted,
        published,
        relative_error,
        pass: relative_error <= tolerance,
    }
}

/// Cross-checks the rows of a published summary against each other:
/// the confidence level against `t(0.975, n - 1) * se` with `n` implied by
/// `sd` and `se`, the range against `max - min`, and the variance against `sd^2`.
pub fn consistency_check(
    published: &PublishedSummary,
    tolerance: f64,
) -> Result<ConsistencyReport, StatsError> {
    if !(published.standard_error > 0.0) {
        return Err(StatsError::InvalidStandardError);
    }
    let ratio = published.standard_deviation / published.standard_error;
    let implied_n = (ratio * ratio).round() as u64;
    if implied_n < 2 {
        return Err(StatsError::NoDegreesOfFreedom { implied_n });
    }
    let t = t_quantile(0.975, implied_n - 1)?;
    Ok(ConsistencyReport {
        implied_n,
        relations: vec![
            relation(
                "confidence level",
                t * published.standard_error,
                published.confidence_level_95,
                tolerance,
            ),
            relation(
                "range",
                published.maximum - published.minimum,
                published.range,
                tolerance,
            ),
            relation(
                "variance",
                published.standard_deviation.powi(2),
                published.sample_variance,
                tolerance,
            ),
        ],
    })
}
