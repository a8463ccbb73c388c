//! Published per-scenario delay statistics (ms), as printed, used both as
//! calibration targets and for the internal-consistency check.

use crate::statkit::PublishedSummary;

#[derive(Clone, Debug, PartialEq)]
pub struct PublishedColumn {
    /// Scenario slug, e.g. `wg-http-office`.
    pub scenario: &'static str,
    pub summary: PublishedSummary,
}

#[allow(clippy::too_many_arguments)]
const fn col(
    scenario: &'static str,
    mean: f64,
    standard_error: f64,
    median: f64,
    standard_deviation: f64,
    sample_variance: f64,
    kurtosis: f64,
    skewness: f64,
    range: f64,
    minimum: f64,
    maximum: f64,
    confidence_level_95: f64,
) -> PublishedColumn {
    PublishedColumn {
        scenario,
        summary: PublishedSummary {
            mean,
            standard_error,
            median,
            standard_deviation,
            sample_variance,
            kurtosis,
            skewness,
            range,
            minimum,
            maximum,
            confidence_level_95,
        },
    }
}

/// Row order in each entry: mean, standard error, median, standard deviation,
/// sample variance, kurtosis, skewness, range, minimum, maximum, 95% level.
pub const PUBLISHED: [PublishedColumn; 11] = [
    // Local control over the LAN.
    col("lan-local", 72.92, 0.54, 70.67, 17.22, 296.60, 153.77, 9.72, 373.78, 28.33, 402.12, 1.07),
    // Cloud control from the guest WiFi.
    col("cloud-guestwifi", 557.05, 2.52, 541.84, 79.90, 6383.28, 42.27, 5.61, 942.02, 447.13, 1389.15, 4.94),
    // 4G: tunnel over HTTP, tunnel over HTTPS, cloud.
    col("wg-http-4g", 369.17, 3.40, 354.10, 107.63, 11585.27, 215.59, 12.66, 2303.85, 309.79, 2613.64, 6.67),
    col("wg-https-4g", 948.51, 2.80, 945.31, 80.38, 6460.59, 62.92, 5.59, 1226.46, 788.98, 2015.44, 5.49),
    col("cloud-4g", 938.51, 22.78, 840.12, 795.82, 633323.88, 82.94, 9.15, 7721.95, 723.11, 8445.06, 44.70),
    // Office network.
    col("wg-http-office", 158.84, 2.57, 150.27, 81.69, 6672.97, 147.61, 11.96, 1121.89, 117.34, 1239.23, 5.05),
    col("wg-https-office", 472.27, 1.88, 462.75, 63.5, 4032.26, 179.69, 11.84, 1120.6, 413.68, 1534.27, 3.69),
    col("cloud-office", 465.81, 10.1, 432.5, 322.11, 103756.77, 226.85, 14.81, 5128.89, 362.03, 5490.92, 19.81),
    // Public WiFi.
    col("wg-http-public", 145.18, 3.66, 136.96, 118.23, 13977.88, 573.91, 22.28, 3195.42, 113.85, 3309.27, 7.18),
    col("wg-https-public", 475.68, 6.32, 464.48, 200.69, 40278.38, 970.92, 30.88, 6369.98, 410.47, 6780.45, 12.41),
    col("cloud-public", 477.24, 2.97, 455.26, 94.46, 8922.14, 54.81, 6.39, 1167.12, 389.07, 1556.19, 5.83),
];

pub fn published(scenario: &str) -> Option<&'static PublishedColumn> {
    PUBLISHED.iter().find(|c| c.scenario == scenario)
}
