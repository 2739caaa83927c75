//! Data-driven threshold calibration.
//!
//! Replaces the visual threshold picks of the method with algorithmic
//! detectors over empirical distributions: a roughness changepoint for the
//! speed threshold, a residual-minimizing broken power-law fit plus a tail
//! irregularity scan for the dwell-time thresholds, and a smoothed histogram
//! peak plus cumulative-probability doubling rule for POI radii.
//!
//! Histograms are mergeable so partial aggregates from data partitions can be
//! combined before the (single-threaded) fit step.

use crate::model::{PoiCategory, PoiCategoryParams};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("insufficient data for {what}: need {needed}, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("POI radius unreachable: cumulative probability at valid radius is {cdf_at_valid}")]
    RadiusUnreachable { cdf_at_valid: f64 },
    #[error("invalid calibration parameter: {0}")]
    BadConfig(String),
    #[error("histogram merge mismatch: bin width or origin differ")]
    MergeMismatch,
}

/// A detector output plus whether it came from the configured fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibrated<T> {
    pub value: T,
    pub fallback: bool,
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// Fixed-width histogram with left-closed, right-open bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub origin: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bin samples; sample `x` lands in bin `floor((x - origin)/bin_width)`.
    /// Returns the histogram and the number of rejected samples
    /// (below origin or not finite).
    pub fn build<I: IntoIterator<Item = f64>>(
        samples: I,
        bin_width: f64,
        origin: f64,
    ) -> Result<(Self, u64), CalibrationError> {
        if !(bin_width > 0.0) {
            return Err(CalibrationError::BadConfig(format!(
                "bin width must be positive, got {bin_width}"
            )));
        }
        let mut counts: Vec<u64> = Vec::new();
        let mut rejected = 0u64;
        for x in samples {
            if !x.is_finite() || x < origin {
                rejected += 1;
                continue;
            }
            let idx = ((x - origin) / bin_width).floor() as usize;
            if idx >= counts.len() {
                counts.resize(idx + 1, 0);
            }
            counts[idx] += 1;
        }
        Ok((
            Self {
                bin_width,
                origin,
                counts,
            },
            rejected,
        ))
    }

    /// Bin-wise sum with another histogram of identical geometry.
    pub fn merge(&mut self, other: &Histogram) -> Result<(), CalibrationError> {
        if self.bin_width != other.bin_width || self.origin != other.origin {
            return Err(CalibrationError::MergeMismatch);
        }
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (i, c) in other.counts.iter().enumerate() {
            self.counts[i] += c;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn populated_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn bin_left(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.bin_width
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.bin_width
    }
}

/// Mean absolute successive log-difference of `counts[start..start+len]`.
/// Infinite when the window contains an empty bin, so empty regions always
/// read as rough.
fn window_roughness(counts: &[u64], start: usize, len: usize) -> f64 {
    debug_assert!(len >= 2 && start + len <= counts.len());
    let window = &counts[start..start + len];
    if window.iter().any(|&c| c == 0) {
        return f64::INFINITY;
    }
    let sum: f64 = window
        .windows(2)
        .map(|w| ((w[1] as f64).ln() - (w[0] as f64).ln()).abs())
        .sum();
    sum / (len - 1) as f64
}

// ---------------------------------------------------------------------------
// Speed threshold (transition out of the drift-dominated low-speed region)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SpeedThresholdParams {
    /// Bin width of the pair-speed histogram, km/h.
    pub bin_width_kmh: f64,
    /// Rolling-roughness window, in bins.
    pub window_bins: usize,
    /// Roughness below which the distribution counts as smooth.
    pub smoothness_ratio: f64,
    /// Value returned (flagged) when no bin qualifies, km/h.
    pub fallback_kmh: f64,
}

impl Default for SpeedThresholdParams {
    fn default() -> Self {
        Self {
            bin_width_kmh: 0.1,
            window_bins: 5,
            smoothness_ratio: 0.2,
            fallback_kmh: 1.1,
        }
    }
}

/// Locate the boundary between the rough low-speed part of the pair-speed
/// distribution and the smooth high-speed part.
///
/// Scans forward and returns the left edge of the first bin whose
/// forward-looking window of `window_bins` bins has roughness below
/// `smoothness_ratio`. Normalization of counts drops out of log differences,
/// so roughness is computed on raw counts.
pub fn detect_speed_threshold(
    hist: &Histogram,
    params: &SpeedThresholdParams,
) -> Result<Calibrated<f64>, CalibrationError> {
    if params.window_bins < 2 {
        return Err(CalibrationError::BadConfig(
            "speed window must span at least 2 bins".into(),
        ));
    }
    let populated = hist.populated_bins();
    if populated < 10 {
        return Err(CalibrationError::InsufficientData {
            what: "speed histogram populated bins",
            needed: 10,
            got: populated,
        });
    }
    let w = params.window_bins;
    for i in 0..hist.counts.len().saturating_sub(w - 1) {
        if window_roughness(&hist.counts, i, w) < params.smoothness_ratio {
            return Ok(Calibrated {
                value: hist.bin_left(i),
                fallback: false,
            });
        }
    }
    Ok(Calibrated {
        value: params.fallback_kmh,
        fallback: true,
    })
}

// ---------------------------------------------------------------------------
// Logarithmic binning and broken power-law fitting
// ---------------------------------------------------------------------------

/// Log-binned empirical density. Bin edges grow geometrically from the
/// smallest positive sample, `bins_per_decade` bins per factor of ten.
#[derive(Debug, Clone)]
pub struct LogBinnedDensity {
    /// Bin edges, length `counts.len() + 1`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Probability density per bin: count / (n * linear bin width).
    pub densities: Vec<f64>,
    /// Samples used (positive, finite).
    pub n: usize,
}

impl LogBinnedDensity {
    pub fn build(samples: &[f64], bins_per_decade: usize) -> Result<Self, CalibrationError> {
        if bins_per_decade == 0 {
            return Err(CalibrationError::BadConfig(
                "bins_per_decade must be positive".into(),
            ));
        }
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        let mut n = 0usize;
        for &x in samples {
            if x.is_finite() && x > 0.0 {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                n += 1;
            }
        }
        if n == 0 {
            return Err(CalibrationError::InsufficientData {
                what: "positive samples for log binning",
                needed: 1,
                got: 0,
            });
        }
        let bpd = bins_per_decade as f64;
        let decades = (x_max / x_min).log10();
        let nbins = ((decades * bpd).ceil() as usize).max(1);
        let edges: Vec<f64> = (0..=nbins)
            .map(|k| x_min * 10f64.powf(k as f64 / bpd))
            .collect();
        let mut counts = vec![0u64; nbins];
        for &x in samples {
            if !(x.is_finite() && x > 0.0) {
                continue;
            }
            let k = ((x / x_min).log10() * bpd).floor() as isize;
            let k = k.clamp(0, nbins as isize - 1) as usize;
            counts[k] += 1;
        }
        let densities: Vec<f64> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 / (n as f64 * (edges[i + 1] - edges[i])))
            .collect();
        Ok(Self {
            edges,
            counts,
            densities,
            n,
        })
    }

    /// Geometric center of bin `i`.
    pub fn bin_center(&self, i: usize) -> f64 {
        (self.edges[i] * self.edges[i + 1]).sqrt()
    }
}

/// Two power-law segments joined at a break, fitted in log-log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrokenPowerLawFit {
    /// Exponent below the break (density ~ x^-alpha1).
    pub alpha1: f64,
    /// Exponent above the break.
    pub alpha2: f64,
    /// Break location, same units as the samples.
    pub break_point: f64,
    /// Total squared log-log residual of the two-segment fit.
    pub fit_error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PowerLawFitParams {
    pub bins_per_decade: usize,
    pub min_samples: usize,
}

impl Default for PowerLawFitParams {
    fn default() -> Self {
        Self {
            bins_per_decade: 50,
            min_samples: 1_000,
        }
    }
}

/// Least-squares line through (x, y); returns (slope, intercept, sse).
fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let sse = points
        .iter()
        .map(|&(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    Some((slope, intercept, sse))
}

/// Fit a broken power law to positive samples by grid search over candidate
/// break locations.
///
/// Candidates are the interior bin edges of the log-binned density restricted
/// to `candidate_range` (full range when `None`). For each candidate, two
/// least-squares lines are fitted to (log bin center, log density) of the
/// populated bins below and above it; the break minimizing total squared
/// residual wins, with exponents the negated slopes.
pub fn fit_broken_power_law(
    samples: &[f64],
    candidate_range: Option<(f64, f64)>,
    params: &PowerLawFitParams,
) -> Result<BrokenPowerLawFit, CalibrationError> {
    if samples.len() < params.min_samples {
        return Err(CalibrationError::InsufficientData {
            what: "broken power-law samples",
            needed: params.min_samples,
            got: samples.len(),
        });
    }
    let binned = LogBinnedDensity::build(samples, params.bins_per_decade)?;
    fit_broken_power_law_binned(&binned, candidate_range)
}

/// Fraction of populated bins kept as a stability margin on each side of a
/// candidate break when no explicit candidate range is given. A side fitted
/// to only 2–3 bins has a near-zero residual with an arbitrary slope, which
/// lets degenerate edge candidates win the grid search on noise alone.
const SIDE_MARGIN_FRACTION: f64 = 0.15;

/// The grid-search core, exposed separately so pre-merged histograms can be
/// fitted directly.
pub fn fit_broken_power_law_binned(
    binned: &LogBinnedDensity,
    candidate_range: Option<(f64, f64)>,
) -> Result<BrokenPowerLawFit, CalibrationError> {
    let points: Vec<(usize, f64, f64)> = binned
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, _)| (i, binned.bin_center(i).ln(), binned.densities[i].ln()))
        .collect();

    // With an explicit range the caller controls placement and the spec
    // minimum of 2 populated bins per side applies.
    let min_side = if candidate_range.is_some() {
        2
    } else {
        ((points.len() as f64 * SIDE_MARGIN_FRACTION).ceil() as usize).max(2)
    };

    grid_search(binned, candidate_range, &points, min_side)
        .or_else(|| {
            // Sparse data: retry at the spec minimum before giving up.
            (min_side > 2).then(|| grid_search(binned, candidate_range, &points, 2)).flatten()
        })
        .ok_or_else(|| {
            CalibrationError::FitFailure(
                "no candidate break has 2 populated bins on both sides".into(),
            )
        })
}

fn grid_search(
    binned: &LogBinnedDensity,
    candidate_range: Option<(f64, f64)>,
    points: &[(usize, f64, f64)],
    min_side: usize,
) -> Option<BrokenPowerLawFit> {
    let mut best: Option<BrokenPowerLawFit> = None;
    for edge_idx in 1..binned.edges.len() - 1 {
        let edge = binned.edges[edge_idx];
        if let Some((lo, hi)) = candidate_range {
            if edge < lo || edge > hi {
                continue;
            }
        }
        let below: Vec<(f64, f64)> = points
            .iter()
            .filter(|&&(i, _, _)| i < edge_idx)
            .map(|&(_, x, y)| (x, y))
            .collect();
        let above: Vec<(f64, f64)> = points
            .iter()
            .filter(|&&(i, _, _)| i >= edge_idx)
            .map(|&(_, x, y)| (x, y))
            .collect();
        if below.len() < min_side || above.len() < min_side {
            continue;
        }
        let (Some((s1, _, e1)), Some((s2, _, e2))) = (fit_line(&below), fit_line(&above)) else {
            continue;
        };
        let total = e1 + e2;
        if best.map_or(true, |b| total < b.fit_error) {
            best = Some(BrokenPowerLawFit {
                alpha1: -s1,
                alpha2: -s2,
                break_point: edge,
                fit_error: total,
            });
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Dwell-time thresholds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TimeThresholdParams {
    pub fit: PowerLawFitParams,
    /// Break-candidate range in seconds; `None` searches every valid edge.
    pub candidate_range: Option<(f64, f64)>,
    /// Trailing-roughness window for the tail onset, in bins.
    pub tail_window_bins: usize,
    /// Roughness above which the tail counts as irregular.
    pub tail_irregularity_ratio: f64,
    pub fallback_t_min_s: f64,
    pub fallback_t_max_s: f64,
}

impl Default for TimeThresholdParams {
    fn default() -> Self {
        Self {
            fit: PowerLawFitParams::default(),
            candidate_range: None,
            tail_window_bins: 10,
            tail_irregularity_ratio: 1.0,
            fallback_t_min_s: 1_440.0,
            fallback_t_max_s: 46_800.0,
        }
    }
}

/// Dwell-time threshold pair plus the underlying fit.
#[derive(Debug, Clone, Copy)]
pub struct TimeThresholds {
    pub t_min_s: f64,
    pub t_max_s: f64,
    /// True when the tail scan found no irregular window and the configured
    /// default was substituted.
    pub t_max_fallback: bool,
    pub fit: BrokenPowerLawFit,
}

/// First bin index whose trailing window of `w` bins reads rougher than
/// `ratio`, or `None` when the whole binning stays regular.
fn tail_onset(counts: &[u64], w: usize, ratio: f64, first: usize) -> Option<usize> {
    for i in first.max(w - 1)..counts.len() {
        if window_roughness(counts, i + 1 - w, w) > ratio {
            return Some(i);
        }
    }
    None
}

/// Derive the minimum and maximum dwell thresholds from dwell samples.
///
/// `t_min` is the break of the broken power-law fit. `t_max` is the left edge
/// of the first bin beyond the break whose trailing window (the
/// `tail_window_bins` bins ending at that bin) has roughness exceeding
/// `tail_irregularity_ratio` — the onset of the patternless long-dwell tail.
/// Empty bins read as infinitely rough, so the scan also fires where the
/// density breaks up.
///
/// The power-law fit itself runs on the samples below the tail onset: the
/// irregular tail is by definition not power-law data, and its bins would
/// otherwise dominate the squared residuals and drag the break search.
pub fn detect_time_thresholds(
    samples: &[f64],
    params: &TimeThresholdParams,
) -> Result<TimeThresholds, CalibrationError> {
    if samples.len() < params.fit.min_samples {
        return Err(CalibrationError::InsufficientData {
            what: "dwell samples",
            needed: params.fit.min_samples,
            got: samples.len(),
        });
    }
    if params.tail_window_bins < 2 {
        return Err(CalibrationError::BadConfig(
            "tail window must span at least 2 bins".into(),
        ));
    }
    let w = params.tail_window_bins;
    let binned = LogBinnedDensity::build(samples, params.fit.bins_per_decade)?;

    let onset = tail_onset(&binned.counts, w, params.tail_irregularity_ratio, 0);
    let fit = match onset {
        Some(i) => {
            // The rough window ends at bin i; the irregularity began inside
            // it, so the regular region conservatively ends at its start.
            let cutoff = binned.edges[i + 1 - w];
            let regular: Vec<f64> = samples
                .iter()
                .copied()
                .filter(|&x| x.is_finite() && x > 0.0 && x < cutoff)
                .collect();
            // The regular part keeps the same smallest sample, so its bin
            // edges are a prefix of the full binning and the break stays an
            // edge of both.
            LogBinnedDensity::build(&regular, params.fit.bins_per_decade)
                .and_then(|b| fit_broken_power_law_binned(&b, params.candidate_range))
                .or_else(|_| fit_broken_power_law_binned(&binned, params.candidate_range))?
        }
        None => fit_broken_power_law_binned(&binned, params.candidate_range)?,
    };
    let t_min = fit.break_point;

    let break_idx = binned
        .edges
        .iter()
        .position(|&e| e == t_min)
        .unwrap_or_else(|| binned.edges.partition_point(|&e| e < t_min));

    // Re-scan beyond the break; the first irregular window at or after it
    // yields t_max.
    let t_max = tail_onset(
        &binned.counts,
        w,
        params.tail_irregularity_ratio,
        break_idx + w - 1,
    )
    .map(|i| binned.edges[i]);
    let (t_max_s, t_max_fallback) = match t_max {
        Some(v) => (v, false),
        None => (params.fallback_t_max_s, true),
    };
    // Keep t_min < t_max even when the fallback sits at or below the break.
    let t_max_s = if t_max_s <= t_min {
        binned.edges[(break_idx + 1).min(binned.edges.len() - 1)]
    } else {
        t_max_s
    };
    Ok(TimeThresholds {
        t_min_s: t_min,
        t_max_s,
        t_max_fallback,
        fit,
    })
}

// ---------------------------------------------------------------------------
// POI boundary radii
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct PoiRadiusParams {
    pub bin_width_m: f64,
    pub max_distance_m: f64,
    /// Centered moving-average window applied before peak picking.
    pub smooth_window: usize,
    pub min_samples: usize,
}

impl Default for PoiRadiusParams {
    fn default() -> Self {
        Self {
            bin_width_m: 5.0,
            max_distance_m: 2_000.0,
            smooth_window: 3,
            min_samples: 500,
        }
    }
}

/// Detect the valid radius (smoothed histogram peak of stop-to-nearest-POI
/// distances) and the POI radius (smallest distance where the empirical CDF
/// reaches twice its value at the valid radius) for one category.
pub fn detect_poi_radii(
    distances: &[f64],
    category: PoiCategory,
    params: &PoiRadiusParams,
) -> Result<PoiCategoryParams, CalibrationError> {
    if distances.len() < params.min_samples {
        return Err(CalibrationError::InsufficientData {
            what: "stop-to-POI distance samples",
            needed: params.min_samples,
            got: distances.len(),
        });
    }
    let in_range: Vec<f64> = distances
        .iter()
        .copied()
        .filter(|&d| d.is_finite() && d >= 0.0 && d <= params.max_distance_m)
        .collect();
    let (hist, _) = Histogram::build(in_range.iter().copied(), params.bin_width_m, 0.0)?;
    if hist.populated_bins() == 0 {
        return Err(CalibrationError::InsufficientData {
            what: "in-range distance samples",
            needed: 1,
            got: 0,
        });
    }

    // Centered moving average, truncated at the edges.
    let half = params.smooth_window / 2;
    let n_bins = hist.counts.len();
    let smoothed: Vec<f64> = (0..n_bins)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n_bins - 1);
            hist.counts[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
        })
        .collect();
    let peak = smoothed
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    let valid_radius = hist.bin_center(peak);

    // Empirical CDF over the full sample set, by sorted rank.
    let mut sorted: Vec<f64> = distances
        .iter()
        .copied()
        .filter(|d| d.is_finite() && *d >= 0.0)
        .collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let cdf_at_valid = sorted.partition_point(|&d| d <= valid_radius) as f64 / n;
    if cdf_at_valid == 0.0 {
        return Err(CalibrationError::FitFailure(format!(
            "no samples at or below the detected valid radius {valid_radius} m"
        )));
    }
    let target = 2.0 * cdf_at_valid;
    if target > 1.0 {
        return Err(CalibrationError::RadiusUnreachable { cdf_at_valid });
    }
    let rank = (target * n).ceil() as usize;
    let poi_radius = sorted[rank - 1];
    if poi_radius > params.max_distance_m {
        return Err(CalibrationError::RadiusUnreachable { cdf_at_valid });
    }
    Ok(PoiCategoryParams {
        category,
        valid_radius_m: valid_radius,
        poi_radius_m: poi_radius,
    })
}
