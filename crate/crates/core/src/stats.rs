//! Spatiotemporal statistics over extracted trips: POI-category shares,
//! the city OD matrix, time-of-day profiles, and distance/duration
//! distributions with lognormal fits.
//!
//! Aggregations are built from mergeable pieces (histogram sums, log-moment
//! merges) so partial results from data partitions combine associatively.

use crate::calibration::LogBinnedDensity;
use crate::model::PoiCategory;
use crate::trips::{IntercityStatus, Trip, TripEnd};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("lognormal fit needs positive samples; {n_bad} sample(s) are <= 0{detail}")]
    NonPositiveSamples { n_bad: usize, detail: String },
    #[error("degenerate fit: all {n} samples are identical ({value})")]
    DegenerateFit { n: usize, value: f64 },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("no categorized trip ends to build shares from")]
    EmptyShareTable,
    #[error("trip references city {0} absent from the city list")]
    UnknownCity(String),
}

/// Maximum-likelihood lognormal parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LognormalFit {
    /// Mean of natural logs.
    pub mu: f64,
    /// Population standard deviation of natural logs.
    pub sigma: f64,
    pub n: usize,
}

impl LognormalFit {
    /// Mode of the fitted density, exp(mu - sigma^2).
    pub fn mode(&self) -> f64 {
        (self.mu - self.sigma * self.sigma).exp()
    }
}

/// Streaming moments of ln(x) with an associative merge, for parallel
/// partial aggregation (Chan et al. pairwise update).
#[derive(Debug, Clone, Copy, Default)]
pub struct LogMoments {
    pub n: usize,
    mean: f64,
    m2: f64,
}

impl LogMoments {
    pub fn push(&mut self, ln_x: f64) {
        self.n += 1;
        let delta = ln_x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (ln_x - self.mean);
    }

    pub fn merge(&mut self, other: &LogMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let delta = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += delta * n2 / n;
        self.m2 += other.m2 + delta * delta * n1 * n2 / n;
        self.n += other.n;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.m2 / self.n as f64
        }
    }
}

/// Fit a lognormal by maximum likelihood: mu and sigma are the mean and
/// population standard deviation of the log samples.
pub fn fit_lognormal(samples: &[f64]) -> Result<LognormalFit, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples(samples.len()));
    }
    let bad: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, &x)| !(x > 0.0) || !x.is_finite())
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        let detail = format!(
            " (first offending index {})",
            bad.first().copied().unwrap_or(0)
        );
        return Err(StatsError::NonPositiveSamples {
            n_bad: bad.len(),
            detail,
        });
    }
    let mut moments = LogMoments::default();
    for &x in samples {
        moments.push(x.ln());
    }
    let sigma = moments.variance().sqrt();
    if sigma == 0.0 {
        return Err(StatsError::DegenerateFit {
            n: samples.len(),
            value: samples[0],
        });
    }
    Ok(LognormalFit {
        mu: moments.mean(),
        sigma,
        n: samples.len(),
    })
}

/// Per-category proportions of categorized trip ends.
#[derive(Debug, Clone)]
pub struct CategoryShares {
    /// (category, proportion) over categorized ends, summing to 1.
    pub shares: Vec<(PoiCategory, f64)>,
    pub categorized: u64,
    /// Trip ends without a POI attribution (long-term ends away from any
    /// boundary); excluded from the share base.
    pub uncategorized: u64,
}

/// Tally the POI-category mix of trip ends.
pub fn category_shares(ends: &[TripEnd]) -> Result<CategoryShares, StatsError> {
    let mut counts: HashMap<PoiCategory, u64> = HashMap::new();
    let mut uncategorized = 0u64;
    for end in ends {
        match end.matched_poi_category {
            Some(c) => *counts.entry(c).or_default() += 1,
            None => uncategorized += 1,
        }
    }
    let categorized: u64 = counts.values().sum();
    if categorized == 0 {
        return Err(StatsError::EmptyShareTable);
    }
    let mut shares: Vec<(PoiCategory, f64)> = PoiCategory::ALL
        .iter()
        .filter_map(|c| counts.get(c).map(|&n| (*c, n as f64 / categorized as f64)))
        .collect();
    shares.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(CategoryShares {
        shares,
        categorized,
        uncategorized,
    })
}

/// Directed city-to-city intercity trip counts.
#[derive(Debug, Clone, PartialEq)]
pub struct OdMatrix {
    pub cities: Vec<String>,
    /// Row-major counts; entry (a, b) is trips from cities[a] to cities[b].
    pub counts: Vec<u64>,
}

impl OdMatrix {
    pub fn get(&self, from: usize, to: usize) -> u64 {
        self.counts[from * self.cities.len() + to]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Count intercity trips into a square matrix ordered by the supplied city
/// list. Trips not marked intercity are ignored; an intercity trip whose
/// city is missing from the list is a consistency error.
pub fn build_od_matrix(trips: &[Trip], cities: &[String]) -> Result<OdMatrix, StatsError> {
    let index: HashMap<&str, usize> = cities
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let n = cities.len();
    let mut counts = vec![0u64; n * n];
    for trip in trips {
        if trip.intercity != IntercityStatus::Intercity {
            continue;
        }
        let origin = trip
            .origin
            .city_id
            .as_deref()
            .ok_or_else(|| StatsError::UnknownCity("<unresolved origin>".into()))?;
        let dest = trip
            .destination
            .city_id
            .as_deref()
            .ok_or_else(|| StatsError::UnknownCity("<unresolved destination>".into()))?;
        let a = *index
            .get(origin)
            .ok_or_else(|| StatsError::UnknownCity(origin.to_string()))?;
        let b = *index
            .get(dest)
            .ok_or_else(|| StatsError::UnknownCity(dest.to_string()))?;
        counts[a * n + b] += 1;
    }
    Ok(OdMatrix {
        cities: cities.to_vec(),
        counts,
    })
}

/// Hourly departure and arrival histograms in local time.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyProfiles {
    pub departures: [u64; 24],
    pub arrivals: [u64; 24],
}

fn local_hour(epoch_s: i64, tz_offset_s: i64) -> usize {
    (((epoch_s + tz_offset_s).rem_euclid(86_400)) / 3_600) as usize
}

/// Bin trip departure and arrival instants by local hour of day.
pub fn time_of_day_profiles(trips: &[Trip], tz_offset_s: i64) -> HourlyProfiles {
    let mut departures = [0u64; 24];
    let mut arrivals = [0u64; 24];
    for trip in trips {
        departures[local_hour(trip.departure_ts, tz_offset_s)] += 1;
        arrivals[local_hour(trip.arrival_ts, tz_offset_s)] += 1;
    }
    HourlyProfiles {
        departures,
        arrivals,
    }
}

/// Distance and duration distributions of a trip set.
#[derive(Debug, Clone)]
pub struct DistanceDurationStats {
    pub distance_hist: LogBinnedDensity,
    pub duration_hist: LogBinnedDensity,
    pub distance_fit: LognormalFit,
    pub duration_fit: LognormalFit,
}

/// Logarithmic-bin histograms plus lognormal fits for trip path distance
/// (meters) and duration (seconds).
pub fn distance_duration_stats(
    trips: &[Trip],
    bins_per_decade: usize,
) -> Result<DistanceDurationStats, StatsError> {
    let zero_distance: Vec<String> = trips
        .iter()
        .filter(|t| !(t.path_distance_m > 0.0))
        .map(|t| format!("{}@{}", t.truck_id, t.departure_ts))
        .collect();
    if !zero_distance.is_empty() {
        return Err(StatsError::NonPositiveSamples {
            n_bad: zero_distance.len(),
            detail: format!(" (trips: {})", zero_distance.join(", ")),
        });
    }
    let distances: Vec<f64> = trips.iter().map(|t| t.path_distance_m).collect();
    let durations: Vec<f64> = trips.iter().map(|t| t.duration_s() as f64).collect();
    let distance_hist = LogBinnedDensity::build(&distances, bins_per_decade)
        .map_err(|_| StatsError::TooFewSamples(distances.len()))?;
    let duration_hist = LogBinnedDensity::build(&durations, bins_per_decade)
        .map_err(|_| StatsError::TooFewSamples(durations.len()))?;
    Ok(DistanceDurationStats {
        distance_hist,
        duration_hist,
        distance_fit: fit_lognormal(&distances)?,
        duration_fit: fit_lognormal(&durations)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PoiCategory, StopClass, TruckStop};
    use crate::trips::ValidityReason;
    use proptest::prelude::*;

    fn end(id: u64, category: Option<PoiCategory>, city: Option<&str>) -> TripEnd {
        TripEnd {
            id,
            stop: TruckStop {
                truck_id: "t1".into(),
                segment_id: 0,
                centroid_lon: 116.0,
                centroid_lat: 40.0,
                t_start: 0,
                t_end: 100,
                n_points: 3,
                stop_class: StopClass::Medium,
            },
            validity_reason: ValidityReason::MediumInPoi,
            matched_poi_category: category,
            matched_poi_id: None,
            city_id: city.map(str::to_string),
        }
    }

    fn trip(
        origin_city: Option<&str>,
        dest_city: Option<&str>,
        departure: i64,
        arrival: i64,
        distance: f64,
        intercity: IntercityStatus,
    ) -> Trip {
        Trip {
            truck_id: "t1".into(),
            origin: end(0, None, origin_city),
            destination: end(1, None, dest_city),
            departure_ts: departure,
            arrival_ts: arrival,
            path_distance_m: distance,
            intercity,
        }
    }

    #[test]
    fn lognormal_two_point_case() {
        // Samples {e, e^3} have logs {1, 3}: mu = 2, sigma = 1.
        let fit = fit_lognormal(&[std::f64::consts::E, std::f64::consts::E.powi(3)]).unwrap();
        assert!((fit.mu - 2.0).abs() < 1e-12);
        assert!((fit.sigma - 1.0).abs() < 1e-12);
        assert_eq!(fit.n, 2);
    }

    #[test]
    fn lognormal_rejects_constant_and_nonpositive() {
        let e = std::f64::consts::E;
        assert!(matches!(
            fit_lognormal(&[e, e, e]),
            Err(StatsError::DegenerateFit { .. })
        ));
        assert!(matches!(
            fit_lognormal(&[1.0, -2.0]),
            Err(StatsError::NonPositiveSamples { .. })
        ));
        assert!(matches!(
            fit_lognormal(&[1.0]),
            Err(StatsError::TooFewSamples(1))
        ));
    }

    #[test]
    fn lognormal_recovers_planted_parameters() {
        // Deterministic stream; inverse-CDF via Box-Muller-free rational
        // approximation is overkill, so sum 12 uniforms for a normal draw.
        let mut state = 99u64;
        let mut next_u = || {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z = z ^ (z >> 31);
            (z >> 11) as f64 / (1u64 << 53) as f64
        };
        let (mu, sigma) = (4.5, 0.8);
        let samples: Vec<f64> = (0..100_000)
            .map(|_| {
                let z: f64 = (0..12).map(|_| next_u()).sum::<f64>() - 6.0;
                (mu + sigma * z).exp()
            })
            .collect();
        let fit = fit_lognormal(&samples).unwrap();
        assert!((fit.mu - mu).abs() / mu < 0.02, "mu {}", fit.mu);
        assert!((fit.sigma - sigma).abs() / sigma < 0.02, "sigma {}", fit.sigma);
    }

    #[test]
    fn log_moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (1..200).map(|i| (i as f64).ln()).collect();
        let mut whole = LogMoments::default();
        for &x in &xs {
            whole.push(x);
        }
        let (a, b) = xs.split_at(57);
        let mut left = LogMoments::default();
        for &x in a {
            left.push(x);
        }
        let mut right = LogMoments::default();
        for &x in b {
            right.push(x);
        }
        left.merge(&right);
        assert_eq!(left.n, whole.n);
        assert!((left.mean() - whole.mean()).abs() < 1e-12);
        assert!((left.variance() - whole.variance()).abs() < 1e-12);
    }

    #[test]
    fn shares_all_factory() {
        let ends = vec![
            end(0, Some(PoiCategory::Factory), None),
            end(1, Some(PoiCategory::Factory), None),
        ];
        let s = category_shares(&ends).unwrap();
        assert_eq!(s.shares, vec![(PoiCategory::Factory, 1.0)]);
        assert_eq!(s.categorized, 2);
    }

    #[test]
    fn shares_mixed_counts() {
        let ends = vec![
            end(0, Some(PoiCategory::Factory), None),
            end(1, Some(PoiCategory::Factory), None),
            end(2, Some(PoiCategory::Factory), None),
            end(3, Some(PoiCategory::MiningCompany), None),
            end(4, None, None),
        ];
        let s = category_shares(&ends).unwrap();
        assert_eq!(s.shares[0], (PoiCategory::Factory, 0.75));
        assert_eq!(s.shares[1], (PoiCategory::MiningCompany, 0.25));
        assert_eq!(s.uncategorized, 1);
        let total: f64 = s.shares.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shares_empty_is_error() {
        let ends = vec![end(0, None, None)];
        assert!(matches!(
            category_shares(&ends),
            Err(StatsError::EmptyShareTable)
        ));
        assert!(matches!(
            category_shares(&[]),
            Err(StatsError::EmptyShareTable)
        ));
    }

    #[test]
    fn od_matrix_directional_counts() {
        let cities = vec!["A".to_string(), "B".to_string()];
        let trips = vec![
            trip(Some("A"), Some("B"), 0, 100, 10.0, IntercityStatus::Intercity),
            trip(Some("B"), Some("A"), 200, 300, 10.0, IntercityStatus::Intercity),
            trip(Some("A"), Some("B"), 400, 500, 10.0, IntercityStatus::Intercity),
            trip(Some("A"), Some("A"), 600, 700, 10.0, IntercityStatus::Intracity),
            trip(None, Some("B"), 800, 900, 10.0, IntercityStatus::Unresolved),
        ];
        let od = build_od_matrix(&trips, &cities).unwrap();
        assert_eq!(od.get(0, 1), 2);
        assert_eq!(od.get(1, 0), 1);
        assert_eq!(od.get(0, 0), 0);
        assert_eq!(od.get(1, 1), 0);
        assert_eq!(od.total(), 3);
    }

    #[test]
    fn od_matrix_unknown_city_is_error() {
        let cities = vec!["A".to_string()];
        let trips = vec![trip(
            Some("A"),
            Some("Z"),
            0,
            100,
            10.0,
            IntercityStatus::Intercity,
        )];
        assert!(matches!(
            build_od_matrix(&trips, &cities),
            Err(StatsError::UnknownCity(c)) if c == "Z"
        ));
    }

    #[test]
    fn hourly_profiles_basics() {
        // Departure 08:10 local (UTC+8).
        let dep = 8 * 3_600 + 10 * 60 - 28_800;
        let trips = vec![trip(
            Some("A"),
            Some("B"),
            dep,
            dep + 3 * 3_600,
            10.0,
            IntercityStatus::Intercity,
        )];
        let p = time_of_day_profiles(&trips, 28_800);
        assert_eq!(p.departures[8], 1);
        assert_eq!(p.departures.iter().sum::<u64>(), 1);
        assert_eq!(p.arrivals[11], 1);

        let empty = time_of_day_profiles(&[], 28_800);
        assert_eq!(empty.departures, [0u64; 24]);
        assert_eq!(empty.arrivals, [0u64; 24]);
    }

    #[test]
    fn distance_stats_flag_zero_distance_trips() {
        let trips = vec![
            trip(Some("A"), Some("B"), 0, 100, 0.0, IntercityStatus::Intercity),
            trip(Some("A"), Some("B"), 200, 300, 50.0, IntercityStatus::Intercity),
        ];
        let err = distance_duration_stats(&trips, 50).unwrap_err();
        match err {
            StatsError::NonPositiveSamples { n_bad, detail } => {
                assert_eq!(n_bad, 1);
                assert!(detail.contains("t1@0"), "detail: {detail}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    proptest! {
        /// Scaling samples by c shifts mu by ln(c) and leaves sigma alone.
        #[test]
        fn lognormal_scale_equivariance(c in 0.01f64..100.0) {
            let samples: Vec<f64> = (1..100).map(|i| i as f64).collect();
            let base = fit_lognormal(&samples).unwrap();
            let scaled: Vec<f64> = samples.iter().map(|x| x * c).collect();
            let fit = fit_lognormal(&scaled).unwrap();
            prop_assert!((fit.mu - (base.mu + c.ln())).abs() < 1e-9);
            prop_assert!((fit.sigma - base.sigma).abs() < 1e-9);
        }

        /// Hourly profiles are invariant under whole-day shifts.
        #[test]
        fn profiles_invariant_under_day_shift(offset in 0i64..1_000_000, days in 1i64..50) {
            let t0 = trip(Some("A"), Some("B"), offset, offset + 7_200, 10.0, IntercityStatus::Intercity);
            let shifted = trip(
                Some("A"),
                Some("B"),
                offset + days * 86_400,
                offset + days * 86_400 + 7_200,
                10.0,
                IntercityStatus::Intercity,
            );
            let a = time_of_day_profiles(&[t0], 28_800);
            let b = time_of_day_profiles(&[shifted], 28_800);
            prop_assert_eq!(a, b);
        }
    }
}
