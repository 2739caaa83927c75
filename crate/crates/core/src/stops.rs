//! Stop detection: per-fix motion status, maximal stationary runs, and
//! dwell-time classification.

use crate::model::{avg_speed, GpsRecord, StopClass, Thresholds, Trajectory, TruckStop};

/// Motion status of one GPS fix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionStatus {
    Moving,
    Stationary,
}

/// Mark each record of a gap-free segment as moving or stationary.
///
/// Record i+1 is stationary iff the average speed from record i is at or
/// below `speed_threshold_kmh` (closed boundary). Pair speeds attach to the
/// later fix, so the first record adopts the status of the second; a
/// singleton segment is moving.
pub fn mark_motion_status(records: &[GpsRecord], speed_threshold_kmh: f64) -> Vec<MotionStatus> {
    if records.is_empty() {
        return Vec::new();
    }
    let mut statuses = vec![MotionStatus::Moving; records.len()];
    for i in 1..records.len() {
        let v = avg_speed(&records[i - 1], &records[i])
            .expect("segment timestamps must be strictly increasing");
        statuses[i] = if v <= speed_threshold_kmh {
            MotionStatus::Stationary
        } else {
            MotionStatus::Moving
        };
    }
    if records.len() >= 2 {
        statuses[0] = statuses[1];
    }
    statuses
}

/// Three-way dwell classification; boundaries go to the higher class so the
/// partition of dwell in [0, inf) is exhaustive.
pub fn classify_stop(dwell_s: i64, t_min_s: i64, t_max_s: i64) -> StopClass {
    debug_assert!(t_min_s < t_max_s);
    if dwell_s < t_min_s {
        StopClass::Short
    } else if dwell_s < t_max_s {
        StopClass::Medium
    } else {
        StopClass::Long
    }
}

/// Collapse each maximal run of stationary records into one stop.
///
/// The centroid is the arithmetic mean of member coordinates; dwell runs
/// from the first to the last stopped fix, so a single-fix run has dwell 0.
pub fn extract_stops(
    traj: &Trajectory,
    statuses: &[MotionStatus],
    t_min_s: i64,
    t_max_s: i64,
) -> Vec<TruckStop> {
    assert_eq!(traj.records.len(), statuses.len());
    let mut stops = Vec::new();
    let mut run_start: Option<usize> = None;
    for i in 0..=traj.records.len() {
        let stationary = i < traj.records.len() && statuses[i] == MotionStatus::Stationary;
        match (run_start, stationary) {
            (None, true) => run_start = Some(i),
            (Some(start), false) => {
                stops.push(make_stop(traj, start, i, t_min_s, t_max_s));
                run_start = None;
            }
            _ => {}
        }
    }
    stops
}

fn make_stop(traj: &Trajectory, start: usize, end: usize, t_min_s: i64, t_max_s: i64) -> TruckStop {
    let members = &traj.records[start..end];
    let n = members.len() as f64;
    let centroid_lon = members.iter().map(|r| r.lon).sum::<f64>() / n;
    let centroid_lat = members.iter().map(|r| r.lat).sum::<f64>() / n;
    let t_start = members[0].timestamp;
    let t_end = members[members.len() - 1].timestamp;
    TruckStop {
        truck_id: traj.truck_id.clone(),
        segment_id: traj.segment_id,
        centroid_lon,
        centroid_lat,
        t_start,
        t_end,
        n_points: members.len() as u32,
        stop_class: classify_stop(t_end - t_start, t_min_s, t_max_s),
    }
}

/// Full per-segment stop detection: status marking, run extraction, and
/// classification with the given thresholds.
pub fn detect_stops(traj: &Trajectory, thresholds: &Thresholds) -> Vec<TruckStop> {
    let statuses = mark_motion_status(&traj.records, thresholds.speed_threshold_kmh);
    extract_stops(traj, &statuses, thresholds.t_min_s, thresholds.t_max_s)
}

/// Average speeds of all successive record pairs of a segment, km/h.
/// Feeds the speed-threshold calibration histogram.
pub fn pair_speeds(records: &[GpsRecord]) -> impl Iterator<Item = f64> + '_ {
    records
        .windows(2)
        .map(|w| avg_speed(&w[0], &w[1]).expect("segment timestamps must be strictly increasing"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GeoPoint, EARTH_RADIUS_M};
    use proptest::prelude::*;

    fn rec(lon: f64, lat: f64, ts: i64) -> GpsRecord {
        GpsRecord {
            truck_id: "t1".into(),
            lon,
            lat,
            timestamp: ts,
            reported_speed: None,
            heading: None,
        }
    }

    fn traj(records: Vec<GpsRecord>) -> Trajectory {
        Trajectory {
            truck_id: "t1".into(),
            segment_id: 0,
            records,
        }
    }

    /// Move `meters` north of a base point.
    fn north_of(p: GeoPoint, meters: f64) -> GeoPoint {
        GeoPoint::new(
            p.lon,
            p.lat + meters / (EARTH_RADIUS_M * std::f64::consts::PI / 180.0),
        )
    }

    #[test]
    fn stationary_at_identical_coordinates() {
        // Sample rows 4 and 5: identical positions 30 s apart.
        let records = vec![
            rec(119.789902, 34.38847, 0),
            rec(119.789902, 34.38847, 30),
        ];
        let s = mark_motion_status(&records, 1.1);
        assert_eq!(s, vec![MotionStatus::Stationary, MotionStatus::Stationary]);
    }

    #[test]
    fn moving_at_eleven_kmh() {
        // Sample rows 1 and 2: ~91 m in 30 s, ~10.9 km/h.
        let records = vec![
            rec(119.786484, 34.387562, 0),
            rec(119.787315, 34.388016, 30),
        ];
        let s = mark_motion_status(&records, 1.1);
        assert_eq!(s, vec![MotionStatus::Moving, MotionStatus::Moving]);
    }

    #[test]
    fn threshold_boundary_is_stationary() {
        // A pair whose computed speed equals the threshold exactly: the
        // closed boundary keeps it stationary.
        let base = GeoPoint::new(116.0, 40.0);
        let p2 = north_of(base, 10.0);
        let records = vec![rec(base.lon, base.lat, 0), rec(p2.lon, p2.lat, 30)];
        let v = avg_speed(&records[0], &records[1]).unwrap();
        let s = mark_motion_status(&records, v);
        assert_eq!(s[1], MotionStatus::Stationary);
        let s = mark_motion_status(&records, v * 0.999_999);
        assert_eq!(s[1], MotionStatus::Moving);
    }

    #[test]
    fn first_record_inherits_second_status_and_singleton_moves() {
        let base = GeoPoint::new(116.0, 40.0);
        let far = north_of(base, 500.0);
        let records = vec![rec(base.lon, base.lat, 0), rec(far.lon, far.lat, 30)];
        assert_eq!(
            mark_motion_status(&records, 1.1)[0],
            MotionStatus::Moving
        );
        let single = vec![rec(116.0, 40.0, 0)];
        assert_eq!(mark_motion_status(&single, 1.1), vec![MotionStatus::Moving]);
        assert!(mark_motion_status(&[], 1.1).is_empty());
    }

    #[test]
    fn single_run_becomes_one_stop() {
        // Statuses M,S,S,S,M over t..t+120: one stop spanning the stationary
        // fixes.
        let base = GeoPoint::new(116.0, 40.0);
        let far = north_of(base, 400.0);
        let far2 = north_of(base, 800.0);
        let records = vec![
            rec(far.lon, far.lat, 0),
            rec(base.lon, base.lat, 30),
            rec(base.lon, base.lat, 60),
            rec(base.lon, base.lat, 90),
            rec(far2.lon, far2.lat, 120),
        ];
        let t = traj(records);
        let statuses = vec![
            MotionStatus::Moving,
            MotionStatus::Stationary,
            MotionStatus::Stationary,
            MotionStatus::Stationary,
            MotionStatus::Moving,
        ];
        let stops = extract_stops(&t, &statuses, 1_440, 46_800);
        assert_eq!(stops.len(), 1);
        assert_eq!(stops[0].t_start, 30);
        assert_eq!(stops[0].t_end, 90);
        assert_eq!(stops[0].dwell(), 60);
        assert_eq!(stops[0].n_points, 3);
        assert!((stops[0].centroid_lon - 116.0).abs() < 1e-12);
        assert!((stops[0].centroid_lat - 40.0).abs() < 1e-12);
        assert_eq!(stops[0].stop_class, StopClass::Short);
    }

    #[test]
    fn all_moving_yields_no_stops() {
        let base = GeoPoint::new(116.0, 40.0);
        let records: Vec<GpsRecord> = (0..5)
            .map(|i| {
                let p = north_of(base, 400.0 * i as f64);
                rec(p.lon, p.lat, i * 30)
            })
            .collect();
        let t = traj(records);
        let statuses = mark_motion_status(&t.records, 1.1);
        assert!(extract_stops(&t, &statuses, 1_440, 46_800).is_empty());
    }

    /// Independent oracle: naive linear run scan over statuses.
    fn naive_runs(statuses: &[MotionStatus]) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < statuses.len() {
            if statuses[i] == MotionStatus::Stationary {
                let start = i;
                while i < statuses.len() && statuses[i] == MotionStatus::Stationary {
                    i += 1;
                }
                runs.push((start, i));
            } else {
                i += 1;
            }
        }
        runs
    }

    #[test]
    fn two_runs_match_naive_scan() {
        let base = GeoPoint::new(116.0, 40.0);
        let far = north_of(base, 400.0);
        let records = vec![
            rec(base.lon, base.lat, 0),
            rec(base.lon, base.lat, 30),
            rec(far.lon, far.lat, 60),
            rec(far.lon, far.lat, 90),
            rec(far.lon, far.lat, 120),
        ];
        let t = traj(records);
        let statuses = mark_motion_status(&t.records, 1.1);
        let stops = extract_stops(&t, &statuses, 1_440, 46_800);
        let runs = naive_runs(&statuses);
        assert_eq!(stops.len(), 2);
        assert_eq!(runs.len(), 2);
        for (stop, (start, end)) in stops.iter().zip(&runs) {
            assert_eq!(stop.t_start, t.records[*start].timestamp);
            assert_eq!(stop.t_end, t.records[end - 1].timestamp);
            assert_eq!(stop.n_points as usize, end - start);
        }
    }

    #[test]
    fn classification_boundaries() {
        // 10 min short, 2 h medium, 20 h long, plus the exact boundaries.
        assert_eq!(classify_stop(600, 1_440, 46_800), StopClass::Short);
        assert_eq!(classify_stop(7_200, 1_440, 46_800), StopClass::Medium);
        assert_eq!(classify_stop(72_000, 1_440, 46_800), StopClass::Long);
        assert_eq!(classify_stop(1_439, 1_440, 46_800), StopClass::Short);
        assert_eq!(classify_stop(1_440, 1_440, 46_800), StopClass::Medium);
        assert_eq!(classify_stop(46_799, 1_440, 46_800), StopClass::Medium);
        assert_eq!(classify_stop(46_800, 1_440, 46_800), StopClass::Long);
        assert_eq!(classify_stop(0, 1_440, 46_800), StopClass::Short);
    }

    proptest! {
        /// Stops are disjoint, ordered, and account for every stationary fix.
        #[test]
        fn stops_partition_stationary_records(moves in proptest::collection::vec(0u8..2, 1..60)) {
            let base = GeoPoint::new(116.0, 40.0);
            let far = north_of(base, 300.0);
            let records: Vec<GpsRecord> = moves
                .iter()
                .enumerate()
                .map(|(i, &m)| {
                    let p = if m == 0 { base } else { far };
                    // Alternate positions: equal consecutive coords mean stationary.
                    rec(p.lon, p.lat, i as i64 * 30)
                })
                .collect();
            let t = traj(records);
            let statuses = mark_motion_status(&t.records, 1.1);
            let stops = extract_stops(&t, &statuses, 1_440, 46_800);

            let stationary_count =
                statuses.iter().filter(|&&s| s == MotionStatus::Stationary).count();
            let member_count: usize = stops.iter().map(|s| s.n_points as usize).sum();
            prop_assert_eq!(stationary_count, member_count);
            for w in stops.windows(2) {
                prop_assert!(w[0].t_end < w[1].t_start);
            }
            let runs = naive_runs(&statuses);
            prop_assert_eq!(stops.len(), runs.len());
        }

        /// Lowering the speed threshold never adds stationary fixes.
        #[test]
        fn stationary_count_monotone_in_threshold(
            offsets in proptest::collection::vec(0.0f64..600.0, 2..40),
            lo in 0.1f64..5.0,
            hi_extra in 0.0f64..20.0,
        ) {
            let base = GeoPoint::new(116.0, 40.0);
            let records: Vec<GpsRecord> = offsets
                .iter()
                .enumerate()
                .map(|(i, &m)| {
                    let p = north_of(base, m);
                    rec(p.lon, p.lat, i as i64 * 30)
                })
                .collect();
            let hi = lo + hi_extra;
            let count = |thr: f64| {
                mark_motion_status(&records, thr)
                    .iter()
                    .filter(|&&s| s == MotionStatus::Stationary)
                    .count()
            };
            prop_assert!(count(lo) <= count(hi));
        }

        /// classify_stop is a total three-way partition.
        #[test]
        fn classification_is_total(dwell in 0i64..200_000) {
            let c = classify_stop(dwell, 1_440, 46_800);
            let expected = if dwell < 1_440 {
                StopClass::Short
            } else if dwell < 46_800 {
                StopClass::Medium
            } else {
                StopClass::Long
            };
            prop_assert_eq!(c, expected);
        }
    }
}
