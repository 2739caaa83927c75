//! Trip-end selection and trip chaining: applies the POI-boundary and
//! road-proximity filters to classified stops, chains surviving trip ends
//! into trips, and marks intercity trips via administrative polygons.

use crate::model::{
    great_circle_distance, GeoPoint, PoiCategory, StopClass, Trajectory, TruckStop,
};
use crate::spatial::{CityIndex, PoiIndex, RoadIndex};

/// Why a stop qualified as a trip end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidityReason {
    /// Long-term stops are trip ends unconditionally.
    LongTerm,
    /// Medium-term stop inside a freight POI boundary and off the road.
    MediumInPoi,
}

impl ValidityReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ValidityReason::LongTerm => "long_term",
            ValidityReason::MediumInPoi => "medium_in_poi",
        }
    }
}

/// A validated trip end.
#[derive(Debug, Clone)]
pub struct TripEnd {
    /// Ordinal within the run, used to reference ends from the trips file.
    pub id: u64,
    pub stop: TruckStop,
    pub validity_reason: ValidityReason,
    pub matched_poi_category: Option<PoiCategory>,
    pub matched_poi_id: Option<String>,
    pub city_id: Option<String>,
}

/// Per-reason accounting of the selection step. Rejections are silent but
/// counted; accepted + rejected equals the number of classified stops.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectionStats {
    pub accepted_long: u64,
    pub accepted_medium: u64,
    pub rejected_short: u64,
    pub rejected_medium_on_road: u64,
    pub rejected_medium_no_poi: u64,
}

impl SelectionStats {
    pub fn accepted(&self) -> u64 {
        self.accepted_long + self.accepted_medium
    }

    pub fn rejected(&self) -> u64 {
        self.rejected_short + self.rejected_medium_on_road + self.rejected_medium_no_poi
    }

    pub fn merge(&mut self, other: &SelectionStats) {
        self.accepted_long += other.accepted_long;
        self.accepted_medium += other.accepted_medium;
        self.rejected_short += other.rejected_short;
        self.rejected_medium_on_road += other.rejected_medium_on_road;
        self.rejected_medium_no_poi += other.rejected_medium_no_poi;
    }
}

/// Best POI attribution for a point: the category minimizing the
/// distance-to-boundary ratio among categories whose boundary contains it.
fn best_poi_match(
    p: GeoPoint,
    poi_index: &PoiIndex,
) -> Option<(PoiCategory, String, f64)> {
    let mut best: Option<(PoiCategory, String, f64)> = None;
    for category in PoiCategory::ALL {
        let Some((poi_idx, d)) = poi_index.nearest_poi(p, category) else {
            continue;
        };
        let radius = poi_index.category_params(category).poi_radius_m;
        if d > radius {
            continue;
        }
        let ratio = d / radius;
        if best.as_ref().map_or(true, |(_, _, br)| ratio < *br) {
            best = Some((category, poi_index.poi(poi_idx).poi_id.clone(), ratio));
        }
    }
    best
}

/// Select valid trip ends from classified stops.
///
/// Short stops are rejected. Long stops are accepted unconditionally.
/// Medium stops are accepted when the centroid is off the road and within
/// the POI boundary of at least one freight category, attributing the
/// category that minimizes distance/poi_radius; the road filter applies to
/// every medium candidate since POI boundaries may contain roads.
pub fn select_trip_ends(
    stops: Vec<TruckStop>,
    poi_index: &PoiIndex,
    road_index: &RoadIndex,
    next_id: &mut u64,
) -> (Vec<TripEnd>, SelectionStats) {
    let mut ends = Vec::new();
    let mut stats = SelectionStats::default();
    for stop in stops {
        let centroid = stop.centroid();
        match stop.stop_class {
            StopClass::Short => {
                stats.rejected_short += 1;
            }
            StopClass::Long => {
                stats.accepted_long += 1;
                // POI attribution is informative for long-term ends but
                // never gates acceptance.
                let matched = best_poi_match(centroid, poi_index);
                ends.push(TripEnd {
                    id: *next_id,
                    stop,
                    validity_reason: ValidityReason::LongTerm,
                    matched_poi_category: matched.as_ref().map(|(c, _, _)| *c),
                    matched_poi_id: matched.map(|(_, id, _)| id),
                    city_id: None,
                });
                *next_id += 1;
            }
            StopClass::Medium => {
                if road_index.is_on_road(centroid).is_some() {
                    stats.rejected_medium_on_road += 1;
                    continue;
                }
                let Some((category, poi_id, _)) = best_poi_match(centroid, poi_index) else {
                    stats.rejected_medium_no_poi += 1;
                    continue;
                };
                stats.accepted_medium += 1;
                ends.push(TripEnd {
                    id: *next_id,
                    stop,
                    validity_reason: ValidityReason::MediumInPoi,
                    matched_poi_category: Some(category),
                    matched_poi_id: Some(poi_id),
                    city_id: None,
                });
                *next_id += 1;
            }
        }
    }
    (ends, stats)
}

/// Fill in the administrative city of each trip end's centroid.
pub fn resolve_cities(ends: &mut [TripEnd], city_index: &CityIndex) {
    for end in ends.iter_mut() {
        end.city_id = city_index
            .locate_city(end.stop.centroid())
            .map(|i| city_index.regions()[i].city_id.clone());
    }
}

/// Intercity flag of a chained trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntercityStatus {
    Intercity,
    Intracity,
    /// A trip end fell outside every city polygon; excluded from intercity
    /// statistics.
    Unresolved,
}

impl IntercityStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            IntercityStatus::Intercity => "intercity",
            IntercityStatus::Intracity => "intracity",
            IntercityStatus::Unresolved => "unresolved",
        }
    }
}

/// One journey between two consecutive trip ends of the same segment.
#[derive(Debug, Clone)]
pub struct Trip {
    pub truck_id: String,
    pub origin: TripEnd,
    pub destination: TripEnd,
    /// Departure instant: the origin stop's last stationary fix.
    pub departure_ts: i64,
    /// Arrival instant: the destination stop's first stationary fix.
    pub arrival_ts: i64,
    /// Sum of inter-record distances traversed between the stops, meters.
    pub path_distance_m: f64,
    pub intercity: IntercityStatus,
}

impl Trip {
    pub fn duration_s(&self) -> i64 {
        self.arrival_ts - self.departure_ts
    }
}

/// Chain consecutive trip ends of one truck into trips.
///
/// Ends must be time-ordered. Pairs spanning different trajectory segments
/// contain an oversized data gap and are discarded. The path distance sums
/// inter-record great-circle hops over the records between the origin's
/// last stationary fix and the destination's first, inclusive.
pub fn chain_trips(ends: &[TripEnd], segments: &[Trajectory]) -> Vec<Trip> {
    let mut trips = Vec::new();
    for pair in ends.windows(2) {
        let (origin, destination) = (&pair[0], &pair[1]);
        if origin.stop.segment_id != destination.stop.segment_id {
            continue;
        }
        let departure_ts = origin.stop.t_end;
        let arrival_ts = destination.stop.t_start;
        debug_assert!(departure_ts < arrival_ts);
        let segment = segments
            .iter()
            .find(|s| s.segment_id == origin.stop.segment_id)
            .expect("trip ends reference an existing segment");
        let path_distance_m = path_distance(segment, departure_ts, arrival_ts);
        trips.push(Trip {
            truck_id: origin.stop.truck_id.clone(),
            origin: origin.clone(),
            destination: destination.clone(),
            departure_ts,
            arrival_ts,
            path_distance_m,
            intercity: IntercityStatus::Unresolved,
        });
    }
    trips
}

fn path_distance(segment: &Trajectory, from_ts: i64, to_ts: i64) -> f64 {
    let records = &segment.records;
    let start = records.partition_point(|r| r.timestamp < from_ts);
    let end = records.partition_point(|r| r.timestamp <= to_ts);
    records[start..end]
        .windows(2)
        .map(|w| great_circle_distance(w[0].pos(), w[1].pos()))
        .sum()
}

/// Set the intercity flag: intercity iff both ends resolve to different
/// cities; any unresolved end leaves the trip unresolved.
pub fn mark_intercity(trips: &mut [Trip], city_index: &CityIndex) {
    for trip in trips.iter_mut() {
        let origin_city = resolved_city(&mut trip.origin, city_index);
        let dest_city = resolved_city(&mut trip.destination, city_index);
        trip.intercity = match (origin_city, dest_city) {
            (Some(a), Some(b)) if a != b => IntercityStatus::Intercity,
            (Some(_), Some(_)) => IntercityStatus::Intracity,
            _ => IntercityStatus::Unresolved,
        };
    }
}

fn resolved_city(end: &mut TripEnd, city_index: &CityIndex) -> Option<String> {
    if end.city_id.is_none() {
        end.city_id = city_index
            .locate_city(end.stop.centroid())
            .map(|i| city_index.regions()[i].city_id.clone());
    }
    end.city_id.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        CityRegion, GpsRecord, Poi, RoadClass, RoadSegment, Thresholds, EARTH_RADIUS_M,
    };

    fn stop(class: StopClass, lon: f64, lat: f64, t_start: i64, t_end: i64) -> TruckStop {
        TruckStop {
            truck_id: "t1".into(),
            segment_id: 0,
            centroid_lon: lon,
            centroid_lat: lat,
            t_start,
            t_end,
            n_points: 10,
            stop_class: class,
        }
    }

    fn factory_at(lon: f64, lat: f64) -> Poi {
        Poi {
            poi_id: "f1".into(),
            category: PoiCategory::Factory,
            center_lon: lon,
            center_lat: lat,
        }
    }

    fn east_of(p: GeoPoint, meters: f64) -> GeoPoint {
        GeoPoint::new(
            p.lon + meters / (EARTH_RADIUS_M * p.lat.to_radians().cos() * std::f64::consts::PI / 180.0),
            p.lat,
        )
    }

    fn default_params() -> Vec<crate::model::PoiCategoryParams> {
        PoiCategory::ALL.iter().map(|c| c.default_params()).collect()
    }

    #[test]
    fn medium_stop_in_poi_off_road_is_accepted() {
        let base = GeoPoint::new(116.0, 40.0);
        let poi_center = east_of(base, 300.0);
        let poi_index = PoiIndex::build(vec![factory_at(poi_center.lon, poi_center.lat)], &default_params());
        let road_index = RoadIndex::build(Vec::new()).unwrap();
        let mut next_id = 0;
        let (ends, stats) = select_trip_ends(
            vec![stop(StopClass::Medium, base.lon, base.lat, 1_000, 4_000)],
            &poi_index,
            &road_index,
            &mut next_id,
        );
        assert_eq!(ends.len(), 1);
        assert_eq!(ends[0].validity_reason, ValidityReason::MediumInPoi);
        assert_eq!(ends[0].matched_poi_category, Some(PoiCategory::Factory));
        assert_eq!(ends[0].matched_poi_id.as_deref(), Some("f1"));
        assert_eq!(stats.accepted_medium, 1);
    }

    #[test]
    fn medium_stop_on_road_is_rejected() {
        // Inside the factory boundary but 5 m from a primary centerline:
        // the congestion case.
        let base = GeoPoint::new(116.0, 40.0);
        let poi_center = east_of(base, 300.0);
        let poi_index = PoiIndex::build(vec![factory_at(poi_center.lon, poi_center.lat)], &default_params());
        let road_lon = east_of(base, 5.0).lon;
        let road = RoadSegment::new(
            "r1".into(),
            RoadClass::Primary,
            vec![GeoPoint::new(road_lon, 39.99), GeoPoint::new(road_lon, 40.01)],
        );
        let road_index = RoadIndex::build(vec![road]).unwrap();
        let mut next_id = 0;
        let (ends, stats) = select_trip_ends(
            vec![stop(StopClass::Medium, base.lon, base.lat, 1_000, 4_000)],
            &poi_index,
            &road_index,
            &mut next_id,
        );
        assert!(ends.is_empty());
        assert_eq!(stats.rejected_medium_on_road, 1);
    }

    #[test]
    fn long_stop_is_unconditional() {
        let poi_index = PoiIndex::build(Vec::new(), &default_params());
        let road_index = RoadIndex::build(Vec::new()).unwrap();
        let mut next_id = 0;
        let (ends, stats) = select_trip_ends(
            vec![stop(StopClass::Long, 116.0, 40.0, 0, 80_000)],
            &poi_index,
            &road_index,
            &mut next_id,
        );
        assert_eq!(ends.len(), 1);
        assert_eq!(ends[0].validity_reason, ValidityReason::LongTerm);
        assert_eq!(ends[0].matched_poi_category, None);
        assert_eq!(stats.accepted_long, 1);
    }

    #[test]
    fn selection_counts_are_conserved() {
        let base = GeoPoint::new(116.0, 40.0);
        let poi_center = east_of(base, 300.0);
        let poi_index = PoiIndex::build(vec![factory_at(poi_center.lon, poi_center.lat)], &default_params());
        let road_index = RoadIndex::build(Vec::new()).unwrap();
        let stops = vec![
            stop(StopClass::Short, 116.0, 40.0, 0, 100),
            stop(StopClass::Medium, 116.0, 40.0, 1_000, 4_000),
            stop(StopClass::Medium, 120.0, 45.0, 5_000, 9_000), // far from POI
            stop(StopClass::Long, 121.0, 46.0, 10_000, 90_000),
        ];
        let n = stops.len() as u64;
        let mut next_id = 0;
        let (ends, stats) = select_trip_ends(stops, &poi_index, &road_index, &mut next_id);
        assert_eq!(stats.accepted() + stats.rejected(), n);
        assert_eq!(ends.len() as u64, stats.accepted());
        assert_eq!(stats.rejected_short, 1);
        assert_eq!(stats.rejected_medium_no_poi, 1);
    }

    #[test]
    fn removing_pois_rejects_medium_keeps_long() {
        let base = GeoPoint::new(116.0, 40.0);
        let poi_center = east_of(base, 300.0);
        let road_index = RoadIndex::build(Vec::new()).unwrap();
        let stops = vec![
            stop(StopClass::Medium, base.lon, base.lat, 1_000, 4_000),
            stop(StopClass::Long, 116.5, 40.5, 10_000, 90_000),
        ];

        let with_pois = PoiIndex::build(vec![factory_at(poi_center.lon, poi_center.lat)], &default_params());
        let mut id = 0;
        let (ends_with, _) = select_trip_ends(stops.clone(), &with_pois, &road_index, &mut id);
        assert_eq!(ends_with.len(), 2);

        let without_pois = PoiIndex::build(Vec::new(), &default_params());
        let mut id = 0;
        let (ends_without, stats) = select_trip_ends(stops, &without_pois, &road_index, &mut id);
        assert_eq!(ends_without.len(), 1);
        assert_eq!(ends_without[0].validity_reason, ValidityReason::LongTerm);
        assert_eq!(stats.rejected_medium_no_poi, 1);
    }

    #[test]
    fn road_through_accepted_centroid_flips_only_that_stop() {
        let base = GeoPoint::new(116.0, 40.0);
        let other = GeoPoint::new(116.1, 40.0);
        let poi_index = PoiIndex::build(
            vec![
                factory_at(east_of(base, 200.0).lon, base.lat),
                Poi {
                    poi_id: "f2".into(),
                    category: PoiCategory::Factory,
                    center_lon: east_of(other, 200.0).lon,
                    center_lat: other.lat,
                },
            ],
            &default_params(),
        );
        let stops = vec![
            stop(StopClass::Medium, base.lon, base.lat, 1_000, 4_000),
            stop(StopClass::Medium, other.lon, other.lat, 5_000, 9_000),
        ];

        let empty_roads = RoadIndex::build(Vec::new()).unwrap();
        let mut id = 0;
        let (before, _) = select_trip_ends(stops.clone(), &poi_index, &empty_roads, &mut id);
        assert_eq!(before.len(), 2);

        // A primary road passing exactly through the first centroid.
        let road = RoadSegment::new(
            "r1".into(),
            RoadClass::Primary,
            vec![GeoPoint::new(base.lon, 39.99), GeoPoint::new(base.lon, 40.01)],
        );
        let roads = RoadIndex::build(vec![road]).unwrap();
        let mut id = 0;
        let (after, stats) = select_trip_ends(stops, &poi_index, &roads, &mut id);
        assert_eq!(after.len(), 1);
        assert_eq!(after[0].stop.centroid_lon, other.lon);
        assert_eq!(stats.rejected_medium_on_road, 1);
    }

    fn trip_end(id: u64, seg: u32, t_start: i64, t_end: i64, lon: f64, lat: f64) -> TripEnd {
        TripEnd {
            id,
            stop: TruckStop {
                truck_id: "t1".into(),
                segment_id: seg,
                centroid_lon: lon,
                centroid_lat: lat,
                t_start,
                t_end,
                n_points: 5,
                stop_class: StopClass::Medium,
            },
            validity_reason: ValidityReason::MediumInPoi,
            matched_poi_category: Some(PoiCategory::Factory),
            matched_poi_id: Some("f1".into()),
            city_id: None,
        }
    }

    /// Straight constant-speed records between stop locations.
    fn straight_segment() -> (Trajectory, Vec<TripEnd>) {
        let mut records = Vec::new();
        let lat = 40.0;
        // Stop A: fixes at t = 0..120 at lon 116.0; travel east at constant
        // speed; stop B: fixes at 720..840 at the far end.
        let lon_a = 116.0;
        let lon_b = 116.05;
        for i in 0..5 {
            records.push(GpsRecord {
                truck_id: "t1".into(),
                lon: lon_a,
                lat,
                timestamp: i * 30,
                reported_speed: None,
                heading: None,
            });
        }
        let travel_steps = 20;
        for i in 1..travel_steps {
            let frac = i as f64 / travel_steps as f64;
            records.push(GpsRecord {
                truck_id: "t1".into(),
                lon: lon_a + (lon_b - lon_a) * frac,
                lat,
                timestamp: 120 + i * 30,
                reported_speed: None,
                heading: None,
            });
        }
        for i in 0..5 {
            records.push(GpsRecord {
                truck_id: "t1".into(),
                lon: lon_b,
                lat,
                timestamp: 720 + i * 30,
                reported_speed: None,
                heading: None,
            });
        }
        let traj = Trajectory {
            truck_id: "t1".into(),
            segment_id: 0,
            records,
        };
        let ends = vec![
            trip_end(0, 0, 0, 120, lon_a, lat),
            trip_end(1, 0, 720, 840, lon_b, lat),
        ];
        (traj, ends)
    }

    #[test]
    fn chains_consecutive_ends_within_segment() {
        let (traj, _) = straight_segment();
        let ends = vec![
            trip_end(0, 0, 0, 120, 116.0, 40.0),
            trip_end(1, 0, 720, 840, 116.05, 40.0),
            trip_end(2, 0, 2_000, 2_500, 116.1, 40.0),
        ];
        let trips = chain_trips(&ends, &[traj]);
        assert_eq!(trips.len(), 2);
        assert_eq!(trips[0].origin.id, 0);
        assert_eq!(trips[0].destination.id, 1);
        assert_eq!(trips[0].departure_ts, 120);
        assert_eq!(trips[0].arrival_ts, 720);
        assert_eq!(trips[0].duration_s(), 600);
        assert_eq!(trips[1].origin.id, 1);
        assert_eq!(trips[1].destination.id, 2);
    }

    #[test]
    fn ends_across_segment_split_produce_no_trip() {
        let (traj, _) = straight_segment();
        let mut other = traj.clone();
        other.segment_id = 1;
        let ends = vec![
            trip_end(0, 0, 0, 120, 116.0, 40.0),
            trip_end(1, 1, 720, 840, 116.05, 40.0),
        ];
        assert!(chain_trips(&ends, &[traj, other]).is_empty());
    }

    #[test]
    fn path_distance_matches_endpoint_distance_on_straight_run() {
        let (traj, ends) = straight_segment();
        let trips = chain_trips(&ends, &[traj]);
        assert_eq!(trips.len(), 1);
        let endpoint = great_circle_distance(
            GeoPoint::new(116.0, 40.0),
            GeoPoint::new(116.05, 40.0),
        );
        let rel = (trips[0].path_distance_m - endpoint).abs() / endpoint;
        assert!(rel < 0.001, "path {} vs endpoint {endpoint}", trips[0].path_distance_m);
    }

    fn square_city(id: &str, lon0: f64, lat0: f64, side: f64) -> CityRegion {
        CityRegion {
            city_id: id.into(),
            rings: vec![vec![
                GeoPoint::new(lon0, lat0),
                GeoPoint::new(lon0 + side, lat0),
                GeoPoint::new(lon0 + side, lat0 + side),
                GeoPoint::new(lon0, lat0 + side),
                GeoPoint::new(lon0, lat0),
            ]],
        }
    }

    #[test]
    fn intercity_marking() {
        let cities = CityIndex::build(vec![
            square_city("A", 115.5, 39.5, 1.0),
            square_city("B", 117.5, 39.5, 1.0),
        ])
        .unwrap();
        let (traj, _) = straight_segment();
        let mk = |lon_o: f64, lon_d: f64| {
            let ends = vec![
                trip_end(0, 0, 0, 120, lon_o, 40.0),
                trip_end(1, 0, 720, 840, lon_d, 40.0),
            ];
            let mut trips = chain_trips(&ends, std::slice::from_ref(&traj));
            mark_intercity(&mut trips, &cities);
            trips.remove(0)
        };
        assert_eq!(mk(116.0, 118.0).intercity, IntercityStatus::Intercity);
        assert_eq!(mk(116.0, 116.2).intercity, IntercityStatus::Intracity);
        assert_eq!(mk(116.0, 130.0).intercity, IntercityStatus::Unresolved);
    }

    #[test]
    fn trips_are_ordered_and_disjoint() {
        let (traj, _) = straight_segment();
        let ends: Vec<TripEnd> = (0..4)
            .map(|i| trip_end(i, 0, i as i64 * 1_000, i as i64 * 1_000 + 200, 116.0, 40.0))
            .collect();
        let trips = chain_trips(&ends, &[traj]);
        assert_eq!(trips.len(), 3);
        for w in trips.windows(2) {
            assert!(w[0].departure_ts < w[1].departure_ts);
            assert!(w[0].arrival_ts <= w[1].departure_ts);
        }
    }

    #[test]
    fn full_detection_to_selection_flow() {
        // End-to-end through stop detection on the straight segment.
        let (traj, _) = straight_segment();
        let thresholds = Thresholds {
            t_min_s: 60,
            t_max_s: 100_000,
            ..Thresholds::default()
        };
        let stops = crate::stops::detect_stops(&traj, &thresholds);
        assert_eq!(stops.len(), 2);
        assert!(stops.iter().all(|s| s.stop_class == StopClass::Medium));
    }
}
