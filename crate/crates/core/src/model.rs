//! Shared data types and geodesic primitives used by every pipeline stage.
//!
//! All types here are immutable values after construction and safe to share
//! read-only across parallel workers.

use thiserror::Error;

/// Mean earth radius in meters for the spherical distance model.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Multiply m/s by this to get km/h.
pub const MS_TO_KMH: f64 = 3.6;

/// A longitude/latitude pair in WGS84 degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    /// True when the coordinates are inside the WGS84 domain.
    pub fn in_bounds(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

/// One raw GPS fix of one truck.
///
/// `reported_speed` and `heading` are carried through for round-trip fidelity
/// of input files but never used by the method, which computes speed from
/// positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsRecord {
    pub truck_id: String,
    /// Longitude, WGS84 degrees in [-180, 180].
    pub lon: f64,
    /// Latitude, WGS84 degrees in [-90, 90].
    pub lat: f64,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    /// Device-reported speed in km/h, if present.
    pub reported_speed: Option<f64>,
    /// Device-reported heading in degrees [0, 360), if present.
    pub heading: Option<f64>,
}

impl GpsRecord {
    pub fn pos(&self) -> GeoPoint {
        GeoPoint::new(self.lon, self.lat)
    }
}

/// A gap-free, time-ordered run of records of one truck.
///
/// Invariants: timestamps strictly increasing, all records share `truck_id`,
/// and no inter-record gap exceeds the gap limit used when splitting.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub truck_id: String,
    pub segment_id: u32,
    pub records: Vec<GpsRecord>,
}

/// Dwell-time class of a stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopClass {
    Short,
    Medium,
    Long,
}

impl StopClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopClass::Short => "short",
            StopClass::Medium => "medium",
            StopClass::Long => "long",
        }
    }
}

/// A maximal stationary episode of one truck.
#[derive(Debug, Clone)]
pub struct TruckStop {
    pub truck_id: String,
    pub segment_id: u32,
    /// Mean longitude of the member stopped fixes.
    pub centroid_lon: f64,
    /// Mean latitude of the member stopped fixes.
    pub centroid_lat: f64,
    /// Timestamp of the first member fix.
    pub t_start: i64,
    /// Timestamp of the last member fix.
    pub t_end: i64,
    pub n_points: u32,
    pub stop_class: StopClass,
}

impl TruckStop {
    /// Elapsed seconds between the first and last stationary fix.
    pub fn dwell(&self) -> i64 {
        self.t_end - self.t_start
    }

    pub fn centroid(&self) -> GeoPoint {
        GeoPoint::new(self.centroid_lon, self.centroid_lat)
    }
}

/// The calibrated parameter set that drives detection and preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    /// Speed threshold below (or at) which the truck counts as stationary, km/h.
    pub speed_threshold_kmh: f64,
    /// Minimum dwell for a stop to be a trip-end candidate, seconds.
    pub t_min_s: i64,
    /// Dwell at or beyond which a stop is long-term, seconds.
    pub t_max_s: i64,
    /// Maximum plausible average speed between fixes, km/h.
    pub max_speed_kmh: f64,
    /// Maximum plausible acceleration magnitude between fix pairs, m/s².
    pub max_accel_ms2: f64,
    /// Inter-fix gap beyond which a trajectory is split, seconds.
    pub gap_limit_s: i64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            speed_threshold_kmh: 1.1,
            t_min_s: 1_440,
            t_max_s: 46_800,
            max_speed_kmh: 120.0,
            max_accel_ms2: 5.0,
            gap_limit_s: 3_600,
        }
    }
}

impl Thresholds {
    /// Check the structural invariants of the parameter set.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.speed_threshold_kmh > 0.0 && self.speed_threshold_kmh < self.max_speed_kmh) {
            return Err(format!(
                "speed threshold {} must be in (0, max_speed {})",
                self.speed_threshold_kmh, self.max_speed_kmh
            ));
        }
        if !(self.t_min_s > 0 && self.t_min_s < self.t_max_s) {
            return Err(format!(
                "time thresholds must satisfy 0 < t_min ({}) < t_max ({})",
                self.t_min_s, self.t_max_s
            ));
        }
        if self.max_accel_ms2 <= 0.0 {
            return Err(format!("max accel {} must be positive", self.max_accel_ms2));
        }
        if self.gap_limit_s <= 0 {
            return Err(format!("gap limit {} must be positive", self.gap_limit_s));
        }
        Ok(())
    }
}

/// The closed list of freight-related POI categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoiCategory {
    ConstructionCompany,
    MachineryElectronics,
    ChemicalMetallurgy,
    CommercialTrade,
    LogisticsWarehouse,
    MiningCompany,
    Factory,
    FarmingBase,
    IndustrialPark,
    ResidentialArea,
    BuildingMaterialsMarket,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 11] = [
        PoiCategory::ConstructionCompany,
        PoiCategory::MachineryElectronics,
        PoiCategory::ChemicalMetallurgy,
        PoiCategory::CommercialTrade,
        PoiCategory::LogisticsWarehouse,
        PoiCategory::MiningCompany,
        PoiCategory::Factory,
        PoiCategory::FarmingBase,
        PoiCategory::IndustrialPark,
        PoiCategory::ResidentialArea,
        PoiCategory::BuildingMaterialsMarket,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PoiCategory::ConstructionCompany => "construction_company",
            PoiCategory::MachineryElectronics => "machinery_electronics",
            PoiCategory::ChemicalMetallurgy => "chemical_metallurgy",
            PoiCategory::CommercialTrade => "commercial_trade",
            PoiCategory::LogisticsWarehouse => "logistics_warehouse",
            PoiCategory::MiningCompany => "mining_company",
            PoiCategory::Factory => "factory",
            PoiCategory::FarmingBase => "farming_base",
            PoiCategory::IndustrialPark => "industrial_park",
            PoiCategory::ResidentialArea => "residential_area",
            PoiCategory::BuildingMaterialsMarket => "building_materials_market",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.as_str() == s)
    }

    /// Default boundary radii per category (meters).
    pub fn default_params(&self) -> PoiCategoryParams {
        let (valid_radius_m, poi_radius_m) = match self {
            PoiCategory::ConstructionCompany => (370.0, 690.0),
            PoiCategory::MachineryElectronics => (345.0, 655.0),
            PoiCategory::ChemicalMetallurgy => (290.0, 545.0),
            PoiCategory::CommercialTrade => (275.0, 516.0),
            PoiCategory::LogisticsWarehouse => (260.0, 487.0),
            PoiCategory::MiningCompany => (285.0, 521.0),
            PoiCategory::Factory => (350.0, 670.0),
            PoiCategory::FarmingBase => (310.0, 550.0),
            PoiCategory::IndustrialPark => (450.0, 849.0),
            PoiCategory::ResidentialArea => (430.0, 814.0),
            PoiCategory::BuildingMaterialsMarket => (390.0, 715.0),
        };
        PoiCategoryParams {
            category: *self,
            valid_radius_m,
            poi_radius_m,
        }
    }
}

/// A freight-related point of interest.
#[derive(Debug, Clone)]
pub struct Poi {
    pub poi_id: String,
    pub category: PoiCategory,
    pub center_lon: f64,
    pub center_lat: f64,
}

impl Poi {
    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(self.center_lon, self.center_lat)
    }
}

/// Calibrated boundary radii of one POI category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoiCategoryParams {
    pub category: PoiCategory,
    /// Distance of peak stop density around the category's centers, meters.
    pub valid_radius_m: f64,
    /// Boundary radius where cumulative stop probability doubles, meters.
    pub poi_radius_m: f64,
}

/// Road class of a network segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoadClass {
    Motorway,
    Primary,
    Secondary,
    Tertiary,
}

impl RoadClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            RoadClass::Motorway => "motorway",
            RoadClass::Primary => "primary",
            RoadClass::Secondary => "secondary",
            RoadClass::Tertiary => "tertiary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "motorway" => Some(RoadClass::Motorway),
            "primary" => Some(RoadClass::Primary),
            "secondary" => Some(RoadClass::Secondary),
            "tertiary" => Some(RoadClass::Tertiary),
            _ => None,
        }
    }

    /// Half the average road width: primary/secondary roads are taken as
    /// 17.5 m wide, motorways and tertiary roads as 10.5 m.
    pub fn half_width_m(&self) -> f64 {
        match self {
            RoadClass::Primary | RoadClass::Secondary => 8.75,
            RoadClass::Motorway | RoadClass::Tertiary => 5.25,
        }
    }
}

/// A road centerline with its congestion-filter half width.
#[derive(Debug, Clone)]
pub struct RoadSegment {
    pub segment_id: String,
    pub road_class: RoadClass,
    /// Ordered centerline vertices; at least 2.
    pub centerline: Vec<GeoPoint>,
    pub half_width_m: f64,
}

impl RoadSegment {
    pub fn new(segment_id: String, road_class: RoadClass, centerline: Vec<GeoPoint>) -> Self {
        Self {
            segment_id,
            road_class,
            half_width_m: road_class.half_width_m(),
            centerline,
        }
    }
}

/// An administrative region made of one or more closed rings.
///
/// Rings are additive coverage, not holes: a point is inside the region when
/// it is inside any ring.
#[derive(Debug, Clone)]
pub struct CityRegion {
    pub city_id: String,
    pub rings: Vec<Vec<GeoPoint>>,
}

/// Failure of a successive-pair computation, signalling bad preprocessing.
#[derive(Debug, Error, PartialEq)]
pub enum PairError {
    #[error("timestamps not increasing: {earlier} then {later}")]
    NonIncreasingTimestamps { earlier: i64, later: i64 },
    #[error("non-positive time interval {dt_s} s")]
    NonPositiveInterval { dt_s: f64 },
}

/// Great-circle distance in meters between two lon/lat points
/// (haversine on a sphere of radius [`EARTH_RADIUS_M`]).
pub fn great_circle_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();

    let s_lat = (dlat / 2.0).sin();
    let s_lon = (dlon / 2.0).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Average speed in km/h from one fix to the next.
pub fn avg_speed(rec: &GpsRecord, next: &GpsRecord) -> Result<f64, PairError> {
    if next.timestamp <= rec.timestamp {
        return Err(PairError::NonIncreasingTimestamps {
            earlier: rec.timestamp,
            later: next.timestamp,
        });
    }
    let meters = great_circle_distance(rec.pos(), next.pos());
    let dt = (next.timestamp - rec.timestamp) as f64;
    Ok(meters / dt * MS_TO_KMH)
}

/// Signed acceleration in m/s² between two successive pair speeds (km/h)
/// separated by `dt_s` seconds.
pub fn accel_between(v_prev_kmh: f64, v_next_kmh: f64, dt_s: f64) -> Result<f64, PairError> {
    if dt_s <= 0.0 {
        return Err(PairError::NonPositiveInterval { dt_s });
    }
    Ok((v_next_kmh - v_prev_kmh) / MS_TO_KMH / dt_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(truck: &str, lon: f64, lat: f64, ts: i64) -> GpsRecord {
        GpsRecord {
            truck_id: truck.to_string(),
            lon,
            lat,
            timestamp: ts,
            reported_speed: None,
            heading: None,
        }
    }

    /// Independent check: spherical law of cosines.
    fn law_of_cosines_distance(a: GeoPoint, b: GeoPoint) -> f64 {
        let lat1 = a.lat.to_radians();
        let lat2 = b.lat.to_radians();
        let dlon = (b.lon - a.lon).to_radians();
        let cos_angle = lat1.sin() * lat2.sin() + lat1.cos() * lat2.cos() * dlon.cos();
        EARTH_RADIUS_M * cos_angle.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn distance_identity_is_zero() {
        let p = GeoPoint::new(116.0, 40.0);
        assert_eq!(great_circle_distance(p, p), 0.0);
    }

    #[test]
    fn distance_one_degree_at_equator() {
        // Arc length of one degree at the equator: 2*pi*R/360.
        let expected = 2.0 * std::f64::consts::PI * EARTH_RADIUS_M / 360.0;
        let d = great_circle_distance(GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 0.0));
        assert!((d - expected).abs() < 1e-6, "got {d}, want {expected}");
    }

    #[test]
    fn distance_between_sample_fixes() {
        // Two consecutive fixes of the sample trajectory, ~91 m apart.
        let a = GeoPoint::new(119.786484, 34.387562);
        let b = GeoPoint::new(119.787315, 34.388016);
        let d = great_circle_distance(a, b);
        let oracle = law_of_cosines_distance(a, b);
        assert!(
            (d - oracle).abs() < 1e-3,
            "haversine {d} vs law-of-cosines {oracle}"
        );
        assert!((d - 91.0).abs() < 1.5, "expected ~91 m, got {d}");
    }

    #[test]
    fn avg_speed_zero_displacement() {
        let a = rec("t", 119.789902, 34.38847, 0);
        let b = rec("t", 119.789902, 34.38847, 30);
        assert_eq!(avg_speed(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn avg_speed_sample_fix_pair() {
        let a = rec("t", 119.786484, 34.387562, 0);
        let b = rec("t", 119.787315, 34.388016, 30);
        let d = great_circle_distance(a.pos(), b.pos());
        let expected = d / 30.0 * MS_TO_KMH;
        let v = avg_speed(&a, &b).unwrap();
        assert_eq!(v, expected);
        assert!((v - 10.9).abs() < 0.2, "expected ~10.9 km/h, got {v}");
    }

    #[test]
    fn avg_speed_two_km_in_thirty_seconds() {
        // ~2,000 m north in 30 s is 240 km/h.
        let a = rec("t", 116.0, 40.0, 0);
        let dlat = 2_000.0 / (EARTH_RADIUS_M * std::f64::consts::PI / 180.0);
        let b = rec("t", 116.0, 40.0 + dlat, 30);
        let v = avg_speed(&a, &b).unwrap();
        assert!((v - 240.0).abs() < 0.01, "got {v}");
    }

    #[test]
    fn avg_speed_rejects_non_increasing_time() {
        let a = rec("t", 116.0, 40.0, 100);
        let b = rec("t", 116.0, 40.0, 100);
        assert!(matches!(
            avg_speed(&a, &b),
            Err(PairError::NonIncreasingTimestamps { .. })
        ));
    }

    #[test]
    fn accel_cases() {
        assert_eq!(accel_between(0.0, 0.0, 30.0).unwrap(), 0.0);
        assert_eq!(accel_between(0.0, 108.0, 30.0).unwrap(), 1.0);
        assert_eq!(accel_between(0.0, 540.0, 30.0).unwrap(), 5.0);
        assert!(accel_between(0.0, 10.0, 0.0).is_err());
        assert!(accel_between(0.0, 10.0, -5.0).is_err());
    }

    #[test]
    fn accel_zero_for_collinear_equally_spaced_samples() {
        // Along a meridian and along the equator the two pair distances agree
        // bit-for-bit, so the acceleration is exactly zero.
        let m1 = rec("t", 30.0, 10.0, 0);
        let m2 = rec("t", 30.0, 10.5, 60);
        let m3 = rec("t", 30.0, 11.0, 120);
        let v1 = avg_speed(&m1, &m2).unwrap();
        let v2 = avg_speed(&m2, &m3).unwrap();
        assert_eq!(accel_between(v1, v2, 60.0).unwrap(), 0.0);

        let e1 = rec("t", 10.0, 0.0, 0);
        let e2 = rec("t", 10.25, 0.0, 30);
        let e3 = rec("t", 10.5, 0.0, 60);
        let v1 = avg_speed(&e1, &e2).unwrap();
        let v2 = avg_speed(&e2, &e3).unwrap();
        assert_eq!(accel_between(v1, v2, 30.0).unwrap(), 0.0);
    }

    #[test]
    fn thresholds_default_and_validation() {
        let t = Thresholds::default();
        assert_eq!(t.speed_threshold_kmh, 1.1);
        assert_eq!(t.t_min_s, 1_440);
        assert_eq!(t.t_max_s, 46_800);
        assert_eq!(t.max_speed_kmh, 120.0);
        assert_eq!(t.max_accel_ms2, 5.0);
        assert_eq!(t.gap_limit_s, 3_600);
        t.validate().unwrap();

        let bad = Thresholds {
            t_min_s: 50_000,
            ..Thresholds::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn poi_category_round_trip_and_radii() {
        for c in PoiCategory::ALL {
            assert_eq!(PoiCategory::parse(c.as_str()), Some(c));
            let p = c.default_params();
            assert!(p.valid_radius_m > 0.0 && p.valid_radius_m < p.poi_radius_m);
        }
        let factory = PoiCategory::Factory.default_params();
        assert_eq!(factory.valid_radius_m, 350.0);
        assert_eq!(factory.poi_radius_m, 670.0);
        assert_eq!(PoiCategory::parse("no_such_category"), None);
    }

    #[test]
    fn road_half_widths() {
        assert_eq!(RoadClass::Primary.half_width_m(), 8.75);
        assert_eq!(RoadClass::Secondary.half_width_m(), 8.75);
        assert_eq!(RoadClass::Motorway.half_width_m(), 5.25);
        assert_eq!(RoadClass::Tertiary.half_width_m(), 5.25);
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_nonnegative(
            lon1 in -180.0f64..180.0, lat1 in -90.0f64..90.0,
            lon2 in -180.0f64..180.0, lat2 in -90.0f64..90.0,
        ) {
            let a = GeoPoint::new(lon1, lat1);
            let b = GeoPoint::new(lon2, lat2);
            let ab = great_circle_distance(a, b);
            let ba = great_circle_distance(b, a);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        }

        #[test]
        fn distance_triangle_inequality(
            lon1 in -180.0f64..180.0, lat1 in -89.0f64..89.0,
            lon2 in -180.0f64..180.0, lat2 in -89.0f64..89.0,
            lon3 in -180.0f64..180.0, lat3 in -89.0f64..89.0,
        ) {
            let a = GeoPoint::new(lon1, lat1);
            let b = GeoPoint::new(lon2, lat2);
            let c = GeoPoint::new(lon3, lat3);
            let ab = great_circle_distance(a, b);
            let bc = great_circle_distance(b, c);
            let ac = great_circle_distance(a, c);
            prop_assert!(ac <= ab + bc + 1e-6 * ac.max(1.0));
        }

        #[test]
        fn avg_speed_invariant_under_time_translation(
            lon1 in -10.0f64..10.0, lat1 in -10.0f64..10.0,
            lon2 in -10.0f64..10.0, lat2 in -10.0f64..10.0,
            t0 in 0i64..1_000_000, dt in 1i64..10_000, shift in -500_000i64..500_000,
        ) {
            let a = rec("t", lon1, lat1, t0);
            let b = rec("t", lon2, lat2, t0 + dt);
            let a2 = rec("t", lon1, lat1, t0 + shift);
            let b2 = rec("t", lon2, lat2, t0 + dt + shift);
            prop_assert_eq!(avg_speed(&a, &b).unwrap(), avg_speed(&a2, &b2).unwrap());
        }
    }
}
