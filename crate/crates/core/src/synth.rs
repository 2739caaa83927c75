//! Synthetic labeled fleets: a deterministic generator for GPS files with
//! matching POI/road/city geography and per-visit ground truth, plus the
//! scorer that grades extracted trip ends against that truth.
//!
//! The generator plants one adversary per preprocessing rule (duplicates,
//! dropouts, teleport jumps, stationary drift) and one per selection rule
//! (rest stops away from POIs, congestion stops on road centerlines).
//! Stationary drift is a bounded jump process with a handful of fixed step
//! magnitudes below the drift speed scale, which reproduces the jagged
//! low-speed region of the pair-speed distribution that the speed-threshold
//! calibration keys on.

use crate::model::{
    great_circle_distance, CityRegion, GeoPoint, GpsRecord, Poi, PoiCategory, RoadClass,
    RoadSegment, EARTH_RADIUS_M,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("infeasible plan: {0}")]
    Infeasible(String),
}

/// Meters per degree of latitude.
fn meters_per_deg_lat() -> f64 {
    EARTH_RADIUS_M * std::f64::consts::PI / 180.0
}

fn meters_per_deg_lon(lat: f64) -> f64 {
    meters_per_deg_lat() * lat.to_radians().cos()
}

/// Two-segment power law with continuous density, used for dwell times.
#[derive(Debug, Clone, Copy)]
pub struct BrokenPowerLaw {
    pub alpha1: f64,
    pub alpha2: f64,
    pub x_min: f64,
    pub x_break: f64,
    pub x_max: f64,
}

impl BrokenPowerLaw {
    fn seg1_integral(&self, a: f64, b: f64) -> f64 {
        let e = 1.0 - self.alpha1;
        (b.powf(e) - a.powf(e)) / e
    }

    fn seg2_integral(&self, a: f64, b: f64) -> f64 {
        let e = 1.0 - self.alpha2;
        self.x_break.powf(self.alpha2 - self.alpha1) * (b.powf(e) - a.powf(e)) / e
    }

    /// Unnormalized CDF mass below x.
    fn mass_below(&self, x: f64) -> f64 {
        if x <= self.x_min {
            0.0
        } else if x < self.x_break {
            self.seg1_integral(self.x_min, x)
        } else {
            self.seg1_integral(self.x_min, self.x_break)
                + self.seg2_integral(self.x_break, x.min(self.x_max))
        }
    }

    /// Value whose unnormalized mass below equals `m`.
    fn inv_mass(&self, m: f64) -> f64 {
        let m1 = self.seg1_integral(self.x_min, self.x_break);
        if m <= m1 {
            let e = 1.0 - self.alpha1;
            (self.x_min.powf(e) + m * e).powf(1.0 / e)
        } else {
            let e = 1.0 - self.alpha2;
            let w = (m - m1) / self.x_break.powf(self.alpha2 - self.alpha1);
            (self.x_break.powf(e) + w * e).powf(1.0 / e)
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.sample_range(rng, self.x_min, self.x_max)
    }

    /// Sample conditioned on `lo <= x <= hi`.
    pub fn sample_range<R: Rng>(&self, rng: &mut R, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(self.x_min);
        let hi = hi.min(self.x_max);
        let m_lo = self.mass_below(lo);
        let m_hi = self.mass_below(hi);
        let u: f64 = rng.gen();
        self.inv_mass(m_lo + u * (m_hi - m_lo))
    }
}

/// Standard normal draw (Box-Muller).
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn lognormal<R: Rng>(rng: &mut R, mu: f64, sigma: f64) -> f64 {
    (mu + sigma * normal(rng)).exp()
}

/// World geometry: square region with a road grid, city tiling, and POIs
/// planted in road-grid cell interiors (clear of every road).
#[derive(Debug, Clone)]
pub struct WorldPlan {
    pub origin_lon: f64,
    pub origin_lat: f64,
    /// Side of the square region, degrees.
    pub span_deg: f64,
    /// Cities per axis (square tiling).
    pub cities_per_axis: u32,
    /// Road grid spacing, degrees.
    pub road_spacing_deg: f64,
    /// POIs per category.
    pub pois_per_category: Vec<(PoiCategory, u32)>,
    /// Relative visit frequency per category.
    pub visit_weights: Vec<(PoiCategory, f64)>,
}

/// Dwell-time law and special-stop rates.
#[derive(Debug, Clone)]
pub struct DwellPlan {
    pub law: BrokenPowerLaw,
    /// Dwell ceiling for trip-end visits, seconds; above the long-term
    /// threshold so a share of ends are long-term stops.
    pub trip_end_max_s: f64,
    /// Expected driver-rest pauses per leg; the integer part is planted
    /// deterministically and the fraction by coin flip. Rest dwells draw
    /// from the full dwell law, so fleets also contain short stops.
    pub rest_stop_rate: f64,
    /// Probability of one on-road congestion pause per leg.
    pub congestion_stop_rate: f64,
}

/// Leg length/speed laws. Leg duration is length/speed, so the duration law
/// is lognormal with mu_d = mu_len - mu_speed and variance summed.
#[derive(Debug, Clone)]
pub struct TravelPlan {
    /// ln-space location of leg road length, meters.
    pub len_mu: f64,
    pub len_sigma: f64,
    /// ln-space location of leg cruise speed, m/s.
    pub speed_mu: f64,
    pub speed_sigma: f64,
    /// Acceleration/deceleration ramp duration cap, seconds.
    pub ramp_s: f64,
}

impl TravelPlan {
    /// Plan leg laws from target lognormal modes of trip distance (meters)
    /// and trip duration (seconds).
    pub fn from_modes(distance_mode_m: f64, len_sigma: f64, duration_mode_s: f64, speed_sigma: f64) -> Self {
        let len_mu = distance_mode_m.ln() + len_sigma * len_sigma;
        let dur_sigma2 = len_sigma * len_sigma + speed_sigma * speed_sigma;
        let dur_mu = duration_mode_s.ln() + dur_sigma2;
        let speed_mu = len_mu - dur_mu;
        Self {
            len_mu,
            len_sigma,
            speed_mu,
            speed_sigma,
            ramp_s: 240.0,
        }
    }
}

/// GPS error model. `jitter_std_m` scales both the bounded stationary drift
/// process and the small moving-fix noise; the abnormality rates plant one
/// adversary per preprocessing rule.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    pub jitter_std_m: f64,
    pub dropout_prob: f64,
    pub duplicate_prob: f64,
    pub jump_prob: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            jitter_std_m: 0.0,
            dropout_prob: 0.0,
            duplicate_prob: 0.0,
            jump_prob: 0.0,
        }
    }

    /// The standard validation noise level: 10 m jitter, 1% dropouts,
    /// 0.5% duplicates, 0.1% teleport jumps.
    pub fn standard() -> Self {
        Self {
            jitter_std_m: 10.0,
            dropout_prob: 0.01,
            duplicate_prob: 0.005,
            jump_prob: 0.001,
        }
    }
}

/// Complete generator configuration. Identical plans and seeds yield
/// byte-identical output files.
#[derive(Debug, Clone)]
pub struct FleetPlan {
    pub seed: u64,
    pub n_trucks: u32,
    pub horizon_s: i64,
    pub sampling_interval_s: i64,
    pub world: WorldPlan,
    pub dwell: DwellPlan,
    pub travel: TravelPlan,
    pub noise: NoiseModel,
}

impl FleetPlan {
    /// Reference fleet: 100 km-scale world, 6x6 cities, five active POI
    /// categories, dwell and travel laws at the published scales.
    pub fn reference(seed: u64, n_trucks: u32) -> Self {
        let categories = [
            (PoiCategory::Factory, 0.30),
            (PoiCategory::IndustrialPark, 0.25),
            (PoiCategory::LogisticsWarehouse, 0.20),
            (PoiCategory::ConstructionCompany, 0.15),
            (PoiCategory::MiningCompany, 0.10),
        ];
        FleetPlan {
            seed,
            n_trucks,
            horizon_s: 7 * 86_400,
            sampling_interval_s: 30,
            world: WorldPlan {
                origin_lon: 110.0,
                origin_lat: 30.0,
                span_deg: 0.9,
                cities_per_axis: 6,
                road_spacing_deg: 0.09,
                pois_per_category: categories.iter().map(|&(c, _)| (c, 20)).collect(),
                visit_weights: categories.to_vec(),
            },
            dwell: DwellPlan {
                law: BrokenPowerLaw {
                    alpha1: 1.3,
                    alpha2: 0.6,
                    x_min: 60.0,
                    x_break: 1_440.0,
                    x_max: 46_800.0,
                },
                trip_end_max_s: 70_000.0,
                rest_stop_rate: 0.15,
                congestion_stop_rate: 0.10,
            },
            travel: TravelPlan::from_modes(90_000.0, 0.5, 10_800.0, 0.15),
            noise: NoiseModel::standard(),
        }
    }
}

/// Ground-truth label of one visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VisitLabel {
    TripEnd,
    RestStop,
    CongestionStop,
}

impl VisitLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            VisitLabel::TripEnd => "trip_end",
            VisitLabel::RestStop => "rest_stop",
            VisitLabel::CongestionStop => "congestion_stop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trip_end" => Some(VisitLabel::TripEnd),
            "rest_stop" => Some(VisitLabel::RestStop),
            "congestion_stop" => Some(VisitLabel::CongestionStop),
            _ => None,
        }
    }
}

/// One labeled stay of one truck.
#[derive(Debug, Clone)]
pub struct TruthVisit {
    pub truck_id: String,
    pub lon: f64,
    pub lat: f64,
    pub t_start: i64,
    pub t_end: i64,
    pub label: VisitLabel,
}

/// Per-truck, time-ordered labeled visits.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub visits: Vec<TruthVisit>,
}

/// Everything one generation run produces.
pub struct FleetData {
    /// Per-truck emitted rows, truck order and row order deterministic.
    pub records: Vec<(String, Vec<GpsRecord>)>,
    pub pois: Vec<Poi>,
    pub roads: Vec<RoadSegment>,
    pub cities: Vec<CityRegion>,
    pub truth: GroundTruth,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// World construction
// ---------------------------------------------------------------------------

struct World {
    plan: WorldPlan,
    /// Longitudes of vertical road lines and latitudes of horizontal ones.
    v_lines: Vec<f64>,
    h_lines: Vec<f64>,
    /// Road class per line, vertical then horizontal.
    line_classes: Vec<RoadClass>,
    pois: Vec<Poi>,
    pois_by_category: HashMap<PoiCategory, Vec<usize>>,
}

const ROAD_CLASS_CYCLE: [RoadClass; 4] = [
    RoadClass::Motorway,
    RoadClass::Primary,
    RoadClass::Secondary,
    RoadClass::Tertiary,
];

impl World {
    fn build(plan: &WorldPlan, rng: &mut ChaCha8Rng) -> Result<World, PlanError> {
        let n_lines = (plan.span_deg / plan.road_spacing_deg).round() as usize + 1;
        if n_lines < 3 {
            return Err(PlanError::Infeasible(
                "road grid needs at least 3 lines per axis".into(),
            ));
        }
        let v_lines: Vec<f64> = (0..n_lines)
            .map(|i| plan.origin_lon + i as f64 * plan.road_spacing_deg)
            .collect();
        let h_lines: Vec<f64> = (0..n_lines)
            .map(|i| plan.origin_lat + i as f64 * plan.road_spacing_deg)
            .collect();
        let line_classes: Vec<RoadClass> = (0..2 * n_lines)
            .map(|i| ROAD_CLASS_CYCLE[i % 4])
            .collect();

        // One POI at most per interior grid cell keeps category boundaries
        // from overlapping.
        let n_cells = (n_lines - 1) * (n_lines - 1);
        let total_pois: u32 = plan.pois_per_category.iter().map(|&(_, n)| n).sum();
        if total_pois as usize > n_cells {
            return Err(PlanError::Infeasible(format!(
                "{total_pois} POIs need more than the {n_cells} available grid cells"
            )));
        }
        let mut cells: Vec<(usize, usize)> = (0..n_lines - 1)
            .flat_map(|i| (0..n_lines - 1).map(move |j| (i, j)))
            .collect();
        // Fisher-Yates with the plan RNG.
        for i in (1..cells.len()).rev() {
            let j = rng.gen_range(0..=i);
            cells.swap(i, j);
        }
        let mut pois = Vec::new();
        let mut pois_by_category: HashMap<PoiCategory, Vec<usize>> = HashMap::new();
        let mut cell_iter = cells.into_iter();
        let max_offset = plan.road_spacing_deg * 0.17;
        for &(category, count) in &plan.pois_per_category {
            for k in 0..count {
                let (ci, cj) = cell_iter.next().expect("cell count checked");
                let center_lon = plan.origin_lon
                    + (ci as f64 + 0.5) * plan.road_spacing_deg
                    + rng.gen_range(-max_offset..max_offset);
                let center_lat = plan.origin_lat
                    + (cj as f64 + 0.5) * plan.road_spacing_deg
                    + rng.gen_range(-max_offset..max_offset);
                pois_by_category
                    .entry(category)
                    .or_default()
                    .push(pois.len());
                pois.push(Poi {
                    poi_id: format!("poi_{}_{:04}", category.as_str(), k),
                    category,
                    center_lon,
                    center_lat,
                });
            }
        }
        Ok(World {
            plan: plan.clone(),
            v_lines,
            h_lines,
            line_classes,
            pois,
            pois_by_category,
        })
    }

    fn lat_min(&self) -> f64 {
        self.plan.origin_lat
    }

    fn lat_max(&self) -> f64 {
        self.plan.origin_lat + self.plan.span_deg
    }

    fn snap(&self, x: f64, lines: &[f64]) -> f64 {
        *lines
            .iter()
            .min_by(|a, b| {
                (*a - x).abs().partial_cmp(&(*b - x).abs()).unwrap()
            })
            .unwrap()
    }

    fn v_line_class(&self, lon: f64) -> RoadClass {
        let idx = self
            .v_lines
            .iter()
            .position(|&l| l == lon)
            .unwrap_or(0);
        self.line_classes[idx]
    }

    fn h_line_class(&self, lat: f64) -> RoadClass {
        let idx = self
            .h_lines
            .iter()
            .position(|&l| l == lat)
            .unwrap_or(0);
        self.line_classes[self.v_lines.len() + idx]
    }

    /// Materialize the road grid as densified segments.
    fn road_segments(&self) -> Vec<RoadSegment> {
        let mut segments = Vec::new();
        let lo_lat = self.lat_min();
        let hi_lat = self.lat_max();
        let lo_lon = self.plan.origin_lon;
        let hi_lon = self.plan.origin_lon + self.plan.span_deg;
        // Vertices every ~500 m keep the chord edge distance within
        // millimeters of the true geodesic offset.
        let step_lat = 500.0 / meters_per_deg_lat();
        for (i, &lon) in self.v_lines.iter().enumerate() {
            let mut pts = Vec::new();
            let mut lat = lo_lat;
            while lat < hi_lat {
                pts.push(GeoPoint::new(lon, lat));
                lat += step_lat;
            }
            pts.push(GeoPoint::new(lon, hi_lat));
            segments.push(RoadSegment::new(
                format!("road_v_{i:03}"),
                self.line_classes[i],
                pts,
            ));
        }
        let step_lon = 500.0 / meters_per_deg_lon(lo_lat + self.plan.span_deg / 2.0);
        for (j, &lat) in self.h_lines.iter().enumerate() {
            let mut pts = Vec::new();
            let mut lon = lo_lon;
            while lon < hi_lon {
                pts.push(GeoPoint::new(lon, lat));
                lon += step_lon;
            }
            pts.push(GeoPoint::new(lon, hi_lat.min(lat).max(lat)));
            segments.push(RoadSegment::new(
                format!("road_h_{j:03}"),
                self.line_classes[self.v_lines.len() + j],
                pts,
            ));
        }
        segments
    }

    fn city_regions(&self) -> Vec<CityRegion> {
        let n = self.plan.cities_per_axis as usize;
        let side = self.plan.span_deg / n as f64;
        let mut cities = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let lon0 = self.plan.origin_lon + i as f64 * side;
                let lat0 = self.plan.origin_lat + j as f64 * side;
                cities.push(CityRegion {
                    city_id: format!("city_{i:02}_{j:02}"),
                    rings: vec![vec![
                        GeoPoint::new(lon0, lat0),
                        GeoPoint::new(lon0 + side, lat0),
                        GeoPoint::new(lon0 + side, lat0 + side),
                        GeoPoint::new(lon0, lat0 + side),
                        GeoPoint::new(lon0, lat0),
                    ]],
                });
            }
        }
        cities
    }

    /// Draw a stop location around a POI: distance from a sharply peaked
    /// unimodal law with mode at the category's valid radius, capped inside
    /// the POI boundary; uniform direction.
    fn stop_location_near(&self, rng: &mut ChaCha8Rng, poi: &Poi) -> GeoPoint {
        let params = poi.category.default_params();
        let mode = params.valid_radius_m;
        let lo = 0.35 * mode;
        let hi = (1.67 * mode).min(0.93 * params.poi_radius_m);
        // Rejection sampling; the normalized bump peaks at 1.
        let k = 12.0;
        let bump = |r: f64| {
            let t = r / mode;
            t.powf(k) * (-k * (t * t - 1.0) / 2.0).exp()
        };
        let mut d = mode;
        for _ in 0..64 {
            let r = lo + rng.gen::<f64>() * (hi - lo);
            if rng.gen::<f64>() <= bump(r) {
                d = r;
                break;
            }
        }
        let theta: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        GeoPoint::new(
            poi.center_lon + d * theta.cos() / meters_per_deg_lon(poi.center_lat),
            poi.center_lat + d * theta.sin() / meters_per_deg_lat(),
        )
    }
}

// ---------------------------------------------------------------------------
// Leg routing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct PathPiece {
    a: GeoPoint,
    b: GeoPoint,
    len_m: f64,
    /// Road class when the piece runs along a grid line; None on the
    /// off-road approach to or from a stop location.
    road: Option<RoadClass>,
}

fn piece(a: GeoPoint, b: GeoPoint, road: Option<RoadClass>) -> PathPiece {
    PathPiece {
        a,
        b,
        len_m: great_circle_distance(a, b),
        road,
    }
}

/// Manhattan route along the road grid from one stop location to another:
/// off-road approach to the nearest vertical line, vertical travel, one
/// horizontal hop, vertical travel, off-road approach to the destination.
fn grid_route(world: &World, from: GeoPoint, to: GeoPoint) -> Vec<PathPiece> {
    let xa = world.snap(from.lon, &world.v_lines);
    let xb = world.snap(to.lon, &world.v_lines);
    let yh = world.snap((from.lat + to.lat) / 2.0, &world.h_lines);
    let mut pieces = Vec::new();
    let mut push = |a: GeoPoint, b: GeoPoint, road: Option<RoadClass>| {
        if (a.lon - b.lon).abs() > 1e-12 || (a.lat - b.lat).abs() > 1e-12 {
            pieces.push(piece(a, b, road));
        }
    };
    let j1 = GeoPoint::new(xa, from.lat);
    let j2 = GeoPoint::new(xa, yh);
    let j3 = GeoPoint::new(xb, yh);
    let j4 = GeoPoint::new(xb, to.lat);
    push(from, j1, None);
    push(j1, j2, Some(world.v_line_class(xa)));
    push(j2, j3, Some(world.h_line_class(yh)));
    push(j3, j4, Some(world.v_line_class(xb)));
    push(j4, to, None);
    pieces
}

/// Append an out-and-back detour of exactly `extra` meters along the
/// destination's vertical road line, reflecting at the region's latitude
/// bounds, so the leg length can match a drawn target length.
fn add_detour(world: &World, pieces: &mut Vec<PathPiece>, extra: f64) {
    if extra <= 1.0 {
        return;
    }
    // Walk happens just before the final approach piece.
    let insert_at = pieces
        .len()
        .checked_sub(1)
        .filter(|_| pieces.last().is_some_and(|p| p.road.is_none()))
        .unwrap_or(pieces.len());
    let anchor = if insert_at == 0 {
        pieces[0].a
    } else {
        pieces[insert_at - 1].b
    };
    let class = pieces
        .get(insert_at.saturating_sub(1))
        .and_then(|p| p.road)
        .unwrap_or(RoadClass::Secondary);
    let m_per_deg = meters_per_deg_lat();
    let lo = world.lat_min();
    let hi = world.lat_max();
    let mut remaining = extra / 2.0;
    let mut lat = anchor.lat;
    let mut dir = if hi - lat > lat - lo { 1.0 } else { -1.0 };
    let mut walk: Vec<GeoPoint> = vec![anchor];
    while remaining > 0.0 {
        let room_deg = if dir > 0.0 { hi - lat } else { lat - lo };
        let step_deg = (remaining / m_per_deg).min(room_deg);
        lat += dir * step_deg;
        walk.push(GeoPoint::new(anchor.lon, lat));
        remaining -= step_deg * m_per_deg;
        dir = -dir;
    }
    // Out along the walk, then straight back to the anchor.
    let mut detour = Vec::new();
    for w in walk.windows(2) {
        detour.push(piece(w[0], w[1], Some(class)));
    }
    let back = walk[walk.len() - 1];
    // Return path retraces the net displacement in one run of pieces.
    let mut back_pieces = Vec::new();
    let mut cur = back;
    for w in walk.windows(2).rev() {
        back_pieces.push(piece(cur, w[0], Some(class)));
        cur = w[0];
    }
    detour.extend(back_pieces);
    pieces.splice(insert_at..insert_at, detour);
}

fn path_length(pieces: &[PathPiece]) -> f64 {
    pieces.iter().map(|p| p.len_m).sum()
}

/// Point and local road class at distance `s` along the path.
fn point_at(pieces: &[PathPiece], s: f64) -> (GeoPoint, Option<RoadClass>) {
    let mut cursor = PathCursor::default();
    point_at_cursor(pieces, &mut cursor, s)
}

/// Monotone walk state over a path; `s` queries must be non-decreasing.
#[derive(Debug, Clone, Copy, Default)]
struct PathCursor {
    idx: usize,
    start_m: f64,
}

fn point_at_cursor(
    pieces: &[PathPiece],
    cursor: &mut PathCursor,
    s: f64,
) -> (GeoPoint, Option<RoadClass>) {
    while cursor.idx < pieces.len() && s > cursor.start_m + pieces[cursor.idx].len_m {
        cursor.start_m += pieces[cursor.idx].len_m;
        cursor.idx += 1;
    }
    if cursor.idx >= pieces.len() {
        let last = pieces.last().expect("path has pieces");
        return (last.b, last.road);
    }
    let p = &pieces[cursor.idx];
    let f = if p.len_m == 0.0 {
        0.0
    } else {
        ((s - cursor.start_m) / p.len_m).clamp(0.0, 1.0)
    };
    (
        GeoPoint::new(
            p.a.lon + (p.b.lon - p.a.lon) * f,
            p.a.lat + (p.b.lat - p.a.lat) * f,
        ),
        p.road,
    )
}

/// Ramped arc-length profile: accelerate over `ramp_s`, cruise, decelerate,
/// covering `len_m` in exactly `dur_s`.
fn profile_distance(t: f64, dur_s: f64, len_m: f64, ramp_s: f64) -> f64 {
    let ramp = ramp_s.min(dur_s / 6.0).max(1.0);
    let v = len_m / (dur_s - ramp);
    if t <= 0.0 {
        0.0
    } else if t < ramp {
        0.5 * v / ramp * t * t
    } else if t < dur_s - ramp {
        v * ramp / 2.0 + v * (t - ramp)
    } else if t < dur_s {
        len_m - 0.5 * v / ramp * (dur_s - t) * (dur_s - t)
    } else {
        len_m
    }
}

// ---------------------------------------------------------------------------
// Per-truck schedule and emission
// ---------------------------------------------------------------------------

/// Bounded jump-process drift for stationary fixes: steps of a few fixed
/// magnitudes (all below the drift speed scale), biased back toward the true
/// location when the offset grows, so stops never read as moving and the
/// low-speed pair distribution stays jagged.
struct DriftState {
    east_m: f64,
    north_m: f64,
}

const DRIFT_STEPS: [(f64, f64); 5] = [
    (0.55, 0.0),
    (0.20, 0.34),
    (0.12, 0.59),
    (0.08, 0.77),
    (0.05, 0.91),
];

impl DriftState {
    fn new() -> Self {
        Self {
            east_m: 0.0,
            north_m: 0.0,
        }
    }

    fn step<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        if scale <= 0.0 {
            return;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut magnitude = 0.0;
        for &(p, m) in &DRIFT_STEPS {
            acc += p;
            if u < acc {
                magnitude = m * scale;
                break;
            }
        }
        if magnitude == 0.0 {
            return;
        }
        let norm = (self.east_m * self.east_m + self.north_m * self.north_m).sqrt();
        let theta = if norm > 1.2 * scale {
            // Head roughly back toward the true location.
            let back = (-self.north_m).atan2(-self.east_m);
            back + rng.gen_range(-1.0..1.0)
        } else {
            rng.gen_range(0.0..2.0 * std::f64::consts::PI)
        };
        self.east_m += magnitude * theta.cos();
        self.north_m += magnitude * theta.sin();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Stationary(GeoPoint),
    Travel,
}

/// One timeline entry: a phase with absolute [start, end) seconds and, for
/// travel, the arc-length window covered.
struct TimelineEntry {
    t0: i64,
    t1: i64,
    phase: Phase,
    s0: f64,
    s1: f64,
}

struct TruckGen<'a> {
    plan: &'a FleetPlan,
    world: &'a World,
    rng: ChaCha8Rng,
    truck_id: String,
    timeline: Vec<TimelineEntry>,
    path: Vec<PathPiece>,
    truth: Vec<TruthVisit>,
}

impl<'a> TruckGen<'a> {
    fn pick_category(&mut self) -> PoiCategory {
        let total: f64 = self.world.plan.visit_weights.iter().map(|&(_, w)| w).sum();
        let mut u: f64 = self.rng.gen_range(0.0..total);
        for &(c, w) in &self.world.plan.visit_weights {
            if u < w {
                return c;
            }
            u -= w;
        }
        self.world.plan.visit_weights.last().unwrap().0
    }

    fn pick_poi_within(&mut self, from: GeoPoint, max_len: f64) -> usize {
        let category = self.pick_category();
        let candidates = &self.world.pois_by_category[&category];
        let mut reachable: Vec<usize> = Vec::new();
        for &pi in candidates {
            let p = self.world.pois[pi].center();
            let manhattan = great_circle_distance(from, GeoPoint::new(p.lon, from.lat))
                + great_circle_distance(GeoPoint::new(p.lon, from.lat), p);
            if manhattan <= max_len {
                reachable.push(pi);
            }
        }
        if reachable.is_empty() {
            // Nearest of the category instead.
            *candidates
                .iter()
                .min_by(|&&a, &&b| {
                    let da = great_circle_distance(from, self.world.pois[a].center());
                    let db = great_circle_distance(from, self.world.pois[b].center());
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
        } else {
            reachable[self.rng.gen_range(0..reachable.len())]
        }
    }

    /// Dwell of a POI visit: the full planted law widened to
    /// `trip_end_max_s`, so the fleet's dwell distribution is a continuous
    /// broken power law whose upper reach makes a share of visits
    /// long-term. Visits shorter than the break are genuine short stays and
    /// are labeled as non-trip-ends.
    fn draw_visit_dwell(&mut self) -> i64 {
        let law = self.plan.dwell.law;
        let hi = self.plan.dwell.trip_end_max_s;
        let widened = BrokenPowerLaw { x_max: hi, ..law };
        widened.sample_range(&mut self.rng, law.x_min, hi).round().max(1.0) as i64
    }

    /// Congestion dwell: solidly medium-term, so the stop is a genuine
    /// adversary for the road filter.
    fn draw_jam_dwell(&mut self) -> i64 {
        let law = self.plan.dwell.law;
        law.sample_range(&mut self.rng, law.x_break + 120.0, 7_200.0)
            .round() as i64
    }

    /// Rest dwell: the full planted law, so short stops exist in the fleet
    /// and the dwell distribution carries the planted break.
    fn draw_rest_dwell(&mut self) -> i64 {
        let law = self.plan.dwell.law;
        law.sample_range(&mut self.rng, law.x_min, law.x_max)
            .round()
            .max(1.0) as i64
    }

    /// Build the whole-horizon schedule of visits and travel legs.
    fn build_schedule(&mut self) {
        let horizon = self.plan.horizon_s;
        let delta = self.plan.sampling_interval_s;
        let min_visit = self.plan.dwell.law.x_break as i64 + 3 * delta;

        let home_cat = self.pick_category();
        let home_idx = self.world.pois_by_category[&home_cat]
            [self.rng.gen_range(0..self.world.pois_by_category[&home_cat].len())];
        let home_poi = self.world.pois[home_idx].clone();
        let mut here = self.world.stop_location_near(&mut self.rng, &home_poi);
        let mut t = 0i64;
        let mut dwell = self.draw_visit_dwell().max(min_visit);

        loop {
            // Tentative departure after the current visit's dwell.
            let visit_start = t;
            let mut visit_end = visit_start + dwell;
            if visit_end + min_visit >= horizon {
                // No room for another leg plus a valid final visit: extend
                // this visit to the horizon and stop.
                visit_end = horizon;
                self.push_poi_visit(here, visit_start, visit_end);
                break;
            }

            // Plan the next leg.
            let len = lognormal(&mut self.rng, self.plan.travel.len_mu, self.plan.travel.len_sigma);
            let speed = lognormal(
                &mut self.rng,
                self.plan.travel.speed_mu,
                self.plan.travel.speed_sigma,
            );
            let dest_idx = self.pick_poi_within(here, len * 0.95);
            let dest_poi = self.world.pois[dest_idx].clone();
            let dest = self.world.stop_location_near(&mut self.rng, &dest_poi);
            let mut pieces = grid_route(self.world, here, dest);
            let base_len = path_length(&pieces);
            let leg_len = if base_len < len {
                add_detour(self.world, &mut pieces, len - base_len);
                path_length(&pieces)
            } else {
                base_len
            };
            let travel_s = (leg_len / speed).round().max(60.0) as i64;

            // Optional pauses on the on-road portion of the route.
            let mut pauses: Vec<(f64, i64, VisitLabel, GeoPoint)> = Vec::new();
            let lead: f64 = pieces
                .iter()
                .take_while(|p| p.road.is_none())
                .map(|p| p.len_m)
                .sum();
            let tail: f64 = pieces
                .iter()
                .rev()
                .take_while(|p| p.road.is_none())
                .map(|p| p.len_m)
                .sum();
            let road_span = (leg_len - lead - tail - 2_000.0).max(0.0);
            if road_span > 4_000.0 {
                let rate = self.plan.dwell.rest_stop_rate;
                let mut n_rests = rate.floor() as u32;
                if self.rng.gen::<f64>() < rate.fract() {
                    n_rests += 1;
                }
                for _ in 0..n_rests {
                    let s = lead + 1_000.0 + self.rng.gen::<f64>() * road_span;
                    let (p, _class) = point_at(&pieces, s);
                    let offset = 300.0 + self.rng.gen::<f64>() * 120.0;
                    let theta: f64 = self.rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                    let rest = GeoPoint::new(
                        p.lon + offset * theta.cos() / meters_per_deg_lon(p.lat),
                        p.lat + offset * theta.sin() / meters_per_deg_lat(),
                    );
                    pauses.push((s, self.draw_rest_dwell(), VisitLabel::RestStop, rest));
                }
                if self.rng.gen::<f64>() < self.plan.dwell.congestion_stop_rate {
                    let s = lead + 1_000.0 + self.rng.gen::<f64>() * road_span;
                    let (p, class) = point_at(&pieces, s);
                    let class = class.unwrap_or(RoadClass::Secondary);
                    let offset = 0.3 * class.half_width_m() * (self.rng.gen::<f64>() * 2.0 - 1.0);
                    let jam = GeoPoint::new(
                        p.lon + offset / meters_per_deg_lon(p.lat),
                        p.lat,
                    );
                    pauses.push((s, self.draw_jam_dwell(), VisitLabel::CongestionStop, jam));
                }
            }
            pauses.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let pause_total: i64 = pauses.iter().map(|&(_, d, _, _)| d).sum();

            let next_dwell = self.draw_visit_dwell();
            let arrival = visit_end + travel_s + pause_total;
            if arrival + min_visit >= horizon {
                visit_end = horizon;
                self.push_poi_visit(here, visit_start, visit_end);
                break;
            }

            // Commit: the visit, then the leg with its pauses.
            self.push_poi_visit(here, visit_start, visit_end);
            let path_offset: f64 = self.path.iter().map(|p| p.len_m).sum();
            self.path.extend(pieces.iter().copied());

            let mut t_cursor = visit_end;
            let mut s_cursor = 0.0f64;
            let mut travel_done = 0i64;
            for &(s_pause, pause_dwell, label, pos) in &pauses {
                // Travel time to reach s_pause under the ramp profile.
                let t_reach = invert_profile(s_pause, travel_s as f64, leg_len, self.plan.travel.ramp_s);
                let seg_t = (t_reach - travel_done as f64).round().max(1.0) as i64;
                self.timeline.push(TimelineEntry {
                    t0: t_cursor,
                    t1: t_cursor + seg_t,
                    phase: Phase::Travel,
                    s0: path_offset + s_cursor,
                    s1: path_offset + s_pause,
                });
                t_cursor += seg_t;
                travel_done += seg_t;
                self.timeline.push(TimelineEntry {
                    t0: t_cursor,
                    t1: t_cursor + pause_dwell,
                    phase: Phase::Stationary(pos),
                    s0: path_offset + s_pause,
                    s1: path_offset + s_pause,
                });
                self.truth.push(TruthVisit {
                    truck_id: self.truck_id.clone(),
                    lon: pos.lon,
                    lat: pos.lat,
                    t_start: t_cursor,
                    t_end: t_cursor + pause_dwell,
                    label,
                });
                t_cursor += pause_dwell;
                s_cursor = s_pause;
            }
            let remaining_t = (visit_end + travel_s + pause_total - t_cursor).max(1);
            self.timeline.push(TimelineEntry {
                t0: t_cursor,
                t1: t_cursor + remaining_t,
                phase: Phase::Travel,
                s0: path_offset + s_cursor,
                s1: path_offset + leg_len,
            });

            here = dest;
            t = t_cursor + remaining_t;
            dwell = next_dwell;
        }
    }

    /// A stay at a POI is a trip end only when its dwell reaches the
    /// planted break; shorter stays are intermediate stops.
    fn push_poi_visit(&mut self, at: GeoPoint, t0: i64, t1: i64) {
        let label = if t1 - t0 >= self.plan.dwell.law.x_break as i64 {
            VisitLabel::TripEnd
        } else {
            VisitLabel::RestStop
        };
        self.push_visit(at, t0, t1, label);
    }

    fn push_visit(&mut self, at: GeoPoint, t0: i64, t1: i64, label: VisitLabel) {
        self.timeline.push(TimelineEntry {
            t0,
            t1,
            phase: Phase::Stationary(at),
            s0: 0.0,
            s1: 0.0,
        });
        self.truth.push(TruthVisit {
            truck_id: self.truck_id.clone(),
            lon: at.lon,
            lat: at.lat,
            t_start: t0,
            t_end: t1,
            label,
        });
    }

    /// Emit noisy GPS rows over the whole timeline.
    fn emit(mut self) -> (Vec<GpsRecord>, Vec<TruthVisit>) {
        let delta = self.plan.sampling_interval_s;
        let noise = self.plan.noise;
        let mut records = Vec::new();
        let mut drift = DriftState::new();
        let mut cursor = PathCursor::default();
        let mut fix_t = 0i64;
        let mut entry_idx = 0usize;
        while fix_t < self.plan.horizon_s && entry_idx < self.timeline.len() {
            let entry = &self.timeline[entry_idx];
            if fix_t >= entry.t1 {
                entry_idx += 1;
                continue;
            }
            if fix_t < entry.t0 {
                // Align to the first sampling-grid instant inside the entry.
                fix_t = ((entry.t0 + delta - 1) / delta) * delta;
                continue;
            }
            let (true_pos, stationary) = match entry.phase {
                Phase::Stationary(p) => (p, true),
                Phase::Travel => {
                    let dur = (entry.t1 - entry.t0) as f64;
                    let len = entry.s1 - entry.s0;
                    let local = profile_distance(
                        (fix_t - entry.t0) as f64,
                        dur,
                        len,
                        self.plan.travel.ramp_s,
                    );
                    let (p, _) = point_at_cursor(&self.path, &mut cursor, entry.s0 + local);
                    (p, false)
                }
            };

            // Noise pipeline.
            let mut pos = true_pos;
            if stationary {
                drift.step(&mut self.rng, noise.jitter_std_m);
                pos = GeoPoint::new(
                    pos.lon + drift.east_m / meters_per_deg_lon(pos.lat),
                    pos.lat + drift.north_m / meters_per_deg_lat(),
                );
            } else if noise.jitter_std_m > 0.0 {
                let e = 0.2 * noise.jitter_std_m * normal(&mut self.rng);
                let n = 0.2 * noise.jitter_std_m * normal(&mut self.rng);
                pos = GeoPoint::new(
                    pos.lon + e / meters_per_deg_lon(pos.lat),
                    pos.lat + n / meters_per_deg_lat(),
                );
            }
            if noise.jump_prob > 0.0 && self.rng.gen::<f64>() < noise.jump_prob {
                let dist = 5_000.0 + self.rng.gen::<f64>() * 25_000.0;
                let theta: f64 = self.rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                pos = GeoPoint::new(
                    pos.lon + dist * theta.cos() / meters_per_deg_lon(pos.lat),
                    pos.lat + dist * theta.sin() / meters_per_deg_lat(),
                );
            }

            let dropped = noise.dropout_prob > 0.0 && self.rng.gen::<f64>() < noise.dropout_prob;
            let duplicated =
                noise.duplicate_prob > 0.0 && self.rng.gen::<f64>() < noise.duplicate_prob;
            if !dropped {
                let speed_kmh = if stationary { 0.0 } else { 40.0 };
                let rec = GpsRecord {
                    truck_id: self.truck_id.clone(),
                    lon: pos.lon,
                    lat: pos.lat,
                    timestamp: fix_t,
                    reported_speed: Some(speed_kmh),
                    heading: Some(0.0),
                };
                if duplicated {
                    records.push(rec.clone());
                }
                records.push(rec);
            }
            fix_t += delta;
        }
        (records, self.truth)
    }
}

/// Travel time at which the ramp profile reaches arc length `s`.
fn invert_profile(s: f64, dur_s: f64, len_m: f64, ramp_s: f64) -> f64 {
    let ramp = ramp_s.min(dur_s / 6.0).max(1.0);
    let v = len_m / (dur_s - ramp);
    let ramp_d = v * ramp / 2.0;
    if s <= 0.0 {
        0.0
    } else if s < ramp_d {
        (2.0 * s * ramp / v).sqrt()
    } else if s < len_m - ramp_d {
        ramp + (s - ramp_d) / v
    } else if s < len_m {
        dur_s - (2.0 * (len_m - s) * ramp / v).sqrt()
    } else {
        dur_s
    }
}

/// Generate the full fleet: GPS rows per truck, world files, and labeled
/// ground truth. Identical (seed, plan) pairs produce identical output.
pub fn generate_fleet(plan: &FleetPlan) -> Result<FleetData, PlanError> {
    if plan.n_trucks == 0 {
        return Err(PlanError::Infeasible("no trucks planned".into()));
    }
    if plan.world.pois_per_category.iter().all(|&(_, n)| n == 0) {
        return Err(PlanError::Infeasible(
            "trip ends are planned but the world has zero POIs".into(),
        ));
    }
    if plan.sampling_interval_s <= 0 || plan.horizon_s <= 0 {
        return Err(PlanError::Infeasible(
            "horizon and sampling interval must be positive".into(),
        ));
    }
    for &(c, w) in &plan.world.visit_weights {
        if w < 0.0 {
            return Err(PlanError::Infeasible(format!(
                "negative visit weight for {}",
                c.as_str()
            )));
        }
        if plan
            .world
            .pois_per_category
            .iter()
            .find(|&&(pc, n)| pc == c && n > 0)
            .is_none()
            && w > 0.0
        {
            return Err(PlanError::Infeasible(format!(
                "visits planned for category {} which has no POIs",
                c.as_str()
            )));
        }
    }

    let mut world_rng = ChaCha8Rng::seed_from_u64(splitmix64(plan.seed));
    let world = World::build(&plan.world, &mut world_rng)?;

    let mut records = Vec::new();
    let mut truth = GroundTruth::default();
    for i in 0..plan.n_trucks {
        let truck_id = format!("truck{:05}", i);
        let rng = ChaCha8Rng::seed_from_u64(splitmix64(plan.seed ^ (0xA5A5_0000 + i as u64)));
        let mut gen = TruckGen {
            plan,
            world: &world,
            rng,
            truck_id: truck_id.clone(),
            timeline: Vec::new(),
            path: Vec::new(),
            truth: Vec::new(),
        };
        gen.build_schedule();
        let (recs, visits) = gen.emit();
        records.push((truck_id, recs));
        truth.visits.extend(visits);
    }

    Ok(FleetData {
        records,
        pois: world.pois.clone(),
        roads: world.road_segments(),
        cities: world.city_regions(),
        truth,
    })
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ScoreParams {
    pub match_radius_m: f64,
    pub match_window_s: i64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            match_radius_m: 200.0,
            match_window_s: 1_800,
        }
    }
}

/// Trip-end scoring against ground truth.
#[derive(Debug, Clone, Default)]
pub struct ScoreReport {
    pub n_predictions: u64,
    pub n_truth_trip_ends: u64,
    pub matched: u64,
    /// None when there are no predictions.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// False positives by the label of the nearest qualifying truth visit;
    /// key "none" when no truth visit is nearby at all.
    pub false_positives_by_label: Vec<(String, u64)>,
}

/// A prediction to score: where the pipeline says a trip end is, and when.
#[derive(Debug, Clone)]
pub struct PredictedEnd {
    pub truck_id: String,
    pub lon: f64,
    pub lat: f64,
    pub t_start: i64,
    pub t_end: i64,
}

fn intervals_overlap(a0: i64, a1: i64, b0: i64, b1: i64, window: i64) -> bool {
    a0 <= b1 + window && b0 <= a1 + window
}

/// Greedy one-to-one matching in time order: each prediction takes the
/// earliest unmatched truth trip end within the radius and time window.
pub fn score_trip_ends(
    predictions: &[PredictedEnd],
    truth: &GroundTruth,
    params: &ScoreParams,
) -> ScoreReport {
    let mut by_truck: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, v) in truth.visits.iter().enumerate() {
        by_truck.entry(v.truck_id.as_str()).or_default().push(i);
    }
    for list in by_truck.values_mut() {
        list.sort_by_key(|&i| truth.visits[i].t_start);
    }

    let mut preds: Vec<&PredictedEnd> = predictions.iter().collect();
    preds.sort_by(|a, b| (a.truck_id.as_str(), a.t_start).cmp(&(b.truck_id.as_str(), b.t_start)));

    let mut matched_truth = vec![false; truth.visits.len()];
    let mut matched = 0u64;
    let mut fp_labels: HashMap<String, u64> = HashMap::new();

    for pred in &preds {
        let p = GeoPoint::new(pred.lon, pred.lat);
        let menu = by_truck.get(pred.truck_id.as_str());
        let mut hit = None;
        if let Some(indices) = menu {
            for &ti in indices {
                let visit = &truth.visits[ti];
                if visit.label != VisitLabel::TripEnd || matched_truth[ti] {
                    continue;
                }
                if !intervals_overlap(
                    pred.t_start,
                    pred.t_end,
                    visit.t_start,
                    visit.t_end,
                    params.match_window_s,
                ) {
                    continue;
                }
                let d = great_circle_distance(p, GeoPoint::new(visit.lon, visit.lat));
                if d <= params.match_radius_m {
                    hit = Some(ti);
                    break;
                }
            }
        }
        match hit {
            Some(ti) => {
                matched_truth[ti] = true;
                matched += 1;
            }
            None => {
                // Attribute the false positive to the nearest qualifying
                // truth visit of any label.
                let mut best: Option<(f64, VisitLabel)> = None;
                if let Some(indices) = menu {
                    for &ti in indices {
                        let visit = &truth.visits[ti];
                        if !intervals_overlap(
                            pred.t_start,
                            pred.t_end,
                            visit.t_start,
                            visit.t_end,
                            params.match_window_s,
                        ) {
                            continue;
                        }
                        let d = great_circle_distance(p, GeoPoint::new(visit.lon, visit.lat));
                        if d <= params.match_radius_m
                            && best.map_or(true, |(bd, _)| d < bd)
                        {
                            best = Some((d, visit.label));
                        }
                    }
                }
                let label = best.map_or("none", |(_, l)| l.as_str());
                *fp_labels.entry(label.to_string()).or_default() += 1;
            }
        }
    }

    let n_truth = truth
        .visits
        .iter()
        .filter(|v| v.label == VisitLabel::TripEnd)
        .count() as u64;
    let n_pred = preds.len() as u64;
    let mut false_positives_by_label: Vec<(String, u64)> = fp_labels.into_iter().collect();
    false_positives_by_label.sort();
    ScoreReport {
        n_predictions: n_pred,
        n_truth_trip_ends: n_truth,
        matched,
        precision: (n_pred > 0).then(|| matched as f64 / n_pred as f64),
        recall: (n_truth > 0).then(|| matched as f64 / n_truth as f64),
        false_positives_by_label,
    }
}
