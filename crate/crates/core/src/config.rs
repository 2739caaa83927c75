//! Run configuration: a sectioned key = value file checked fully (unknown
//! keys are fatal) before any work starts, plus the calibration report
//! format that carries detected thresholds between the calibrate and
//! extract stages, and the fleet-plan file for the generator.

use crate::calibration::{PoiRadiusParams, SpeedThresholdParams, TimeThresholdParams};
use crate::ingest::{BoundingRegion, ParseOptions};
use crate::model::{GeoPoint, PoiCategory, PoiCategoryParams, Thresholds};
use crate::synth::{BrokenPowerLaw, FleetPlan, NoiseModel, TravelPlan};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Syntax { path: String, line: u64, msg: String },
    #[error("{path}:{line}: unknown key [{section}] {key}")]
    UnknownKey {
        path: String,
        line: u64,
        section: String,
        key: String,
    },
    #[error("missing required key [{section}] {key} in {path}")]
    MissingKey {
        path: String,
        section: String,
        key: String,
    },
    #[error("invalid value for [{section}] {key}: {msg}")]
    InvalidValue {
        section: String,
        key: String,
        msg: String,
    },
    #[error("referenced path does not exist: {0}")]
    MissingPath(String),
}

/// Parsed key = value document with `[section]` headers and `#` comments.
#[derive(Debug, Clone, Default)]
pub struct IniDoc {
    pub path: String,
    entries: Vec<(String, String, String, u64)>,
}

impl IniDoc {
    pub fn parse(path: &Path, text: &str) -> Result<IniDoc, ConfigError> {
        let mut doc = IniDoc {
            path: path.display().to_string(),
            entries: Vec::new(),
        };
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    path: doc.path.clone(),
                    line: line_no,
                    msg: format!("expected key = value, got {line:?}"),
                });
            };
            let value = value.split('#').next().unwrap_or("").trim();
            doc.entries.push((
                section.clone(),
                key.trim().to_string(),
                value.to_string(),
                line_no,
            ));
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<IniDoc, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(path, &text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(s, k, _, _)| s == section && k == key)
            .map(|(_, _, v, _)| v.as_str())
    }

    /// Fail on any key outside the allowed schema.
    pub fn check_schema(&self, schema: &[(&str, &[&str])]) -> Result<(), ConfigError> {
        let allowed: HashMap<&str, &[&str]> = schema.iter().copied().collect();
        for (section, key, _, line) in &self.entries {
            let ok = allowed
                .get(section.as_str())
                .is_some_and(|keys| keys.contains(&key.as_str()));
            if !ok {
                return Err(ConfigError::UnknownKey {
                    path: self.path.clone(),
                    line: *line,
                    section: section.clone(),
                    key: key.clone(),
                });
            }
        }
        Ok(())
    }

    fn parse_as<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| ConfigError::InvalidValue {
                section: section.to_string(),
                key: key.to_string(),
                msg: format!("cannot parse {raw:?}"),
            }),
        }
    }

    fn take<T: std::str::FromStr>(&self, section: &str, key: &str, target: &mut T) -> Result<(), ConfigError> {
        if let Some(v) = self.parse_as::<T>(section, key)? {
            *target = v;
        }
        Ok(())
    }
}

/// Calibration knobs with their defaults.
#[derive(Debug, Clone)]
pub struct CalibrationConfig {
    pub speed: SpeedThresholdParams,
    pub time: TimeThresholdParams,
    pub radius: PoiRadiusParams,
    /// When false, a detector failure makes the calibrate stage exit with
    /// the insufficient-data code instead of writing defaults.
    pub permit_fallback: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            speed: SpeedThresholdParams::default(),
            time: TimeThresholdParams::default(),
            radius: PoiRadiusParams::default(),
            permit_fallback: true,
        }
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub gps_path: Option<PathBuf>,
    pub poi_path: Option<PathBuf>,
    pub roads_path: Option<PathBuf>,
    pub cities_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Calibration report consumed by extract; when absent, configured
    /// thresholds and default radii apply.
    pub calibration_report: Option<PathBuf>,
    pub parse: ParseOptions,
    pub bounds: Option<BoundingRegion>,
    pub thresholds: Thresholds,
    pub calibration: CalibrationConfig,
    /// Per-category radius overrides.
    pub radii: Vec<PoiCategoryParams>,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gps_path: None,
            poi_path: None,
            roads_path: None,
            cities_path: None,
            output_dir: PathBuf::from("out"),
            calibration_report: None,
            parse: ParseOptions::default(),
            bounds: Some(BoundingRegion::china_bbox()),
            thresholds: Thresholds::default(),
            calibration: CalibrationConfig::default(),
            radii: PoiCategory::ALL.iter().map(|c| c.default_params()).collect(),
            workers: 0,
        }
    }
}

const CONFIG_SCHEMA: &[(&str, &[&str])] = &[
    (
        "paths",
        &["gps", "pois", "roads", "cities", "output_dir", "calibration_report"],
    ),
    ("input", &["has_header", "delimiter", "tz_offset_s"]),
    (
        "bounds",
        &["min_lon", "min_lat", "max_lon", "max_lat", "polygon"],
    ),
    (
        "thresholds",
        &[
            "speed_threshold_kmh",
            "t_min_s",
            "t_max_s",
            "max_speed_kmh",
            "max_accel_ms2",
            "gap_limit_s",
        ],
    ),
    (
        "calibration",
        &[
            "speed_bin_width_kmh",
            "speed_window_bins",
            "speed_smoothness_ratio",
            "dwell_bins_per_decade",
            "dwell_min_samples",
            "tail_window_bins",
            "tail_irregularity_ratio",
            "break_candidate_min_s",
            "break_candidate_max_s",
            "poi_bin_width_m",
            "poi_max_distance_m",
            "poi_smooth_window",
            "poi_min_samples",
            "permit_fallback",
        ],
    ),
    ("radii", &CATEGORY_KEYS),
    ("run", &["workers"]),
];

const CATEGORY_KEYS: [&str; 11] = [
    "construction_company",
    "machinery_electronics",
    "chemical_metallurgy",
    "commercial_trade",
    "logistics_warehouse",
    "mining_company",
    "factory",
    "farming_base",
    "industrial_park",
    "residential_area",
    "building_materials_market",
];

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let doc = IniDoc::load(path)?;
        doc.check_schema(CONFIG_SCHEMA)?;
        let mut cfg = RunConfig::default();

        let as_path = |v: &str| PathBuf::from(v);
        cfg.gps_path = doc.get("paths", "gps").map(as_path);
        cfg.poi_path = doc.get("paths", "pois").map(as_path);
        cfg.roads_path = doc.get("paths", "roads").map(as_path);
        cfg.cities_path = doc.get("paths", "cities").map(as_path);
        if let Some(v) = doc.get("paths", "output_dir") {
            cfg.output_dir = as_path(v);
        }
        cfg.calibration_report = doc.get("paths", "calibration_report").map(as_path);

        doc.take("input", "has_header", &mut cfg.parse.has_header)?;
        if let Some(d) = doc.get("input", "delimiter") {
            let bytes = d.as_bytes();
            if bytes.len() != 1 {
                return Err(ConfigError::InvalidValue {
                    section: "input".into(),
                    key: "delimiter".into(),
                    msg: "delimiter must be a single byte".into(),
                });
            }
            cfg.parse.delimiter = bytes[0];
        }
        doc.take("input", "tz_offset_s", &mut cfg.parse.tz_offset_s)?;

        if let Some(poly) = doc.get("bounds", "polygon") {
            let pts = parse_polygon_value(poly).map_err(|msg| ConfigError::InvalidValue {
                section: "bounds".into(),
                key: "polygon".into(),
                msg,
            })?;
            cfg.bounds = Some(BoundingRegion::Polygon(pts));
        } else if doc.get("bounds", "min_lon").is_some() {
            let need = |key: &str| -> Result<f64, ConfigError> {
                doc.parse_as::<f64>("bounds", key)?
                    .ok_or_else(|| ConfigError::MissingKey {
                        path: doc.path.clone(),
                        section: "bounds".into(),
                        key: key.into(),
                    })
            };
            cfg.bounds = Some(BoundingRegion::Rect {
                min_lon: need("min_lon")?,
                min_lat: need("min_lat")?,
                max_lon: need("max_lon")?,
                max_lat: need("max_lat")?,
            });
        }

        doc.take("thresholds", "speed_threshold_kmh", &mut cfg.thresholds.speed_threshold_kmh)?;
        doc.take("thresholds", "t_min_s", &mut cfg.thresholds.t_min_s)?;
        doc.take("thresholds", "t_max_s", &mut cfg.thresholds.t_max_s)?;
        doc.take("thresholds", "max_speed_kmh", &mut cfg.thresholds.max_speed_kmh)?;
        doc.take("thresholds", "max_accel_ms2", &mut cfg.thresholds.max_accel_ms2)?;
        doc.take("thresholds", "gap_limit_s", &mut cfg.thresholds.gap_limit_s)?;
        cfg.thresholds.validate().map_err(|msg| ConfigError::InvalidValue {
            section: "thresholds".into(),
            key: "*".into(),
            msg,
        })?;

        let cal = &mut cfg.calibration;
        doc.take("calibration", "speed_bin_width_kmh", &mut cal.speed.bin_width_kmh)?;
        doc.take("calibration", "speed_window_bins", &mut cal.speed.window_bins)?;
        doc.take("calibration", "speed_smoothness_ratio", &mut cal.speed.smoothness_ratio)?;
        cal.speed.fallback_kmh = cfg.thresholds.speed_threshold_kmh;
        doc.take("calibration", "dwell_bins_per_decade", &mut cal.time.fit.bins_per_decade)?;
        doc.take("calibration", "dwell_min_samples", &mut cal.time.fit.min_samples)?;
        doc.take("calibration", "tail_window_bins", &mut cal.time.tail_window_bins)?;
        doc.take("calibration", "tail_irregularity_ratio", &mut cal.time.tail_irregularity_ratio)?;
        let lo = doc.parse_as::<f64>("calibration", "break_candidate_min_s")?;
        let hi = doc.parse_as::<f64>("calibration", "break_candidate_max_s")?;
        if let (Some(lo), Some(hi)) = (lo, hi) {
            cal.time.candidate_range = Some((lo, hi));
        }
        cal.time.fallback_t_min_s = cfg.thresholds.t_min_s as f64;
        cal.time.fallback_t_max_s = cfg.thresholds.t_max_s as f64;
        doc.take("calibration", "poi_bin_width_m", &mut cal.radius.bin_width_m)?;
        doc.take("calibration", "poi_max_distance_m", &mut cal.radius.max_distance_m)?;
        doc.take("calibration", "poi_smooth_window", &mut cal.radius.smooth_window)?;
        doc.take("calibration", "poi_min_samples", &mut cal.radius.min_samples)?;
        doc.take("calibration", "permit_fallback", &mut cal.permit_fallback)?;

        for category in PoiCategory::ALL {
            if let Some(v) = doc.get("radii", category.as_str()) {
                let (valid, poi) = v
                    .split_once(',')
                    .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
                    .ok_or_else(|| ConfigError::InvalidValue {
                        section: "radii".into(),
                        key: category.as_str().into(),
                        msg: format!("expected \"valid_m,poi_m\", got {v:?}"),
                    })?;
                if !(valid > 0.0 && valid < poi) {
                    return Err(ConfigError::InvalidValue {
                        section: "radii".into(),
                        key: category.as_str().into(),
                        msg: "need 0 < valid_radius < poi_radius".into(),
                    });
                }
                let entry = cfg
                    .radii
                    .iter_mut()
                    .find(|p| p.category == category)
                    .expect("all categories present");
                entry.valid_radius_m = valid;
                entry.poi_radius_m = poi;
            }
        }

        doc.take("run", "workers", &mut cfg.workers)?;
        Ok(cfg)
    }

    /// Verify that the paths a subcommand needs actually exist.
    pub fn require_paths(&self, need: &[(&str, &Option<PathBuf>)]) -> Result<(), ConfigError> {
        for (what, path) in need {
            match path {
                None => {
                    return Err(ConfigError::MissingKey {
                        path: "<config>".into(),
                        section: "paths".into(),
                        key: (*what).to_string(),
                    })
                }
                Some(p) if !p.exists() => {
                    return Err(ConfigError::MissingPath(p.display().to_string()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn parse_polygon_value(v: &str) -> Result<Vec<GeoPoint>, String> {
    let inner = v
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| "expected (lon lat, lon lat, ...)".to_string())?;
    let mut pts = Vec::new();
    for pair in inner.split(',') {
        let mut it = pair.split_whitespace();
        let lon: f64 = it
            .next()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| format!("bad coordinate pair {pair:?}"))?;
        let lat: f64 = it
            .next()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| format!("bad coordinate pair {pair:?}"))?;
        pts.push(GeoPoint::new(lon, lat));
    }
    if pts.len() < 3 {
        return Err("polygon needs at least 3 vertices".into());
    }
    Ok(pts)
}

// ---------------------------------------------------------------------------
// Calibration report
// ---------------------------------------------------------------------------

/// One category's calibrated radii in the report.
#[derive(Debug, Clone, Copy)]
pub struct RadiusEntry {
    pub params: PoiCategoryParams,
    pub fallback: bool,
    pub samples: u64,
}

/// The calibrate stage's output: all detected thresholds with fallback
/// flags and sample counts. This file is the input to extraction runs.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub speed_threshold_kmh: f64,
    pub speed_fallback: bool,
    pub speed_samples: u64,
    pub t_min_s: f64,
    pub t_max_s: f64,
    pub t_min_fallback: bool,
    pub t_max_fallback: bool,
    pub dwell_samples: u64,
    pub dwell_alpha1: Option<f64>,
    pub dwell_alpha2: Option<f64>,
    pub dwell_fit_error: Option<f64>,
    pub radii: Vec<RadiusEntry>,
}

impl CalibrationReport {
    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let mut out = String::new();
        out.push_str(&format!("speed_threshold_kmh = {:.6}\n", self.speed_threshold_kmh));
        out.push_str(&format!("speed_fallback = {}\n", self.speed_fallback));
        out.push_str(&format!("speed_samples = {}\n", self.speed_samples));
        out.push_str(&format!("t_min_s = {:.3}\n", self.t_min_s));
        out.push_str(&format!("t_max_s = {:.3}\n", self.t_max_s));
        out.push_str(&format!("t_min_fallback = {}\n", self.t_min_fallback));
        out.push_str(&format!("t_max_fallback = {}\n", self.t_max_fallback));
        out.push_str(&format!("dwell_samples = {}\n", self.dwell_samples));
        if let Some(a) = self.dwell_alpha1 {
            out.push_str(&format!("dwell_alpha1 = {a:.6}\n"));
        }
        if let Some(a) = self.dwell_alpha2 {
            out.push_str(&format!("dwell_alpha2 = {a:.6}\n"));
        }
        if let Some(e) = self.dwell_fit_error {
            out.push_str(&format!("dwell_fit_error = {e:.6}\n"));
        }
        for entry in &self.radii {
            let c = entry.params.category.as_str();
            out.push_str(&format!("radius_{c}_valid_m = {:.3}\n", entry.params.valid_radius_m));
            out.push_str(&format!("radius_{c}_poi_m = {:.3}\n", entry.params.poi_radius_m));
            out.push_str(&format!("radius_{c}_fallback = {}\n", entry.fallback));
            out.push_str(&format!("radius_{c}_samples = {}\n", entry.samples));
        }
        std::fs::write(path, out).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<CalibrationReport, ConfigError> {
        let doc = IniDoc::load(path)?;
        let f = |key: &str| -> Result<f64, ConfigError> {
            doc.parse_as::<f64>("", key)?.ok_or_else(|| ConfigError::MissingKey {
                path: doc.path.clone(),
                section: "".into(),
                key: key.into(),
            })
        };
        let b = |key: &str| -> Result<bool, ConfigError> {
            doc.parse_as::<bool>("", key)?.ok_or_else(|| ConfigError::MissingKey {
                path: doc.path.clone(),
                section: "".into(),
                key: key.into(),
            })
        };
        let mut radii = Vec::new();
        for category in PoiCategory::ALL {
            let c = category.as_str();
            let valid = doc.parse_as::<f64>("", &format!("radius_{c}_valid_m"))?;
            let poi = doc.parse_as::<f64>("", &format!("radius_{c}_poi_m"))?;
            if let (Some(valid_radius_m), Some(poi_radius_m)) = (valid, poi) {
                radii.push(RadiusEntry {
                    params: PoiCategoryParams {
                        category,
                        valid_radius_m,
                        poi_radius_m,
                    },
                    fallback: doc
                        .parse_as::<bool>("", &format!("radius_{c}_fallback"))?
                        .unwrap_or(false),
                    samples: doc
                        .parse_as::<u64>("", &format!("radius_{c}_samples"))?
                        .unwrap_or(0),
                });
            }
        }
        Ok(CalibrationReport {
            speed_threshold_kmh: f("speed_threshold_kmh")?,
            speed_fallback: b("speed_fallback")?,
            speed_samples: doc.parse_as::<u64>("", "speed_samples")?.unwrap_or(0),
            t_min_s: f("t_min_s")?,
            t_max_s: f("t_max_s")?,
            t_min_fallback: b("t_min_fallback")?,
            t_max_fallback: b("t_max_fallback")?,
            dwell_samples: doc.parse_as::<u64>("", "dwell_samples")?.unwrap_or(0),
            dwell_alpha1: doc.parse_as::<f64>("", "dwell_alpha1")?,
            dwell_alpha2: doc.parse_as::<f64>("", "dwell_alpha2")?,
            dwell_fit_error: doc.parse_as::<f64>("", "dwell_fit_error")?,
            radii,
        })
    }

    /// Apply the report onto configured thresholds and radii.
    pub fn apply(&self, thresholds: &mut Thresholds, radii: &mut [PoiCategoryParams]) {
        thresholds.speed_threshold_kmh = self.speed_threshold_kmh;
        thresholds.t_min_s = self.t_min_s.round() as i64;
        thresholds.t_max_s = self.t_max_s.round() as i64;
        for entry in &self.radii {
            if let Some(r) = radii.iter_mut().find(|r| r.category == entry.params.category) {
                *r = entry.params;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fleet plan file
// ---------------------------------------------------------------------------

const PLAN_SCHEMA: &[(&str, &[&str])] = &[
    ("fleet", &["seed", "trucks", "horizon_s", "sampling_interval_s"]),
    (
        "world",
        &[
            "origin_lon",
            "origin_lat",
            "span_deg",
            "cities_per_axis",
            "road_spacing_deg",
            "pois_per_category",
            "visit_weights",
        ],
    ),
    (
        "dwell",
        &[
            "alpha1",
            "alpha2",
            "break_s",
            "min_s",
            "max_s",
            "trip_end_max_s",
            "rest_stop_rate",
            "congestion_stop_rate",
        ],
    ),
    (
        "travel",
        &["distance_mode_m", "distance_sigma", "duration_mode_s", "speed_sigma"],
    ),
    (
        "noise",
        &["jitter_std_m", "dropout_prob", "duplicate_prob", "jump_prob"],
    ),
];

fn parse_category_list<T: std::str::FromStr>(
    v: &str,
    section: &str,
    key: &str,
) -> Result<Vec<(PoiCategory, T)>, ConfigError> {
    let mut out = Vec::new();
    for item in v.split(',') {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (name, val) = item.split_once(':').ok_or_else(|| ConfigError::InvalidValue {
            section: section.into(),
            key: key.into(),
            msg: format!("expected category:value, got {item:?}"),
        })?;
        let category = PoiCategory::parse(name.trim()).ok_or_else(|| ConfigError::InvalidValue {
            section: section.into(),
            key: key.into(),
            msg: format!("unknown category {name:?}"),
        })?;
        let value = val.trim().parse::<T>().map_err(|_| ConfigError::InvalidValue {
            section: section.into(),
            key: key.into(),
            msg: format!("cannot parse value in {item:?}"),
        })?;
        out.push((category, value));
    }
    Ok(out)
}

/// Load a fleet plan, starting from the reference plan and overriding any
/// provided keys.
pub fn load_fleet_plan(path: &Path) -> Result<FleetPlan, ConfigError> {
    let doc = IniDoc::load(path)?;
    doc.check_schema(PLAN_SCHEMA)?;
    let mut seed = 42u64;
    let mut trucks = 10u32;
    doc.take("fleet", "seed", &mut seed)?;
    doc.take("fleet", "trucks", &mut trucks)?;
    let mut plan = FleetPlan::reference(seed, trucks);
    doc.take("fleet", "horizon_s", &mut plan.horizon_s)?;
    doc.take("fleet", "sampling_interval_s", &mut plan.sampling_interval_s)?;

    doc.take("world", "origin_lon", &mut plan.world.origin_lon)?;
    doc.take("world", "origin_lat", &mut plan.world.origin_lat)?;
    doc.take("world", "span_deg", &mut plan.world.span_deg)?;
    doc.take("world", "cities_per_axis", &mut plan.world.cities_per_axis)?;
    doc.take("world", "road_spacing_deg", &mut plan.world.road_spacing_deg)?;
    if let Some(v) = doc.get("world", "pois_per_category") {
        plan.world.pois_per_category = parse_category_list(v, "world", "pois_per_category")?;
    }
    if let Some(v) = doc.get("world", "visit_weights") {
        plan.world.visit_weights = parse_category_list(v, "world", "visit_weights")?;
    }

    let law = &mut plan.dwell.law;
    doc.take("dwell", "alpha1", &mut law.alpha1)?;
    doc.take("dwell", "alpha2", &mut law.alpha2)?;
    doc.take("dwell", "break_s", &mut law.x_break)?;
    doc.take("dwell", "min_s", &mut law.x_min)?;
    doc.take("dwell", "max_s", &mut law.x_max)?;
    doc.take("dwell", "trip_end_max_s", &mut plan.dwell.trip_end_max_s)?;
    doc.take("dwell", "rest_stop_rate", &mut plan.dwell.rest_stop_rate)?;
    doc.take("dwell", "congestion_stop_rate", &mut plan.dwell.congestion_stop_rate)?;

    let mut distance_mode_m = 90_000.0;
    let mut distance_sigma = 0.5;
    let mut duration_mode_s = 10_800.0;
    let mut speed_sigma = 0.15;
    doc.take("travel", "distance_mode_m", &mut distance_mode_m)?;
    doc.take("travel", "distance_sigma", &mut distance_sigma)?;
    doc.take("travel", "duration_mode_s", &mut duration_mode_s)?;
    doc.take("travel", "speed_sigma", &mut speed_sigma)?;
    plan.travel = TravelPlan::from_modes(distance_mode_m, distance_sigma, duration_mode_s, speed_sigma);

    doc.take("noise", "jitter_std_m", &mut plan.noise.jitter_std_m)?;
    doc.take("noise", "dropout_prob", &mut plan.noise.dropout_prob)?;
    doc.take("noise", "duplicate_prob", &mut plan.noise.duplicate_prob)?;
    doc.take("noise", "jump_prob", &mut plan.noise.jump_prob)?;
    Ok(plan)
}

/// Assemble a broken-power-law helper from report values, for callers that
/// need to re-materialize the fitted law.
pub fn law_from_report(report: &CalibrationReport) -> Option<BrokenPowerLaw> {
    Some(BrokenPowerLaw {
        alpha1: report.dwell_alpha1?,
        alpha2: report.dwell_alpha2?,
        x_min: 1.0,
        x_break: report.t_min_s,
        x_max: report.t_max_s,
    })
}

/// Consume defaults: noise model override used by CLI flags.
pub fn apply_noise_preset(plan: &mut FleetPlan, preset: &str) -> Result<(), ConfigError> {
    match preset {
        "none" => plan.noise = NoiseModel::none(),
        "standard" => plan.noise = NoiseModel::standard(),
        other => {
            return Err(ConfigError::InvalidValue {
                section: "noise".into(),
                key: "preset".into(),
                msg: format!("unknown preset {other:?} (expected none|standard)"),
            })
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn parses_full_config() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "\
[paths]
gps = data/gps.csv
output_dir = out
# comment line
[input]
tz_offset_s = 0
[thresholds]
speed_threshold_kmh = 1.5
[bounds]
min_lon = 100
min_lat = 20
max_lon = 120
max_lat = 45
[radii]
factory = 300,600
[run]
workers = 2
",
        )
        .unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.gps_path.as_deref(), Some(Path::new("data/gps.csv")));
        assert_eq!(cfg.parse.tz_offset_s, 0);
        assert_eq!(cfg.thresholds.speed_threshold_kmh, 1.5);
        assert_eq!(cfg.workers, 2);
        let factory = cfg
            .radii
            .iter()
            .find(|r| r.category == PoiCategory::Factory)
            .unwrap();
        assert_eq!(factory.valid_radius_m, 300.0);
        assert_eq!(factory.poi_radius_m, 600.0);
        // Unchanged categories keep their defaults.
        let mining = cfg
            .radii
            .iter()
            .find(|r| r.category == PoiCategory::MiningCompany)
            .unwrap();
        assert_eq!(mining.valid_radius_m, 285.0);
    }

    #[test]
    fn unknown_key_is_fatal() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "[thresholds]\nspeed_treshold_kmh = 1.1\n").unwrap();
        assert!(matches!(
            RunConfig::from_file(&path),
            Err(ConfigError::UnknownKey { key, .. }) if key == "speed_treshold_kmh"
        ));
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "[thresholds]\nt_min_s = 50000\n").unwrap();
        assert!(matches!(
            RunConfig::from_file(&path),
            Err(ConfigError::InvalidValue { .. })
        ));
    }

    #[test]
    fn calibration_report_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("calibration.txt");
        let report = CalibrationReport {
            speed_threshold_kmh: 1.2,
            speed_fallback: false,
            speed_samples: 120_000,
            t_min_s: 1_500.0,
            t_max_s: 45_000.0,
            t_min_fallback: false,
            t_max_fallback: true,
            dwell_samples: 80_000,
            dwell_alpha1: Some(1.31),
            dwell_alpha2: Some(0.58),
            dwell_fit_error: Some(3.2),
            radii: vec![RadiusEntry {
                params: PoiCategoryParams {
                    category: PoiCategory::Factory,
                    valid_radius_m: 352.5,
                    poi_radius_m: 668.0,
                },
                fallback: false,
                samples: 9_000,
            }],
        };
        report.save(&path).unwrap();
        let back = CalibrationReport::load(&path).unwrap();
        assert_eq!(back.speed_threshold_kmh, 1.2);
        assert!(back.t_max_fallback);
        assert_eq!(back.radii.len(), 1);
        assert_eq!(back.radii[0].params.valid_radius_m, 352.5);

        let mut thresholds = Thresholds::default();
        let mut radii: Vec<PoiCategoryParams> =
            PoiCategory::ALL.iter().map(|c| c.default_params()).collect();
        back.apply(&mut thresholds, &mut radii);
        assert_eq!(thresholds.speed_threshold_kmh, 1.2);
        assert_eq!(thresholds.t_min_s, 1_500);
        assert_eq!(
            radii.iter().find(|r| r.category == PoiCategory::Factory).unwrap().poi_radius_m,
            668.0
        );
    }

    #[test]
    fn fleet_plan_overrides() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("plan.conf");
        std::fs::write(
            &path,
            "\
[fleet]
seed = 7
trucks = 3
[world]
pois_per_category = factory:5, mining_company:4
visit_weights = factory:0.7, mining_company:0.3
[noise]
jitter_std_m = 0
dropout_prob = 0
duplicate_prob = 0
jump_prob = 0
",
        )
        .unwrap();
        let plan = load_fleet_plan(&path).unwrap();
        assert_eq!(plan.seed, 7);
        assert_eq!(plan.n_trucks, 3);
        assert_eq!(plan.world.pois_per_category.len(), 2);
        assert_eq!(plan.noise.jitter_std_m, 0.0);
        let data = crate::synth::generate_fleet(&plan).unwrap();
        assert_eq!(data.records.len(), 3);
    }

    #[test]
    fn bad_plan_value_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("plan.conf");
        std::fs::write(&path, "[world]\nvisit_weights = factory;0.7\n").unwrap();
        assert!(load_fleet_plan(&path).is_err());
        std::fs::write(&path, "[world]\nvisit_weights = no_such:0.7\n").unwrap();
        assert!(load_fleet_plan(&path).is_err());
    }
}
