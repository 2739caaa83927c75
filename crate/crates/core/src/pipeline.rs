//! Stage drivers behind the CLI subcommands. Stages communicate only
//! through files in the output directory, so each is independently
//! re-runnable:
//!
//! - ingest:    gps file -> cleaned.csv + rejections.csv
//! - calibrate: cleaned.csv + POI file -> calibration.txt
//! - extract:   cleaned.csv + geography -> stops.csv, trip_ends.csv, trips.csv
//! - stats:     trip_ends.csv + trips.csv + cities -> statistics outputs
//! - synth:     plan file -> gps + geography + ground truth
//! - score:     trip_ends.csv + truth.csv -> precision/recall report

use crate::calibration::{
    detect_poi_radii, detect_speed_threshold, detect_time_thresholds, CalibrationError, Histogram,
};
use crate::config::{CalibrationReport, ConfigError, RadiusEntry, RunConfig};
use crate::ingest::{self, IngestError, RejectionRecord};
use crate::io::{self, FileError};
use crate::model::{PoiCategory, Thresholds, Trajectory};
use crate::spatial::{CityIndex, PoiIndex, RoadIndex, SpatialError};
use crate::stats::{self, StatsError};
use crate::stops;
use crate::synth::{self, FleetPlan, PlanError, PredictedEnd, ScoreParams, ScoreReport};
use crate::trips::{self, SelectionStats, Trip, TripEnd};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("insufficient data and fallback not permitted: {0}")]
    InsufficientData(String),
}

impl PipelineError {
    /// 1 for fatal configuration/IO problems, 2 for insufficient data with
    /// no fallback permitted.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::InsufficientData(_) => 2,
            _ => 1,
        }
    }
}

/// Run a closure inside a rayon pool sized by the config (0 = default).
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    let builder = rayon::ThreadPoolBuilder::new().num_threads(workers);
    match builder.build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

// File names of the stage artifacts inside the output directory.
pub const CLEANED_FILE: &str = "cleaned.csv";
pub const REJECTIONS_FILE: &str = "rejections.csv";
pub const CALIBRATION_FILE: &str = "calibration.txt";
pub const STOPS_FILE: &str = "stops.csv";
pub const TRIP_ENDS_FILE: &str = "trip_ends.csv";
pub const TRIPS_FILE: &str = "trips.csv";

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn ensure_output_dir(cfg: &RunConfig) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        PipelineError::Config(ConfigError::Io {
            path: cfg.output_dir.display().to_string(),
            source: e,
        })
    })
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct IngestSummary {
    pub input_rows: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub trucks: u64,
    pub segments: u64,
}

pub fn run_ingest(cfg: &RunConfig) -> Result<IngestSummary, PipelineError> {
    cfg.require_paths(&[("gps", &cfg.gps_path)])?;
    let bounds = cfg.bounds.clone().ok_or_else(|| {
        ConfigError::MissingKey {
            path: "<config>".into(),
            section: "bounds".into(),
            key: "min_lon or polygon".into(),
        }
    })?;
    ensure_output_dir(cfg)?;
    let gps_path = cfg.gps_path.as_ref().unwrap();
    let file = std::fs::File::open(gps_path).map_err(|e| {
        PipelineError::Config(ConfigError::Io {
            path: gps_path.display().to_string(),
            source: e,
        })
    })?;
    let (rows, parse_rejections) =
        ingest::parse_records_numbered(std::io::BufReader::new(file), &cfg.parse)?;
    let input_rows = rows.len() as u64 + parse_rejections.len() as u64;

    let grouped = ingest::group_numbered_by_truck(rows);
    let thresholds = cfg.thresholds.clone();
    let results: Vec<(Vec<Trajectory>, Vec<RejectionRecord>)> = with_pool(cfg.workers, || {
        grouped
            .into_par_iter()
            .map(|(truck_id, rows)| ingest::run_cascade(&truck_id, rows, &bounds, &thresholds))
            .collect()
    });

    let mut rejections = parse_rejections;
    let mut segments: Vec<Trajectory> = Vec::new();
    for (segs, rej) in results {
        segments.extend(segs);
        rejections.extend(rej);
    }
    rejections.sort_by_key(|r| r.source_line);
    let accepted: u64 = segments.iter().map(|s| s.records.len() as u64).sum();

    io::write_cleaned_csv(&out(cfg, CLEANED_FILE), segments.iter(), &cfg.parse)?;
    io::write_rejections_csv(&out(cfg, REJECTIONS_FILE), &rejections, &cfg.parse)?;

    let mut trucks: Vec<&str> = segments.iter().map(|s| s.truck_id.as_str()).collect();
    trucks.dedup();
    Ok(IngestSummary {
        input_rows,
        accepted,
        rejected: rejections.len() as u64,
        trucks: trucks.len() as u64,
        segments: segments.len() as u64,
    })
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct CalibrateSummary {
    pub report_path: PathBuf,
    /// Human-readable per-detector failures that fell back to defaults.
    pub detector_errors: Vec<String>,
}

pub fn run_calibrate(cfg: &RunConfig) -> Result<CalibrateSummary, PipelineError> {
    let cleaned = out(cfg, CLEANED_FILE);
    if !cleaned.exists() {
        return Err(ConfigError::MissingPath(cleaned.display().to_string()).into());
    }
    ensure_output_dir(cfg)?;
    let segments = io::read_cleaned_csv(&cleaned, &cfg.parse)?;
    let mut detector_errors = Vec::new();

    // Speed threshold from the pair-speed histogram (mergeable partials).
    let bin_w = cfg.calibration.speed.bin_width_kmh;
    let partials: Vec<Histogram> = with_pool(cfg.workers, || {
        segments
            .par_iter()
            .map(|seg| {
                Histogram::build(stops::pair_speeds(&seg.records), bin_w, 0.0)
                    .map(|(h, _)| h)
                    .unwrap_or(Histogram {
                        bin_width: bin_w,
                        origin: 0.0,
                        counts: Vec::new(),
                    })
            })
            .collect()
    });
    let mut speed_hist = Histogram {
        bin_width: bin_w,
        origin: 0.0,
        counts: Vec::new(),
    };
    for p in &partials {
        speed_hist.merge(p).expect("identical geometry");
    }
    let speed_samples = speed_hist.total();
    let (speed_threshold_kmh, speed_fallback) =
        match detect_speed_threshold(&speed_hist, &cfg.calibration.speed) {
            Ok(c) => (c.value, c.fallback),
            Err(e) => {
                if !cfg.calibration.permit_fallback {
                    return Err(PipelineError::InsufficientData(e.to_string()));
                }
                detector_errors.push(format!("speed threshold: {e}"));
                (cfg.calibration.speed.fallback_kmh, true)
            }
        };

    // Dwell thresholds from stops detected at the selected speed threshold.
    let detect_thresholds = Thresholds {
        speed_threshold_kmh,
        ..cfg.thresholds.clone()
    };
    let all_stops: Vec<crate::model::TruckStop> = with_pool(cfg.workers, || {
        segments
            .par_iter()
            .flat_map_iter(|seg| stops::detect_stops(seg, &detect_thresholds))
            .collect()
    });
    let dwells: Vec<f64> = all_stops
        .iter()
        .map(|s| s.dwell() as f64)
        .filter(|&d| d > 0.0)
        .collect();
    let (time, time_error) = match detect_time_thresholds(&dwells, &cfg.calibration.time) {
        Ok(t) => (t, None),
        Err(e) => {
            if !cfg.calibration.permit_fallback {
                return Err(PipelineError::InsufficientData(e.to_string()));
            }
            detector_errors.push(format!("time thresholds: {e}"));
            (
                crate::calibration::TimeThresholds {
                    t_min_s: cfg.calibration.time.fallback_t_min_s,
                    t_max_s: cfg.calibration.time.fallback_t_max_s,
                    t_max_fallback: true,
                    fit: crate::calibration::BrokenPowerLawFit {
                        alpha1: f64::NAN,
                        alpha2: f64::NAN,
                        break_point: cfg.calibration.time.fallback_t_min_s,
                        fit_error: f64::NAN,
                    },
                },
                Some(e),
            )
        }
    };
    let t_min_fallback = time_error.is_some();

    // Per-category POI radii from stop-to-nearest-POI distances.
    let mut radii = Vec::new();
    if let Some(poi_path) = &cfg.poi_path {
        if poi_path.exists() {
            let pois = io::read_poi_csv(poi_path)?;
            let poi_index = PoiIndex::build(pois, &cfg.radii);
            for category in PoiCategory::ALL {
                let distances: Vec<f64> = all_stops
                    .iter()
                    .filter_map(|s| poi_index.nearest_poi(s.centroid(), category))
                    .map(|(_, d)| d)
                    .collect();
                if distances.is_empty() {
                    continue;
                }
                match detect_poi_radii(&distances, category, &cfg.calibration.radius) {
                    Ok(params) => radii.push(RadiusEntry {
                        params,
                        fallback: false,
                        samples: distances.len() as u64,
                    }),
                    Err(e) => {
                        if !cfg.calibration.permit_fallback {
                            return Err(PipelineError::InsufficientData(e.to_string()));
                        }
                        detector_errors.push(format!("radius {}: {e}", category.as_str()));
                        let params = cfg
                            .radii
                            .iter()
                            .copied()
                            .find(|p| p.category == category)
                            .unwrap_or_else(|| category.default_params());
                        radii.push(RadiusEntry {
                            params,
                            fallback: true,
                            samples: distances.len() as u64,
                        });
                    }
                }
            }
        }
    }

    let report = CalibrationReport {
        speed_threshold_kmh,
        speed_fallback,
        speed_samples,
        t_min_s: time.t_min_s,
        t_max_s: time.t_max_s,
        t_min_fallback,
        t_max_fallback: time.t_max_fallback || t_min_fallback,
        dwell_samples: dwells.len() as u64,
        dwell_alpha1: (!time.fit.alpha1.is_nan()).then_some(time.fit.alpha1),
        dwell_alpha2: (!time.fit.alpha2.is_nan()).then_some(time.fit.alpha2),
        dwell_fit_error: (!time.fit.fit_error.is_nan()).then_some(time.fit.fit_error),
        radii,
    };
    let report_path = out(cfg, CALIBRATION_FILE);
    report.save(&report_path)?;
    Ok(CalibrateSummary {
        report_path,
        detector_errors,
    })
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ExtractSummary {
    pub stops: u64,
    pub trip_ends: u64,
    pub trips: u64,
    pub intercity_trips: u64,
    pub selection: SelectionStats,
}

pub fn run_extract(cfg: &RunConfig) -> Result<ExtractSummary, PipelineError> {
    let cleaned = out(cfg, CLEANED_FILE);
    if !cleaned.exists() {
        return Err(ConfigError::MissingPath(cleaned.display().to_string()).into());
    }
    cfg.require_paths(&[
        ("pois", &cfg.poi_path),
        ("roads", &cfg.roads_path),
        ("cities", &cfg.cities_path),
    ])?;
    ensure_output_dir(cfg)?;

    let mut thresholds = cfg.thresholds.clone();
    let mut radii = cfg.radii.clone();
    if let Some(report_path) = &cfg.calibration_report {
        if !report_path.exists() {
            return Err(ConfigError::MissingPath(report_path.display().to_string()).into());
        }
        let report = CalibrationReport::load(report_path)?;
        report.apply(&mut thresholds, &mut radii);
    }

    let segments = io::read_cleaned_csv(&cleaned, &cfg.parse)?;
    let pois = io::read_poi_csv(cfg.poi_path.as_ref().unwrap())?;
    let roads = io::read_roads_txt(cfg.roads_path.as_ref().unwrap())?;
    let cities = io::read_cities_txt(cfg.cities_path.as_ref().unwrap())?;
    let poi_index = PoiIndex::build(pois, &radii);
    let road_index = RoadIndex::build(roads)?;
    let city_index = CityIndex::build(cities)?;

    // Group segments per truck, preserving file order.
    let mut per_truck: Vec<(String, Vec<Trajectory>)> = Vec::new();
    for seg in segments {
        match per_truck.last_mut() {
            Some((id, list)) if *id == seg.truck_id => list.push(seg),
            _ => per_truck.push((seg.truck_id.clone(), vec![seg])),
        }
    }

    type TruckOutput = (
        Vec<crate::model::TruckStop>,
        Vec<TripEnd>,
        Vec<Trip>,
        SelectionStats,
    );
    let results: Vec<TruckOutput> = with_pool(cfg.workers, || {
        per_truck
            .par_iter()
            .map(|(_, segs)| {
                let mut truck_stops = Vec::new();
                for seg in segs {
                    truck_stops.extend(stops::detect_stops(seg, &thresholds));
                }
                let mut next_id = 0u64;
                let (mut ends, stats) =
                    trips::select_trip_ends(truck_stops.clone(), &poi_index, &road_index, &mut next_id);
                trips::resolve_cities(&mut ends, &city_index);
                let mut truck_trips = trips::chain_trips(&ends, segs);
                trips::mark_intercity(&mut truck_trips, &city_index);
                (truck_stops, ends, truck_trips, stats)
            })
            .collect()
    });

    // Renumber trip ends globally (truck order, then time order).
    let mut all_stops = Vec::new();
    let mut all_ends: Vec<TripEnd> = Vec::new();
    let mut all_trips = Vec::new();
    let mut selection = SelectionStats::default();
    let mut next_id = 0u64;
    for (truck_stops, ends, truck_trips, stats) in results {
        let base = next_id;
        all_stops.extend(truck_stops);
        for mut end in ends {
            end.id += base;
            next_id = next_id.max(end.id + 1);
            all_ends.push(end);
        }
        for mut trip in truck_trips {
            trip.origin.id += base;
            trip.destination.id += base;
            all_trips.push(trip);
        }
        selection.merge(&stats);
    }

    io::write_stops_csv(&out(cfg, STOPS_FILE), &all_stops)?;
    io::write_trip_ends_csv(&out(cfg, TRIP_ENDS_FILE), &all_ends)?;
    io::write_trips_csv(&out(cfg, TRIPS_FILE), &all_trips)?;

    Ok(ExtractSummary {
        stops: all_stops.len() as u64,
        trip_ends: all_ends.len() as u64,
        trips: all_trips.len() as u64,
        intercity_trips: all_trips
            .iter()
            .filter(|t| t.intercity == trips::IntercityStatus::Intercity)
            .count() as u64,
        selection,
    })
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

/// Bin resolution of the emitted distance/duration histograms.
const STATS_BINS_PER_DECADE: usize = 20;

#[derive(Debug, Clone, Default)]
pub struct StatsSummary {
    pub trips: u64,
    pub intercity_trips: u64,
    pub od_total: u64,
    pub distance_mode_m: f64,
    pub duration_mode_s: f64,
}

pub fn run_stats(cfg: &RunConfig) -> Result<StatsSummary, PipelineError> {
    let ends_path = out(cfg, TRIP_ENDS_FILE);
    let trips_path = out(cfg, TRIPS_FILE);
    for p in [&ends_path, &trips_path] {
        if !p.exists() {
            return Err(ConfigError::MissingPath(p.display().to_string()).into());
        }
    }
    cfg.require_paths(&[("cities", &cfg.cities_path)])?;
    ensure_output_dir(cfg)?;

    let ends = io::read_trip_ends_csv(&ends_path)?;
    let ends_by_id = ends.iter().map(|e| (e.id, e.clone())).collect();
    let trips = io::read_trips_csv(&trips_path, &ends_by_id)?;
    let cities = io::read_cities_txt(cfg.cities_path.as_ref().unwrap())?;
    let city_ids: Vec<String> = cities.iter().map(|c| c.city_id.clone()).collect();

    let shares = stats::category_shares(&ends)?;
    io::write_category_shares_csv(&out(cfg, "category_shares.csv"), &shares)?;

    let od = stats::build_od_matrix(&trips, &city_ids)?;
    io::write_od_matrix_csv(&out(cfg, "od_matrix.csv"), &od)?;

    let profiles = stats::time_of_day_profiles(&trips, cfg.parse.tz_offset_s);
    io::write_hourly_profiles(
        &out(cfg, "departure_profile.csv"),
        &out(cfg, "arrival_profile.csv"),
        &profiles,
    )?;

    let dd = stats::distance_duration_stats(&trips, STATS_BINS_PER_DECADE)?;
    io::write_log_histogram_csv(&out(cfg, "distance_histogram.csv"), &dd.distance_hist)?;
    io::write_log_histogram_csv(&out(cfg, "duration_histogram.csv"), &dd.duration_hist)?;
    io::write_fits_txt(&out(cfg, "fits.txt"), &dd)?;

    Ok(StatsSummary {
        trips: trips.len() as u64,
        intercity_trips: trips
            .iter()
            .filter(|t| t.intercity == trips::IntercityStatus::Intercity)
            .count() as u64,
        od_total: od.total(),
        distance_mode_m: dd.distance_fit.mode(),
        duration_mode_s: dd.duration_fit.mode(),
    })
}

// ---------------------------------------------------------------------------
// synth + score
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct SynthSummary {
    pub trucks: u64,
    pub records: u64,
    pub truth_visits: u64,
    pub truth_trip_ends: u64,
}

/// Generate a fleet and write its files (gps.csv, pois.csv, roads.txt,
/// cities.txt, truth.csv) into the output directory.
pub fn run_synth(
    plan: &FleetPlan,
    out_dir: &Path,
    parse: &crate::ingest::ParseOptions,
) -> Result<SynthSummary, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|e| {
        PipelineError::Config(ConfigError::Io {
            path: out_dir.display().to_string(),
            source: e,
        })
    })?;
    let data = synth::generate_fleet(plan)?;
    let records = data.records.iter().map(|(_, r)| r.len() as u64).sum();
    io::write_gps_csv(
        &out_dir.join("gps.csv"),
        data.records.iter().flat_map(|(_, recs)| recs.iter().cloned()),
        parse,
    )?;
    io::write_poi_csv(&out_dir.join("pois.csv"), &data.pois)?;
    io::write_roads_txt(&out_dir.join("roads.txt"), &data.roads)?;
    io::write_cities_txt(&out_dir.join("cities.txt"), &data.cities)?;
    io::write_truth_csv(&out_dir.join("truth.csv"), &data.truth)?;
    Ok(SynthSummary {
        trucks: plan.n_trucks as u64,
        records,
        truth_visits: data.truth.visits.len() as u64,
        truth_trip_ends: data
            .truth
            .visits
            .iter()
            .filter(|v| v.label == synth::VisitLabel::TripEnd)
            .count() as u64,
    })
}

/// Score a trip-ends file against a truth file.
pub fn run_score(
    predictions_path: &Path,
    truth_path: &Path,
    params: &ScoreParams,
) -> Result<ScoreReport, PipelineError> {
    let ends = io::read_trip_ends_csv(predictions_path)?;
    let predictions: Vec<PredictedEnd> = ends
        .iter()
        .map(|e| PredictedEnd {
            truck_id: e.stop.truck_id.clone(),
            lon: e.stop.centroid_lon,
            lat: e.stop.centroid_lat,
            t_start: e.stop.t_start,
            t_end: e.stop.t_end,
        })
        .collect();
    let truth = io::read_truth_csv(truth_path)?;
    Ok(synth::score_trip_ends(&predictions, &truth, params))
}
