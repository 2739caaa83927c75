//! Readers and writers for every file surface of the pipeline: GPS rows,
//! cleaned records, rejection audits, stops, trip ends, trips, the reference
//! geography (POIs, roads, cities), ground truth, and statistics outputs.

use crate::ingest::{format_timestamp, ParseOptions, RejectionRecord};
use crate::model::{
    CityRegion, GeoPoint, GpsRecord, Poi, PoiCategory, RoadClass, RoadSegment, StopClass,
    TruckStop,
};
use crate::stats::{CategoryShares, DistanceDurationStats, HourlyProfiles, OdMatrix};
use crate::synth::{GroundTruth, TruthVisit, VisitLabel};
use crate::trips::{IntercityStatus, Trip, TripEnd, ValidityReason};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },
}

impl FileError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FileError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn parse(path: &Path, line: u64, msg: impl Into<String>) -> Self {
        FileError::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>, FileError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| FileError::io(path, e))
}

fn open_writer(path: &Path) -> Result<BufWriter<File>, FileError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FileError::io(path, e))
}

fn wr(path: &Path, w: &mut impl Write, s: std::fmt::Arguments) -> Result<(), FileError> {
    w.write_fmt(s).map_err(|e| FileError::io(path, e))
}

// ---------------------------------------------------------------------------
// GPS rows
// ---------------------------------------------------------------------------

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| {
        if x == x.trunc() {
            format!("{}", x as i64)
        } else {
            format!("{x}")
        }
    })
    .unwrap_or_default()
}

/// Write raw GPS rows in the input schema (id, longitude, latitude, speed,
/// timestamp, direction).
pub fn write_gps_csv(
    path: &Path,
    records: impl Iterator<Item = GpsRecord>,
    opts: &ParseOptions,
) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    if opts.has_header {
        wr(path, &mut w, format_args!("id,longitude,latitude,speed,timestamp,direction\n"))?;
    }
    for r in records {
        wr(
            path,
            &mut w,
            format_args!(
                "{},{:.7},{:.7},{},{},{}\n",
                r.truck_id,
                r.lon,
                r.lat,
                opt_num(r.reported_speed),
                format_timestamp(r.timestamp, opts.tz_offset_s),
                opt_num(r.heading),
            ),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

/// Write cleaned records: the input schema plus a trailing segment_id.
pub fn write_cleaned_csv<'a>(
    path: &Path,
    segments: impl Iterator<Item = &'a crate::model::Trajectory>,
    opts: &ParseOptions,
) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(
        path,
        &mut w,
        format_args!("id,longitude,latitude,speed,timestamp,direction,segment_id\n"),
    )?;
    for seg in segments {
        for r in &seg.records {
            wr(
                path,
                &mut w,
                format_args!(
                    "{},{:.7},{:.7},{},{},{},{}\n",
                    r.truck_id,
                    r.lon,
                    r.lat,
                    opt_num(r.reported_speed),
                    format_timestamp(r.timestamp, opts.tz_offset_s),
                    opt_num(r.heading),
                    seg.segment_id,
                ),
            )?;
        }
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

/// Read a cleaned-records file back into per-truck segments.
pub fn read_cleaned_csv(
    path: &Path,
    opts: &ParseOptions,
) -> Result<Vec<crate::model::Trajectory>, FileError> {
    let reader = open_reader(path)?;
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut segments: Vec<crate::model::Trajectory> = Vec::new();
    let mut row = csv::StringRecord::new();
    let mut line = 1u64;
    while csv_reader
        .read_record(&mut row)
        .map_err(|e| FileError::parse(path, line, e.to_string()))?
    {
        line = row.position().map_or(line + 1, |p| p.line());
        let get = |i: usize| row.get(i).unwrap_or("").trim();
        let truck_id = get(0).to_string();
        let lon: f64 = get(1)
            .parse()
            .map_err(|_| FileError::parse(path, line, "bad longitude"))?;
        let lat: f64 = get(2)
            .parse()
            .map_err(|_| FileError::parse(path, line, "bad latitude"))?;
        let reported_speed = if get(3).is_empty() {
            None
        } else {
            Some(
                get(3)
                    .parse()
                    .map_err(|_| FileError::parse(path, line, "bad speed"))?,
            )
        };
        let timestamp = crate::ingest::parse_timestamp(get(4), opts.tz_offset_s)
            .ok_or_else(|| FileError::parse(path, line, "bad timestamp"))?;
        let heading = if get(5).is_empty() {
            None
        } else {
            Some(
                get(5)
                    .parse()
                    .map_err(|_| FileError::parse(path, line, "bad direction"))?,
            )
        };
        let segment_id: u32 = get(6)
            .parse()
            .map_err(|_| FileError::parse(path, line, "bad segment_id"))?;
        let rec = GpsRecord {
            truck_id: truck_id.clone(),
            lon,
            lat,
            timestamp,
            reported_speed,
            heading,
        };
        match segments.last_mut() {
            Some(seg) if seg.truck_id == truck_id && seg.segment_id == segment_id => {
                seg.records.push(rec)
            }
            _ => segments.push(crate::model::Trajectory {
                truck_id,
                segment_id,
                records: vec![rec],
            }),
        }
    }
    Ok(segments)
}

/// Write the rejection audit.
pub fn write_rejections_csv(
    path: &Path,
    rejections: &[RejectionRecord],
    opts: &ParseOptions,
) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(path, &mut w, format_args!("truck_id,timestamp,reason,source_line\n"))?;
    for r in rejections {
        let ts = r
            .timestamp
            .map(|t| format_timestamp(t, opts.tz_offset_s))
            .unwrap_or_default();
        wr(
            path,
            &mut w,
            format_args!("{},{},{},{}\n", r.truck_id, ts, r.reason.as_str(), r.source_line),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

// ---------------------------------------------------------------------------
// Stops, trip ends, trips
// ---------------------------------------------------------------------------

pub fn write_stops_csv(path: &Path, stops: &[TruckStop]) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(
        path,
        &mut w,
        format_args!(
            "truck_id,segment_id,centroid_lon,centroid_lat,t_start,t_end,dwell,n_points,stop_class\n"
        ),
    )?;
    for s in stops {
        wr(
            path,
            &mut w,
            format_args!(
                "{},{},{:.7},{:.7},{},{},{},{},{}\n",
                s.truck_id,
                s.segment_id,
                s.centroid_lon,
                s.centroid_lat,
                s.t_start,
                s.t_end,
                s.dwell(),
                s.n_points,
                s.stop_class.as_str(),
            ),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

pub fn write_trip_ends_csv(path: &Path, ends: &[TripEnd]) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(
        path,
        &mut w,
        format_args!(
            "id,truck_id,segment_id,centroid_lon,centroid_lat,t_start,t_end,dwell,n_points,stop_class,validity_reason,matched_poi_category,matched_poi_id,city_id\n"
        ),
    )?;
    for e in ends {
        let s = &e.stop;
        wr(
            path,
            &mut w,
            format_args!(
                "{},{},{},{:.7},{:.7},{},{},{},{},{},{},{},{},{}\n",
                e.id,
                s.truck_id,
                s.segment_id,
                s.centroid_lon,
                s.centroid_lat,
                s.t_start,
                s.t_end,
                s.dwell(),
                s.n_points,
                s.stop_class.as_str(),
                e.validity_reason.as_str(),
                e.matched_poi_category.map(|c| c.as_str()).unwrap_or(""),
                e.matched_poi_id.as_deref().unwrap_or(""),
                e.city_id.as_deref().unwrap_or(""),
            ),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

pub fn read_trip_ends_csv(path: &Path) -> Result<Vec<TripEnd>, FileError> {
    let reader = open_reader(path)?;
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut ends = Vec::new();
    let mut row = csv::StringRecord::new();
    let mut line = 1u64;
    while csv_reader
        .read_record(&mut row)
        .map_err(|e| FileError::parse(path, line, e.to_string()))?
    {
        line = row.position().map_or(line + 1, |p| p.line());
        let get = |i: usize| row.get(i).unwrap_or("").trim();
        let parse_f = |i: usize, what: &str| {
            get(i)
                .parse::<f64>()
                .map_err(|_| FileError::parse(path, line, format!("bad {what}")))
        };
        let parse_i = |i: usize, what: &str| {
            get(i)
                .parse::<i64>()
                .map_err(|_| FileError::parse(path, line, format!("bad {what}")))
        };
        let stop_class = match get(9) {
            "short" => StopClass::Short,
            "medium" => StopClass::Medium,
            "long" => StopClass::Long,
            other => {
                return Err(FileError::parse(path, line, format!("bad stop_class {other}")))
            }
        };
        let validity_reason = match get(10) {
            "long_term" => ValidityReason::LongTerm,
            "medium_in_poi" => ValidityReason::MediumInPoi,
            other => {
                return Err(FileError::parse(
                    path,
                    line,
                    format!("bad validity_reason {other}"),
                ))
            }
        };
        ends.push(TripEnd {
            id: parse_i(0, "id")? as u64,
            stop: TruckStop {
                truck_id: get(1).to_string(),
                segment_id: parse_i(2, "segment_id")? as u32,
                centroid_lon: parse_f(3, "centroid_lon")?,
                centroid_lat: parse_f(4, "centroid_lat")?,
                t_start: parse_i(5, "t_start")?,
                t_end: parse_i(6, "t_end")?,
                n_points: parse_i(8, "n_points")? as u32,
                stop_class,
            },
            validity_reason,
            matched_poi_category: match get(11) {
                "" => None,
                s => Some(
                    PoiCategory::parse(s)
                        .ok_or_else(|| FileError::parse(path, line, format!("bad category {s}")))?,
                ),
            },
            matched_poi_id: match get(12) {
                "" => None,
                s => Some(s.to_string()),
            },
            city_id: match get(13) {
                "" => None,
                s => Some(s.to_string()),
            },
        });
    }
    Ok(ends)
}

pub fn write_trips_csv(path: &Path, trips: &[Trip]) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(
        path,
        &mut w,
        format_args!(
            "truck_id,origin_id,destination_id,departure_ts,arrival_ts,duration_s,path_distance_m,intercity\n"
        ),
    )?;
    for t in trips {
        wr(
            path,
            &mut w,
            format_args!(
                "{},{},{},{},{},{},{:.1},{}\n",
                t.truck_id,
                t.origin.id,
                t.destination.id,
                t.departure_ts,
                t.arrival_ts,
                t.duration_s(),
                t.path_distance_m,
                t.intercity.as_str(),
            ),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

/// Read trips back, rejoining trip ends by id.
pub fn read_trips_csv(
    path: &Path,
    ends_by_id: &HashMap<u64, TripEnd>,
) -> Result<Vec<Trip>, FileError> {
    let reader = open_reader(path)?;
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut trips = Vec::new();
    let mut row = csv::StringRecord::new();
    let mut line = 1u64;
    while csv_reader
        .read_record(&mut row)
        .map_err(|e| FileError::parse(path, line, e.to_string()))?
    {
        line = row.position().map_or(line + 1, |p| p.line());
        let get = |i: usize| row.get(i).unwrap_or("").trim();
        let parse_i = |i: usize, what: &str| {
            get(i)
                .parse::<i64>()
                .map_err(|_| FileError::parse(path, line, format!("bad {what}")))
        };
        let origin_id = parse_i(1, "origin_id")? as u64;
        let destination_id = parse_i(2, "destination_id")? as u64;
        let lookup = |id: u64| {
            ends_by_id
                .get(&id)
                .cloned()
                .ok_or_else(|| FileError::parse(path, line, format!("unknown trip end id {id}")))
        };
        let intercity = match get(7) {
            "intercity" => IntercityStatus::Intercity,
            "intracity" => IntercityStatus::Intracity,
            "unresolved" => IntercityStatus::Unresolved,
            other => {
                return Err(FileError::parse(path, line, format!("bad intercity flag {other}")))
            }
        };
        trips.push(Trip {
            truck_id: get(0).to_string(),
            origin: lookup(origin_id)?,
            destination: lookup(destination_id)?,
            departure_ts: parse_i(3, "departure_ts")?,
            arrival_ts: parse_i(4, "arrival_ts")?,
            path_distance_m: get(6)
                .parse()
                .map_err(|_| FileError::parse(path, line, "bad path_distance_m"))?,
            intercity,
        });
    }
    Ok(trips)
}

// ---------------------------------------------------------------------------
// Reference geography
// ---------------------------------------------------------------------------

pub fn write_poi_csv(path: &Path, pois: &[Poi]) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(path, &mut w, format_args!("poi_id,category,lon,lat\n"))?;
    for p in pois {
        wr(
            path,
            &mut w,
            format_args!(
                "{},{},{:.7},{:.7}\n",
                p.poi_id,
                p.category.as_str(),
                p.center_lon,
                p.center_lat
            ),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

pub fn read_poi_csv(path: &Path) -> Result<Vec<Poi>, FileError> {
    let reader = open_reader(path)?;
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut pois = Vec::new();
    let mut row = csv::StringRecord::new();
    let mut line = 1u64;
    while csv_reader
        .read_record(&mut row)
        .map_err(|e| FileError::parse(path, line, e.to_string()))?
    {
        line = row.position().map_or(line + 1, |p| p.line());
        let get = |i: usize| row.get(i).unwrap_or("").trim();
        let category = PoiCategory::parse(get(1))
            .ok_or_else(|| FileError::parse(path, line, format!("unknown category {}", get(1))))?;
        pois.push(Poi {
            poi_id: get(0).to_string(),
            category,
            center_lon: get(2)
                .parse()
                .map_err(|_| FileError::parse(path, line, "bad lon"))?,
            center_lat: get(3)
                .parse()
                .map_err(|_| FileError::parse(path, line, "bad lat"))?,
        });
    }
    Ok(pois)
}

fn write_coords(out: &mut String, pts: &[GeoPoint]) {
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&format!("{:.7} {:.7}", p.lon, p.lat));
    }
}

fn parse_coords(path: &Path, line: u64, s: &str) -> Result<Vec<GeoPoint>, FileError> {
    let mut pts = Vec::new();
    for pair in s.split(',') {
        let mut it = pair.split_whitespace();
        let lon: f64 = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| FileError::parse(path, line, "bad coordinate pair"))?;
        let lat: f64 = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| FileError::parse(path, line, "bad coordinate pair"))?;
        pts.push(GeoPoint::new(lon, lat));
    }
    Ok(pts)
}

/// Insert intermediate vertices so no edge exceeds `max_edge_m`.
pub fn densify_polyline(pts: &[GeoPoint], max_edge_m: f64) -> Vec<GeoPoint> {
    let mut out = Vec::with_capacity(pts.len());
    for w in pts.windows(2) {
        let d = crate::model::great_circle_distance(w[0], w[1]);
        let pieces = (d / max_edge_m).ceil().max(1.0) as usize;
        for k in 0..pieces {
            let f = k as f64 / pieces as f64;
            out.push(GeoPoint::new(
                w[0].lon + (w[1].lon - w[0].lon) * f,
                w[0].lat + (w[1].lat - w[0].lat) * f,
            ));
        }
    }
    if let Some(last) = pts.last() {
        out.push(*last);
    }
    out
}

/// Road edges longer than this are densified at ingest so the chord-space
/// edge distance stays millimeters from the true offset.
pub const ROAD_MAX_EDGE_M: f64 = 500.0;

/// Write road segments as `segment_id,road_class,LINESTRING (lon lat, ...)`.
pub fn write_roads_txt(path: &Path, roads: &[RoadSegment]) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    for seg in roads {
        let mut coords = String::new();
        write_coords(&mut coords, &seg.centerline);
        wr(
            path,
            &mut w,
            format_args!("{},{},LINESTRING ({})\n", seg.segment_id, seg.road_class.as_str(), coords),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

/// Read road segments, densifying long edges.
pub fn read_roads_txt(path: &Path) -> Result<Vec<RoadSegment>, FileError> {
    let reader = open_reader(path)?;
    let mut roads = Vec::new();
    for (i, line_res) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line_res.map_err(|e| FileError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let segment_id = parts
            .next()
            .ok_or_else(|| FileError::parse(path, line_no, "missing segment_id"))?
            .trim()
            .to_string();
        let class_s = parts
            .next()
            .ok_or_else(|| FileError::parse(path, line_no, "missing road_class"))?
            .trim();
        let road_class = RoadClass::parse(class_s)
            .ok_or_else(|| FileError::parse(path, line_no, format!("unknown road class {class_s}")))?;
        let geom = parts
            .next()
            .ok_or_else(|| FileError::parse(path, line_no, "missing geometry"))?
            .trim();
        let inner = geom
            .strip_prefix("LINESTRING")
            .map(str::trim)
            .and_then(|g| g.strip_prefix('('))
            .and_then(|g| g.strip_suffix(')'))
            .ok_or_else(|| FileError::parse(path, line_no, "expected LINESTRING (...)"))?;
        let pts = parse_coords(path, line_no, inner)?;
        if pts.len() < 2 {
            return Err(FileError::parse(path, line_no, "linestring needs 2+ vertices"));
        }
        roads.push(RoadSegment::new(
            segment_id,
            road_class,
            densify_polyline(&pts, ROAD_MAX_EDGE_M),
        ));
    }
    Ok(roads)
}

/// Write city polygons as `city_id,POLYGON ((lon lat, ...))`, one ring per
/// parenthesized group.
pub fn write_cities_txt(path: &Path, cities: &[CityRegion]) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    for city in cities {
        let rings: Vec<String> = city
            .rings
            .iter()
            .map(|ring| {
                let mut coords = String::new();
                write_coords(&mut coords, ring);
                format!("({coords})")
            })
            .collect();
        wr(
            path,
            &mut w,
            format_args!("{},POLYGON ({})\n", city.city_id, rings.join(", ")),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

/// Read city polygons; POLYGON and MULTIPOLYGON are accepted and every ring
/// counts as additional coverage.
pub fn read_cities_txt(path: &Path) -> Result<Vec<CityRegion>, FileError> {
    let reader = open_reader(path)?;
    let mut cities: Vec<CityRegion> = Vec::new();
    for (i, line_res) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line_res.map_err(|e| FileError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let city_id = parts
            .next()
            .ok_or_else(|| FileError::parse(path, line_no, "missing city_id"))?
            .trim()
            .to_string();
        let geom = parts
            .next()
            .ok_or_else(|| FileError::parse(path, line_no, "missing geometry"))?
            .trim();
        let inner = geom
            .strip_prefix("MULTIPOLYGON")
            .or_else(|| geom.strip_prefix("POLYGON"))
            .map(str::trim)
            .and_then(|g| g.strip_prefix('('))
            .and_then(|g| g.strip_suffix(')'))
            .ok_or_else(|| FileError::parse(path, line_no, "expected POLYGON (...)"))?;
        // Collect every (...) ring group regardless of nesting.
        let mut rings = Vec::new();
        let mut depth = 0usize;
        let mut start = None;
        for (ci, ch) in inner.char_indices() {
            match ch {
                '(' => {
                    depth += 1;
                    if start.is_none() {
                        start = Some(ci + 1);
                    }
                }
                ')' => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        if let Some(s) = start.take() {
                            let body = inner[s..ci].replace(['(', ')'], " ");
                            rings.push(parse_coords(path, line_no, &body)?);
                        }
                    }
                }
                _ => {}
            }
        }
        if rings.is_empty() {
            rings.push(parse_coords(path, line_no, inner)?);
        }
        for ring in &rings {
            if ring.len() < 4 || ring.first() != ring.last() {
                return Err(FileError::parse(
                    path,
                    line_no,
                    format!("city {city_id}: ring not closed"),
                ));
            }
        }
        // Lines may repeat a city_id to add rings.
        if let Some(existing) = cities.iter_mut().find(|c| c.city_id == city_id) {
            existing.rings.extend(rings);
        } else {
            cities.push(CityRegion { city_id, rings });
        }
    }
    Ok(cities)
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

pub fn write_truth_csv(path: &Path, truth: &GroundTruth) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(path, &mut w, format_args!("truck_id,lon,lat,t_start,t_end,label\n"))?;
    for v in &truth.visits {
        wr(
            path,
            &mut w,
            format_args!(
                "{},{:.7},{:.7},{},{},{}\n",
                v.truck_id,
                v.lon,
                v.lat,
                v.t_start,
                v.t_end,
                v.label.as_str()
            ),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

pub fn read_truth_csv(path: &Path) -> Result<GroundTruth, FileError> {
    let reader = open_reader(path)?;
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let mut truth = GroundTruth::default();
    let mut row = csv::StringRecord::new();
    let mut line = 1u64;
    while csv_reader
        .read_record(&mut row)
        .map_err(|e| FileError::parse(path, line, e.to_string()))?
    {
        line = row.position().map_or(line + 1, |p| p.line());
        let get = |i: usize| row.get(i).unwrap_or("").trim();
        let label = VisitLabel::parse(get(5))
            .ok_or_else(|| FileError::parse(path, line, format!("bad label {}", get(5))))?;
        truth.visits.push(TruthVisit {
            truck_id: get(0).to_string(),
            lon: get(1)
                .parse()
                .map_err(|_| FileError::parse(path, line, "bad lon"))?,
            lat: get(2)
                .parse()
                .map_err(|_| FileError::parse(path, line, "bad lat"))?,
            t_start: get(3)
                .parse()
                .map_err(|_| FileError::parse(path, line, "bad t_start"))?,
            t_end: get(4)
                .parse()
                .map_err(|_| FileError::parse(path, line, "bad t_end"))?,
            label,
        });
    }
    Ok(truth)
}

// ---------------------------------------------------------------------------
// Statistics outputs
// ---------------------------------------------------------------------------

pub fn write_od_matrix_csv(path: &Path, od: &OdMatrix) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(path, &mut w, format_args!("origin_city,destination_city,count\n"))?;
    let n = od.cities.len();
    for a in 0..n {
        for b in 0..n {
            let count = od.get(a, b);
            if count > 0 {
                wr(
                    path,
                    &mut w,
                    format_args!("{},{},{}\n", od.cities[a], od.cities[b], count),
                )?;
            }
        }
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

pub fn write_category_shares_csv(path: &Path, shares: &CategoryShares) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(path, &mut w, format_args!("category,share\n"))?;
    for (cat, share) in &shares.shares {
        wr(path, &mut w, format_args!("{},{:.6}\n", cat.as_str(), share))?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

pub fn write_hourly_profile_csv(path: &Path, counts: &[u64; 24]) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(path, &mut w, format_args!("hour,count\n"))?;
    for (h, c) in counts.iter().enumerate() {
        wr(path, &mut w, format_args!("{h},{c}\n"))?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

pub fn write_log_histogram_csv(
    path: &Path,
    hist: &crate::calibration::LogBinnedDensity,
) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    wr(path, &mut w, format_args!("bin_left,bin_right,count,density\n"))?;
    for (i, &c) in hist.counts.iter().enumerate() {
        wr(
            path,
            &mut w,
            format_args!(
                "{:.6},{:.6},{},{:.9e}\n",
                hist.edges[i],
                hist.edges[i + 1],
                c,
                hist.densities[i]
            ),
        )?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}

pub fn write_hourly_profiles(
    departure_path: &Path,
    arrival_path: &Path,
    profiles: &HourlyProfiles,
) -> Result<(), FileError> {
    write_hourly_profile_csv(departure_path, &profiles.departures)?;
    write_hourly_profile_csv(arrival_path, &profiles.arrivals)
}

pub fn write_fits_txt(path: &Path, stats: &DistanceDurationStats) -> Result<(), FileError> {
    let mut w = open_writer(path)?;
    for (name, fit) in [
        ("distance", &stats.distance_fit),
        ("duration", &stats.duration_fit),
    ] {
        wr(path, &mut w, format_args!("{name}.mu = {:.9}\n", fit.mu))?;
        wr(path, &mut w, format_args!("{name}.sigma = {:.9}\n", fit.sigma))?;
        wr(path, &mut w, format_args!("{name}.n = {}\n", fit.n))?;
        wr(path, &mut w, format_args!("{name}.mode = {:.3}\n", fit.mode()))?;
    }
    w.flush().map_err(|e| FileError::io(path, e))
}
