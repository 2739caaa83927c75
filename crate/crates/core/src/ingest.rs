//! Raw GPS file parsing and the preprocessing cascade: duplicate removal,
//! bounds filtering, speed/acceleration jump removal, and gap splitting.
//!
//! Every input row ends up either in a trajectory segment or in the
//! rejection audit with exactly one reason, and the cascade is idempotent:
//! run on its own output it rejects nothing.
//!
//! Per-truck processing is independent; the cascade takes one truck's rows
//! and can run across trucks in parallel with no shared state.

use crate::model::{avg_speed, GeoPoint, GpsRecord, Thresholds, Trajectory};
use crate::spatial::point_in_ring;
use chrono::NaiveDateTime;
use std::collections::HashMap;
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error reading GPS input: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV structure error: {0}")]
    Csv(#[from] csv::Error),
}

/// Why a row was dropped. Every input row is either accepted or rejected
/// with exactly one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectionReason {
    Duplicate,
    OutOfBounds,
    SpeedJump,
    AccelJump,
    NonMonotonicTime,
    Malformed,
}

impl RejectionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectionReason::Duplicate => "duplicate",
            RejectionReason::OutOfBounds => "out_of_bounds",
            RejectionReason::SpeedJump => "speed_jump",
            RejectionReason::AccelJump => "accel_jump",
            RejectionReason::NonMonotonicTime => "non_monotonic_time",
            RejectionReason::Malformed => "malformed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "duplicate" => Some(RejectionReason::Duplicate),
            "out_of_bounds" => Some(RejectionReason::OutOfBounds),
            "speed_jump" => Some(RejectionReason::SpeedJump),
            "accel_jump" => Some(RejectionReason::AccelJump),
            "non_monotonic_time" => Some(RejectionReason::NonMonotonicTime),
            "malformed" => Some(RejectionReason::Malformed),
            _ => None,
        }
    }
}

/// One dropped row in the rejection audit.
#[derive(Debug, Clone)]
pub struct RejectionRecord {
    /// Truck id when the row carried a readable one, else empty.
    pub truck_id: String,
    /// Epoch seconds when the timestamp was readable.
    pub timestamp: Option<i64>,
    pub reason: RejectionReason,
    /// 1-based line number in the source file.
    pub source_line: u64,
}

/// Accepted region for fixes; the boundary counts as inside.
#[derive(Debug, Clone)]
pub enum BoundingRegion {
    Rect {
        min_lon: f64,
        min_lat: f64,
        max_lon: f64,
        max_lat: f64,
    },
    Polygon(Vec<GeoPoint>),
}

impl BoundingRegion {
    /// Rough bounding box of mainland China, the dataset's home region.
    pub fn china_bbox() -> Self {
        BoundingRegion::Rect {
            min_lon: 73.0,
            min_lat: 18.0,
            max_lon: 136.0,
            max_lat: 54.0,
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        match self {
            BoundingRegion::Rect {
                min_lon,
                min_lat,
                max_lon,
                max_lat,
            } => {
                p.lon >= *min_lon && p.lon <= *max_lon && p.lat >= *min_lat && p.lat <= *max_lat
            }
            BoundingRegion::Polygon(ring) => point_in_ring(p, ring),
        }
    }
}

/// Input file dialect.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub delimiter: u8,
    pub has_header: bool,
    /// Offset of the timestamp strings from UTC, seconds (e.g. 28800 for
    /// UTC+8).
    pub tz_offset_s: i64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: true,
            tz_offset_s: 28_800,
        }
    }
}

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Parse local "YYYY-MM-DD hh:mm:ss" text into UTC epoch seconds.
pub fn parse_timestamp(s: &str, tz_offset_s: i64) -> Option<i64> {
    NaiveDateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT)
        .ok()
        .map(|dt| dt.and_utc().timestamp() - tz_offset_s)
}

/// Render UTC epoch seconds back to local timestamp text.
pub fn format_timestamp(epoch_s: i64, tz_offset_s: i64) -> String {
    chrono::DateTime::from_timestamp(epoch_s + tz_offset_s, 0)
        .map(|dt| dt.naive_utc().format(TIMESTAMP_FORMAT).to_string())
        .unwrap_or_else(|| epoch_s.to_string())
}

/// Parse delimiter-separated rows (id, longitude, latitude, speed,
/// timestamp, direction) into records plus per-row Malformed rejections.
/// Row order is preserved; a malformed row never aborts the parse.
pub fn parse_records<R: Read>(
    reader: R,
    opts: &ParseOptions,
) -> Result<(Vec<GpsRecord>, Vec<RejectionRecord>), IngestError> {
    let (rows, rejections) = parse_records_numbered(reader, opts)?;
    Ok((rows.into_iter().map(|(r, _)| r).collect(), rejections))
}

/// [`parse_records`] variant keeping each row's source line for the
/// downstream rejection audit.
pub fn parse_records_numbered<R: Read>(
    reader: R,
    opts: &ParseOptions,
) -> Result<(Vec<NumberedRecord>, Vec<RejectionRecord>), IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.has_header)
        .flexible(true)
        .from_reader(reader);

    let mut records = Vec::new();
    let mut rejections = Vec::new();
    let mut row = csv::StringRecord::new();
    while csv_reader.read_record(&mut row)? {
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, opts.tz_offset_s) {
            Ok(rec) => records.push((rec, line)),
            Err((truck_id, timestamp)) => rejections.push(RejectionRecord {
                truck_id,
                timestamp,
                reason: RejectionReason::Malformed,
                source_line: line,
            }),
        }
    }
    Ok((records, rejections))
}

/// Parse one row; on failure return whatever identity could still be read.
fn parse_row(row: &csv::StringRecord, tz_offset_s: i64) -> Result<GpsRecord, (String, Option<i64>)> {
    let truck_id = row.get(0).unwrap_or("").trim().to_string();
    let timestamp = row.get(4).and_then(|s| parse_timestamp(s, tz_offset_s));
    let fail = |id: &str, ts: Option<i64>| Err((id.to_string(), ts));

    if row.len() < 5 || truck_id.is_empty() {
        return fail(&truck_id, timestamp);
    }
    let Some(lon) = row.get(1).and_then(|s| s.trim().parse::<f64>().ok()) else {
        return fail(&truck_id, timestamp);
    };
    let Some(lat) = row.get(2).and_then(|s| s.trim().parse::<f64>().ok()) else {
        return fail(&truck_id, timestamp);
    };
    if !GeoPoint::new(lon, lat).in_bounds() {
        return fail(&truck_id, timestamp);
    }
    let Some(timestamp) = timestamp else {
        return fail(&truck_id, None);
    };

    let speed_field = row.get(3).map(str::trim).unwrap_or("");
    let reported_speed = if speed_field.is_empty() {
        None
    } else {
        match speed_field.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Some(v),
            _ => return fail(&truck_id, Some(timestamp)),
        }
    };
    let heading_field = row.get(5).map(str::trim).unwrap_or("");
    let heading = if heading_field.is_empty() {
        None
    } else {
        match heading_field.parse::<f64>() {
            Ok(v) if (0.0..360.0).contains(&v) => Some(v),
            _ => return fail(&truck_id, Some(timestamp)),
        }
    };

    Ok(GpsRecord {
        truck_id,
        lon,
        lat,
        timestamp,
        reported_speed,
        heading,
    })
}

/// Group records by truck, preserving first-seen truck order and row order
/// within each truck.
pub fn group_by_truck(records: Vec<GpsRecord>) -> Vec<(String, Vec<GpsRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: HashMap<String, Vec<GpsRecord>> = HashMap::new();
    for rec in records {
        if !map.contains_key(&rec.truck_id) {
            order.push(rec.truck_id.clone());
        }
        map.entry(rec.truck_id.clone()).or_default().push(rec);
    }
    order
        .into_iter()
        .map(|id| {
            let recs = map.remove(&id).unwrap();
            (id, recs)
        })
        .collect()
}

/// Rows paired with their source line, so cascade rejections can cite it.
pub type NumberedRecord = (GpsRecord, u64);

/// Group numbered rows by truck, preserving first-seen truck order and row
/// order within each truck.
pub fn group_numbered_by_truck(rows: Vec<NumberedRecord>) -> Vec<(String, Vec<NumberedRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: HashMap<String, Vec<NumberedRecord>> = HashMap::new();
    for row in rows {
        if !map.contains_key(&row.0.truck_id) {
            order.push(row.0.truck_id.clone());
        }
        map.entry(row.0.truck_id.clone()).or_default().push(row);
    }
    order
        .into_iter()
        .map(|id| {
            let rows = map.remove(&id).unwrap();
            (id, rows)
        })
        .collect()
}

/// Sort one truck's rows by timestamp and drop rows whose timestamp repeats
/// an earlier-seen one (first occurrence in input order wins).
pub fn dedupe_and_sort(rows: Vec<NumberedRecord>) -> (Vec<NumberedRecord>, Vec<RejectionRecord>) {
    let mut rows = rows;
    // Stable sort keeps input order within equal timestamps.
    rows.sort_by_key(|(r, _)| r.timestamp);
    let mut kept: Vec<NumberedRecord> = Vec::with_capacity(rows.len());
    let mut rejections = Vec::new();
    for (rec, line) in rows {
        if kept
            .last()
            .is_some_and(|(prev, _)| prev.timestamp == rec.timestamp)
        {
            rejections.push(RejectionRecord {
                truck_id: rec.truck_id,
                timestamp: Some(rec.timestamp),
                reason: RejectionReason::Duplicate,
                source_line: line,
            });
        } else {
            kept.push((rec, line));
        }
    }
    (kept, rejections)
}

/// Drop rows outside the configured region (closed: boundary rows stay).
pub fn bounds_filter(
    rows: Vec<NumberedRecord>,
    region: &BoundingRegion,
) -> (Vec<NumberedRecord>, Vec<RejectionRecord>) {
    let mut kept = Vec::with_capacity(rows.len());
    let mut rejections = Vec::new();
    for (rec, line) in rows {
        if region.contains(rec.pos()) {
            kept.push((rec, line));
        } else {
            rejections.push(RejectionRecord {
                truck_id: rec.truck_id,
                timestamp: Some(rec.timestamp),
                reason: RejectionReason::OutOfBounds,
                source_line: line,
            });
        }
    }
    (kept, rejections)
}

/// Remove data jumps: rows whose average speed from the last kept row
/// exceeds `max_speed_kmh`, or whose acceleration between the two flanking
/// pair speeds exceeds `max_accel_ms2` in magnitude.
///
/// Comparisons anchor to the last kept row, so one bad fix cannot shadow
/// the good fixes after it.
pub fn jump_filter(
    rows: Vec<NumberedRecord>,
    thresholds: &Thresholds,
) -> (Vec<NumberedRecord>, Vec<RejectionRecord>) {
    let mut kept: Vec<NumberedRecord> = Vec::with_capacity(rows.len());
    let mut rejections = Vec::new();
    // Speed of the pair formed by the last two kept rows.
    let mut last_pair_speed: Option<f64> = None;
    for (rec, line) in rows {
        let Some((prev, _)) = kept.last() else {
            kept.push((rec, line));
            continue;
        };
        if rec.timestamp <= prev.timestamp {
            rejections.push(RejectionRecord {
                truck_id: rec.truck_id,
                timestamp: Some(rec.timestamp),
                reason: RejectionReason::NonMonotonicTime,
                source_line: line,
            });
            continue;
        }
        let v = avg_speed(prev, &rec).expect("timestamps checked increasing");
        if v > thresholds.max_speed_kmh {
            rejections.push(RejectionRecord {
                truck_id: rec.truck_id,
                timestamp: Some(rec.timestamp),
                reason: RejectionReason::SpeedJump,
                source_line: line,
            });
            continue;
        }
        if let Some(v_prev) = last_pair_speed {
            let dt = (rec.timestamp - prev.timestamp) as f64;
            let accel = (v - v_prev) / crate::model::MS_TO_KMH / dt;
            if accel.abs() > thresholds.max_accel_ms2 {
                rejections.push(RejectionRecord {
                    truck_id: rec.truck_id,
                    timestamp: Some(rec.timestamp),
                    reason: RejectionReason::AccelJump,
                    source_line: line,
                });
                continue;
            }
        }
        last_pair_speed = Some(v);
        kept.push((rec, line));
    }
    (kept, rejections)
}

/// Split clean sorted rows into trajectory segments wherever the time gap
/// strictly exceeds `gap_limit_s`. Single-record segments are allowed.
pub fn split_on_gaps(truck_id: &str, rows: Vec<NumberedRecord>, gap_limit_s: i64) -> Vec<Trajectory> {
    let mut segments = Vec::new();
    let mut current: Vec<GpsRecord> = Vec::new();
    for (rec, _) in rows {
        if let Some(prev) = current.last() {
            if rec.timestamp - prev.timestamp > gap_limit_s {
                segments.push(current);
                current = Vec::new();
            }
        }
        current.push(rec);
    }
    if !current.is_empty() {
        segments.push(current);
    }
    segments
        .into_iter()
        .enumerate()
        .map(|(i, records)| Trajectory {
            truck_id: truck_id.to_string(),
            segment_id: i as u32,
            records,
        })
        .collect()
}

/// Full preprocessing cascade for one truck's parsed rows.
pub fn run_cascade(
    truck_id: &str,
    rows: Vec<NumberedRecord>,
    region: &BoundingRegion,
    thresholds: &Thresholds,
) -> (Vec<Trajectory>, Vec<RejectionRecord>) {
    let mut all_rejections = Vec::new();
    let (rows, rej) = dedupe_and_sort(rows);
    all_rejections.extend(rej);
    let (rows, rej) = bounds_filter(rows, region);
    all_rejections.extend(rej);
    let (rows, rej) = jump_filter(rows, thresholds);
    all_rejections.extend(rej);
    let segments = split_on_gaps(truck_id, rows, thresholds.gap_limit_s);
    (segments, all_rejections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EARTH_RADIUS_M;

    const SAMPLE: &str = "\
id,longitude,latitude,speed,timestamp,direction
60817be2749c77,119.786484,34.387562,0,2018-05-19 12:03:20,132
60817be2749c77,119.787315,34.388016,30,2018-05-19 12:03:50,169
60817be2749c77,119.788536,34.388783,25,2018-05-19 12:04:20,70
60817be2749c77,119.789902,34.38847,7,2018-05-19 12:04:50,206
60817be2749c77,119.789902,34.38847,0,2018-05-19 12:05:20,206
";

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

    fn numbered(records: Vec<GpsRecord>) -> Vec<NumberedRecord> {
        records
            .into_iter()
            .enumerate()
            .map(|(i, r)| (r, i as u64 + 1))
            .collect()
    }

    fn north_of(lat: f64, meters: f64) -> f64 {
        lat + meters / (EARTH_RADIUS_M * std::f64::consts::PI / 180.0)
    }

    #[test]
    fn parses_sample_rows() {
        let (records, rejections) = parse_records(SAMPLE.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(records.len(), 5);
        assert!(rejections.is_empty());
        let r = &records[0];
        assert_eq!(r.truck_id, "60817be2749c77");
        assert_eq!(r.lon, 119.786484);
        assert_eq!(r.lat, 34.387562);
        assert_eq!(r.reported_speed, Some(0.0));
        assert_eq!(r.heading, Some(132.0));
        // 2018-05-19 12:03:20 UTC+8 is 04:03:20 UTC.
        assert_eq!(r.timestamp, 1_526_702_600);
        assert_eq!(records[1].timestamp - records[0].timestamp, 30);
    }

    #[test]
    fn malformed_rows_become_rejections() {
        let input = "\
id,longitude,latitude,speed,timestamp,direction
t1,119.7,abc,0,2018-05-19 12:03:20,132
t1,119.7,34.3,0,not-a-time,132
t1,119.7,34.3,-4,2018-05-19 12:03:20,132
t1,200.5,34.3,0,2018-05-19 12:03:20,132
t1,119.7,34.3,0,2018-05-19 12:03:20,361
,119.7,34.3,0,2018-05-19 12:03:20,132
t1,119.7,34.3,0,2018-05-19 12:04:20,132
";
        let (records, rejections) = parse_records(input.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(rejections.len(), 6);
        assert!(rejections.iter().all(|r| r.reason == RejectionReason::Malformed));
        assert_eq!(rejections[0].source_line, 2);
        assert_eq!(rejections[0].truck_id, "t1");
    }

    #[test]
    fn empty_input_is_empty_output() {
        let (records, rejections) = parse_records("".as_bytes(), &ParseOptions::default()).unwrap();
        assert!(records.is_empty());
        assert!(rejections.is_empty());
        let opts = ParseOptions {
            has_header: false,
            ..ParseOptions::default()
        };
        let (records, rejections) = parse_records("".as_bytes(), &opts).unwrap();
        assert!(records.is_empty());
        assert!(rejections.is_empty());
    }

    #[test]
    fn optional_fields_may_be_empty() {
        let input = "t9,119.7,34.3,,2018-05-19 12:03:20,\n";
        let opts = ParseOptions {
            has_header: false,
            ..ParseOptions::default()
        };
        let (records, rejections) = parse_records(input.as_bytes(), &opts).unwrap();
        assert_eq!(records.len(), 1);
        assert!(rejections.is_empty());
        assert_eq!(records[0].reported_speed, None);
        assert_eq!(records[0].heading, None);
    }

    #[test]
    fn exact_duplicates_keep_first() {
        let rows = numbered(vec![rec(116.0, 40.0, 100), rec(116.0, 40.0, 100)]);
        let (kept, rej) = dedupe_and_sort(rows);
        assert_eq!(kept.len(), 1);
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].reason, RejectionReason::Duplicate);
        assert_eq!(rej[0].source_line, 2);
    }

    #[test]
    fn out_of_order_rows_are_sorted_not_rejected() {
        let rows = numbered(vec![rec(116.0, 40.0, 200), rec(116.1, 40.0, 100)]);
        let (kept, rej) = dedupe_and_sort(rows);
        assert!(rej.is_empty());
        assert_eq!(kept[0].0.timestamp, 100);
        assert_eq!(kept[1].0.timestamp, 200);
    }

    #[test]
    fn same_timestamp_different_coordinates_is_duplicate() {
        let rows = numbered(vec![rec(116.0, 40.0, 100), rec(117.0, 41.0, 100)]);
        let (kept, rej) = dedupe_and_sort(rows);
        assert_eq!(kept.len(), 1);
        // First occurrence wins.
        assert_eq!(kept[0].0.lon, 116.0);
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].reason, RejectionReason::Duplicate);
    }

    #[test]
    fn bounds_filter_rejects_far_points_keeps_boundary() {
        let region = BoundingRegion::china_bbox();
        let rows = numbered(vec![
            rec(0.0, 0.0, 100),
            rec(119.786484, 34.387562, 200),
            rec(73.0, 18.0, 300),
        ]);
        let (kept, rej) = bounds_filter(rows, &region);
        assert_eq!(kept.len(), 2);
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].reason, RejectionReason::OutOfBounds);
        assert_eq!(rej[0].timestamp, Some(100));
    }

    #[test]
    fn polygon_region_contains_boundary() {
        let region = BoundingRegion::Polygon(vec![
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(10.0, 0.0),
            GeoPoint::new(10.0, 10.0),
            GeoPoint::new(0.0, 10.0),
            GeoPoint::new(0.0, 0.0),
        ]);
        assert!(region.contains(GeoPoint::new(5.0, 5.0)));
        assert!(region.contains(GeoPoint::new(0.0, 5.0)));
        assert!(!region.contains(GeoPoint::new(-1.0, 5.0)));
    }

    #[test]
    fn speed_jump_is_rejected_and_scan_resumes_from_kept() {
        // 2 km in 30 s is 240 km/h: a jump. The following fix back at the
        // origin must survive because comparisons anchor to the last kept.
        let rows = numbered(vec![
            rec(116.0, 40.0, 0),
            rec(116.0, north_of(40.0, 2_000.0), 30),
            rec(116.0, 40.0, 60),
        ]);
        let (kept, rej) = jump_filter(rows, &Thresholds::default());
        assert_eq!(kept.len(), 2);
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].reason, RejectionReason::SpeedJump);
        assert_eq!(rej[0].timestamp, Some(30));
    }

    #[test]
    fn stationary_pairs_pass_jump_filter() {
        let rows = numbered(vec![
            rec(116.0, 40.0, 0),
            rec(116.0, 40.0, 30),
            rec(116.0, 40.0, 60),
            rec(116.0, 40.0, 90),
        ]);
        let (kept, rej) = jump_filter(rows, &Thresholds::default());
        assert_eq!(kept.len(), 4);
        assert!(rej.is_empty());
    }

    #[test]
    fn accel_jump_on_constructed_triple() {
        // Pairwise speeds 0 then 160 m/s over 30 s: 5.33 m/s² at the middle
        // flank. max_speed is lifted so the acceleration check is what fires.
        let thresholds = Thresholds {
            max_speed_kmh: 2_000.0,
            ..Thresholds::default()
        };
        let rows = numbered(vec![
            rec(116.0, 40.0, 0),
            rec(116.0, 40.0, 30),
            rec(116.0, north_of(40.0, 4_800.0), 60),
        ]);
        let (kept, rej) = jump_filter(rows, &thresholds);
        assert_eq!(kept.len(), 2);
        assert_eq!(rej.len(), 1);
        assert_eq!(rej[0].reason, RejectionReason::AccelJump);
        // Hand arithmetic: (160 - 0) m/s over 30 s = 5.33 m/s² > 5.
        let v_prev = 0.0f64;
        let v_next = 4_800.0 / 30.0 * 3.6;
        let accel = (v_next - v_prev) / 3.6 / 30.0;
        assert!((accel - 5.333).abs() < 0.01);
    }

    #[test]
    fn split_on_gaps_cases() {
        let steady: Vec<NumberedRecord> =
            numbered((0..10).map(|i| rec(116.0, 40.0, i * 30)).collect());
        assert_eq!(split_on_gaps("t1", steady, 3_600).len(), 1);

        let mut with_gap: Vec<GpsRecord> = (0..5).map(|i| rec(116.0, 40.0, i * 30)).collect();
        with_gap.push(rec(116.0, 40.0, 120 + 3_601));
        let segs = split_on_gaps("t1", numbered(with_gap), 3_600);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].segment_id, 0);
        assert_eq!(segs[1].segment_id, 1);
        assert_eq!(segs[1].records.len(), 1);

        let mut exact: Vec<GpsRecord> = (0..5).map(|i| rec(116.0, 40.0, i * 30)).collect();
        exact.push(rec(116.0, 40.0, 120 + 3_600));
        assert_eq!(split_on_gaps("t1", numbered(exact), 3_600).len(), 1);
    }

    #[test]
    fn cascade_conserves_rows_and_is_idempotent() {
        let mut rows: Vec<GpsRecord> = Vec::new();
        // Clean run, a duplicate, an out-of-bounds fix, and a jump.
        for i in 0..20 {
            rows.push(rec(116.0, 40.0, i * 30));
        }
        rows.push(rec(116.0, 40.0, 300)); // duplicate timestamp
        rows.push(rec(0.0, 0.0, 630)); // out of bounds... and duplicate ts
        rows.push(rec(116.0, north_of(40.0, 3_000.0), 415)); // speed jump
        rows.push(rec(116.0, 40.0, 20 * 30 + 4_000)); // gap split
        let n_input = rows.len();

        let region = BoundingRegion::china_bbox();
        let thresholds = Thresholds::default();
        let (segments, rejections) = run_cascade("t1", numbered(rows), &region, &thresholds);

        let accepted: usize = segments.iter().map(|s| s.records.len()).sum();
        assert_eq!(accepted + rejections.len(), n_input);
        assert_eq!(segments.len(), 2);

        // Segments are clean: strictly increasing, no oversized gaps.
        for seg in &segments {
            for w in seg.records.windows(2) {
                assert!(w[1].timestamp > w[0].timestamp);
                assert!(w[1].timestamp - w[0].timestamp <= thresholds.gap_limit_s);
            }
        }

        // Second pass rejects nothing.
        for seg in &segments {
            let (again, rej) = run_cascade(
                "t1",
                numbered(seg.records.clone()),
                &region,
                &thresholds,
            );
            assert!(rej.is_empty(), "second pass rejected rows: {rej:?}");
            assert_eq!(again.len(), 1);
            assert_eq!(again[0].records.len(), seg.records.len());
        }
    }
}
