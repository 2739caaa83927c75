//! Geographic queries for trip-end selection: nearest freight POI, distance
//! to the nearest road centerline, and city assignment.
//!
//! Each index has an exhaustive-scan twin (`scan_*`) sharing the same
//! distance/containment primitives; the indexes only accelerate the search,
//! so indexed and scanned answers must agree exactly.
//!
//! Nearest-neighbor pruning runs in 3D chord space on the unit sphere scaled
//! to meters: the straight-line chord between two surface points is monotone
//! in great-circle distance, so chord-nearest equals great-circle-nearest,
//! and the chord is a lower bound on the arc length.

use crate::model::{
    great_circle_distance, CityRegion, GeoPoint, Poi, PoiCategory, PoiCategoryParams, RoadClass,
    RoadSegment, EARTH_RADIUS_M,
};
use rstar::primitives::{GeomWithData, Line};
use rstar::RTree;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("unknown POI category in query: {0}")]
    UnknownCategory(String),
    #[error("road segment {0} has fewer than 2 centerline vertices")]
    DegenerateSegment(String),
    #[error("city {city_id} ring {ring} is not closed")]
    OpenRing { city_id: String, ring: usize },
}

/// Earth-centered Cartesian coordinates in meters on the sphere surface.
pub fn to_cartesian(p: GeoPoint) -> [f64; 3] {
    let lat = p.lat.to_radians();
    let lon = p.lon.to_radians();
    [
        EARTH_RADIUS_M * lat.cos() * lon.cos(),
        EARTH_RADIUS_M * lat.cos() * lon.sin(),
        EARTH_RADIUS_M * lat.sin(),
    ]
}

/// Arc length implied by a squared chord distance.
fn chord2_to_arc(chord2: f64) -> f64 {
    let half = (chord2.sqrt() / (2.0 * EARTH_RADIUS_M)).min(1.0);
    2.0 * EARTH_RADIUS_M * half.asin()
}

/// Absolute slack used when draining near-ties from the candidate stream.
fn tie_band(d: f64) -> f64 {
    1e-9 * d.max(1.0) + 1e-9
}

/// Squared Euclidean distance from a 3D point to a 3D segment.
fn point_to_segment3_d2(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * d[0] + ap[1] * d[1] + ap[2] * d[2]) / len2).clamp(0.0, 1.0)
    };
    let c = [p[0] - (a[0] + t * d[0]), p[1] - (a[1] + t * d[1]), p[2] - (a[2] + t * d[2])];
    c[0] * c[0] + c[1] * c[1] + c[2] * c[2]
}

/// Distance in meters from a point to one polyline edge: the chord distance
/// to the straight 3D segment between the edge endpoints, converted to arc
/// length. For edges densified to about a kilometer the segment sags at most
/// ~2 cm below the surface arc, well inside the road-width decision scale,
/// and the chord metric matches the spatial index's pruning metric exactly.
pub fn point_to_edge_distance(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> f64 {
    chord2_to_arc(point_to_segment3_d2(
        to_cartesian(p),
        to_cartesian(a),
        to_cartesian(b),
    ))
}

/// Minimal point-to-centerline distance over the edges of one segment.
pub fn point_to_segment_distance(p: GeoPoint, seg: &RoadSegment) -> f64 {
    seg.centerline
        .windows(2)
        .map(|w| point_to_edge_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Even-odd ray casting with the boundary counted as inside.
pub fn point_in_ring(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    if ring.len() < 3 {
        return false;
    }
    let (x, y) = (p.lon, p.lat);
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        // On-edge check first: boundary counts as inside.
        let cross = (b.lon - a.lon) * (y - a.lat) - (b.lat - a.lat) * (x - a.lon);
        if cross.abs() < 1e-15
            && x >= a.lon.min(b.lon) - 1e-15
            && x <= a.lon.max(b.lon) + 1e-15
            && y >= a.lat.min(b.lat) - 1e-15
            && y <= a.lat.max(b.lat) + 1e-15
        {
            return true;
        }
        if (a.lat > y) != (b.lat > y) {
            let x_int = a.lon + (y - a.lat) / (b.lat - a.lat) * (b.lon - a.lon);
            if x < x_int {
                inside = !inside;
            }
        }
    }
    inside
}

fn region_contains(region: &CityRegion, p: GeoPoint) -> bool {
    region.rings.iter().any(|ring| point_in_ring(p, ring))
}

// ---------------------------------------------------------------------------
// POI index
// ---------------------------------------------------------------------------

type PoiTreeItem = GeomWithData<[f64; 3], usize>;

/// Per-category nearest-POI index with the category radius table attached.
pub struct PoiIndex {
    pois: Vec<Poi>,
    trees: HashMap<PoiCategory, RTree<PoiTreeItem>>,
    params: HashMap<PoiCategory, PoiCategoryParams>,
}

impl PoiIndex {
    pub fn build(pois: Vec<Poi>, params: &[PoiCategoryParams]) -> Self {
        let mut by_cat: HashMap<PoiCategory, Vec<PoiTreeItem>> = HashMap::new();
        for (i, poi) in pois.iter().enumerate() {
            by_cat
                .entry(poi.category)
                .or_default()
                .push(GeomWithData::new(to_cartesian(poi.center()), i));
        }
        let trees = by_cat
            .into_iter()
            .map(|(cat, items)| (cat, RTree::bulk_load(items)))
            .collect();
        let params = params.iter().map(|p| (p.category, *p)).collect();
        Self { pois, trees, params }
    }

    pub fn category_params(&self, category: PoiCategory) -> PoiCategoryParams {
        self.params
            .get(&category)
            .copied()
            .unwrap_or_else(|| category.default_params())
    }

    pub fn categories(&self) -> impl Iterator<Item = PoiCategory> + '_ {
        self.trees.keys().copied()
    }

    pub fn poi(&self, idx: usize) -> &Poi {
        &self.pois[idx]
    }

    /// Nearest POI of one category: `(poi index, great-circle meters)`, or
    /// `None` when the category has no POIs. Exact ties go to the lowest
    /// `poi_id`.
    pub fn nearest_poi(&self, p: GeoPoint, category: PoiCategory) -> Option<(usize, f64)> {
        let tree = self.trees.get(&category)?;
        let query = to_cartesian(p);
        let mut iter = tree.nearest_neighbor_iter_with_distance_2(&query);
        let (first, first_d2) = iter.next()?;
        let mut best = (first.data, great_circle_distance(p, self.pois[first.data].center()));
        // Drain near-ties in chord space so the tie rule is deterministic.
        let tie_band = first_d2 + first_d2.max(1.0) * 1e-9 + 1e-6;
        for (item, d2) in iter {
            if d2 > tie_band {
                break;
            }
            let cand = (item.data, great_circle_distance(p, self.pois[item.data].center()));
            if cand.1 < best.1
                || (cand.1 == best.1 && self.pois[cand.0].poi_id < self.pois[best.0].poi_id)
            {
                best = cand;
            }
        }
        Some(best)
    }
}

/// Exhaustive-scan twin of [`PoiIndex::nearest_poi`].
pub fn scan_nearest_poi(
    pois: &[Poi],
    p: GeoPoint,
    category: PoiCategory,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, poi) in pois.iter().enumerate() {
        if poi.category != category {
            continue;
        }
        let d = great_circle_distance(p, poi.center());
        let better = match best {
            None => true,
            Some((bi, bd)) => d < bd || (d == bd && poi.poi_id < pois[bi].poi_id),
        };
        if better {
            best = Some((i, d));
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Road index
// ---------------------------------------------------------------------------

type RoadTreeItem = GeomWithData<Line<[f64; 3]>, (usize, usize)>;

/// Point-to-centerline distance index over road segment edges.
pub struct RoadIndex {
    segments: Vec<RoadSegment>,
    tree: RTree<RoadTreeItem>,
    max_half_width: f64,
}

impl RoadIndex {
    pub fn build(segments: Vec<RoadSegment>) -> Result<Self, SpatialError> {
        let mut items = Vec::new();
        for (si, seg) in segments.iter().enumerate() {
            if seg.centerline.len() < 2 {
                return Err(SpatialError::DegenerateSegment(seg.segment_id.clone()));
            }
            for (ei, w) in seg.centerline.windows(2).enumerate() {
                items.push(GeomWithData::new(
                    Line::new(to_cartesian(w[0]), to_cartesian(w[1])),
                    (si, ei),
                ));
            }
        }
        let max_half_width = segments
            .iter()
            .map(|s| s.half_width_m)
            .fold(0.0f64, f64::max);
        Ok(Self {
            segments,
            tree: RTree::bulk_load(items),
            max_half_width,
        })
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    /// Nearest road segment among `classes` (all when empty):
    /// `(segment index, meters)`. Ties go to the lowest `segment_id`.
    ///
    /// The R-tree yields edges in increasing chord distance, the same metric
    /// the per-edge function reports (modulo floating-point path), so the
    /// scan stops as soon as the next candidate's distance exceeds the best
    /// answer by more than rounding noise.
    pub fn distance_to_nearest_road(
        &self,
        p: GeoPoint,
        classes: &[RoadClass],
    ) -> Option<(usize, f64)> {
        let query = to_cartesian(p);
        let mut best: Option<(usize, f64)> = None;
        for (item, chord2) in self.tree.nearest_neighbor_iter_with_distance_2(&query) {
            if let Some((_, bd)) = best {
                if chord2_to_arc(chord2) > bd + tie_band(bd) {
                    break;
                }
            }
            let (si, ei) = item.data;
            let seg = &self.segments[si];
            if !classes.is_empty() && !classes.contains(&seg.road_class) {
                continue;
            }
            let edge = &seg.centerline[ei..ei + 2];
            let d = point_to_edge_distance(p, edge[0], edge[1]);
            let better = match best {
                None => true,
                Some((bi, bd)) => {
                    d < bd || (d == bd && seg.segment_id < self.segments[bi].segment_id)
                }
            };
            if better {
                best = Some((si, d));
            }
        }
        best
    }

    /// Whether the point sits on a road: strictly closer to some centerline
    /// than that segment's half width. Returns the matched segment index
    /// (nearest such segment, ties to the lowest `segment_id`).
    pub fn is_on_road(&self, p: GeoPoint) -> Option<usize> {
        if self.segments.is_empty() {
            return None;
        }
        let query = to_cartesian(p);
        let mut hit: Option<(usize, f64)> = None;
        for (item, chord2) in self.tree.nearest_neighbor_iter_with_distance_2(&query) {
            if chord2_to_arc(chord2) > self.max_half_width {
                break;
            }
            let (si, ei) = item.data;
            let seg = &self.segments[si];
            let edge = &seg.centerline[ei..ei + 2];
            let d = point_to_edge_distance(p, edge[0], edge[1]);
            if d < seg.half_width_m {
                let better = match hit {
                    None => true,
                    Some((hi, hd)) => {
                        d < hd || (d == hd && seg.segment_id < self.segments[hi].segment_id)
                    }
                };
                if better {
                    hit = Some((si, d));
                }
            }
        }
        hit.map(|(si, _)| si)
    }
}

/// Exhaustive-scan twin of [`RoadIndex::distance_to_nearest_road`].
pub fn scan_nearest_road(
    segments: &[RoadSegment],
    p: GeoPoint,
    classes: &[RoadClass],
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, seg) in segments.iter().enumerate() {
        if !classes.is_empty() && !classes.contains(&seg.road_class) {
            continue;
        }
        let d = point_to_segment_distance(p, seg);
        let better = match best {
            None => true,
            Some((bi, bd)) => d < bd || (d == bd && seg.segment_id < segments[bi].segment_id),
        };
        if better {
            best = Some((i, d));
        }
    }
    best
}

/// Exhaustive-scan twin of [`RoadIndex::is_on_road`].
pub fn scan_is_on_road(segments: &[RoadSegment], p: GeoPoint) -> Option<usize> {
    let mut hit: Option<(usize, f64)> = None;
    for (i, seg) in segments.iter().enumerate() {
        let d = point_to_segment_distance(p, seg);
        if d < seg.half_width_m {
            let better = match hit {
                None => true,
                Some((hi, hd)) => d < hd || (d == hd && seg.segment_id < segments[hi].segment_id),
            };
            if better {
                hit = Some((i, d));
            }
        }
    }
    hit.map(|(i, _)| i)
}

// ---------------------------------------------------------------------------
// City index
// ---------------------------------------------------------------------------

type CityTreeItem = GeomWithData<rstar::primitives::Rectangle<[f64; 2]>, usize>;

/// Point-in-city lookup over administrative polygons, pruned by lon/lat
/// bounding boxes.
pub struct CityIndex {
    regions: Vec<CityRegion>,
    tree: RTree<CityTreeItem>,
}

impl CityIndex {
    pub fn build(regions: Vec<CityRegion>) -> Result<Self, SpatialError> {
        let mut items = Vec::new();
        for (i, region) in regions.iter().enumerate() {
            for (ri, ring) in region.rings.iter().enumerate() {
                if ring.len() < 4 || ring.first() != ring.last() {
                    return Err(SpatialError::OpenRing {
                        city_id: region.city_id.clone(),
                        ring: ri,
                    });
                }
            }
            let mut min = [f64::INFINITY; 2];
            let mut max = [f64::NEG_INFINITY; 2];
            for ring in &region.rings {
                for p in ring {
                    min[0] = min[0].min(p.lon);
                    min[1] = min[1].min(p.lat);
                    max[0] = max[0].max(p.lon);
                    max[1] = max[1].max(p.lat);
                }
            }
            items.push(GeomWithData::new(
                rstar::primitives::Rectangle::from_corners(min, max),
                i,
            ));
        }
        Ok(Self {
            regions,
            tree: RTree::bulk_load(items),
        })
    }

    pub fn regions(&self) -> &[CityRegion] {
        &self.regions
    }

    /// All cities containing the point, in ascending `city_id` order.
    pub fn locate_all(&self, p: GeoPoint) -> Vec<usize> {
        let q = [p.lon, p.lat];
        let mut hits: Vec<usize> = self
            .tree
            .locate_all_at_point(&q)
            .filter(|item| region_contains(&self.regions[item.data], p))
            .map(|item| item.data)
            .collect();
        hits.sort_by(|&a, &b| self.regions[a].city_id.cmp(&self.regions[b].city_id));
        hits
    }

    /// City containing the point, or `None`. Overlapping polygons resolve
    /// deterministically to the lowest `city_id`; callers that care about
    /// ambiguity can use [`CityIndex::locate_all`].
    pub fn locate_city(&self, p: GeoPoint) -> Option<usize> {
        let hits = self.locate_all(p);
        if hits.len() > 1 {
            log::warn!(
                "point ({}, {}) lies in {} overlapping city polygons; keeping {}",
                p.lon,
                p.lat,
                hits.len(),
                self.regions[hits[0]].city_id
            );
        }
        hits.into_iter().next()
    }
}

/// Exhaustive-scan twin of [`CityIndex::locate_city`]: direct ray casting
/// over every polygon.
pub fn scan_locate_city(regions: &[CityRegion], p: GeoPoint) -> Option<usize> {
    let mut hits: Vec<usize> = regions
        .iter()
        .enumerate()
        .filter(|(_, r)| region_contains(r, p))
        .map(|(i, _)| i)
        .collect();
    hits.sort_by(|&a, &b| regions[a].city_id.cmp(&regions[b].city_id));
    hits.into_iter().next()
}
