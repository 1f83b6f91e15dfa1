//! Spatial distribution and intensity characters, neighborhood queries and
//! area weighting.

use std::collections::HashMap;

use geo::Coord;
use rayon::prelude::*;
use rstar::primitives::GeomWithData;
use rstar::RTree;

use crate::geom;

type Pt = GeomWithData<[f64; 2], usize>;

/// Centroid index supporting metric-band and k-nearest queries.
pub struct CentroidIndex {
    tree: RTree<Pt>,
    pub centroids: Vec<Coord>,
}

impl CentroidIndex {
    pub fn new(centroids: Vec<Coord>) -> Self {
        let tree = RTree::bulk_load(centroids.iter().enumerate().map(|(i, c)| Pt::new([c.x, c.y], i)).collect());
        CentroidIndex { tree, centroids }
    }

    /// Indices with centroid distance ≤ r, including `i`, ascending.
    pub fn band(&self, i: usize, r: f64) -> Vec<usize> {
        let c = self.centroids[i];
        let mut v: Vec<usize> = self
            .tree
            .locate_within_distance([c.x, c.y], r * r)
            .map(|p| p.data)
            .filter(|&j| j == i || geom::dist(self.centroids[j], c) <= r)
            .collect();
        if !v.contains(&i) {
            v.push(i);
        }
        v.sort_unstable();
        v
    }

    /// The k nearest other objects (fewer when fewer exist).
    pub fn knn(&self, i: usize, k: usize) -> Vec<usize> {
        let c = self.centroids[i];
        self.tree.nearest_neighbor_iter(&[c.x, c.y]).map(|p| p.data).filter(|&j| j != i).take(k).collect()
    }

    pub fn mean_distance(&self, i: usize, others: &[usize]) -> f64 {
        let c = self.centroids[i];
        let ds: Vec<f64> = others.iter().filter(|&&j| j != i).map(|&j| geom::dist(self.centroids[j], c)).collect();
        if ds.is_empty() {
            f64::NAN
        } else {
            ds.iter().sum::<f64>() / ds.len() as f64
        }
    }
}

/// Area-weighted mean of `values` over `members`; missing values are skipped.
/// An empty neighborhood returns the object's own value.
pub fn weighted_mean(own: f64, members: &[usize], values: &[f64], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &j in members {
        let v = values[j];
        if v.is_nan() {
            continue;
        }
        num += weights[j] * v;
        den += weights[j];
    }
    if members.is_empty() {
        own
    } else if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

/// Street alignment: orientation difference folded to [0°, 45°].
pub fn alignment(building_deg: f64, street_deg: f64) -> f64 {
    let d = (building_deg - street_deg).abs().rem_euclid(90.0);
    d.min(90.0 - d)
}

/// Fold an azimuth to [0°, 90°).
pub fn fold90(deg: f64) -> f64 {
    deg.rem_euclid(90.0)
}

/// Pairs of buildings whose footprints touch (distance ≤ tol).
pub fn touching_pairs(segments: &[Vec<(Coord, Coord)>], bboxes: &[geo::Rect], tol: f64) -> Vec<(usize, usize)> {
    #[derive(Clone, Copy)]
    struct B {
        i: usize,
        env: rstar::AABB<[f64; 2]>,
    }
    impl rstar::RTreeObject for B {
        type Envelope = rstar::AABB<[f64; 2]>;
        fn envelope(&self) -> Self::Envelope {
            self.env
        }
    }
    let items: Vec<B> = bboxes
        .iter()
        .enumerate()
        .map(|(i, r)| B {
            i,
            env: rstar::AABB::from_corners([r.min().x - tol, r.min().y - tol], [r.max().x + tol, r.max().y + tol]),
        })
        .collect();
    let tree = RTree::bulk_load(items.clone());
    let mut out: Vec<(usize, usize)> = items
        .par_iter()
        .flat_map_iter(|a| {
            tree.locate_in_envelope_intersecting(&a.env)
                .filter(|b| b.i > a.i && segments_distance(&segments[a.i], &segments[b.i]) <= tol)
                .map(|b| (a.i, b.i))
                .collect::<Vec<_>>()
        })
        .collect();
    out.sort_unstable();
    out
}

/// Minimum distance between two sets of boundary segments.
pub fn segments_distance(a: &[(Coord, Coord)], b: &[(Coord, Coord)]) -> f64 {
    let mut best = f64::INFINITY;
    for &(p, q) in a {
        for &(r, s) in b {
            let d = geom::segment_segment_distance(p, q, r, s);
            if d < best {
                best = d;
            }
        }
    }
    best
}

/// Connected-component label per object for an undirected pair list.
pub fn component_labels(n: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

/// Mean footprint-to-footprint distance over all pairs in each band.
///
/// Bands are processed in spatial tiles; each tile fills a local distance
/// matrix on demand so each pair is measured once per tile.
pub fn mean_pairwise_distance(bands: &[Vec<usize>], centroids: &[Coord], segments: &[Vec<(Coord, Coord)>], tile: f64) -> Vec<f64> {
    let mut tiles: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, c) in centroids.iter().enumerate() {
        tiles.entry(((c.x / tile).floor() as i64, (c.y / tile).floor() as i64)).or_default().push(i);
    }
    let mut keys: Vec<_> = tiles.keys().copied().collect();
    keys.sort_unstable();
    let results: Vec<Vec<(usize, f64)>> = keys
        .par_iter()
        .map(|k| {
            let members = &tiles[k];
            let mut local: HashMap<usize, usize> = HashMap::new();
            for &i in members {
                for &j in &bands[i] {
                    let n = local.len();
                    local.entry(j).or_insert(n);
                }
            }
            let m = local.len();
            let mut cache = vec![f64::NAN; m * m];
            let mut out = Vec::with_capacity(members.len());
            for &i in members {
                let s = &bands[i];
                if s.len() < 2 {
                    out.push((i, f64::NAN));
                    continue;
                }
                let mut sum = 0.0;
                let mut cnt = 0usize;
                for (x, &a) in s.iter().enumerate() {
                    let la = local[&a];
                    for &b in &s[x + 1..] {
                        let lb = local[&b];
                        let slot = la.min(lb) * m + la.max(lb);
                        let mut d = cache[slot];
                        if d.is_nan() {
                            d = segments_distance(&segments[a], &segments[b]);
                            cache[slot] = d;
                        }
                        sum += d;
                        cnt += 1;
                    }
                }
                out.push((i, sum / cnt as f64));
            }
            out
        })
        .collect();
    let mut out = vec![f64::NAN; centroids.len()];
    for r in results {
        for (i, v) in r {
            out[i] = v;
        }
    }
    out
}
