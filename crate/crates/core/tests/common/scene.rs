//! A fixed 20-building / 12-street scene with hand-made cells, and the
//! oracle for every primary attribute over it.

use std::collections::{BTreeSet, HashMap};

use geo::{Coord, LineString, MultiPolygon, Polygon};
use morpholcz::ingest::{Building, StreetNetwork};
use morpholcz::tessellation::EtcCell;

use super::*;

pub const TICK_LEN: f64 = 50.0;
pub const TICK_SPACING: f64 = 10.0;

pub struct Scene {
    pub buildings: Vec<Building>,
    pub cells: Vec<EtcCell>,
    pub network: StreetNetwork,
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
    poly(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
}

fn rotated(cx: f64, cy: f64, w: f64, h: f64, deg: f64) -> Polygon {
    let (s, c) = deg.to_radians().sin_cos();
    let pts: Vec<(f64, f64)> = [(-w / 2.0, -h / 2.0), (w / 2.0, -h / 2.0), (w / 2.0, h / 2.0), (-w / 2.0, h / 2.0)]
        .iter()
        .map(|&(x, y)| (cx + x * c - y * s, cy + x * s + y * c))
        .collect();
    poly(&pts)
}

fn rotate_about(p: &[(f64, f64)], cx: f64, cy: f64, deg: f64) -> Polygon {
    let (s, c) = deg.to_radians().sin_cos();
    poly(&p.iter().map(|&(x, y)| (cx + (x - cx) * c - (y - cy) * s, cy + (x - cx) * s + (y - cy) * c)).collect::<Vec<_>>())
}

fn shift(p: Polygon, dx: f64, dy: f64) -> Polygon {
    let m = |r: &LineString| LineString::from(r.0.iter().map(|c| (c.x + dx, c.y + dy)).collect::<Vec<_>>());
    Polygon::new(m(p.exterior()), p.interiors().iter().map(m).collect())
}

/// Footprints per block in block-local coordinates: bottom-left, bottom-right,
/// top-left, top-middle, top-right.
fn block_buildings(block: usize) -> [Polygon; 5] {
    let l_shape = [(86.0, 58.0), (106.0, 58.0), (106.0, 68.0), (96.0, 68.0), (96.0, 84.0), (86.0, 84.0)];
    match block {
        0 => [
            rect(14.0, 12.0, 44.0, 30.0),
            rotated(87.0, 28.0, 20.0, 10.0, 23.0),
            rect(28.0, 60.0, 42.0, 80.0),
            rect(42.0, 64.0, 58.0, 86.0),
            poly(&l_shape),
        ],
        1 => [
            Polygon::new(rect(12.0, 10.0, 48.0, 44.0).exterior().clone(), vec![rect(22.0, 20.0, 36.0, 32.0).exterior().clone()]),
            poly(&[(70.0, 14.0), (100.0, 12.0), (106.0, 30.0), (88.0, 44.0), (68.0, 34.0)]),
            rect(24.0, 58.0, 42.0, 78.0),
            rect(42.0, 56.0, 78.0, 76.0),
            rect(78.0, 60.0, 96.0, 82.0),
        ],
        2 => [
            rotated(30.0, 26.0, 16.0, 11.0, -17.0),
            rotate_about(&[(77.0, 15.0), (97.0, 15.0), (97.0, 25.0), (87.0, 25.0), (87.0, 41.0), (77.0, 41.0)], 87.0, 28.0, 40.0),
            rect(16.0, 62.0, 26.0, 72.0),
            rect(48.0, 60.0, 72.0, 70.0),
            rotated(96.0, 72.0, 12.0, 20.0, 61.0),
        ],
        _ => [
            rect(10.0, 10.0, 50.0, 20.0),
            poly(&[(66.0, 12.0), (84.0, 10.0), (104.0, 18.0), (106.0, 36.0), (90.0, 44.0), (70.0, 40.0)]),
            rect(10.0, 56.0, 30.0, 88.0),
            rotated(60.0, 72.0, 18.0, 12.0, 75.0),
            rect(84.0, 54.0, 108.0, 90.0),
        ],
    }
}

/// Cells per block (local): the block interior inset 6 m from the street
/// axes, two cells below and three above.
fn block_cells() -> [Polygon; 5] {
    [
        rect(6.0, 6.0, 60.0, 50.0),
        rect(60.0, 6.0, 114.0, 50.0),
        rect(6.0, 50.0, 42.0, 94.0),
        rect(42.0, 50.0, 78.0, 94.0),
        rect(78.0, 50.0, 114.0, 94.0),
    ]
}

pub fn street_lines() -> Vec<LineString> {
    let mut v = Vec::new();
    for y in [0.0, 100.0, 200.0] {
        v.push(LineString::from(vec![(0.0, y), (120.0, y)]));
        if y == 0.0 {
            // slightly bent, so linearity is not trivially one
            v.push(LineString::from(vec![(120.0, y), (180.0, y - 2.0), (240.0, y)]));
        } else {
            v.push(LineString::from(vec![(120.0, y), (240.0, y)]));
        }
    }
    for x in [0.0, 120.0] {
        v.push(LineString::from(vec![(x, 0.0), (x, 100.0)]));
        v.push(LineString::from(vec![(x, 100.0), (x, 200.0)]));
    }
    v.push(LineString::from(vec![(240.0, 0.0), (240.0, 100.0)]));
    // a bent dead end
    v.push(LineString::from(vec![(120.0, 200.0), (140.0, 230.0), (130.0, 260.0)]));
    v
}

/// Nearest element with ties (within `tol`) resolved to the lowest id.
fn nearest(ds: &[f64], tol: f64) -> usize {
    let m = ds.iter().copied().fold(f64::INFINITY, f64::min);
    ds.iter().position(|&x| x <= m + tol).expect("non-empty")
}

pub fn scene() -> Scene {
    let network = StreetNetwork::from_lines(street_lines().into_iter().map(|l| (l, false)).collect(), 0.1);
    assert_eq!(network.segments.len(), 12);
    let origins = [(0.0, 0.0), (120.0, 0.0), (0.0, 100.0), (120.0, 100.0)];
    let mut buildings = Vec::new();
    let mut cells = Vec::new();
    for (b, &(ox, oy)) in origins.iter().enumerate() {
        for (k, (fp, cell)) in block_buildings(b).into_iter().zip(block_cells()).enumerate() {
            let id = b * 5 + k;
            buildings.push(Building { id, footprint: shift(fp, ox, oy) });
            cells.push(EtcCell {
                id,
                polygon: MultiPolygon(vec![shift(cell, ox, oy)]),
                building_id: id,
                enclosure_id: b,
                nearest_street_id: None,
                nearest_node_id: None,
                nearest_edge_id: None,
            });
        }
    }
    for c in cells.iter_mut() {
        let fp = MultiPolygon(vec![buildings[c.building_id].footprint.clone()]);
        let street_d: Vec<f64> = network
            .segments
            .iter()
            .map(|s| s.line.0.windows(2).flat_map(|w| edges(&fp).into_iter().map(move |(p, q)| seg_seg(p, q, w[0], w[1]))).fold(f64::INFINITY, f64::min))
            .collect();
        let node_d: Vec<f64> = network.nodes.iter().map(|n| edges(&fp).iter().map(|&(p, q)| point_seg(*n, p, q)).fold(f64::INFINITY, f64::min)).collect();
        c.nearest_street_id = Some(network.segments[nearest(&street_d, 1e-9)].id);
        c.nearest_node_id = Some(nearest(&node_d, 1e-9));
    }
    Scene { buildings, cells, network }
}

/// Queen contiguity: any two boundary points within 1e-4 m.
pub fn contiguity(cells: &[MultiPolygon]) -> Vec<BTreeSet<usize>> {
    let n = cells.len();
    let mut adj = vec![BTreeSet::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let touch = edges(&cells[i]).iter().any(|&(a, b)| edges(&cells[j]).iter().any(|&(c, e)| seg_seg(a, b, c, e) <= 1e-4));
            if touch {
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }
    adj
}

/// Ray cast from `p` along unit `u` up to `max` against every footprint edge.
fn ray(p: Coord, u: Coord, max: f64, fps: &[MultiPolygon]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for fp in fps {
        for (a, b) in edges(fp) {
            let s = Coord { x: b.x - a.x, y: b.y - a.y };
            let den = u.x * s.y - u.y * s.x;
            if den.abs() < 1e-15 {
                continue;
            }
            let w = Coord { x: a.x - p.x, y: a.y - p.y };
            let t = (w.x * s.y - w.y * s.x) / den;
            let v = (w.x * u.y - w.y * u.x) / den;
            if (0.0..=max).contains(&t) && (0.0..=1.0).contains(&v) && best.is_none_or(|x| t < x) {
                best = Some(t);
            }
        }
    }
    best
}

/// Street profile: `max(1, ⌊L/spacing⌋)` stations at the centers of equal
/// parts, a perpendicular ray of half the tick length on each side.
pub fn profile(line: &LineString, fps: &[MultiPolygon]) -> (f64, f64, f64) {
    let segs: Vec<(Coord, Coord)> = line.0.windows(2).map(|w| (w[0], w[1])).collect();
    let len: f64 = segs.iter().map(|s| d(s.0, s.1)).sum();
    let n = ((len / TICK_SPACING).floor() as usize).max(1);
    let half = TICK_LEN / 2.0;
    let (mut widths, mut open) = (Vec::new(), 0);
    for k in 0..n {
        let mut s = (k as f64 + 0.5) * len / n as f64;
        let mut at = None;
        for (i, &(a, b)) in segs.iter().enumerate() {
            let l = d(a, b);
            if s <= l || i + 1 == segs.len() {
                let u = Coord { x: (b.x - a.x) / l, y: (b.y - a.y) / l };
                at = Some((Coord { x: a.x + u.x * s, y: a.y + u.y * s }, u));
                break;
            }
            s -= l;
        }
        let (p, u) = at.expect("station on line");
        let mut w = 0.0;
        for nrm in [Coord { x: -u.y, y: u.x }, Coord { x: u.y, y: -u.x }] {
            match ray(p, nrm, half, fps) {
                Some(t) => w += t,
                None => {
                    w += half;
                    open += 1;
                }
            }
        }
        widths.push(w);
    }
    let m = mean(&widths);
    let sd = (widths.iter().map(|w| (w - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    (m, sd, open as f64 / (2 * n) as f64)
}

/// Square clustering, straight from its definition.
fn square_clustering(adj: &[BTreeSet<usize>], v: usize) -> f64 {
    let nb: Vec<usize> = adj[v].iter().copied().collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..nb.len() {
        for j in i + 1..nb.len() {
            let (u, w) = (nb[i], nb[j]);
            let q = adj[u].iter().filter(|x| **x != v && adj[w].contains(x)).count() as f64;
            let theta = if adj[u].contains(&w) { 1.0 } else { 0.0 };
            let a = (adj[u].len() as f64 - (1.0 + q + theta)) + (adj[w].len() as f64 - (1.0 + q + theta));
            num += q;
            den += a + q;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn weighted(values: &[f64], members: &[usize], w: &[f64]) -> f64 {
    let (mut a, mut b) = (0.0, 0.0);
    for &j in members {
        if !values[j].is_nan() {
            a += w[j] * values[j];
            b += w[j];
        }
    }
    if b > 0.0 {
        a / b
    } else {
        f64::NAN
    }
}

pub const SHAPE: [&str; 11] = [
    "longest_axis",
    "circular_compactness",
    "square_compactness",
    "compactness_weighted_axis",
    "convexity",
    "elongation",
    "equivalent_rectangular_index",
    "facade_ratio",
    "fractal_dimension",
    "rectangularity",
    "shape_index",
];

/// Every primary attribute per cell, keyed by name.
pub fn oracle(sc: &Scene) -> HashMap<String, Vec<f64>> {
    let fps: Vec<MultiPolygon> = sc.buildings.iter().map(|b| MultiPolygon(vec![b.footprint.clone()])).collect();
    let nb = fps.len();
    let mut bld: HashMap<String, Vec<f64>> = HashMap::new();
    let b_area: Vec<f64> = fps.iter().map(area).collect();
    bld.insert("bld_area".into(), b_area.clone());
    let court: Vec<f64> = fps.iter().map(|m| rings(m).iter().filter(|r| !r.1).map(|r| ring_area_abs(&r.0)).sum()).collect();
    bld.insert("bld_courtyard_area".into(), court.clone());
    bld.insert("bld_courtyard_index".into(), (0..nb).map(|i| court[i] / (b_area[i] + court[i])).collect());
    let shapes: Vec<[f64; 11]> = fps.iter().map(shape_row).collect();
    for (k, m) in SHAPE.iter().enumerate() {
        bld.insert(format!("bld_{m}"), shapes.iter().map(|s| s[k]).collect());
    }
    // touching buildings
    let mut touch = vec![BTreeSet::new(); nb];
    for i in 0..nb {
        for j in i + 1..nb {
            if footprint_distance(&fps[i], &fps[j]) <= 1e-6 {
                touch[i].insert(j);
                touch[j].insert(i);
            }
        }
    }
    let comp = components(&touch);
    let shared: Vec<f64> = (0..nb).map(|i| touch[i].iter().map(|&j| shared_length(&fps[i], &fps[j], 1e-6)).sum()).collect();
    bld.insert("bld_shared_walls".into(), shared.clone());
    // union perimeter = member perimeters minus both sides of every shared wall
    let perim_wall: Vec<f64> = (0..nb)
        .map(|i| {
            let members: Vec<usize> = (0..nb).filter(|&j| comp[j] == comp[i]).collect();
            members.iter().map(|&j| perimeter(&fps[j])).sum::<f64>() - members.iter().map(|&j| shared[j]).sum::<f64>()
        })
        .collect();
    bld.insert("bld_perimeter_wall".into(), perim_wall);
    // street alignment through the owning cell's street link
    let street_of: Vec<Option<usize>> = (0..nb).map(|i| sc.cells.iter().find(|c| c.building_id == i).and_then(|c| c.nearest_street_id)).collect();
    let street_orient = |sid: usize| {
        let l = &sc.network.segments.iter().find(|s| s.id == sid).unwrap().line;
        let (a, b) = (l.0[0], *l.0.last().unwrap());
        (b.x - a.x).atan2(b.y - a.y).to_degrees().rem_euclid(180.0).rem_euclid(90.0)
    };
    bld.insert(
        "bld_street_alignment".into(),
        (0..nb).map(|i| street_of[i].map_or(f64::NAN, |s| fold45(mrr(&vertices(&fps[i])).orientation, street_orient(s)))).collect(),
    );
    // centroid neighborhoods
    let cen: Vec<Coord> = fps.iter().map(centroid).collect();
    let band = |i: usize, r: f64| -> Vec<usize> { (0..nb).filter(|&j| d(cen[i], cen[j]) <= r).collect() };
    for r in [20.0, 100.0, 200.0] {
        let tag = r as u32;
        bld.insert(format!("bld_neighbors_d{tag}"), (0..nb).map(|i| (band(i, r).len() - 1) as f64).collect());
        bld.insert(
            format!("bld_neighbor_distance_d{tag}"),
            (0..nb).map(|i| mean(&band(i, r).into_iter().filter(|&j| j != i).map(|j| d(cen[i], cen[j])).collect::<Vec<_>>())).collect(),
        );
    }
    for k in [10usize, 20, 30] {
        bld.insert(
            format!("bld_neighbor_distance_knn{k}"),
            (0..nb)
                .map(|i| {
                    let mut ds: Vec<f64> = (0..nb).filter(|&j| j != i).map(|j| d(cen[i], cen[j])).collect();
                    ds.sort_by(f64::total_cmp);
                    ds.truncate(k);
                    mean(&ds)
                })
                .collect(),
        );
    }
    bld.insert(
        "bld_adjacency".into(),
        (0..nb)
            .map(|i| {
                let b = band(i, 200.0);
                let c: BTreeSet<usize> = b.iter().map(|&j| comp[j]).collect();
                c.len() as f64 / b.len() as f64
            })
            .collect(),
    );
    bld.insert(
        "bld_interbuilding_distance".into(),
        (0..nb)
            .map(|i| {
                let b = band(i, 200.0);
                let mut ds = Vec::new();
                for x in 0..b.len() {
                    for y in x + 1..b.len() {
                        ds.push(footprint_distance(&fps[b[x]], &fps[b[y]]));
                    }
                }
                mean(&ds)
            })
            .collect(),
    );
    let bases: Vec<String> = std::iter::once("bld_perimeter_wall".to_string())
        .chain(SHAPE.iter().map(|m| format!("bld_{m}")))
        .chain(std::iter::once("bld_street_alignment".to_string()))
        .collect();
    for base in bases {
        for r in [100.0, 200.0] {
            let v = bld[&base].clone();
            bld.insert(format!("{base}_w{}", r as u32), (0..nb).map(|i| weighted(&v, &band(i, r), &b_area)).collect());
        }
    }

    // cells
    let cps: Vec<MultiPolygon> = sc.cells.iter().map(|c| c.polygon.clone()).collect();
    let nc = cps.len();
    let adj = contiguity(&cps);
    let mut etc: HashMap<String, Vec<f64>> = HashMap::new();
    let c_area: Vec<f64> = cps.iter().map(area).collect();
    etc.insert("etc_area".into(), c_area.clone());
    let shapes: Vec<[f64; 11]> = cps.iter().map(shape_row).collect();
    for (k, m) in SHAPE.iter().enumerate() {
        etc.insert(format!("etc_{m}"), shapes.iter().map(|s| s[k]).collect());
    }
    etc.insert("etc_car".into(), (0..nc).map(|i| b_area[sc.cells[i].building_id] / c_area[i]).collect());
    let ccen: Vec<Coord> = cps.iter().map(centroid).collect();
    for k in [1usize, 2, 3] {
        etc.insert(format!("etc_neighbors_t{k}"), (0..nc).map(|i| within_steps(&adj, i, k).len() as f64).collect());
    }
    for k in [2usize, 3] {
        etc.insert(
            format!("etc_neighbor_distance_t{k}"),
            (0..nc).map(|i| mean(&within_steps(&adj, i, k).iter().map(|&j| d(ccen[i], ccen[j])).collect::<Vec<_>>())).collect(),
        );
    }
    etc.insert("etc_granularity".into(), (0..nc).map(|i| c_area[i] + within_steps(&adj, i, 1).iter().map(|&j| c_area[j]).sum::<f64>()).collect());
    let bases: Vec<String> = SHAPE.iter().map(|m| format!("etc_{m}")).chain(std::iter::once("etc_car".to_string())).collect();
    for base in bases {
        let v = etc[&base].clone();
        etc.insert(
            format!("{base}_w3"),
            (0..nc)
                .map(|i| {
                    let mut m = within_steps(&adj, i, 3);
                    m.push(i);
                    weighted(&v, &m, &c_area)
                })
                .collect(),
        );
    }

    // streets
    let net = &sc.network;
    let mut st: HashMap<String, Vec<f64>> = HashMap::new();
    let len: Vec<f64> = net.segments.iter().map(|s| s.line.0.windows(2).map(|w| d(w[0], w[1])).sum()).collect();
    st.insert("str_length".into(), len.clone());
    st.insert(
        "str_linearity".into(),
        net.segments.iter().zip(&len).map(|(s, l)| d(s.line.0[0], *s.line.0.last().unwrap()) / l).collect(),
    );
    let prof: Vec<(f64, f64, f64)> = net.segments.iter().map(|s| profile(&s.line, &fps)).collect();
    st.insert("str_width".into(), prof.iter().map(|p| p.0).collect());
    st.insert("str_width_deviation".into(), prof.iter().map(|p| p.1).collect());
    st.insert("str_openness".into(), prof.iter().map(|p| p.2).collect());

    // nodes
    let nn = net.nodes.len();
    let e: Vec<(usize, usize, f64)> = net.segments.iter().zip(&len).map(|(s, l)| (s.start_node, s.end_node, *l)).collect();
    let degree: Vec<usize> = (0..nn).map(|v| e.iter().map(|x| (x.0 == v) as usize + (x.1 == v) as usize).sum()).collect();
    let mut nd: HashMap<String, Vec<f64>> = HashMap::new();
    nd.insert("node_degree".into(), degree.iter().map(|&x| x as f64).collect());
    nd.insert(
        "node_mean_distance".into(),
        (0..nn).map(|v| mean(&e.iter().filter(|x| x.0 == v || x.1 == v).map(|x| x.2).collect::<Vec<_>>())).collect(),
    );
    let simple: Vec<BTreeSet<usize>> = (0..nn)
        .map(|v| e.iter().filter_map(|x| if x.0 == v && x.1 != v { Some(x.1) } else if x.1 == v && x.0 != v { Some(x.0) } else { None }).collect())
        .collect();
    nd.insert("node_squares_clustering".into(), (0..nn).map(|v| square_clustering(&simple, v)).collect());
    let dist = all_pairs(nn, &e);
    for r in [5.0, 400.0] {
        let tag = r as u32;
        let mut cols: HashMap<&str, Vec<f64>> = HashMap::new();
        for v in 0..nn {
            let nodes: Vec<usize> = (0..nn).filter(|&u| dist[v][u] <= r).collect();
            let vals: [(&str, f64); 7] = if nodes.len() <= 1 {
                [
                    ("node_mean_degree", f64::NAN),
                    ("node_density", f64::NAN),
                    ("node_edge_node_ratio", f64::NAN),
                    ("node_culdesac_length", f64::NAN),
                    ("node_cyclomatic", f64::NAN),
                    ("node_gamma", f64::NAN),
                    ("node_meshedness", f64::NAN),
                ]
            } else {
                let inn = |u: usize| nodes.contains(&u);
                let sub: Vec<&(usize, usize, f64)> = e.iter().filter(|x| inn(x.0) && inn(x.1)).collect();
                let (vv, ee) = (nodes.len() as f64, sub.len() as f64);
                let total: f64 = sub.iter().map(|x| x.2).sum();
                let cul: f64 = sub.iter().filter(|x| degree[x.0] == 1 || degree[x.1] == 1).map(|x| x.2).sum();
                let mut sadj = vec![BTreeSet::new(); nn];
                for x in &sub {
                    sadj[x.0].insert(x.1);
                    sadj[x.1].insert(x.0);
                }
                let lab = components(&sadj);
                let p = nodes.iter().map(|&u| lab[u]).collect::<BTreeSet<_>>().len() as f64;
                [
                    ("node_mean_degree", nodes.iter().map(|&u| degree[u] as f64).sum::<f64>() / vv),
                    ("node_density", vv / (total / 1000.0)),
                    ("node_edge_node_ratio", ee / vv),
                    ("node_culdesac_length", cul),
                    ("node_cyclomatic", ee - vv + p),
                    ("node_gamma", if vv >= 3.0 { ee / (3.0 * (vv - 2.0)) } else { f64::NAN }),
                    ("node_meshedness", if vv >= 3.0 { (ee - vv + 1.0) / (2.0 * vv - 5.0) } else { f64::NAN }),
                ]
            };
            for (name, val) in vals {
                cols.entry(name).or_default().push(val);
            }
        }
        for (name, v) in cols {
            nd.insert(format!("{name}_r{tag}"), v);
        }
    }

    // join onto cells
    let mut out: HashMap<String, Vec<f64>> = HashMap::new();
    let pick = |m: &HashMap<String, Vec<f64>>, name: &str, at: Option<usize>| at.map_or(f64::NAN, |i| m[name][i]);
    for name in bld.keys() {
        out.insert(name.clone(), sc.cells.iter().map(|c| pick(&bld, name, Some(c.building_id))).collect());
    }
    for name in etc.keys() {
        out.insert(name.clone(), (0..nc).map(|i| etc[name][i]).collect());
    }
    for name in st.keys() {
        let sidx = |sid: usize| net.segments.iter().position(|s| s.id == sid);
        out.insert(name.clone(), sc.cells.iter().map(|c| pick(&st, name, c.nearest_street_id.and_then(sidx))).collect());
    }
    for name in nd.keys() {
        out.insert(name.clone(), sc.cells.iter().map(|c| pick(&nd, name, c.nearest_node_id)).collect());
    }
    out
}

/// Runs the library over the scene and lists every attribute value that
/// disagrees with the oracle (ray-cast street profile values at 1e-3, the rest
/// at 1e-6).
pub fn library_mismatches(sc: &Scene) -> Vec<String> {
    use morpholcz::context::build_contiguity;
    use morpholcz::morphometrics::catalog::catalog;
    use morpholcz::morphometrics::{primary_matrix, MorphometricsConfig};

    let polys: Vec<MultiPolygon> = sc.cells.iter().map(|c| c.polygon.clone()).collect();
    let graph = build_contiguity(&polys);
    let cfg = MorphometricsConfig { tick_len: TICK_LEN, tick_spacing: TICK_SPACING, ..Default::default() };
    let table = primary_matrix(&sc.buildings, &sc.cells, &sc.network, &graph, &cfg).expect("primary matrix");
    let expected = oracle(sc);
    let mut bad = Vec::new();
    if table.n_cols() != 107 || expected.len() != 107 {
        bad.push(format!("{} library columns, {} oracle columns", table.n_cols(), expected.len()));
        return bad;
    }
    for (k, m) in catalog().iter().enumerate() {
        let tol = if m.name.starts_with("str_width") || m.name == "str_openness" { 1e-3 } else { 1e-6 };
        for r in 0..table.n_rows() {
            let (a, e) = (table.get(r, k), expected[&m.name][r]);
            if !close(a, e, tol) {
                bad.push(format!("{} row {r}: {a} vs {e}", m.name));
            }
        }
    }
    bad
}
