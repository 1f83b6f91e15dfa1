//! The catalog of the 107 primary morphometric attributes.

use std::sync::OnceLock;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Element {
    Building,
    Etc,
    Street,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dimension,
    Shape,
    Distribution,
    Intensity,
    Connectivity,
}

/// Neighborhood over which a metric is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Scale {
    None,
    /// Buildings whose centroid lies within the given distance (m).
    Dist(u32),
    /// The k nearest buildings.
    Knn(u32),
    /// Cells within the given number of contiguity steps.
    Topo(u32),
    /// Nodes within the given network distance (m).
    Radius(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricDef {
    pub name: String,
    pub element: Element,
    pub family: Family,
    pub scale: Scale,
    /// Set for area-weighted variants: the name of the unweighted metric.
    pub weighted_of: Option<String>,
}

pub const N_PRIMARY: usize = 107;

/// Shape metrics computed for both buildings and cells.
pub const SHAPE_METRICS: [&str; 11] = [
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

fn def(name: &str, element: Element, family: Family, scale: Scale) -> MetricDef {
    MetricDef { name: name.to_string(), element, family, scale, weighted_of: None }
}

fn weighted(base: &str, element: Element, family: Family, scale: Scale) -> MetricDef {
    let suffix = match scale {
        Scale::Dist(r) => format!("w{r}"),
        Scale::Topo(k) => format!("w{k}"),
        _ => unreachable!("area weighting uses metric bands or contiguity steps"),
    };
    MetricDef {
        name: format!("{base}_{suffix}"),
        element,
        family,
        scale,
        weighted_of: Some(base.to_string()),
    }
}

fn shape_family(m: &str) -> Family {
    if m == "longest_axis" {
        Family::Dimension
    } else {
        Family::Shape
    }
}

fn build() -> Vec<MetricDef> {
    use Element::*;
    use Family::*;
    let mut v = vec![
        def("bld_area", Building, Dimension, Scale::None),
        def("etc_area", Etc, Dimension, Scale::None),
        def("bld_courtyard_area", Building, Dimension, Scale::None),
        def("bld_courtyard_index", Building, Shape, Scale::None),
        def("bld_perimeter_wall", Building, Dimension, Scale::None),
        weighted("bld_perimeter_wall", Building, Dimension, Scale::Dist(100)),
        weighted("bld_perimeter_wall", Building, Dimension, Scale::Dist(200)),
    ];
    for m in SHAPE_METRICS {
        let f = shape_family(m);
        let b = format!("bld_{m}");
        let e = format!("etc_{m}");
        v.push(def(&b, Building, f, Scale::None));
        v.push(def(&e, Etc, f, Scale::None));
        v.push(weighted(&b, Building, f, Scale::Dist(100)));
        v.push(weighted(&b, Building, f, Scale::Dist(200)));
        v.push(weighted(&e, Etc, f, Scale::Topo(3)));
    }
    v.extend([
        def("bld_adjacency", Building, Distribution, Scale::Dist(200)),
        def("bld_interbuilding_distance", Building, Distribution, Scale::Dist(200)),
        def("bld_shared_walls", Building, Distribution, Scale::None),
        def("bld_street_alignment", Building, Distribution, Scale::None),
        weighted("bld_street_alignment", Building, Distribution, Scale::Dist(100)),
        weighted("bld_street_alignment", Building, Distribution, Scale::Dist(200)),
        def("etc_car", Etc, Intensity, Scale::None),
        weighted("etc_car", Etc, Intensity, Scale::Topo(3)),
        def("etc_granularity", Etc, Intensity, Scale::Topo(1)),
    ]);
    for r in [20, 100, 200] {
        v.push(def(&format!("bld_neighbors_d{r}"), Building, Intensity, Scale::Dist(r)));
    }
    for k in [1, 2, 3] {
        v.push(def(&format!("etc_neighbors_t{k}"), Etc, Intensity, Scale::Topo(k)));
    }
    for r in [20, 100, 200] {
        v.push(def(&format!("bld_neighbor_distance_d{r}"), Building, Distribution, Scale::Dist(r)));
    }
    for k in [10, 20, 30] {
        v.push(def(&format!("bld_neighbor_distance_knn{k}"), Building, Distribution, Scale::Knn(k)));
    }
    for k in [2, 3] {
        v.push(def(&format!("etc_neighbor_distance_t{k}"), Etc, Distribution, Scale::Topo(k)));
    }
    v.extend([
        def("str_length", Street, Dimension, Scale::None),
        def("str_linearity", Street, Shape, Scale::None),
        def("str_width", Street, Dimension, Scale::None),
        def("str_width_deviation", Street, Dimension, Scale::None),
        def("str_openness", Street, Distribution, Scale::None),
        def("node_degree", Node, Connectivity, Scale::None),
    ]);
    let radius_pair = |v: &mut Vec<MetricDef>, base: &str| {
        for r in [5, 400] {
            v.push(def(&format!("{base}_r{r}"), Node, Connectivity, Scale::Radius(r)));
        }
    };
    radius_pair(&mut v, "node_mean_degree");
    v.push(def("node_mean_distance", Node, Connectivity, Scale::None));
    radius_pair(&mut v, "node_density");
    v.push(def("node_squares_clustering", Node, Connectivity, Scale::None));
    for base in ["node_edge_node_ratio", "node_culdesac_length", "node_cyclomatic", "node_gamma", "node_meshedness"] {
        radius_pair(&mut v, base);
    }
    v
}

/// All primary metrics in canonical column order.
pub fn catalog() -> &'static [MetricDef] {
    static CATALOG: OnceLock<Vec<MetricDef>> = OnceLock::new();
    CATALOG.get_or_init(build)
}

pub fn metric_index(name: &str) -> Option<usize> {
    catalog().iter().position(|m| m.name == name)
}

pub fn catalog_json() -> String {
    serde_json::to_string_pretty(catalog()).expect("catalog serializes")
}
