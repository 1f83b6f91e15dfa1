// Validation bookkeeping: a class held by a single reference polygon is
// split in two so it can appear on both sides of a split; polygons are then
// dealt into stratified folds, points take the class and fold of the polygon
// they fall in, and predictions are scored per fold and in aggregate.

use std::error::Error;

use geo::{Coord, MultiPolygon, Rect};
use morpholcz::evaluation::{aggregate_report, label_points, scores, split_singletons, stratified_folds, FoldWeight, LczClass, ReferencePolygon};

fn square(x: f64, y: f64, s: f64) -> MultiPolygon {
    MultiPolygon(vec![Rect::new(Coord { x, y }, Coord { x: x + s, y: y + s }).to_polygon()])
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    // Five compact, five open low-rise, one water polygon.
    let mut refs = Vec::new();
    for i in 0..5 {
        refs.push(ReferencePolygon::new(i, square(i as f64 * 200.0, 0.0, 150.0 + 10.0 * i as f64), LczClass::new(3)?));
        refs.push(ReferencePolygon::new(10 + i, square(i as f64 * 200.0, 300.0, 180.0), LczClass::new(6)?));
    }
    refs.push(ReferencePolygon::new(99, MultiPolygon(vec![Rect::new(Coord { x: 0.0, y: 600.0 }, Coord { x: 900.0, y: 700.0 }).to_polygon()]), "G".parse()?));
    let refs = split_singletons(&refs)?;
    println!("{} reference polygons after splitting singleton classes", refs.len());

    let folds = stratified_folds(&refs, FoldWeight::Area, 5, 42)?;
    for f in 0..5 {
        let members: Vec<String> = refs.iter().filter(|r| folds.folds[&r.id] == f).map(|r| format!("{}#{}", r.lcz, r.id)).collect();
        println!("fold {f}: {}", members.join(" "));
    }

    let points: Vec<Coord> = (0..40).flat_map(|i| (0..14).map(move |j| Coord { x: 5.0 + i as f64 * 25.0, y: 5.0 + j as f64 * 50.0 })).collect();
    let labels = label_points(&points, &refs, &folds);
    println!("{} of {} points fall inside a reference polygon", labels.iter().flatten().count(), points.len());

    // A classifier that mistakes every fifth compact point for open low-rise.
    let mut per_fold = Vec::new();
    for f in 0..5 {
        let truth: Vec<LczClass> = labels.iter().flatten().filter(|l| l.fold == f).map(|l| l.class).collect();
        let pred: Vec<LczClass> = truth
            .iter()
            .enumerate()
            .map(|(i, c)| if c.code() == 3 && i % 5 == 0 { LczClass::new(6) } else { Ok(*c) })
            .collect::<Result<_, _>>()?;
        if !truth.is_empty() {
            per_fold.push(scores(&truth, &pred)?);
        }
    }
    let report = aggregate_report(per_fold)?;
    println!("OA {:.3} (spread {:.3}), weighted F1 {:.3}", report.oa.mean, report.oa.spread, report.f1.mean);
    println!("F1 urban {:?}, F1 natural {:?}", report.f1_urban.map(|s| s.mean), report.f1_natural.map(|s| s.mean));
    print!("{}", report.confusion.to_csv());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
