//! Completes a small set of darker/lighter judgments through shared neighbours.

use reflectance_prior::annotations::{augment, ClosureOptions, ComparisonGraph, Judgment, Point, Provenance, Relation};

fn main() -> reflectance_prior::Result<()> {
    let points = (0..5).map(|id| Point { id, x: 0.2 * id as f64, y: 0.5 }).collect();
    let g = ComparisonGraph::new(
        "example",
        points,
        vec![
            Judgment::original(0, 1, Relation::Less, 0.9),
            Judgment::original(1, 2, Relation::Equal, 0.8),
            Judgment::original(2, 3, Relation::Less, 0.7),
            Judgment::original(3, 4, Relation::Less, 0.3),
        ],
    )?;
    let out = augment(&g, 0.5, &ClosureOptions::default());
    println!("{} rounds, {} judgments added", out.rounds, out.added);
    for j in &out.graph.judgments {
        if j.provenance == Provenance::Transitive && j.i < j.j {
            println!("  derived {} {:?} {} (confidence {:.1})", j.i, j.relation, j.j, j.confidence);
        }
    }
    // the low-confidence judgment on (3, 4) was dropped before closure
    assert!(out.graph.judgment(3, 4).is_none());
    Ok(())
}
