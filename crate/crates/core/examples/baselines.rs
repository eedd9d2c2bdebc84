// Nearest neighbour, 2-opt and exact Held-Karp on small instances, a gap
// report, and a lookup in the bundled published results.

use std::collections::BTreeMap;

use agfn::baselines::{gap_report, held_karp, nearest_neighbor, nearest_neighbor_two_opt, ReferenceData};
use agfn::instance::{generate, GenConfig, ProblemKind};

pub fn run_example() -> agfn::Result<()> {
    let mut objs: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for seed in 0..8 {
        let inst = generate(&GenConfig::standard(10, seed), ProblemKind::Tsp)?;
        objs.entry("held_karp".into()).or_default().push(held_karp(&inst)?.length);
        objs.entry("nearest_neighbor".into()).or_default().push(nearest_neighbor(&inst).length);
        objs.entry("nn_two_opt".into()).or_default().push(nearest_neighbor_two_opt(&inst).length);
    }
    let report = gap_report(&objs, "held_karp")?;
    for (method, gap) in &report.mean_gap {
        println!("{method:<18} mean obj {:.4}  gap {gap:>6.2}%", report.mean_obj[method]);
    }

    let published = ReferenceData::load()?;
    if let Some(e) = published.lookup(ProblemKind::Tsp, 200, "LKH-3(10000)") {
        println!("published LKH-3(10000) on TSP-200: {:?}", e.obj);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
