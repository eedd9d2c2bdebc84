// Generate random instances, write them in TSPLib/CVRPLib form and parse
// them back.

use agfn::instance::{generate, parse_auto, to_lib_format, GenConfig, Instance, ProblemKind};

pub fn run_example() -> agfn::Result<()> {
    let tsp = generate(&GenConfig::standard(20, 7), ProblemKind::Tsp)?;
    let cvrp = generate(&GenConfig::standard(20, 7), ProblemKind::Cvrp)?;
    println!("tsp: {} nodes, identity tour length {:.4}", tsp.n_nodes(), tsp.closed_length(&(0..20).collect::<Vec<_>>()));
    println!(
        "cvrp: {} customers, total demand {}, capacity {}",
        cvrp.n_nodes() - 1,
        cvrp.demands.iter().sum::<u32>(),
        cvrp.capacity
    );

    for inst in [&tsp, &cvrp] {
        let text = to_lib_format(inst);
        let back = parse_auto(text.as_bytes())?;
        assert_eq!(&back.coords, &inst.coords);
        assert_eq!(&back.demands, &inst.demands);
        println!("{} round-trips through {} bytes of library text", inst.kind, text.len());
    }

    let json = cvrp.to_json()?;
    assert_eq!(Instance::from_json(&json)?, cvrp);

    let fixture = "NAME : tri\nTYPE : TSP\nDIMENSION : 3\nEDGE_WEIGHT_TYPE : EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 3 0\n3 0 4\nEOF\n";
    let tri = parse_auto(fixture.as_bytes())?;
    println!("fixture '{}' perimeter {}", tri.name, tri.closed_length(&[0, 1, 2]));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
