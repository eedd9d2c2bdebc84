mod instances_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/instances.rs"));
}

mod sparse_graph_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/sparse_graph.rs"));
}

mod autodiff_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/autodiff.rs"));
}

mod heatmap_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/heatmap.rs"));
}

mod decode_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/decode.rs"));
}

mod tb_loss_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/tb_loss.rs"));
}

mod discriminator_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/discriminator.rs"));
}

mod local_search_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/local_search.rs"));
}

mod baselines_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/baselines.rs"));
}

mod train_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train.rs"));
}

mod pipeline_example {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/pipeline.rs"));
}

#[test]
fn instances_example_runs() {
    instances_example::run_example().expect("instances example should run");
}

#[test]
fn sparse_graph_example_runs() {
    sparse_graph_example::run_example().expect("sparse_graph example should run");
}

#[test]
fn autodiff_example_runs() {
    autodiff_example::run_example().expect("autodiff example should run");
}

#[test]
fn heatmap_example_runs() {
    heatmap_example::run_example().expect("heatmap example should run");
}

#[test]
fn decode_example_runs() {
    decode_example::run_example().expect("decode example should run");
}

#[test]
fn tb_loss_example_runs() {
    tb_loss_example::run_example().expect("tb_loss example should run");
}

#[test]
fn discriminator_example_runs() {
    discriminator_example::run_example().expect("discriminator example should run");
}

#[test]
fn local_search_example_runs() {
    local_search_example::run_example().expect("local_search example should run");
}

#[test]
fn baselines_example_runs() {
    baselines_example::run_example().expect("baselines example should run");
}

#[test]
fn train_example_runs() {
    train_example::run_example().expect("train example should run");
}

#[test]
fn pipeline_example_runs() {
    pipeline_example::run_example().expect("pipeline example should run");
}
