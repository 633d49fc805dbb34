//! The shipped benchmark files parse and agree with their own shapes.

use std::path::Path;

use wafer_dse::workload::load_benchmarks;

fn root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

#[test]
fn parameter_counts_match_layer_shapes() {
    for file in ["benchmarks/llm.toml", "benchmarks/desk/gpt.toml"] {
        let models = load_benchmarks(&root().join(file)).unwrap();
        assert!(!models.is_empty(), "{file}");
        for m in &models {
            m.check().unwrap();
            // Layer weights only; embeddings make up the rest.
            let layers = (m.params_per_layer() * m.n_layers as u64) as f64;
            let stated = m.n_params_b * 1e9;
            assert!(layers <= stated * 1.05 && layers >= stated * 0.75, "{file} {}: {layers:e} vs {stated:e}", m.name);
        }
    }
}

#[test]
fn full_size_family_grows_monotonically() {
    let models = load_benchmarks(&root().join("benchmarks/llm.toml")).unwrap();
    assert_eq!(models.len(), 11);
    for w in models.windows(2) {
        assert!(w[1].n_params_b > w[0].n_params_b, "{} then {}", w[0].name, w[1].name);
    }
}
