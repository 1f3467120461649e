macro_rules! example {
    ($name:ident, $file:literal) => {
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }
    };
}

example!(railway, "railway.rs");
example!(learn_bhc, "learn_bhc.rs");
example!(kparents, "kparents.rs");
example!(order_search, "order_search.rs");
example!(bootstrap_consensus, "bootstrap_consensus.rs");
example!(whatif, "whatif.rs");
example!(cross_validation, "cross_validation.rs");
example!(csv_pipeline, "csv_pipeline.rs");
example!(dendrogram, "dendrogram.rs");

#[test]
fn railway_runs() {
    railway::run_example().unwrap();
}

#[test]
fn learn_bhc_runs() {
    learn_bhc::run_example().unwrap();
}

#[test]
fn kparents_runs() {
    kparents::run_example().unwrap();
}

#[test]
fn order_search_runs() {
    order_search::run_example().unwrap();
}

#[test]
fn bootstrap_consensus_runs() {
    bootstrap_consensus::run_example().unwrap();
}

#[test]
fn whatif_runs() {
    whatif::run_example().unwrap();
}

#[test]
fn cross_validation_runs() {
    cross_validation::run_example().unwrap();
}

#[test]
fn csv_pipeline_runs() {
    csv_pipeline::run_example().unwrap();
}

#[test]
fn dendrogram_runs() {
    dendrogram::run_example().unwrap();
}
