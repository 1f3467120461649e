// CSV in, model file out, model file back in, DOT exports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stagedtrees::aldag::{compress, staged_tree_dot};
use stagedtrees::bn::{encode_bn, railway_network};
use stagedtrees::dataset::load_csv;
use stagedtrees::learning::{learn_tree, order_search_dp, LearnConfig};
use stagedtrees::StagedTree;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("stagedtrees_example_csv");
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("survey.csv");
    let truth = encode_bn(&railway_network(false), None)?;
    truth.sample(800, &mut ChaCha8Rng::seed_from_u64(2))?.write_csv(std::fs::File::create(&csv)?, true)?;

    let data = load_csv(&csv, true)?;
    println!("{} rows, variables {:?}", data.n_rows(), data.schema().names());
    let cfg = LearnConfig::bhc();
    let order = order_search_dp(&data, &cfg, None)?.order;
    let tree = learn_tree(&data, &order, &cfg)?.tree;

    let model = dir.join("model.json");
    tree.save(&model)?;
    let back = StagedTree::load(&model)?;
    assert_eq!(back, tree);
    std::fs::write(dir.join("tree.dot"), staged_tree_dot(&back)?)?;
    std::fs::write(dir.join("aldag.dot"), compress(&back).to_dot())?;
    println!("model, tree.dot and aldag.dot written to {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
