// Backward hill climbing on data sampled from a known staged tree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stagedtrees::bn::{encode_bn, railway_network};
use stagedtrees::learning::bhc;
use stagedtrees::staged_tree::saturated_tree;
use stagedtrees::FitConfig;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let truth = encode_bn(&railway_network(false), None)?;
    let data = truth.sample(5000, &mut ChaCha8Rng::seed_from_u64(7))?;
    let order = truth.order().clone();

    let learned = bhc(&data, &order, 0.0)?;
    let saturated = saturated_tree(data.schema(), &order)?.fit(&data, FitConfig::MLE)?;
    println!("saturated: {} parameters, BIC {:.2}", saturated.n_parameters(), saturated.bic(&data)?);
    println!("learned:   {} parameters, BIC {:.2}", learned.n_parameters(), learned.bic(&data)?);
    for depth in 0..learned.depth() {
        let v = learned.variable_at(depth);
        println!(
            "  {}: {} stages over {} contexts",
            data.schema().variable(v).name,
            learned.staging(depth).n_stages(),
            learned.n_contexts(depth)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
