// Bootstrap consensus: order votes, averaged staging, edge strengths and a heatmap file.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stagedtrees::bn::{encode_bn, railway_network};
use stagedtrees::consensus::{bootstrap_consensus, staging_heatmap_export, ConsensusConfig, Linkage};
use stagedtrees::learning::OrderSearchConfig;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let truth = encode_bn(&railway_network(false), None)?;
    let data = truth.sample(2000, &mut ChaCha8Rng::seed_from_u64(5))?;
    let cfg = ConsensusConfig::new(30, 17)?;
    let res = bootstrap_consensus(&data, None, &cfg, &OrderSearchConfig::default())?;

    let names = data.schema().names();
    if let Some(co) = &res.consensus_order {
        println!("consensus order {:?} (cyclic: {})", co.order.names(data.schema()), co.cyclic);
    }
    if let Some(votes) = &res.votes {
        print!("{}", votes.to_csv(&names)?);
    }
    println!("averaged tree: {} parameters", res.tree.n_parameters());
    print!("{}", res.edges.to_csv()?);

    let depth = res.tree.depth() - 1;
    let dir = std::env::temp_dir().join("stagedtrees_example_heatmap");
    std::fs::create_dir_all(&dir)?;
    let d = res.ensemble.dissimilarities[depth].to_dense();
    let desc = staging_heatmap_export(&res.tree, depth, &d, Linkage::Average, dir.join("last_depth.csv"))?;
    println!("heatmap of {} contexts written to {}", desc.labels.len(), dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
