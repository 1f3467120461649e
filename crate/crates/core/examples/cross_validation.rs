// k-fold cross-validation of BHC and k-parents consensus models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stagedtrees::bn::{encode_bn, railway_network};
use stagedtrees::harness::{run_cv, CvConfig};
use stagedtrees::LearnConfig;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let truth = encode_bn(&railway_network(false), None)?;
    let data = truth.sample(1500, &mut ChaCha8Rng::seed_from_u64(23))?;
    let mut cfg = CvConfig::new(5, 10, 1, vec![LearnConfig::bhc(), LearnConfig::kparents(1)?]);
    cfg.order = Some(truth.order().clone());
    let report = run_cv(&data, &cfg)?;
    for row in report.summary().iter().filter(|r| r.metric != "wall_time_secs") {
        println!(
            "{:<11} {:<20} median {:>10.3}  [{:.3}, {:.3}]",
            row.algorithm, row.metric, row.median, row.q1, row.q3
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
