// Exact order search by dynamic programming, with a pinned response and with groups.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stagedtrees::bn::{encode_bn, railway_network};
use stagedtrees::learning::{order_search, order_search_dp, LearnConfig, OrderSearchConfig, OrderSearchMode};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let truth = encode_bn(&railway_network(false), None)?;
    let data = truth.sample(3000, &mut ChaCha8Rng::seed_from_u64(3))?;
    let cfg = LearnConfig::bhc();
    let schema = data.schema();

    let best = order_search_dp(&data, &cfg, None)?;
    println!("best order {:?}, BIC {:.2}", best.order.names(schema), best.score);

    let sat = schema.index_of("Satisfaction")?;
    let pinned = order_search_dp(&data, &cfg, Some(sat))?;
    println!("with Satisfaction last {:?}, BIC {:.2}", pinned.order.names(schema), pinned.score);

    let search = OrderSearchConfig {
        mode: OrderSearchMode::Grouped(vec![vec![0], vec![1, 2], vec![3]]),
        ..OrderSearchConfig::default()
    };
    let grouped = order_search(&data, &cfg, &search)?;
    println!("grouped {:?}, BIC {:.2}", grouped.order.names(schema), grouped.score);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
