// Railway satisfaction network: encoding, atom probabilities, ALDAG and a query.

use std::collections::BTreeMap;

use stagedtrees::aldag::{compress, dependence_subtree};
use stagedtrees::bn::{encode_bn, railway_network};
use stagedtrees::inference::condition_hard;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let tree = encode_bn(&railway_network(false), None)?;
    let p = tree.atom_probability_labels(&["SE", "Low", "High", "High"])?;
    println!("P(SE, Low, High, High) = {p}");
    println!("free parameters: {}", tree.n_parameters());

    let g = compress(&tree);
    for e in &g.edges {
        println!("{} -> {}: {}", g.variables[e.from], g.variables[e.to], e.label.as_str());
    }

    let sat = tree.schema().index_of("Satisfaction")?;
    let sub = dependence_subtree(&tree, &g, sat)?;
    println!("Satisfaction depends on {} parents through {} stages", sub.parents.len(), sub.staging.n_stages());

    let s = tree.schema();
    let evidence = BTreeMap::from([(s.index_of("Length")?, 1), (s.index_of("Income")?, 0)]);
    let post = condition_hard(&tree, &evidence)?;
    println!("P(Satisfaction | Length=Low, Income=High) = {:?}", post.marginals[sat]);

    let local = compress(&encode_bn(&railway_network(true), None)?);
    let e = local.edge_by_name("Income", "Satisfaction").ok_or("missing edge")?;
    println!("with the alternative table Income -> Satisfaction is {}", e.label.as_str());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
