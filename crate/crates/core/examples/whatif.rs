// What-if queries: hard, soft (Jeffrey) and virtual evidence, plus a sensitivity sweep.

use std::collections::BTreeMap;

use stagedtrees::bn::{encode_bn, railway_network};
use stagedtrees::inference::{condition_hard, condition_soft, condition_virtual, marginal, whatif_sweep, EvidenceSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let tree = encode_bn(&railway_network(false), None)?;
    let s = tree.schema();
    let sat = s.index_of("Satisfaction")?;
    let income = s.index_of("Income")?;
    println!("prior Satisfaction {:?}", marginal(&tree, sat)?);

    let hard = condition_hard(&tree, &BTreeMap::from([(income, 1)]))?;
    println!("Income=Low        {:?}", hard.marginals[sat]);

    let ev = EvidenceSpec::from_names(s, &[], &[("Income", vec![0.9, 0.1])])?;
    let soft = condition_soft(&tree, &ev, 1e-9, 1000)?;
    println!("P(Income)=(.9,.1) {:?} after {:?} sweeps", soft.marginals[sat], soft.iterations);

    let virt = condition_virtual(&tree, &BTreeMap::new(), &BTreeMap::from([(income, vec![2.0, 1.0])]))?;
    println!("likelihood 2:1    {:?}", virt.marginals[sat]);

    let predictors: Vec<usize> = (0..s.len()).filter(|&v| v != sat).collect();
    let sweep = whatif_sweep(&tree, sat, &predictors)?;
    for row in &sweep.rows {
        println!(
            "  {} on Satisfaction={}: max change {:.3} ({})",
            s.variable(row.predictor).name,
            s.variable(sat).levels[row.target_level],
            row.max_abs_change,
            row.direction
        );
    }
    for (v, mi) in &sweep.mutual_information {
        println!("  MI({}, Satisfaction) = {mi:.4}", s.variable(*v).name);
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
