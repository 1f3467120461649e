// k-parents learning: CMI parent selection then staging, with the in-degree bound checked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagedtrees::aldag::compress;
use stagedtrees::learning::kparents_learn;
use stagedtrees::{Dataset, Schema, Variable, VariableOrder};

fn chain(n: usize, seed: u64) -> Result<Dataset, stagedtrees::Error> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut x = vec![r.gen_range(0..3)];
            for v in 1..6 {
                let prev = x[v - 1];
                x.push(if r.gen_bool(0.75) { prev.min(1) } else { r.gen_range(0..2) });
            }
            x
        })
        .collect();
    let mut vars = vec![Variable::new("A", ["a0", "a1", "a2"])];
    for name in ["B", "C", "D", "E", "F"] {
        vars.push(Variable::new(name, ["0", "1"]));
    }
    Dataset::from_rows(Schema::new(vars)?, &rows)
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let data = chain(2000, 11)?;
    let order = VariableOrder::identity(data.n_vars());
    for k in 1..=3 {
        let lt = kparents_learn(&data, &order, k, 0.0)?;
        let g = compress(&lt.tree);
        println!("k={k}: BIC {:.2}, max in-degree {}", lt.tree.bic(&data)?, g.max_in_degree());
        for (v, parents) in lt.parent_sets.iter().enumerate() {
            let names: Vec<&str> = parents.iter().map(|&p| data.schema().variable(p).name.as_str()).collect();
            println!("  {} <- {{{}}}", data.schema().variable(v).name, names.join(", "));
        }
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
