// Consensus staging from a co-membership dissimilarity matrix under each linkage.

use stagedtrees::consensus::{cluster, DissimilarityMatrix, Linkage};
use stagedtrees::StageAssignment;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let replicates: Vec<StageAssignment> = [
        [0, 0, 1, 1, 2, 2],
        [0, 0, 1, 1, 1, 2],
        [0, 1, 1, 1, 2, 2],
        [0, 0, 1, 1, 2, 2],
    ]
    .iter()
    .map(|l| StageAssignment::from_labels(l))
    .collect();
    let d = DissimilarityMatrix::from_stagings(&replicates)?.to_dense();
    for row in d.rows() {
        println!("{row:?}");
    }
    for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
        let tree = cluster(&d, linkage);
        for cut in [0.3, 0.5, 0.8] {
            println!("{linkage} cut {cut}: {:?}", tree.cut(cut).blocks());
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
