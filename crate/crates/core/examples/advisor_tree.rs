//! Trains the SMT advisor on labeled feature vectors, prints the tree and
//! classifies a new region.

use pdttagger::advisor::{recommend_threads, train, Dataset, DecisionTree, TrainParams};
use pdttagger::counters::FeatureVector;

const DATA: &str = "pdtdataset v1
# ipc  l2_mpki  branch_miss_rate  mem_fraction  time_per_visit
1.10   4.0      0.010             0.30          4.43     SMT2
0.62   0.3      0.080             0.12          0.79     SMT4
1.00   5.2      0.006             0.38          4.18     SMT2
0.85   6.1      0.020             0.45          3.70     SMT2
1.80   0.5      0.030             0.15          0.55     SMT1
";

fn main() {
    let data = Dataset::parse(DATA).unwrap();
    let params = TrainParams {
        max_depth: None,
        ..TrainParams::default()
    };
    let tree = train(&data, &params).unwrap();
    println!(
        "depth {}, training accuracy {:.0}%",
        tree.depth(),
        100.0 * tree.accuracy(&data).unwrap()
    );
    let text = tree.export();
    print!("{text}");
    assert_eq!(DecisionTree::import(&text).unwrap(), tree);

    let unseen = FeatureVector {
        ipc: 0.7,
        l2_mpki: 1.0,
        branch_miss_rate: 0.05,
        mem_fraction: 0.2,
        time_per_visit: 1.0,
    };
    let class = tree.predict(&unseen).unwrap();
    println!(
        "unseen region: {class} -> {} threads on 32 cores",
        recommend_threads(class, 32)
    );
}
