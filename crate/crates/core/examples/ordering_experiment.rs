//! End-to-end ordering experiment: trains vis and vis-move-attn backbones
//! on the synthetic world and compares frozen-feature scene accuracy with a
//! randomly initialized backbone.
//!
//! Takes around a quarter of an hour on one core. Pass `--quick` for a
//! reduced run.

use ego_interact::cli::selftest::{ordering_experiment, OrderingConfig, ORDERING_SECONDS};

fn main() {
    let mut cfg = OrderingConfig::default();
    if std::env::args().any(|a| a == "--quick") {
        cfg.world.num_sequences = 200;
        cfg.train.epochs = 3;
        cfg.transfer.epochs = 10;
    }
    let outcome = ordering_experiment(&cfg, &mut |line| eprintln!("{line}")).expect("experiment runs");
    println!("{}", serde_json::to_string_pretty(&outcome).expect("json"));
    println!("{}", outcome.to_check(&cfg, ORDERING_SECONDS));
}
