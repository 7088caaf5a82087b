//! Runs central-difference gradient checks over every layer, block and the
//! desk network on a 16³ grid.
//!
//! cargo run --release --example gradcheck_suite -- [probes]

use ddrnet::checks::run_gradcheck;

fn main() -> ddrnet::Result<()> {
    let probes = std::env::args()
        .nth(1)
        .map(|p| p.parse().expect("probes"))
        .unwrap_or(50);
    let outcomes = run_gradcheck("all", 0, probes)?;
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passes()).count();
    println!("{} of {} passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(3);
    }
    Ok(())
}
