//! Analytic gradients of the small model against central differences.
//!
//!     cargo run --example gradcheck -- 3 200

use dwvit::verify::gradcheck;

fn main() -> dwvit::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().expect("integer argument"));
    let seed = args.next().unwrap_or(0);
    let samples = args.next().unwrap_or(100) as usize;

    let reports = gradcheck(seed, samples)?;
    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
    let worst = reports.iter().map(|r| r.max_rel).fold(0.0, f64::max);
    println!("{} coordinates, worst relative error {worst:.2e}", reports.len());
    for r in &failed {
        println!("{r}");
    }
    println!("gradcheck: {}", if failed.is_empty() { "PASS" } else { "FAIL" });
    Ok(())
}
