//! Parameter and FLOP totals for the reference configurations, plus the
//! per-block check against the closed-form complexity.

use dwvit::analyzer::{closed_form_dwm, Analysis};
use dwvit::dwm::DmswMode;
use dwvit::model::{Model, ModelConfig};

fn main() -> dwvit::Result<()> {
    let configs = [
        ("DW-T", ModelConfig::dw_t()),
        ("DW-T equal", ModelConfig::dw_t().with_mode(DmswMode::EqualWeight)),
        ("DW-T off", ModelConfig::dw_t().with_mode(DmswMode::Off)),
        ("Swin-T", ModelConfig::single_window_t(7)),
        ("DW-B", ModelConfig::dw_b()),
    ];
    println!("{:<12} {:>10} {:>9}  blocks agree", "model", "params", "GFLOPs");
    for (name, cfg) in configs {
        let a = Analysis::of(&Model::<f32>::skeleton(&cfg)?)?;
        println!(
            "{name:<12} {:>9.3}M {:>9.3}  {}",
            a.params.total as f64 / 1e6,
            a.flops.counted as f64 / 1e9,
            a.comparison.all_match
        );
    }

    // The closed form on its own: first DW-T stage.
    let cf = closed_form_dwm(56, 56, 96, 3, &[7, 14, 21])?;
    println!("56x56x96, windows 7/14/21: msw {} + dmsw {} = {}", cf.msw, cf.dmsw, cf.total);

    // Full table for the small model.
    let toy = Analysis::of(&Model::<f32>::skeleton(&ModelConfig::toy())?)?;
    println!("\n{}", toy.to_table());
    Ok(())
}
