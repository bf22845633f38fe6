//! Shapes and window sizes through the DW-T network at 224x224.

use dwvit::analyzer::count_params;
use dwvit::model::{Model, ModelConfig};

fn main() -> dwvit::Result<()> {
    let model = Model::<f32>::skeleton(&ModelConfig::dw_t())?;
    for entry in model.trace() {
        println!("{entry}");
    }
    let params = count_params(&model);
    println!("{} parameters", params.total);
    for (component, count) in &params.by_component {
        println!("  {component:<16} {count}");
    }
    Ok(())
}
