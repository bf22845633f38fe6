//! Save a model, load it back at the other precision, and compare logits.

use dwvit::model::{Model, ModelConfig};
use dwvit::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::toy();
    let model = Model::<f64>::build(&cfg, 11)?;
    let dir = tempfile_dir()?;
    model.save_checkpoint(&dir)?;
    println!("wrote {} tensors to {}", model.named_params().len(), dir.display());
    println!("{}", std::fs::read_to_string(dir.join("manifest.json"))?.lines().take(4).collect::<Vec<_>>().join("\n"));

    let [h, w] = cfg.image_size;
    let image = Tensor::<f64>::from_fn([h, w, 3], |i| ((i * 31) % 17) as f64 / 8.5 - 1.0)?;
    let same = Model::<f64>::load_checkpoint(&cfg, &dir)?;
    let single = Model::<f32>::load_checkpoint(&cfg, &dir)?;

    let reference = model.forward(&image)?;
    println!("f64 reload identical: {}", same.forward(&image)? == reference);
    let low = single.forward(&image.cast())?.cast::<f64>();
    println!("f32 reload max diff: {:.2e}", low.max_abs_diff(&reference)?);

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("dwvit-checkpoint-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
