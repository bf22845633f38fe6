//! The whole small model against a loop-by-loop reference, in every mode.

use dwvit::dwm::DmswMode;
use dwvit::model::{Model, ModelConfig};
use dwvit::oracle::{model_oracle, OracleReport, Weights};
use dwvit::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dwvit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mode in [DmswMode::Dynamic, DmswMode::EqualWeight, DmswMode::Off] {
        let cfg = ModelConfig::toy().with_mode(mode);
        let model = Model::<f64>::build(&cfg, 0)?;
        let [h, w] = cfg.image_size;
        let image = Tensor::<f64>::from_fn([h, w, 3], |_| rng.gen_range(-1.0..1.0))?;

        let got = model.forward(&image)?;
        let want = model_oracle(&cfg, &Weights::of(&model), image.data());
        println!("{}", OracleReport::absolute(format!("toy/{mode}"), got.data(), &want, 1e-10));
    }
    Ok(())
}
