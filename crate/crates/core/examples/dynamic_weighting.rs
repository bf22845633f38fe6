//! The dynamic window module under each weighting mode. Prints how the
//! branch weights split across branches for a few channels.

use dwvit::dwm::{dwm_forward_detailed, DmswMode, DmswParams};
use dwvit::attention::MswMsaParams;
use dwvit::nn::{Init, Module};
use dwvit::tensor::Tape;
use dwvit::window::WindowSet;
use dwvit::Tensor;

fn main() -> dwvit::Result<()> {
    let (h, w, c) = (8, 8, 24);
    let windows = WindowSet::new(vec![2, 4, 8])?.clamp(h, w);
    let x = Tensor::<f64>::from_fn([h, w, c], |i| (i as f64 * 0.013).sin())?;

    for mode in [DmswMode::Dynamic, DmswMode::EqualWeight, DmswMode::Off] {
        let mut init = Init::new(5);
        let attn = MswMsaParams::init(&mut init, "attn", c, 3, &windows)?;
        let mut dmsw = DmswParams::init(&mut init, "dmsw", c, windows.len(), mode)?;
        // Fresh weights give near-uniform branch weights; spread them out.
        let mut k = 0.0;
        dmsw.visit_mut(&mut |p| {
            for v in p.value_mut().data_mut() {
                k += 1.0;
                *v = 0.4 * (k * 0.7_f64).sin();
            }
        });
        let tape = Tape::inference();
        let out = dwm_forward_detailed(&tape.constant(x.clone()), &attn, &dmsw, &windows, false)?;
        println!("{mode}: output {:?}", out.y.shape());
        let Some(alpha) = out.alpha else {
            println!("  no branch weights");
            continue;
        };
        let alpha = alpha.value();
        let per_branch = alpha.shape()[1];
        for ch in 0..3 {
            let ws: Vec<f64> = (0..windows.len()).map(|b| alpha.at(&[b, ch])).collect();
            let total: f64 = ws.iter().sum();
            println!("  channel {ch} of {per_branch}: weights {ws:.4?} sum {total:.6}");
        }
    }
    Ok(())
}
