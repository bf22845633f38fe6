//! Multi-scale window attention with three head groups on a 14x14 map.
//! The third window is larger than the map and gets clamped.

use dwvit::attention::{branch_shift, msw_msa, MswMsaParams};
use dwvit::nn::Init;
use dwvit::tensor::Tape;
use dwvit::window::WindowSet;
use dwvit::Tensor;

fn main() -> dwvit::Result<()> {
    let (h, w, c, heads) = (14, 14, 96, 3);
    let windows = WindowSet::new(vec![7, 14, 21])?.clamp(h, w);
    println!("nominal {:?} effective {:?}", windows.nominal(), windows.effective());

    let params = MswMsaParams::<f32>::init(&mut Init::new(1), "attn", c, heads, &windows)?;
    let x = Tensor::<f32>::from_fn([h, w, c], |i| ((i % 97) as f32 / 97.0) - 0.5)?;
    let tape = Tape::inference();
    let x = tape.constant(x);

    for shifted in [false, true] {
        let out = msw_msa(&x, &params, &windows, shifted)?;
        let shifts: Vec<usize> = windows
            .effective()
            .iter()
            .map(|&win| branch_shift(win, h, w, shifted))
            .collect();
        let shapes: Vec<_> = out.branches.iter().map(|b| b.shape().to_vec()).collect();
        println!("shifted={shifted}: shifts {shifts:?}, branches {shapes:?}, concat {:?}", out.y.shape());
    }
    println!("{} multiply-accumulates", tape.macs());
    Ok(())
}
