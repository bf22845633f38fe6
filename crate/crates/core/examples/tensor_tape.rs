//! Record a small computation on the tape, pull gradients back, and compare
//! them with central differences. Ends with a `DWT0` round trip.

use dwvit::oracle::finite_diff_grad;
use dwvit::tensor::{io, Param, Tape, Tensor};

fn loss(w: &Tensor<f64>, x: &Tensor<f64>) -> dwvit::Result<(f64, Option<Tensor<f64>>, u64)> {
    let tape = Tape::new();
    let w = tape.param(&Param::new("w", w.clone()));
    let x = tape.constant(x.clone());
    let c = tape.constant(Tensor::from_fn([4, 5], |i| i as f64 / 20.0)?);
    let y = x.linear(&w, None)?.gelu()?.softmax(1)?.mul(&c)?.sum()?;
    let grads = y.backward()?;
    Ok((y.value().item().unwrap(), grads.param("w").cloned(), tape.macs()))
}

fn main() -> dwvit::Result<()> {
    let x = Tensor::from_fn([4, 3], |i| (i as f64 * 0.37).sin())?;
    let w = Tensor::from_fn([3, 5], |i| (i as f64 * 0.11).cos())?;

    let (value, grad, macs) = loss(&w, &x)?;
    let grad = grad.expect("w is a parameter");
    println!("loss = {value:.6}, {macs} multiply-accumulates recorded");

    let coords: Vec<usize> = (0..w.len()).collect();
    let numeric = finite_diff_grad(
        |theta| {
            let w = Tensor::new([3, 5], theta.to_vec())?;
            Ok(loss(&w, &x)?.0)
        },
        w.data(),
        &coords,
        1e-6,
    )?;
    let worst = grad
        .data()
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    println!("max |analytic - numeric| = {worst:.2e}");

    let path = std::env::temp_dir().join("tensor_tape_example.dwt");
    io::write(&path, &grad)?;
    let back = io::read(&path)?.into_exact::<f64>()?;
    println!("round trip through {}: identical = {}", path.display(), back == grad);
    std::fs::remove_file(path).ok();
    Ok(())
}
