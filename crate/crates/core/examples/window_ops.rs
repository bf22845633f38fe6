//! Partition, shift and mask bookkeeping on a tiny map.

use dwvit::window::{
    crop, cyclic_shift, pad_to_multiple, rel_pos_index, shift_attention_mask, window_partition,
    window_reverse,
};
use dwvit::Tensor;

fn main() -> dwvit::Result<()> {
    // 6x6 map, one channel holding the flat position.
    let x = Tensor::<f64>::from_fn([6, 6, 1], |i| i as f64)?;

    let windows = window_partition(&x, 3)?;
    println!("partition {:?} -> {:?}", x.shape(), windows.shape());
    println!("first window: {:?}", windows.narrow(0, 0, 1)?.data());
    assert_eq!(window_reverse(&windows, 6, 6)?, x);

    let shifted = cyclic_shift(&x, -1, -1)?;
    println!("after shift by -1: top row {:?}", &shifted.data()[..6]);
    assert_eq!(cyclic_shift(&shifted, 1, 1)?, x);

    // A 5x7 map padded up to multiples of 3.
    let odd = Tensor::<f64>::ones([5, 7, 2])?;
    let (padded, pad) = pad_to_multiple(&odd, 3)?;
    println!("pad {:?} -> {:?}", odd.shape(), padded.shape());
    assert_eq!(crop(&padded, &pad)?, odd);

    let mask = shift_attention_mask::<f64>(6, 6, 3, 1)?;
    let blocked = mask.data().iter().filter(|&&m| m != 0.0).count();
    println!("mask {:?}: {blocked} of {} pairs blocked", mask.shape(), mask.len());
    for (wi, name) in [(0, "interior"), (3, "corner")] {
        let rows = mask.narrow(0, wi, 1)?;
        let open = rows.data().iter().filter(|&&m| m == 0.0).count();
        println!("  {name} window: {open} open pairs");
    }

    let rp = rel_pos_index(3);
    println!("relative offsets for a 3x3 window: table of {}", rp.table_len());
    for p in 0..rp.tokens() {
        let row: Vec<usize> = (0..rp.tokens()).map(|q| rp.get(p, q)).collect();
        println!("  {row:?}");
    }
    Ok(())
}
