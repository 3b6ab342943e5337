//! Folding a feature map into blocks, attending over them, and unfolding.

use autograd::{Tensor, Var};
use pscc::sccm::{fold, spatial_attention, unfold};

fn main() -> pscc::Result<()> {
    let (c, h, w, r) = (2, 4, 6, 2);
    let x = Tensor::<f64>::new(vec![1, c, h, w], (0..c * h * w).map(|v| v as f64).collect())?;
    let folded = fold(&x, r)?;
    println!("fold {:?} -> {:?}", x.shape(), folded.shape());
    println!("block 0 = {:?}", &folded.data()[..c * r * r]);
    assert_eq!(unfold(&folded, r, c, h, w)?, x);

    let v = Var::constant(folded.map(|t| t / 50.0));
    let (y, a) = spatial_attention(&v, &v, &v)?;
    let m = (h / r) * (w / r);
    for row in 0..m {
        let weights = &a.value().data()[row * m..(row + 1) * m];
        println!("row {row}: {:.3?}", weights);
    }
    println!("output {:?}", y.value().shape());
    Ok(())
}
