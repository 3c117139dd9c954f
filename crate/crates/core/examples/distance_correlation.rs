//! Distance correlation on independent, linearly dependent and
//! non-linearly dependent samples.

use dgcf::independence::ChunkSampleMatrix;
use dgcf::distance_correlation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn column(values: Vec<f64>) -> dgcf::Result<ChunkSampleMatrix> {
    ChunkSampleMatrix::new(values.len(), 1, values)
}

fn main() -> dgcf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200;
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cases = [
        ("independent", noise.clone()),
        ("y = 3x + 1", x.iter().map(|v| 3.0 * v + 1.0).collect()),
        ("y = x^2", x.iter().map(|v| v * v).collect()),
        ("y = x^2 + noise", x.iter().zip(&noise).map(|(v, e)| v * v + 0.2 * e).collect()),
    ];
    let xm = column(x.clone())?;
    for (name, y) in cases {
        println!("{name:>16}: dCor = {:.4}", distance_correlation(&xm, &column(y)?)?);
    }
    Ok(())
}
