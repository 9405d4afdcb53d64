//! Rank-k truncation of a hidden-state-shaped matrix: reconstruction error
//! against the discarded singular values, and what each rank costs on the wire.

use pfid::linalg::{ratio_to_rank, singular_values, truncated_svd, Matrix};
use pfid::protocol::packet_len;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let (d, n) = (64, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Low-rank signal plus a little noise, like a transformer residual stream.
    let a = Matrix::from_fn(d, 4, |_, _| rng.sample(StandardNormal));
    let b = Matrix::from_fn(4, n, |_, _| rng.sample(StandardNormal));
    let h = a
        .matmul(&b)
        .unwrap()
        .add(&Matrix::from_fn(d, n, |_, _| {
            0.05 * rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap();

    let sigma = singular_values(&h).unwrap();
    println!("leading singular values: {:.3?}", &sigma[..6]);
    println!(
        "{:>4} {:>6} {:>12} {:>12} {:>7}",
        "p", "k", "error", "optimal", "bytes"
    );
    for p in [0.0, 0.5, 0.65, 0.75, 0.9] {
        let k = ratio_to_rank(p, d, n).unwrap();
        let f = truncated_svd(&h, k, 7).unwrap();
        let err = h.sub(&f.reconstruct()).unwrap().frobenius_norm();
        let opt = sigma[k..].iter().map(|s| s * s).sum::<f64>().sqrt().abs();
        println!(
            "{p:>4} {k:>6} {err:>12.6} {opt:>12.6} {:>7}",
            packet_len(d, n, k)
        );
    }
    println!("dense binary64 state: {} bytes", 32 + 8 * d * n);
}
