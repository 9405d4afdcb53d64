//! Bytes per packet as a function of rank: exactly affine in k for each
//! sequence length, and the rank at which truncation stops saving traffic.

use pfid::metrics::{affine_fit, comm_table};

fn main() {
    let d = 64;
    let ns = [16, 64, 128];
    let rows = comm_table(d, &ns, &(1..=d).collect::<Vec<_>>());
    for n in ns {
        let pts: Vec<_> = rows
            .iter()
            .filter(|r| r.n == n)
            .map(|r| (r.k, r.bytes))
            .collect();
        let fit = affine_fit(&pts).unwrap();
        let dense = 4 * d * n;
        let break_even = rows
            .iter()
            .find(|r| r.n == n && r.bytes >= r.dense_bytes)
            .map(|r| r.k);
        println!(
            "n={n:>3}: bytes = {} + {}·k (max residual {}); dense binary32 {} bytes; no saving from k = {}",
            fit.intercept,
            fit.slope,
            fit.max_residual,
            dense,
            break_even.map_or("never".into(), |k| k.to_string())
        );
    }
}
