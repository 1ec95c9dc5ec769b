//! Measures the Hermitian eigendecomposition throughput that bounds the
//! projection step of the splitting solver.

use nalgebra::{Complex, DMatrix};
use std::time::Instant;

fn main() {
    let n = 25;
    let mut seed = 0x2545F4914F6CDD1Du64;
    let mut next = move || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let a = DMatrix::from_fn(n, n, |_, _| Complex::new(next(), next()));
    let h = &a * a.adjoint();

    let reps = 2000;
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        let eig = h.clone().symmetric_eigen();
        acc += eig.eigenvalues[0];
    }
    let dt = t0.elapsed();
    println!(
        "symmetric_eigen {}x{}: {:.1} us/call (checksum {:.3})",
        n,
        n,
        dt.as_secs_f64() * 1e6 / reps as f64,
        acc
    );

    let t0 = Instant::now();
    for _ in 0..reps {
        let eig = h.clone().symmetric_eigen();
        acc += eig.eigenvalues[0];
    }
    let dt = t0.elapsed();
    println!(
        "second pass: {:.1} us/call (checksum {:.3})",
        dt.as_secs_f64() * 1e6 / reps as f64,
        acc
    );
}
