//! Seeded synthetic inputs.
//!
//! A head is generated from a `ChaCha8Rng` seeded with `seed` by drawing
//! uniform `[-1, 1)` values in row-major order: all of Q, then all of K, then
//! all of V. Multi-head inputs draw heads `0..H` in order from one stream.
//!
//! [`structured_head`] plants a known attention shape on top of small uniform
//! noise drawn the same way:
//!
//! * `Local`: query/key pairs `(2f, 2f+1)` carry `a * (cos, sin)(pi (f+1) t / n)`
//!   so logits follow a Dirichlet kernel in `i - j`, peaked on the diagonal
//!   with a width proportional to `n`.
//! * `Vertical`: every position is a sink with probability 1/16; sink keys get
//!   `+beta` on coordinate 0 and every query gets `+gamma` there, so sink
//!   columns draw mass from all rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attn::AttnMatrices;
use crate::matrix::{Matrix, Real};

fn fill<T: Real>(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix<T> {
    let data = (0..n * d)
        .map(|_| T::lit(rng.gen_range(-1.0..1.0)))
        .collect();
    Matrix::new(n, d, data).expect("buffer sized to shape")
}

fn head_from<T: Real>(rng: &mut ChaCha8Rng, n: usize, d: usize) -> AttnMatrices<T> {
    let q = fill(rng, n, d);
    let k = fill(rng, n, d);
    let v = fill(rng, n, d);
    AttnMatrices::causal(q, k, v).expect("finite synthetic inputs")
}

/// Shape planted by [`structured_head`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadProfile {
    Uniform,
    Local,
    Vertical,
}

/// One causal head with a planted attention shape.
pub fn structured_head<T: Real>(
    profile: HeadProfile,
    n: usize,
    d: usize,
    seed: u64,
) -> AttnMatrices<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = match profile {
        HeadProfile::Uniform => 1.0,
        _ => 0.3,
    };
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n * d)
            .map(|_| noise * rng.gen_range(-1.0..1.0))
            .collect()
    };
    let mut q = draw(&mut rng);
    let mut k = draw(&mut rng);
    let v: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sqrt_d = (d as f64).sqrt();
    match profile {
        HeadProfile::Uniform => {}
        HeadProfile::Local => {
            let freqs = (d / 2).max(1);
            // peak logit of about 8
            let a = (8.0 * sqrt_d / freqs as f64).sqrt();
            for t in 0..n {
                for f in 0..freqs.min(d / 2) {
                    let angle = std::f64::consts::PI * (f + 1) as f64 * t as f64 / n as f64;
                    let (s, c) = angle.sin_cos();
                    for buf in [&mut q, &mut k] {
                        buf[t * d + 2 * f] += a * c;
                        buf[t * d + 2 * f + 1] += a * s;
                    }
                }
            }
        }
        HeadProfile::Vertical => {
            // sink boost of about 6 in logit space
            let (beta, gamma) = (3.0 * sqrt_d.sqrt(), 2.0 * sqrt_d.sqrt());
            for t in 0..n {
                if rng.gen_range(0..16) == 0 {
                    k[t * d] += beta;
                }
                q[t * d] += gamma;
            }
        }
    }
    let m = |data: Vec<f64>| {
        Matrix::new(n, d, data.into_iter().map(T::lit).collect()).expect("buffer sized to shape")
    };
    AttnMatrices::causal(m(q), m(k), m(v)).expect("finite synthetic inputs")
}

/// One causal head of `n x d` inputs.
pub fn random_head<T: Real>(n: usize, d: usize, seed: u64) -> AttnMatrices<T> {
    head_from(&mut ChaCha8Rng::seed_from_u64(seed), n, d)
}

/// `heads` causal heads from a single stream.
pub fn random_heads<T: Real>(heads: usize, n: usize, d: usize, seed: u64) -> Vec<AttnMatrices<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..heads).map(|_| head_from(&mut rng, n, d)).collect()
}
