//! Finite-difference helpers shared by unit tests.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::Tensor;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Central differences of `f` w.r.t. every entry of `inputs[which]`.
pub(crate) fn central_diff(
    inputs: &[Tensor],
    which: usize,
    h: f64,
    f: impl Fn(&[Tensor]) -> f64,
) -> Vec<f64> {
    let mut work = inputs.to_vec();
    (0..inputs[which].len())
        .map(|i| {
            let x = inputs[which].data()[i];
            work[which].data_mut()[i] = x + h;
            let up = f(&work);
            work[which].data_mut()[i] = x - h;
            let down = f(&work);
            work[which].data_mut()[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max over entries of `|a - n| / max(|a|, |n|, floor)`.
pub(crate) fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
