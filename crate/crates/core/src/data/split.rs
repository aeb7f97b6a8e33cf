use crate::engine::{Rng, Stream};
use crate::error::{arg_err, Result};

/// Seeded shuffle; the first `ceil(ratio * n)` ids train, the rest test.
pub fn split_dataset<S: Clone>(ids: &[S], ratio: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if ids.is_empty() {
        return Err(arg_err!("cannot split an empty subject list"));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(arg_err!("split ratio must be in (0, 1], got {ratio}"));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    Rng::new(seed, Stream::Split).shuffle(&mut order);
    // Round away float noise such as 0.75 * 4 = 3.0000000000000004.
    let exact = ratio * ids.len() as f64;
    let n_train = ((exact * 1e9).round() / 1e9).ceil() as usize;
    let n_train = n_train.clamp(1, ids.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| ids[i].clone()).collect();
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}
