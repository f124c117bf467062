use rand::seq::SliceRandom;

use crate::data::idx::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Seeded shuffle, then the first `floor(n·fraction)` samples train and the rest validate.
pub fn split_train_val<T: Scalar>(
    data: &LabeledSet<T>,
    fraction: f64,
    rng: &mut Rng,
) -> Result<(LabeledSet<T>, LabeledSet<T>)> {
    let (train, val) = split_indices(data.len(), fraction, rng)?;
    Ok((data.subset(&train), data.subset(&val)))
}

pub fn split_indices(n: usize, fraction: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut = (n as f64 * fraction).floor() as usize;
    let val = idx.split_off(cut);
    Ok((idx, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn mnist_sizes() {
        let (a, b) = split_indices(60_000, 5.0 / 6.0, &mut substream(42, "split", &[])).unwrap();
        assert_eq!((a.len(), b.len()), (50_000, 10_000));
        let mut all: Vec<usize> = a.iter().chain(&b).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60_000).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_fractions_rejected() {
        for f in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(split_indices(10, f, &mut substream(0, "split", &[])).is_err());
        }
    }

    #[test]
    fn seeded_split_is_deterministic() {
        let a = split_indices(1000, 0.8, &mut substream(5, "split", &[])).unwrap();
        let b = split_indices(1000, 0.8, &mut substream(5, "split", &[])).unwrap();
        assert_eq!(a, b);
    }
}
