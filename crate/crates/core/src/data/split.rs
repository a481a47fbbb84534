//! Seeded shuffle + prefix split of a dataset into train and validation parts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splits `items` into (train, validation). The train size is
/// floor(n * train_fraction), with at least one item on each side whenever
/// n >= 2. The shuffle is fully determined by `seed`.
pub fn split_dataset<T>(items: Vec<T>, train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    assert!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train_fraction must be in (0, 1)"
    );
    let n = items.len();
    let mut shuffled = items;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let mut n_train = (n as f64 * train_fraction).floor() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let val = shuffled.split_off(n_train);
    (shuffled, val)
}
