use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const TEST_FRACTION: f64 = 0.20;
pub const VAL_FRACTION: f64 = 0.15;

/// Disjoint index lists covering a dataset, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `total` across classes by largest remainder; ties favour the
/// lower class label.
fn allocate(total: usize, class_sizes: [usize; 2]) -> [usize; 2] {
    let n: usize = class_sizes.iter().sum();
    let exact = class_sizes.map(|c| total as f64 * c as f64 / n as f64);
    let mut quota = exact.map(|e| e.floor() as usize);
    let mut left = total - quota.iter().sum::<usize>();
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quota[c] < class_sizes[c] {
            quota[c] += 1;
            left -= 1;
        }
    }
    quota
}

/// Stratified 80/20 train/test split, then 85/15 train/validation on the
/// remainder. `|test| = round(0.2·n)`, `|val| = round(0.15·(n − |test|))`.
///
/// Each class's indices are shuffled once with `ChaCha8Rng(seed)` on stream
/// 1 (class 0 first); test takes the head of each list, validation the next.
pub fn split_labels(labels: &[u8], seed: u64) -> Result<SplitIndices> {
    let n = labels.len();
    if n < 5 {
        return Err(Error::Validation(format!("need at least 5 subjects to split, got {n}")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::Validation(format!("label {y} at index {i} is not binary")));
        }
        by_class[y as usize].push(i);
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(Error::Validation("both classes must be present to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    for class in &mut by_class {
        class.shuffle(&mut rng);
    }

    let n_test = (TEST_FRACTION * n as f64).round() as usize;
    let test_q = allocate(n_test, [by_class[0].len(), by_class[1].len()]);
    let rest = [by_class[0].len() - test_q[0], by_class[1].len() - test_q[1]];
    let n_val = (VAL_FRACTION * (n - n_test) as f64).round() as usize;
    let val_q = allocate(n_val, rest);

    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, idx) in by_class.iter().enumerate() {
        out.test.extend_from_slice(&idx[..test_q[c]]);
        out.val.extend_from_slice(&idx[test_q[c]..test_q[c] + val_q[c]]);
        out.train.extend_from_slice(&idx[test_q[c] + val_q[c]..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}
