mod common;

use bargrain::preprocess::{generate_synthetic, load_dataset, pearson_correlation, save_dataset, synthetic_block};
use common::*;

#[test]
fn cobre_shaped_round_trip_is_bitwise() {
    let dataset = generate_synthetic(20, 96, 150, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&dataset, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.dims(), Some((96, 150)));
    for (a, b) in dataset.subjects.iter().zip(&back.subjects) {
        assert_eq!(a.subject_id, b.subject_id);
        assert_eq!(a.label, b.label);
        let bits = |m: &bargrain::tensor::Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.series), bits(&b.series));
    }
}

#[test]
fn planted_blocks_separate_within_from_across() {
    let dataset = generate_synthetic(10, 16, 64, 4).unwrap();
    for subject in &dataset.subjects {
        let v = pearson_correlation(subject).unwrap();
        let (mut within, mut across) = (Vec::new(), Vec::new());
        for i in 0..16 {
            for j in i + 1..16 {
                let same = synthetic_block(i, 16, subject.label) == synthetic_block(j, 16, subject.label);
                let r = v.values()[(i, j)].abs();
                if same { within.push(r) } else { across.push(r) }
            }
        }
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        assert!(mean(&within) - mean(&across) >= 0.3, "{}", subject.subject_id);
    }
}

#[test]
fn acceptance_dataset_is_linearly_separable() {
    let dataset = generate_synthetic(40, ACCEPT_ROIS, ACCEPT_STEPS, ACCEPT_SEED).unwrap();
    assert!(stump_accuracy(&dataset) >= 0.9);
}
