use std::io::Write;

use flate2::write::GzEncoder;
use flate2::Compression;
use proptest::prelude::*;
use stable_bilevel::data::sample_indices;
use stable_bilevel::{
    load_libsvm, parse_libsvm, serialize_libsvm, split, stream, Dataset, SparseRow,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn line_strategy() -> impl Strategy<Value = String> {
    (
        prop::bool::ANY,
        prop::collection::btree_map(1usize..40, -1e6..1e6f64, 0..8),
    )
        .prop_map(|(positive, feats)| {
            let mut line = String::from(if positive { "+1" } else { "-1" });
            for (i, v) in feats {
                line.push_str(&format!(" {i}:{v}"));
            }
            line
        })
}

/// Row `i` carries the single feature value `i`, so examples are distinguishable.
fn indexed(n: usize) -> Dataset {
    let rows = (0..n)
        .map(|i| SparseRow::new(vec![0], vec![i as f64]).unwrap())
        .collect();
    let labels = (0..n)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    Dataset::new(rows, labels, 1).unwrap()
}

fn ids(d: &Dataset) -> Vec<usize> {
    d.rows().iter().map(|r| r.values[0] as usize).collect()
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(lines in prop::collection::vec(line_strategy(), 1..30)) {
        let text = lines.join("\n");
        let first = parse_libsvm(text.as_bytes()).unwrap();
        let again = parse_libsvm(serialize_libsvm(&first).as_bytes()).unwrap();
        prop_assert_eq!(first, again);
    }
}

#[test]
fn splits_are_disjoint_and_exhaustive() {
    let mut rng = stream(0);
    for trial in 0..100u64 {
        use rand::Rng;
        let n = rng.random_range(2..300);
        let fraction = rng.random_range(0.05..0.95);
        let data = indexed(n);
        let Ok((train, val)) = split(&data, fraction, trial) else {
            // only degenerate fractions may fail
            let n_val = (n as f64 * fraction).round() as usize;
            assert!(n_val == 0 || n_val == n);
            continue;
        };
        let mut all: Vec<usize> = ids(&train).into_iter().chain(ids(&val)).collect();
        all.sort_unstable();
        assert_eq!(
            all,
            (0..n).collect::<Vec<_>>(),
            "n = {n}, fraction = {fraction}"
        );
        assert_eq!(val.len(), (n as f64 * fraction).round() as usize);
    }
}

#[test]
fn split_examples() {
    let data = indexed(10);
    let (train, val) = split(&data, 0.5, 3).unwrap();
    assert_eq!((train.len(), val.len()), (5, 5));
    let (train2, _) = split(&data, 0.5, 3).unwrap();
    assert_eq!(ids(&train), ids(&train2));
    let data = indexed(100);
    let orders: Vec<Vec<usize>> = (0..10)
        .map(|s| ids(&split(&data, 0.5, s).unwrap().1))
        .collect();
    for i in 0..10 {
        for j in i + 1..10 {
            assert_ne!(orders[i], orders[j]);
        }
    }
}

#[test]
fn sampler_passes_chi_square_uniformity() {
    let n = 16;
    let draws = 100_000;
    let mut counts = vec![0usize; n];
    for i in sample_indices(n, draws, &mut stream(17)) {
        counts[i] += 1;
    }
    let expected = draws as f64 / n as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new((n - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn sampler_frequencies_are_even() {
    let draws = 100_000;
    let mut counts = [0usize; 4];
    for i in sample_indices(4, draws, &mut stream(18)) {
        counts[i] += 1;
    }
    for c in counts {
        assert!((c as f64 / draws as f64 - 0.25).abs() <= 0.01);
    }
    assert_eq!(
        sample_indices(7, 50, &mut stream(19)),
        sample_indices(7, 50, &mut stream(19))
    );
}

#[test]
fn gzipped_files_load_like_plain_ones() {
    let text = "+1 1:0.5 3:-2\n-1\n+1 2:1e-3\n";
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("d.svm");
    std::fs::write(&plain, text).unwrap();
    let packed = dir.path().join("d.svm.gz");
    let mut enc = GzEncoder::new(
        std::fs::File::create(&packed).unwrap(),
        Compression::default(),
    );
    enc.write_all(text.as_bytes()).unwrap();
    enc.finish().unwrap();
    let a = load_libsvm(&plain).unwrap();
    assert_eq!(a, load_libsvm(&packed).unwrap());
    assert_eq!((a.len(), a.dim()), (3, 3));
    assert!(load_libsvm(dir.path().join("missing.svm")).is_err());
}
