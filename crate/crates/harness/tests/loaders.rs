use std::path::{Path, PathBuf};

use varreg_harness::config::Normalize;
use varreg_harness::data::{load_csv_dataset, load_idx_dataset};
use varreg_harness::load_config;
use varreg_harness::run::build_problems;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn three_by_two_csv() {
    let d = load_csv_dataset(&fixture("tiny.csv"), "label").unwrap();
    assert_eq!((d.len(), d.width()), (3, 1));
    assert_eq!(d.labels(), &[0.0, 1.0, 1.0]);
    assert_eq!((d.row(0)[0], d.row(1)[0], d.row(2)[0]), (0.5, -1.25, 0.03));
}

/// Sums with a plain split-on-comma reader, independent of the loader.
fn naive_checksums(text: &str, label: &str) -> (f64, f64, usize) {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').map(str::trim).collect();
    let li = header.iter().position(|h| *h == label).unwrap();
    let (mut fsum, mut lsum, mut rows) = (0.0, 0.0, 0);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        for (j, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().unwrap();
            if j == li {
                lsum += v;
            } else {
                fsum += v;
            }
        }
        rows += 1;
    }
    (fsum, lsum, rows)
}

#[test]
fn csv_fixture_matches_independent_reader() {
    let path = fixture("points.csv");
    let (fsum, lsum, rows) = naive_checksums(&std::fs::read_to_string(&path).unwrap(), "label");
    let d = load_csv_dataset(&path, "label").unwrap();
    assert_eq!((d.len(), d.width()), (rows, 3));
    let got: f64 = (0..d.len()).flat_map(|i| d.row(i).to_vec()).sum();
    assert_eq!(got, fsum);
    assert_eq!(d.labels().iter().sum::<f64>(), lsum);
}

#[test]
fn csv_errors_name_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_csv_dataset(&fixture("tiny.csv"), "target").unwrap_err().to_string();
    assert!(err.contains("no column named 'target'"), "{err}");

    let p = write(dir.path(), "nan.csv", "a,b,y\n1,2,0\n3,oops,1\n");
    let err = load_csv_dataset(&p, "y").unwrap_err().to_string();
    assert!(err.contains("row 1") && err.contains("column 'b'") && err.contains("oops"), "{err}");

    let p = write(dir.path(), "ragged.csv", "a,y\n1,0\n2,1,5\n");
    let err = load_csv_dataset(&p, "y").unwrap_err().to_string();
    assert!(err.contains("row 1"), "{err}");

    let err = load_csv_dataset(&dir.path().join("absent.csv"), "y").unwrap_err().to_string();
    assert!(err.contains("absent.csv"), "{err}");
}

#[test]
fn idx_fixture_pair() {
    let d = load_idx_dataset(&fixture("tiny-images.idx"), &fixture("tiny-labels.idx"), None, Normalize::None).unwrap();
    assert_eq!((d.len(), d.width()), (2, 4));
    assert_eq!(d.row(0), &[0.0, 1.0, 0.0, 0.0]);
    assert_eq!(d.row(1), &[0.2; 4]);
    assert_eq!(d.labels(), &[1.0, 0.0]);

    let n = load_idx_dataset(&fixture("tiny-images.idx"), &fixture("tiny-labels.idx"), None, Normalize::UnitL2).unwrap();
    assert_eq!(n.row(1), &[0.5; 4]);

    let err = load_idx_dataset(&fixture("tiny-labels.idx"), &fixture("tiny-labels.idx"), None, Normalize::None).unwrap_err();
    assert!(err.to_string().contains("offset 0"), "{err}");
}

#[test]
fn fixture_configs_build() {
    for name in ["golden.toml", "points-logistic.toml", "idx-mlp.toml", "hetero-quadratic.toml", "hetero-logistic.toml"] {
        let config = load_config(&fixture(name)).unwrap();
        let (train, eval) = build_problems(&config).unwrap();
        assert!(train.dim() > 0, "{name}");
        assert_eq!(eval.is_some(), name == "points-logistic.toml", "{name}");
    }
}
