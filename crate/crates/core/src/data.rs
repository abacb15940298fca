//! Tabular datasets and vertical feature partitioning.
//!
//! A [`TabularDataset`] is an N x d matrix of real-valued features with
//! optional labels. Columns are split across clients by a
//! [`VerticalPartition`], so each client sees the same rows but a
//! disjoint subset of features.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense tabular dataset: N rows, d feature columns, optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    features: Array2<f64>,
    labels: Option<Vec<f64>>,
    column_names: Vec<String>,
}

impl TabularDataset {
    /// Build a dataset from parts, checking the shape invariants.
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<f64>>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::Data(format!(
                "dataset must have at least one row and one column, got {n}x{d}"
            )));
        }
        if column_names.len() != d {
            return Err(Error::Data(format!(
                "{} column names for {d} columns",
                column_names.len()
            )));
        }
        if let Some(ref l) = labels {
            if l.len() != n {
                return Err(Error::Data(format!("{} labels for {n} rows", l.len())));
            }
        }
        Ok(Self {
            features,
            labels,
            column_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.features.column(j)
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }
}

/// Assignment of feature columns to clients. Client `k` owns
/// `assignments()[k]`; the sets are disjoint, non-empty, and cover all
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalPartition {
    assignments: Vec<Vec<usize>>,
}

impl VerticalPartition {
    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn client_columns(&self, k: usize) -> &[usize] {
        &self.assignments[k]
    }

    /// Widest client slice; the shared model input width.
    pub fn max_width(&self) -> usize {
        self.assignments.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Parameters for [`synthesize`]: a low-rank factor model plus noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub latent_rank: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Generate `rows x cols` features as Z*W + noise with Z (rows x rank)
/// and W (rank x cols) drawn standard normal from the seeded generator.
pub fn synthesize(spec: &SyntheticSpec) -> Result<TabularDataset> {
    if spec.rows < 1 || spec.cols < 1 {
        return Err(Error::Config(format!(
            "synthetic dataset needs rows >= 1 and cols >= 1, got {}x{}",
            spec.rows, spec.cols
        )));
    }
    if spec.latent_rank < 1 || spec.latent_rank > spec.cols {
        return Err(Error::Config(format!(
            "latent_rank must satisfy 1 <= rank <= cols, got rank={} cols={}",
            spec.latent_rank, spec.cols
        )));
    }
    if !(spec.noise_sd >= 0.0) {
        return Err(Error::Config(format!(
            "noise_sd must be >= 0, got {}",
            spec.noise_sd
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let z = Array2::from_shape_vec((spec.rows, spec.latent_rank), draw(spec.rows * spec.latent_rank))
        .expect("shape matches draw count");
    let w = Array2::from_shape_vec((spec.latent_rank, spec.cols), draw(spec.latent_rank * spec.cols))
        .expect("shape matches draw count");
    let mut features = z.dot(&w);
    if spec.noise_sd > 0.0 {
        let noise = draw(spec.rows * spec.cols);
        for (cell, e) in features.iter_mut().zip(noise) {
            *cell += spec.noise_sd * e;
        }
    }

    let column_names = (0..spec.cols).map(|j| format!("f{j}")).collect();
    TabularDataset::new(features, None, column_names)
}

/// Center every column to mean 0 and scale to standard deviation 1
/// (population convention, divide by N). Zero-variance columns become
/// all-zero instead of dividing by zero.
pub fn normalize(ds: &TabularDataset) -> TabularDataset {
    let n = ds.n_rows() as f64;
    let mut features = ds.features.clone();
    for mut col in features.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if var > 0.0 {
            let sd = var.sqrt();
            col.mapv_inplace(|x| (x - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    TabularDataset {
        features,
        labels: ds.labels.clone(),
        column_names: ds.column_names.clone(),
    }
}

/// Shuffle columns with the seeded generator, then split them into K
/// contiguous chunks of size floor(d/K) or ceil(d/K).
pub fn partition_vertical(ds: &TabularDataset, k: usize, seed: u64) -> Result<VerticalPartition> {
    let d = ds.n_cols();
    if k < 1 {
        return Err(Error::Config("client count must be >= 1".into()));
    }
    if d < k {
        return Err(Error::Config(format!(
            "dataset has fewer columns than clients (d={d} < k={k}); every client needs at least one column"
        )));
    }

    let mut columns: Vec<usize> = (0..d).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    columns.shuffle(&mut rng);

    let base = d / k;
    let extra = d % k;
    let mut assignments = Vec::with_capacity(k);
    let mut start = 0;
    for client in 0..k {
        let size = base + usize::from(client < extra);
        let mut chunk: Vec<usize> = columns[start..start + size].to_vec();
        chunk.sort_unstable();
        assignments.push(chunk);
        start += size;
    }
    Ok(VerticalPartition { assignments })
}

/// Load an RFC-4180-style CSV with a header row. Numeric columns parse
/// as f64; columns with any non-numeric cell are one-hot encoded over
/// their distinct values (one indicator column per value, named
/// `col=value`). Empty cells are rejected with their location.
pub fn load_csv(
    path: &Path,
    label_column: Option<&str>,
    delimiter: u8,
) -> Result<TabularDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(file);

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::Data(format!("{}: no columns in header", path.display())));
    }
    let label_idx = match label_column {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("label column '{name}' not found in header")))?,
        ),
        None => None,
    };
    if label_idx.is_some() && headers.len() < 2 {
        return Err(Error::Data(
            "file has only the label column; at least one feature column required".into(),
        ));
    }

    // First pass: collect raw cells, tracking which columns stay numeric.
    let n_cols_raw = headers.len();
    let mut raw_rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {}: {e}", i + 2)))?;
        if record.len() != n_cols_raw {
            return Err(Error::Data(format!(
                "row {}: expected {n_cols_raw} cells, found {}",
                i + 2,
                record.len()
            )));
        }
        raw_rows.push(record.iter().map(|c| c.trim().to_string()).collect());
    }
    if raw_rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    let mut numeric = vec![true; n_cols_raw];
    for (i, row) in raw_rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Data(format!(
                    "row {}, column '{}': missing value",
                    i + 2,
                    headers[j]
                )));
            }
            if numeric[j] && cell.parse::<f64>().is_err() {
                numeric[j] = false;
            }
        }
    }
    if let Some(li) = label_idx {
        if !numeric[li] {
            return Err(Error::Data(format!(
                "label column '{}' must be numeric",
                headers[li]
            )));
        }
    }

    // Distinct values per categorical column, in sorted order for a
    // deterministic encoding.
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); n_cols_raw];
    for (j, cats) in categories.iter_mut().enumerate() {
        if !numeric[j] && label_idx != Some(j) {
            let distinct: BTreeSet<&str> = raw_rows.iter().map(|r| r[j].as_str()).collect();
            *cats = distinct.into_iter().map(str::to_string).collect();
        }
    }

    let mut column_names: Vec<String> = Vec::new();
    for j in 0..n_cols_raw {
        if label_idx == Some(j) {
            continue;
        }
        if numeric[j] {
            column_names.push(headers[j].clone());
        } else {
            for value in &categories[j] {
                column_names.push(format!("{}={}", headers[j], value));
            }
        }
    }
    let d = column_names.len();
    if d == 0 {
        return Err(Error::Data("no feature columns after removing label".into()));
    }

    let n = raw_rows.len();
    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels: Option<Vec<f64>> = label_idx.map(|_| Vec::with_capacity(n));
    for (i, row) in raw_rows.iter().enumerate() {
        let mut out_j = 0;
        for j in 0..n_cols_raw {
            if label_idx == Some(j) {
                let v: f64 = row[j].parse().map_err(|_| {
                    Error::Data(format!(
                        "row {}, column '{}': cannot parse '{}' as number",
                        i + 2,
                        headers[j],
                        row[j]
                    ))
                })?;
                labels.as_mut().expect("label vec exists").push(v);
                continue;
            }
            if numeric[j] {
                let v: f64 = row[j].parse().map_err(|_| {
                    Error::Data(format!(
                        "row {}, column '{}': cannot parse '{}' as number",
                        i + 2,
                        headers[j],
                        row[j]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "row {}, column '{}': non-finite value '{}'",
                        i + 2,
                        headers[j],
                        row[j]
                    )));
                }
                features[[i, out_j]] = v;
                out_j += 1;
            } else {
                let pos = categories[j]
                    .binary_search_by(|c| c.as_str().cmp(row[j].as_str()))
                    .expect("value collected in first pass");
                features[[i, out_j + pos]] = 1.0;
                out_j += categories[j].len();
            }
        }
    }

    TabularDataset::new(features, labels, column_names)
}

/// Write a dataset back to CSV with the configured delimiter. Floats are
/// printed with the shortest representation that round-trips exactly.
pub fn write_csv(ds: &TabularDataset, path: &Path, delimiter: u8) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let delim = delimiter as char;
    let mut header: Vec<String> = ds.column_names.to_vec();
    if ds.labels.is_some() {
        header.push("label".to_string());
    }
    writeln!(out, "{}", header.join(&delim.to_string()))?;
    for i in 0..ds.n_rows() {
        let mut cells: Vec<String> = (0..ds.n_cols())
            .map(|j| format!("{}", ds.features[[i, j]]))
            .collect();
        if let Some(ref labels) = ds.labels {
            cells.push(format!("{}", labels[i]));
        }
        writeln!(out, "{}", cells.join(&delim.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn csv_fixture(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_csv_parses_plain_numeric_file() {
        let f = csv_fixture("a,b\n1,2\n3,4\n5,6\n");
        let ds = load_csv(f.path(), None, b',').unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_cols(), 2);
        assert_eq!(ds.features()[[0, 0]], 1.0);
        assert_eq!(ds.features()[[2, 1]], 6.0);
        assert!(ds.labels().is_none());
    }

    #[test]
    fn load_csv_one_hot_adds_two_columns_for_three_values() {
        // One categorical column with 3 distinct values becomes 3
        // indicator columns: d grows from 2 to 4.
        let f = csv_fixture("num,cat\n1,x\n2,y\n3,z\n4,x\n");
        let ds = load_csv(f.path(), None, b',').unwrap();
        assert_eq!(ds.n_cols(), 4);
        assert_eq!(
            ds.column_names(),
            &["num", "cat=x", "cat=y", "cat=z"]
        );
        assert_eq!(ds.features()[[0, 1]], 1.0);
        assert_eq!(ds.features()[[1, 2]], 1.0);
        assert_eq!(ds.features()[[3, 1]], 1.0);
        assert_eq!(ds.features()[[3, 2]], 0.0);
    }

    #[test]
    fn load_csv_california_housing_format() {
        let content = "MedInc,HouseAge,AveRooms,AveBedrms,Population,AveOccup,Latitude,Longitude,MedHouseVal\n\
                       8.3252,41,6.9841,1.0238,322,2.5556,37.88,-122.23,4.526\n\
                       8.3014,21,6.2381,0.9719,2401,2.1098,37.86,-122.22,3.585\n\
                       7.2574,52,8.2881,1.0734,496,2.8023,37.85,-122.24,3.521\n";
        // Column-count oracle: split the header line directly.
        let header_cols = content.lines().next().unwrap().split(',').count();
        assert_eq!(header_cols - 1, 8);

        let f = csv_fixture(content);
        let ds = load_csv(f.path(), Some("MedHouseVal"), b',').unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_cols(), 8);
        let labels = ds.labels().unwrap();
        assert_eq!(labels.len(), 3);
        assert_eq!(labels[1], 3.585);
    }

    #[test]
    fn load_csv_reports_ragged_row_location() {
        let f = csv_fixture("a,b\n1,2\n3\n");
        let err = load_csv(f.path(), None, b',').unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn load_csv_rejects_missing_values_with_location() {
        let f = csv_fixture("a,b\n1,2\n3,\n");
        let err = load_csv(f.path(), None, b',').unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3") && msg.contains("'b'"), "{msg}");
    }

    #[test]
    fn load_csv_missing_file_is_io_error() {
        let err = load_csv(Path::new("/nonexistent/file.csv"), None, b',').unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn normalize_matches_hand_arithmetic() {
        // Column [1,2,3]: mean 2, population sd sqrt(2/3).
        let ds = TabularDataset::new(
            Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 3.0]).unwrap(),
            None,
            vec!["x".into()],
        )
        .unwrap();
        let normed = normalize(&ds);
        let sd = (2.0f64 / 3.0).sqrt();
        let expected = [(1.0 - 2.0) / sd, 0.0, (3.0 - 2.0) / sd];
        assert!((expected[0] + 1.224744871391589).abs() < 1e-12);
        for (i, e) in expected.iter().enumerate() {
            assert!((normed.features()[[i, 0]] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_zero_variance_column_becomes_zero() {
        let ds = TabularDataset::new(
            Array2::from_shape_vec((3, 1), vec![5.0, 5.0, 5.0]).unwrap(),
            None,
            vec!["x".into()],
        )
        .unwrap();
        let normed = normalize(&ds);
        assert!(normed.features().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_mean_and_sd_postconditions() {
        let ds = synthesize(&SyntheticSpec {
            rows: 64,
            cols: 5,
            latent_rank: 3,
            noise_sd: 0.3,
            seed: 9,
        })
        .unwrap();
        let normed = normalize(&ds);
        let n = normed.n_rows() as f64;
        for col in normed.features().columns() {
            let mean = col.sum() / n;
            let sd = (col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((sd - 1.0).abs() < 1e-9, "sd {sd}");
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let ds = synthesize(&SyntheticSpec {
            rows: 40,
            cols: 6,
            latent_rank: 2,
            noise_sd: 0.5,
            seed: 4,
        })
        .unwrap();
        let once = normalize(&ds);
        let twice = normalize(&once);
        for (a, b) in once.features().iter().zip(twice.features().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn synthesize_is_deterministic() {
        let spec = SyntheticSpec {
            rows: 100,
            cols: 16,
            latent_rank: 4,
            noise_sd: 0.01,
            seed: 7,
        };
        let a = synthesize(&spec).unwrap();
        let b = synthesize(&spec).unwrap();
        assert_eq!(a.features(), b.features());
    }

    /// Largest two singular values by power iteration with one
    /// deflation step; independent of the generator under test.
    fn top_two_singular_values(m: &Array2<f64>) -> (f64, f64) {
        let gram = m.t().dot(m);
        let d = gram.nrows();
        let power = |g: &Array2<f64>| -> (f64, Vec<f64>) {
            let mut v = vec![1.0 / (d as f64).sqrt(); d];
            let mut eig = 0.0;
            for _ in 0..500 {
                let mut next = vec![0.0; d];
                for i in 0..d {
                    for j in 0..d {
                        next[i] += g[[i, j]] * v[j];
                    }
                }
                let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return (0.0, v);
                }
                for x in &mut next {
                    *x /= norm;
                }
                eig = norm;
                v = next;
            }
            (eig, v)
        };
        let (l1, v1) = power(&gram);
        let mut deflated = gram.clone();
        for i in 0..d {
            for j in 0..d {
                deflated[[i, j]] -= l1 * v1[i] * v1[j];
            }
        }
        let (l2, _) = power(&deflated);
        (l1.max(0.0).sqrt(), l2.max(0.0).sqrt())
    }

    /// Numerical rank by Gaussian elimination with partial pivoting.
    fn elimination_rank(m: &Array2<f64>, rel_tol: f64) -> usize {
        let mut a = m.clone();
        let (n, d) = a.dim();
        let max_abs = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let tol = rel_tol * max_abs;
        let mut rank = 0;
        let mut row = 0;
        for col in 0..d {
            let pivot = (row..n).max_by(|&i, &j| {
                a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).unwrap()
            });
            let Some(p) = pivot else { break };
            if a[[p, col]].abs() <= tol {
                continue;
            }
            if p != row {
                for c in 0..d {
                    let tmp = a[[p, c]];
                    a[[p, c]] = a[[row, c]];
                    a[[row, c]] = tmp;
                }
            }
            for i in (row + 1)..n {
                let factor = a[[i, col]] / a[[row, col]];
                for c in col..d {
                    a[[i, c]] -= factor * a[[row, c]];
                }
            }
            rank += 1;
            row += 1;
            if row == n {
                break;
            }
        }
        rank
    }

    #[test]
    fn synthesize_rank_one_when_noiseless() {
        let ds = synthesize(&SyntheticSpec {
            rows: 30,
            cols: 6,
            latent_rank: 1,
            noise_sd: 0.0,
            seed: 3,
        })
        .unwrap();
        let (s1, s2) = top_two_singular_values(ds.features());
        assert!(s1 > 0.0);
        assert!(s2 < 1e-8 * s1, "s1={s1} s2={s2}");
    }

    #[test]
    fn synthesize_full_rank_with_noise() {
        let ds = synthesize(&SyntheticSpec {
            rows: 50,
            cols: 8,
            latent_rank: 8,
            noise_sd: 0.1,
            seed: 1,
        })
        .unwrap();
        assert_eq!(elimination_rank(ds.features(), 1e-10), 8);
    }

    #[test]
    fn synthesize_rejects_bad_rank() {
        let spec = SyntheticSpec {
            rows: 10,
            cols: 4,
            latent_rank: 5,
            noise_sd: 0.0,
            seed: 0,
        };
        assert!(matches!(synthesize(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn partition_one_column_per_client_when_d_equals_k() {
        let ds = synthesize(&SyntheticSpec {
            rows: 4,
            cols: 8,
            latent_rank: 2,
            noise_sd: 0.1,
            seed: 0,
        })
        .unwrap();
        let part = partition_vertical(&ds, 8, 11).unwrap();
        assert_eq!(part.n_clients(), 8);
        assert!(part.assignments().iter().all(|a| a.len() == 1));
    }

    #[test]
    fn partition_chunk_sizes_are_balanced() {
        let ds = synthesize(&SyntheticSpec {
            rows: 4,
            cols: 10,
            latent_rank: 2,
            noise_sd: 0.1,
            seed: 0,
        })
        .unwrap();
        let part = partition_vertical(&ds, 3, 5).unwrap();
        let mut sizes: Vec<usize> = part.assignments().iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn partition_is_deterministic() {
        let ds = synthesize(&SyntheticSpec {
            rows: 4,
            cols: 12,
            latent_rank: 2,
            noise_sd: 0.1,
            seed: 0,
        })
        .unwrap();
        assert_eq!(
            partition_vertical(&ds, 5, 99).unwrap(),
            partition_vertical(&ds, 5, 99).unwrap()
        );
    }

    #[test]
    fn partition_rejects_more_clients_than_columns() {
        let ds = synthesize(&SyntheticSpec {
            rows: 4,
            cols: 3,
            latent_rank: 1,
            noise_sd: 0.1,
            seed: 0,
        })
        .unwrap();
        assert!(matches!(
            partition_vertical(&ds, 4, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn csv_round_trip_preserves_matrix() {
        let ds = synthesize(&SyntheticSpec {
            rows: 20,
            cols: 7,
            latent_rank: 3,
            noise_sd: 0.2,
            seed: 13,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.csv");
        write_csv(&ds, &path, b',').unwrap();
        let back = load_csv(&path, None, b',').unwrap();
        assert_eq!(back.n_rows(), ds.n_rows());
        assert_eq!(back.n_cols(), ds.n_cols());
        for (a, b) in ds.features().iter().zip(back.features().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn partition_disjoint_cover(d in 1usize..40, k in 1usize..12, seed in 0u64..1000) {
            prop_assume!(d >= k);
            let ds = synthesize(&SyntheticSpec {
                rows: 2,
                cols: d,
                latent_rank: 1,
                noise_sd: 0.0,
                seed: 0,
            }).unwrap();
            let part = partition_vertical(&ds, k, seed).unwrap();
            let mut seen = vec![false; d];
            let mut total = 0;
            for cols in part.assignments() {
                prop_assert!(!cols.is_empty());
                for &c in cols {
                    prop_assert!(!seen[c], "column {} assigned twice", c);
                    seen[c] = true;
                    total += 1;
                }
            }
            prop_assert_eq!(total, d);
            prop_assert!(seen.into_iter().all(|s| s));
        }
    }
}
