//! Dataset files: per-shard CSV, the `DVS1` binary cache, and `truth.json`.
//!
//! CSV rows are `y,x_1,...,x_p` with no header unless requested. The binary
//! cache is the magic `DVS1`, then family tag, N, p, m as little-endian u64,
//! then N rows of `y,x_1,...,x_p` as little-endian f64, shards contiguous.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DvsError, Result};
use crate::glm::{DataShard, Family};
use crate::simgen::GeneratedDataset;

pub const BINARY_MAGIC: &[u8; 4] = b"DVS1";
pub const BINARY_FILE: &str = "dataset.bin";
pub const TRUTH_FILE: &str = "truth.json";

pub fn shard_file_name(i: usize) -> String {
    format!("shard_{i:03}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub scenario: String,
    pub family: Family,
    #[serde(rename = "N")]
    pub n_total: usize,
    pub p: usize,
    pub m: usize,
    pub seed: u64,
    pub beta: Vec<f64>,
    /// 1-based.
    pub support: Vec<usize>,
}

impl TruthFile {
    pub fn from_dataset(d: &GeneratedDataset) -> Self {
        Self {
            scenario: d.spec.scenario.to_string(),
            family: d.family,
            n_total: d.spec.n_total,
            p: d.spec.p,
            m: d.spec.m,
            seed: d.spec.seed,
            beta: d.truth.values().to_vec(),
            support: d.support.iter().map(|j| j + 1).collect(),
        }
    }
}

fn write_truth(dir: &Path, d: &GeneratedDataset) -> Result<()> {
    let f = BufWriter::new(File::create(dir.join(TRUTH_FILE))?);
    serde_json::to_writer_pretty(f, &TruthFile::from_dataset(d))?;
    Ok(())
}

pub fn write_shard_csv<W: Write>(shard: &DataShard, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    for (x, y) in shard.x().rows().into_iter().zip(shard.y()) {
        write!(w, "{y}")?;
        for v in x {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `shard_000.csv`, ... and `truth.json` into `dir`.
pub fn write_dataset_csv(dir: &Path, d: &GeneratedDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in &d.shards {
        write_shard_csv(s, File::create(dir.join(shard_file_name(s.machine_id)))?)?;
    }
    write_truth(dir, d)
}

/// Writes `dataset.bin` and `truth.json` into `dir`.
pub fn write_dataset_binary(dir: &Path, d: &GeneratedDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_binary(File::create(dir.join(BINARY_FILE))?, d.family, &d.shards)?;
    write_truth(dir, d)
}

pub fn write_binary<W: Write>(w: W, family: Family, shards: &[DataShard]) -> Result<()> {
    let mut w = BufWriter::new(w);
    let n: usize = shards.iter().map(|s| s.n()).sum();
    let p = shards.first().map_or(0, |s| s.p());
    w.write_all(BINARY_MAGIC)?;
    for v in [family.tag(), n as u64, p as u64, shards.len() as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for s in shards {
        for (x, y) in s.x().rows().into_iter().zip(s.y()) {
            w.write_all(&y.to_le_bytes())?;
            for v in x {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a binary cache back into its family and equal-sized shards.
pub fn read_binary<R: Read>(r: R) -> Result<(Family, Vec<DataShard>)> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(DvsError::Config(format!("not a DVS1 cache (magic {magic:?})")));
    }
    let tag = read_u64(&mut r)?;
    let family = Family::from_tag(tag).ok_or_else(|| DvsError::Config(format!("unknown family tag {tag}")))?;
    let (n, p, m) = (read_u64(&mut r)? as usize, read_u64(&mut r)? as usize, read_u64(&mut r)? as usize);
    if m == 0 || n % m != 0 || p == 0 {
        return Err(DvsError::Config(format!("inconsistent cache header N={n}, p={p}, m={m}")));
    }
    let rows = n / m;
    let mut buf = vec![0u8; 8 * (p + 1)];
    let mut shards = Vec::with_capacity(m);
    for i in 0..m {
        let mut x = Array2::zeros((rows, p));
        let mut y = Array1::zeros(rows);
        for j in 0..rows {
            r.read_exact(&mut buf)?;
            let mut vals = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
            y[j] = vals.next().expect("response present");
            for (dst, v) in x.row_mut(j).iter_mut().zip(vals) {
                *dst = v;
            }
        }
        shards.push(DataShard::new(i, x, y)?);
    }
    Ok((family, shards))
}

struct Row {
    values: Vec<f64>,
}

fn parse_csv(path: &Path, header: bool, family: Option<Family>) -> Result<Vec<Row>> {
    let f = File::open(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if (header && idx == 0) || line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DvsError::DataValidation {
            row: lineno,
            reason: format!("{}: {reason}", path.display()),
        };
        let values = line
            .split(',')
            .enumerate()
            .map(|(c, s)| s.trim().parse::<f64>().map_err(|_| bad(format!("column {}: cannot parse '{}'", c + 1, s.trim()))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() < 2 {
            return Err(bad("need a response and at least one covariate".into()));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(bad(format!("expected {w} columns, found {}", values.len())));
            }
            _ => {}
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("column {} is not finite", j + 1)));
        }
        if let Some(fam) = family {
            fam.validate_response(values[0]).map_err(bad)?;
        }
        rows.push(Row { values });
    }
    if rows.is_empty() {
        return Err(DvsError::DataValidation {
            row: 0,
            reason: format!("{}: no data rows", path.display()),
        });
    }
    Ok(rows)
}

fn rows_to_shard(machine_id: usize, rows: &[Row]) -> Result<DataShard> {
    let p = rows[0].values.len() - 1;
    let mut x = Array2::zeros((rows.len(), p));
    let mut y = Array1::zeros(rows.len());
    for (i, r) in rows.iter().enumerate() {
        y[i] = r.values[0];
        for (dst, v) in x.row_mut(i).iter_mut().zip(&r.values[1..]) {
            *dst = *v;
        }
    }
    DataShard::new(machine_id, x, y)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    /// Skip the first line of every CSV.
    pub header: bool,
    /// Number of machines when splitting a single CSV file.
    pub m: Option<usize>,
    /// Shuffle rows of a single CSV before splitting.
    pub shuffle_seed: Option<u64>,
    /// Validate responses against this family while parsing.
    pub family: Option<Family>,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub shards: Vec<DataShard>,
    /// Family recorded in a binary cache, if any.
    pub family: Option<Family>,
    pub sources: Vec<PathBuf>,
}

/// Loads a directory of shard CSVs, a directory holding `dataset.bin`, a
/// `.bin` file, or a single CSV split into `m` contiguous blocks.
pub fn load_data(path: &Path, opts: &LoadOptions) -> Result<LoadedData> {
    let meta = fs::metadata(path)
        .map_err(|e| DvsError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    if meta.is_dir() {
        let bin = path.join(BINARY_FILE);
        if bin.is_file() {
            return load_binary_file(&bin, opts);
        }
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(DvsError::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no .csv shards in {}", path.display()),
            )));
        }
        if files.len() == 1 && opts.m.is_some_and(|m| m > 1) {
            return split_single(&files[0], opts);
        }
        let shards = files
            .iter()
            .enumerate()
            .map(|(i, f)| rows_to_shard(i, &parse_csv(f, opts.header, opts.family)?))
            .collect::<Result<Vec<_>>>()?;
        let p = shards[0].p();
        if let Some((f, s)) = files.iter().zip(&shards).find(|(_, s)| s.p() != p) {
            return Err(DvsError::DataValidation {
                row: 0,
                reason: format!("{}: {} covariates, expected {p}", f.display(), s.p()),
            });
        }
        return Ok(LoadedData { shards, family: None, sources: files });
    }
    if path.extension().is_some_and(|e| e == "bin") {
        return load_binary_file(path, opts);
    }
    split_single(path, opts)
}

fn load_binary_file(path: &Path, opts: &LoadOptions) -> Result<LoadedData> {
    let (family, shards) = read_binary(File::open(path)?)?;
    if let Some(fam) = opts.family {
        for s in &shards {
            s.validate_for(fam)?;
        }
    }
    Ok(LoadedData {
        shards,
        family: Some(family),
        sources: vec![path.to_path_buf()],
    })
}

fn split_single(path: &Path, opts: &LoadOptions) -> Result<LoadedData> {
    let m = opts.m.unwrap_or(1);
    if m == 0 {
        return Err(DvsError::Config("m must be at least 1".into()));
    }
    let mut rows = parse_csv(path, opts.header, opts.family)?;
    if rows.len() < m {
        return Err(DvsError::Config(format!("{} rows cannot be split over {m} machines", rows.len())));
    }
    if let Some(seed) = opts.shuffle_seed {
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    if rows.len() % m != 0 {
        warn!("{} rows do not split evenly over {m} machines; leading shards get one extra row", rows.len());
    }
    let (base, extra) = (rows.len() / m, rows.len() % m);
    let mut shards = Vec::with_capacity(m);
    let mut start = 0;
    for i in 0..m {
        let len = base + usize::from(i < extra);
        shards.push(rows_to_shard(i, &rows[start..start + len])?);
        start += len;
    }
    Ok(LoadedData { shards, family: None, sources: vec![path.to_path_buf()] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Subtracted from `y` (Gaussian only).
    pub y_center: f64,
}

/// Centers and scales every column with pooled moments across shards.
///
/// Constant columns keep scale 1. For Gaussian responses `y` is centered too,
/// since the model has no intercept.
pub fn standardize_shards(shards: Vec<DataShard>, family: Family) -> Result<(Vec<DataShard>, Standardization)> {
    let p = shards[0].p();
    let n: usize = shards.iter().map(|s| s.n()).sum();
    let nf = n as f64;
    let mut center = vec![0.0; p];
    let mut y_center = 0.0;
    for s in &shards {
        for (c, col_sum) in center.iter_mut().zip(s.x().sum_axis(Axis(0))) {
            *c += col_sum;
        }
        y_center += s.y().sum();
    }
    center.iter_mut().for_each(|c| *c /= nf);
    y_center = if family == Family::Gaussian { y_center / nf } else { 0.0 };

    let mut ss = vec![0.0; p];
    for s in &shards {
        for row in s.x().rows() {
            for ((acc, v), c) in ss.iter_mut().zip(row).zip(&center) {
                *acc += (v - c) * (v - c);
            }
        }
    }
    let scale: Vec<f64> = ss
        .iter()
        .map(|v| {
            let sd = (v / nf).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();

    let out = shards
        .into_iter()
        .map(|s| {
            let (id, mut x, mut y) = s.into_parts();
            for mut row in x.rows_mut() {
                for ((v, c), sc) in row.iter_mut().zip(&center).zip(&scale) {
                    *v = (*v - c) / sc;
                }
            }
            y.mapv_inplace(|v| v - y_center);
            DataShard::new(id, x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, Standardization { center, scale, y_center }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate, Scenario, ScenarioSpec};

    fn dataset() -> GeneratedDataset {
        generate(&ScenarioSpec { scenario: Scenario::Logistic21, n_total: 40, p: 7, m: 4, seed: 11 }).unwrap()
    }

    #[test]
    fn csv_directory_round_trip_is_exact() {
        let d = dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset_csv(dir.path(), &d).unwrap();
        let loaded = load_data(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded.shards, d.shards);
        let truth: TruthFile = serde_json::from_reader(File::open(dir.path().join(TRUTH_FILE)).unwrap()).unwrap();
        assert_eq!(truth.support, vec![2, 4, 6]);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let d = dataset();
        let dir = tempfile::tempdir().unwrap();
        write_dataset_binary(dir.path(), &d).unwrap();
        let loaded = load_data(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(loaded.family, Some(Family::Bernoulli));
        assert_eq!(loaded.shards, d.shards);
    }

    #[test]
    fn binary_header_layout() {
        let d = dataset();
        let mut buf = Vec::new();
        write_binary(&mut buf, d.family, &d.shards).unwrap();
        assert_eq!(&buf[..4], b"DVS1");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), Family::Bernoulli.tag());
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 40);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(buf[28..36].try_into().unwrap()), 4);
        assert_eq!(buf.len(), 36 + 40 * 8 * 8);
        assert_eq!(f64::from_le_bytes(buf[36..44].try_into().unwrap()), d.shards[0].y()[0]);
        assert!(read_binary(&b"DVS2xxxxxxxx"[..]).is_err());
    }

    #[test]
    fn single_csv_auto_sharding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("all.csv");
        fs::write(&path, "y,a,b\n1,1,2\n0,3,4\n1,5,6\n0,7,8\n1,9,10\n").unwrap();
        let opts = LoadOptions { header: true, m: Some(2), ..Default::default() };
        let d = load_data(&path, &opts).unwrap();
        assert_eq!(d.shards.len(), 2);
        assert_eq!(d.shards[0].n(), 3);
        assert_eq!(d.shards[1].n(), 2);
        assert_eq!(d.shards[1].x()[[0, 0]], 7.0);

        let shuffled = load_data(&path, &LoadOptions { shuffle_seed: Some(3), ..opts.clone() }).unwrap();
        let again = load_data(&path, &LoadOptions { shuffle_seed: Some(3), ..opts }).unwrap();
        assert_eq!(shuffled.shards, again.shards);
        let total: f64 = shuffled.shards.iter().map(|s| s.y().sum()).sum();
        assert_eq!(total, 3.0);
    }

    #[test]
    fn bad_rows_report_file_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "1,0.5\n0,0.1\n2,0.3\n").unwrap();
        let opts = LoadOptions { family: Some(Family::Bernoulli), ..Default::default() };
        match load_data(&path, &opts) {
            Err(DvsError::DataValidation { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&path, "1,0.5\n0,abc\n").unwrap();
        assert!(matches!(load_data(&path, &LoadOptions::default()), Err(DvsError::DataValidation { row: 2, .. })));
        fs::write(&path, "1,0.5\n0,1,2\n").unwrap();
        assert!(matches!(load_data(&path, &LoadOptions::default()), Err(DvsError::DataValidation { row: 2, .. })));
        assert!(matches!(load_data(&dir.path().join("missing.csv"), &LoadOptions::default()), Err(DvsError::Io(_))));
    }

    #[test]
    fn standardization_moments() {
        let d = dataset();
        let (shards, st) = standardize_shards(d.shards.clone(), Family::Gaussian).unwrap();
        let pooled = crate::simgen::pool_shards(&shards);
        for j in 0..7 {
            let col = pooled.x().column(j).to_owned();
            assert!(col.mean().unwrap().abs() < 1e-12);
            assert!((col.mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(pooled.y().mean().unwrap().abs() < 1e-12);
        assert_eq!(st.center.len(), 7);
        let (_, st_b) = standardize_shards(d.shards, Family::Bernoulli).unwrap();
        assert_eq!(st_b.y_center, 0.0);
    }
}
