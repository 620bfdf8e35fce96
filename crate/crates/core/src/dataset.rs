//! Alloy records: CSV ingestion, median de-duplication, seeded splits and the
//! exact nearest-neighbour index behind the proximity constraint.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DatasetError;
use crate::features::{compute_features, Composition, FeatureVector, N_FEATURES};
use crate::registry::Registry;

/// Rows whose percentages sum within this distance of 100 are rescaled onto
/// the simplex; larger deviations are rejected.
pub const INGEST_SUM_TOLERANCE: f64 = 1e-6;

/// Relative tolerance for ingested `y1..y7` columns against recomputed features.
pub const FEATURE_CHECK_RTOL: f64 = 1e-9;

pub const TARGET_COLUMN: &str = "ms_celsius";
pub const GROUP_SIZE_COLUMN: &str = "group_size";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlloyRecord {
    pub composition: Composition,
    pub features: FeatureVector,
    /// Martensite start temperature, °C.
    pub ms_temperature: f64,
    /// Number of raw measurements merged into this record.
    pub group_size: usize,
}

impl AlloyRecord {
    pub fn new(composition: Composition, ms_temperature: f64, reg: &Registry) -> Result<Self, DatasetError> {
        let features = compute_features(&composition, reg)?;
        Ok(AlloyRecord {
            composition,
            features,
            ms_temperature,
            group_size: 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<AlloyRecord>,
    pub provenance: Vec<String>,
}

impl Dataset {
    pub fn new(records: Vec<AlloyRecord>) -> Self {
        Dataset {
            records,
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn features(&self) -> Vec<FeatureVector> {
        self.records.iter().map(|r| r.features).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ms_temperature).collect()
    }

    fn with_tag(mut self, tag: String) -> Self {
        self.provenance.push(tag);
        self
    }

    /// Writes the ingest schema plus `y1..y7` and `group_size`.
    pub fn write_csv<W: Write>(&self, w: W, reg: &Registry) -> Result<(), DatasetError> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = reg.symbols().map(str::to_string).collect();
        header.push(TARGET_COLUMN.to_string());
        header.extend((1..=N_FEATURES).map(|k| format!("y{k}")));
        header.push(GROUP_SIZE_COLUMN.to_string());
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = r.composition.as_slice().iter().map(|v| v.to_string()).collect();
            row.push(r.ms_temperature.to_string());
            row.extend(r.features.0.iter().map(|v| v.to_string()));
            row.push(r.group_size.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn save(&self, path: &Path, reg: &Registry) -> Result<(), DatasetError> {
        let f = std::fs::File::create(path).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.write_csv(std::io::BufWriter::new(f), reg)
    }
}

/// Reads an alloy CSV: one column per element symbol (percent) and
/// `ms_celsius`; optional `y1..y7` are checked against recomputed features and
/// an optional `group_size` column is carried through.
pub fn ingest_csv(path: &Path, reg: &Registry) -> Result<Dataset, DatasetError> {
    let f = std::fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(read_csv(f, reg)?.with_tag(format!("ingest:{}", path.display())))
}

pub fn read_csv<R: Read>(r: R, reg: &Registry) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();

    let mut element_cols: Vec<(usize, usize)> = Vec::new();
    let mut target_col = None;
    let mut group_col = None;
    let mut feature_cols = [None; N_FEATURES];
    for (c, h) in headers.iter().enumerate() {
        if h == TARGET_COLUMN {
            target_col = Some(c);
        } else if h == GROUP_SIZE_COLUMN {
            group_col = Some(c);
        } else if let Some(k) = feature_column_index(h) {
            feature_cols[k] = Some(c);
        } else if let Some(i) = reg.index_of(h) {
            element_cols.push((c, i));
        } else {
            return Err(DatasetError::UnknownElement(h.to_string()));
        }
    }
    let target_col = target_col.ok_or_else(|| DatasetError::MissingColumn(TARGET_COLUMN.into()))?;

    let mut records = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // Header is line 1.
        let row = r + 2;
        let field = |c: usize, name: &str| -> Result<f64, DatasetError> {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() {
                return Ok(0.0);
            }
            raw.parse::<f64>().map_err(|_| DatasetError::Row {
                row,
                message: format!("column `{name}`: cannot parse `{raw}`"),
            })
        };
        let mut x = vec![0.0; reg.len()];
        for &(c, i) in &element_cols {
            let v = field(c, &reg.element(i).symbol)?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(DatasetError::Row {
                    row,
                    message: format!("negative percentage {v} for {}", reg.element(i).symbol),
                });
            }
            x[i] = v;
        }
        let sum: f64 = x.iter().sum();
        if (sum - 100.0).abs() > INGEST_SUM_TOLERANCE {
            return Err(DatasetError::Row {
                row,
                message: format!("composition sums to {sum}, expected 100"),
            });
        }
        for v in &mut x {
            *v *= 100.0 / sum;
        }
        let composition = Composition::new(x).map_err(|e| DatasetError::Row {
            row,
            message: e.to_string(),
        })?;
        let raw_t = rec.get(target_col).unwrap_or("");
        let ms: f64 = raw_t.parse().map_err(|_| DatasetError::Row {
            row,
            message: format!("cannot parse temperature `{raw_t}`"),
        })?;
        let mut record = AlloyRecord::new(composition, ms, reg)?;
        for (k, col) in feature_cols.iter().enumerate() {
            if let Some(c) = *col {
                let given = field(c, "y")?;
                let computed = record.features.0[k];
                let tol = FEATURE_CHECK_RTOL * computed.abs().max(given.abs()).max(f64::MIN_POSITIVE);
                if (given - computed).abs() > tol {
                    return Err(DatasetError::Row {
                        row,
                        message: format!("y{} = {given} disagrees with computed {computed}", k + 1),
                    });
                }
            }
        }
        if let Some(c) = group_col {
            let g = field(c, GROUP_SIZE_COLUMN)?;
            record.group_size = (g as usize).max(1);
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(Dataset::new(records))
}

fn feature_column_index(h: &str) -> Option<usize> {
    let k: usize = h.strip_prefix('y')?.parse().ok()?;
    (1..=N_FEATURES).contains(&k).then(|| k - 1)
}

/// Grouping key: each feature rounded to 12 significant digits.
fn dedup_key(y: &FeatureVector) -> [String; N_FEATURES] {
    y.0.map(|v| {
        let v = if v == 0.0 { 0.0 } else { v };
        format!("{v:.11e}")
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Collapses records with equal (rounded) feature vectors into one record
/// carrying the median temperature. Groups keep the position and composition
/// of their first member; `group_size` accumulates.
pub fn dedup_median(d: &Dataset) -> Dataset {
    let mut order: Vec<[String; N_FEATURES]> = Vec::new();
    let mut groups: HashMap<[String; N_FEATURES], Vec<usize>> = HashMap::new();
    for (i, r) in d.records.iter().enumerate() {
        let key = dedup_key(&r.features);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(i);
    }
    let records = order
        .iter()
        .map(|key| {
            let members = &groups[key];
            let mut first = d.records[members[0]].clone();
            if members.len() > 1 {
                let mut temps: Vec<f64> = members.iter().map(|&i| d.records[i].ms_temperature).collect();
                first.ms_temperature = median(&mut temps);
                first.group_size = members.iter().map(|&i| d.records[i].group_size).sum();
            }
            first
        })
        .collect();
    let mut out = Dataset::new(records);
    out.provenance = d.provenance.clone();
    out.provenance.push("dedup_median".into());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(train_fraction: f64, seed: u64) -> Result<Self, DatasetError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DatasetError::BadFraction(train_fraction));
        }
        Ok(SplitConfig { train_fraction, seed })
    }
}

/// splitmix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn record_hash(r: &AlloyRecord, seed: u64) -> u64 {
    let mut h = mix64(seed);
    for v in r.composition.as_slice() {
        h = mix64(h ^ v.to_bits());
    }
    h = mix64(h ^ r.ms_temperature.to_bits());
    mix64(h ^ r.group_size as u64)
}

/// Seeded partition into train/test. The order is a sort on a per-record
/// hash keyed by the seed, so the result does not depend on input order.
pub fn split(d: &Dataset, cfg: &SplitConfig) -> Result<(Dataset, Dataset), DatasetError> {
    SplitConfig::new(cfg.train_fraction, cfg.seed)?;
    let mut keyed: Vec<(u64, usize)> = d
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (record_hash(r, cfg.seed), i))
        .collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            let (ra, rb) = (&d.records[a.1], &d.records[b.1]);
            ra.composition
                .as_slice()
                .iter()
                .zip(rb.composition.as_slice())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or_else(|| ra.ms_temperature.total_cmp(&rb.ms_temperature))
        })
    });
    let n_train = (d.len() as f64 * cfg.train_fraction).round() as usize;
    let take = |range: &[(u64, usize)]| {
        let mut out = Dataset::new(range.iter().map(|&(_, i)| d.records[i].clone()).collect());
        out.provenance = d.provenance.clone();
        out
    };
    let train = take(&keyed[..n_train]).with_tag(format!("split:train:{}:{}", cfg.train_fraction, cfg.seed));
    let test = take(&keyed[n_train..]).with_tag(format!("split:test:{}:{}", cfg.train_fraction, cfg.seed));
    Ok((train, test))
}

/// Per-feature affine scaling `(y - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl Standardization {
    /// Population statistics; zero-spread features get unit scale.
    pub fn fit(rows: &[FeatureVector]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; N_FEATURES];
        for r in rows {
            for k in 0..N_FEATURES {
                mean[k] += r.0[k] / n;
            }
        }
        let mut std = [0.0; N_FEATURES];
        for r in rows {
            for k in 0..N_FEATURES {
                std[k] += (r.0[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Standardization { mean, std }
    }

    pub fn apply(&self, y: &FeatureVector) -> FeatureVector {
        let mut out = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            out[k] = (y.0[k] - self.mean[k]) / self.std[k];
        }
        FeatureVector(out)
    }
}

/// Exact linear-scan nearest-neighbour index over feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex {
    rows: Vec<FeatureVector>,
    scaling: Option<Standardization>,
}

impl NeighborIndex {
    /// Raw feature units.
    pub fn new(rows: Vec<FeatureVector>) -> Result<Self, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(NeighborIndex { rows, scaling: None })
    }

    /// Distances measured after per-feature standardization.
    pub fn standardized(rows: Vec<FeatureVector>) -> Result<Self, DatasetError> {
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        let scaling = Standardization::fit(&rows);
        let rows = rows.iter().map(|r| scaling.apply(r)).collect();
        Ok(NeighborIndex {
            rows,
            scaling: Some(scaling),
        })
    }

    pub fn from_dataset(d: &Dataset) -> Result<Self, DatasetError> {
        Self::new(d.features())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scaling(&self) -> Option<&Standardization> {
        self.scaling.as_ref()
    }

    /// Query vector in the index's distance space.
    pub fn to_index_space(&self, y: &FeatureVector) -> FeatureVector {
        match &self.scaling {
            Some(s) => s.apply(y),
            None => *y,
        }
    }

    /// Row `id` in the index's distance space.
    pub fn row(&self, id: usize) -> &FeatureVector {
        &self.rows[id]
    }

    /// Minimum Euclidean distance and the lowest row id attaining it.
    pub fn min_distance(&self, y: &FeatureVector) -> (f64, usize) {
        let q = self.to_index_space(y);
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (id, r) in self.rows.iter().enumerate() {
            let mut d2 = 0.0;
            for k in 0..N_FEATURES {
                let d = q.0[k] - r.0[k];
                d2 += d * d;
            }
            if d2 < best {
                best = d2;
                arg = id;
            }
        }
        (best.sqrt(), arg)
    }
}
