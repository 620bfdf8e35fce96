//! Synthetic alloy data with a known smooth temperature law, for
//! end-to-end checks when no measured dataset is available.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{mix64, AlloyRecord, Dataset, Standardization};
use crate::driver::random_composition;
use crate::error::{DatasetError, RegistryError};
use crate::features::{compute_features, FeatureVector};
use crate::registry::Registry;

/// Element family of the synthetic alloys.
pub const SYNTHETIC_ELEMENTS: [&str; 8] = ["Ni", "Ti", "Cu", "Hf", "Zr", "Pd", "Fe", "Al"];

const REFERENCE_SEED: u64 = 0x005E_ED0F_A110;
const REFERENCE_SIZE: usize = 4000;

pub fn synthetic_registry() -> Result<Registry, RegistryError> {
    Registry::default_39().subset_by_symbols(&SYNTHETIC_ELEMENTS)
}

/// Smooth temperature law on standardized features. The scaling comes from a
/// fixed reference sample, so the law depends only on the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scaling: Standardization,
}

impl GroundTruth {
    pub fn for_registry(reg: &Registry) -> Result<Self, DatasetError> {
        let mut rng = ChaCha8Rng::seed_from_u64(REFERENCE_SEED);
        let rows = (0..REFERENCE_SIZE)
            .map(|i| compute_features(&random_composition(&mut rng, reg.len(), 2 + i % 4), reg))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GroundTruth {
            scaling: Standardization::fit(&rows),
        })
    }

    /// °C.
    pub fn temperature(&self, y: &FeatureVector) -> f64 {
        let z = self.scaling.apply(y).0;
        let [dh, a, vec, r, rd, chi, chid] = z;
        40.0 + 70.0 * (0.8 * vec).tanh() + 30.0 * chi - 25.0 * rd + 15.0 * dh.sin() + 10.0 * a * chid - 8.0 * r * r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_alloys: usize,
    /// Standard deviation of the measurement noise, °C.
    pub noise_sd: f64,
    pub min_support: usize,
    pub max_support: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_alloys: 800,
            noise_sd: 5.0,
            min_support: 2,
            max_support: 5,
            seed: 7,
        }
    }
}

pub fn generate(reg: &Registry, truth: &GroundTruth, cfg: &SyntheticConfig) -> Result<Dataset, DatasetError> {
    if cfg.min_support == 0 || cfg.min_support > cfg.max_support || !(cfg.noise_sd >= 0.0) {
        return Err(DatasetError::Row {
            row: 0,
            message: "invalid synthetic configuration".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed));
    let noise = Normal::new(0.0, cfg.noise_sd).expect("finite sd");
    let mut records = Vec::with_capacity(cfg.n_alloys);
    for _ in 0..cfg.n_alloys {
        let k = rng.random_range(cfg.min_support..=cfg.max_support);
        let c = random_composition(&mut rng, reg.len(), k);
        let mut rec = AlloyRecord::new(c, 0.0, reg)?;
        rec.ms_temperature = truth.temperature(&rec.features) + noise.sample(&mut rng);
        records.push(rec);
    }
    let mut d = Dataset::new(records);
    d.provenance
        .push(format!("synthetic:{}:{}:{}", cfg.n_alloys, cfg.noise_sd, cfg.seed));
    Ok(d)
}

/// Record whose temperature is closest to the median; lowest index on ties.
pub fn median_target(d: &Dataset) -> Option<usize> {
    let mut t = d.targets();
    if t.is_empty() {
        return None;
    }
    let med = crate::dataset::median(&mut t);
    (0..d.len()).min_by(|&a, &b| {
        let da = (d.records[a].ms_temperature - med).abs();
        let db = (d.records[b].ms_temperature - med).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    })
}
