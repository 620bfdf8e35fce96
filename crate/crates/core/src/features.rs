//! Physics-informed alloy descriptors and their analytic Jacobian.
//!
//! All seven features use mole fractions `c_i = x_i / 100`:
//!
//! | idx | feature  | formula                                   |
//! |-----|----------|-------------------------------------------|
//! | 0   | ΔH_mix   | Σ_{i<j} 4 c_i c_j H_ij                    |
//! | 1   | a        | Σ c_i (n_i M_i / (ρ_i N_A))^(1/3)         |
//! | 2   | vec      | Σ c_i v_i / Σ c_i Z_i                     |
//! | 3   | r̄        | Σ c_i r_i                                 |
//! | 4   | δr       | sqrt(Σ c_i (1 - r_i / r̄)²)                |
//! | 5   | χ̄        | Σ c_i χ_i                                 |
//! | 6   | δχ       | sqrt(Σ c_i (1 - χ_i / χ̄)²)                |
//!
//! The formulas are evaluated on the raw percentage vector, so they extend
//! smoothly off the Σx = 100 hyperplane; the Jacobian is taken in that
//! ambient space.

use serde::{Deserialize, Serialize};

use crate::error::FeatureError;
use crate::registry::{Registry, VecConvention};

pub const N_FEATURES: usize = 7;

/// Absolute tolerance on Σx = 100 for a valid composition.
pub const SUM_TOLERANCE: f64 = 1e-9;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "dh_mix",
    "lattice_a",
    "vec",
    "r_mean",
    "r_delta",
    "chi_mean",
    "chi_delta",
];

/// Element percentages, non-negative and summing to 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Composition(Vec<f64>);

impl Composition {
    pub fn new(percentages: Vec<f64>) -> Result<Self, FeatureError> {
        for (index, &value) in percentages.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(FeatureError::NegativeComponent { index, value });
            }
        }
        let sum: f64 = percentages.iter().sum();
        if (sum - 100.0).abs() > SUM_TOLERANCE {
            return Err(FeatureError::BadSum { sum });
        }
        Ok(Composition(percentages))
    }

    /// For vectors already known to lie on the simplex.
    pub(crate) fn from_projection(percentages: Vec<f64>) -> Self {
        Composition(percentages)
    }

    /// Pure element `index` in an `n`-component space.
    pub fn pure(n: usize, index: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index] = 100.0;
        Composition(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Composition {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn dh_mix(&self) -> f64 {
        self.0[0]
    }
    pub fn lattice_a(&self) -> f64 {
        self.0[1]
    }
    pub fn vec(&self) -> f64 {
        self.0[2]
    }
    pub fn r_mean(&self) -> f64 {
        self.0[3]
    }
    pub fn r_delta(&self) -> f64 {
        self.0[4]
    }
    pub fn chi_mean(&self) -> f64 {
        self.0[5]
    }
    pub fn chi_delta(&self) -> f64 {
        self.0[6]
    }

    pub fn as_array(&self) -> &[f64; N_FEATURES] {
        &self.0
    }

    pub fn distance(&self, other: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// `rows[i][j] = ∂y_j / ∂x_i`, per percent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureJacobian {
    pub rows: Vec<[f64; N_FEATURES]>,
    /// δr is zero at this point; its column is set to 0.
    pub r_delta_singular: bool,
    /// δχ is zero at this point; its column is set to 0.
    pub chi_delta_singular: bool,
}

impl FeatureJacobian {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// `J · v` for a feature-space vector `v` (the chain-rule product).
    pub fn apply(&self, v: &[f64; N_FEATURES]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(v.iter()).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn is_singular(&self) -> bool {
        self.r_delta_singular || self.chi_delta_singular
    }
}

fn check_dim(x: &[f64], reg: &Registry) -> Result<(), FeatureError> {
    if x.len() != reg.len() {
        return Err(FeatureError::DimensionMismatch {
            expected: reg.len(),
            found: x.len(),
        });
    }
    Ok(())
}

fn numerator_denominator(reg: &Registry, i: usize) -> (f64, f64) {
    let e = reg.element(i);
    let (v, z) = (e.valence_electrons as f64, e.atomic_number as f64);
    match reg.vec_convention() {
        VecConvention::ValenceOverAtomicNumber => (v, z),
        VecConvention::AtomicNumberOverValence => (z, v),
    }
}

fn spread(c: &[f64], values: impl Fn(usize) -> f64, mean: f64) -> f64 {
    c.iter()
        .enumerate()
        .map(|(i, &ci)| {
            let d = 1.0 - values(i) / mean;
            ci * d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Features of a validated composition.
pub fn compute_features(x: &Composition, reg: &Registry) -> Result<FeatureVector, FeatureError> {
    features_ambient(x.as_slice(), reg)
}

/// Features of an arbitrary percentage vector (no simplex check).
pub fn features_ambient(x: &[f64], reg: &Registry) -> Result<FeatureVector, FeatureError> {
    check_dim(x, reg)?;
    let n = x.len();
    let c: Vec<f64> = x.iter().map(|v| v / 100.0).collect();
    let table = reg.enthalpy();

    let mut dh = 0.0;
    for i in 0..n {
        if c[i] == 0.0 {
            continue;
        }
        let row = table.row(i);
        let mut acc = 0.0;
        for j in (i + 1)..n {
            acc += c[j] * row[j];
        }
        dh += 4.0 * c[i] * acc;
    }

    let mut lattice = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut r_mean = 0.0;
    let mut chi_mean = 0.0;
    for (i, &ci) in c.iter().enumerate() {
        let e = reg.element(i);
        lattice += ci * e.cell_length();
        let (a, b) = numerator_denominator(reg, i);
        num += ci * a;
        den += ci * b;
        r_mean += ci * e.atomic_radius;
        chi_mean += ci * e.electronegativity;
    }
    if r_mean == 0.0 {
        return Err(FeatureError::DegenerateRegistry("atomic radius"));
    }
    if chi_mean == 0.0 {
        return Err(FeatureError::DegenerateRegistry("electronegativity"));
    }
    if den == 0.0 {
        return Err(FeatureError::DegenerateRegistry("electron count"));
    }
    let r_delta = spread(&c, |i| reg.element(i).atomic_radius, r_mean);
    let chi_delta = spread(&c, |i| reg.element(i).electronegativity, chi_mean);

    Ok(FeatureVector([
        dh,
        lattice,
        num / den,
        r_mean,
        r_delta,
        chi_mean,
        chi_delta,
    ]))
}

/// Analytic Jacobian of a validated composition.
pub fn compute_jacobian(x: &Composition, reg: &Registry) -> Result<FeatureJacobian, FeatureError> {
    jacobian_ambient(x.as_slice(), reg)
}

/// Analytic Jacobian of the ambient feature map at `x`.
pub fn jacobian_ambient(x: &[f64], reg: &Registry) -> Result<FeatureJacobian, FeatureError> {
    let y = features_ambient(x, reg)?;
    let n = x.len();
    let c: Vec<f64> = x.iter().map(|v| v / 100.0).collect();
    let table = reg.enthalpy();

    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &ci) in c.iter().enumerate() {
        let (a, b) = numerator_denominator(reg, i);
        num += ci * a;
        den += ci * b;
    }

    let r_mean = y.r_mean();
    let chi_mean = y.chi_mean();
    // Inner derivative of the spread sums through their means.
    let inner = |values: &dyn Fn(usize) -> f64, mean: f64| -> f64 {
        c.iter()
            .enumerate()
            .map(|(k, &ck)| {
                let v = values(k);
                2.0 * ck * (1.0 - v / mean) * v / (mean * mean)
            })
            .sum()
    };
    let radius = |k: usize| reg.element(k).atomic_radius;
    let chi = |k: usize| reg.element(k).electronegativity;
    let t_r = inner(&radius, r_mean);
    let t_chi = inner(&chi, chi_mean);

    let r_delta_singular = y.r_delta() == 0.0;
    let chi_delta_singular = y.chi_delta() == 0.0;

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let e = reg.element(i);
        let row_h = table.row(i);
        let mut dh = 0.0;
        for j in 0..n {
            if j != i {
                dh += 4.0 * c[j] * row_h[j];
            }
        }
        let (a, b) = numerator_denominator(reg, i);
        let d_vec = (a * den - num * b) / (den * den);

        let ri = e.atomic_radius;
        let dr = 1.0 - ri / r_mean;
        let d_r_delta = if r_delta_singular {
            0.0
        } else {
            (dr * dr + t_r * ri) / (2.0 * y.r_delta())
        };
        let xi = e.electronegativity;
        let dchi = 1.0 - xi / chi_mean;
        let d_chi_delta = if chi_delta_singular {
            0.0
        } else {
            (dchi * dchi + t_chi * xi) / (2.0 * y.chi_delta())
        };

        rows.push([
            dh / 100.0,
            e.cell_length() / 100.0,
            d_vec / 100.0,
            ri / 100.0,
            d_r_delta / 100.0,
            xi / 100.0,
            d_chi_delta / 100.0,
        ]);
    }
    Ok(FeatureJacobian {
        rows,
        r_delta_singular,
        chi_delta_singular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reg5() -> Registry {
        Registry::default_39()
            .subset_by_symbols(&["Ni", "Ti", "Hf", "Cu", "Al"])
            .unwrap()
    }

    #[test]
    fn composition_validation() {
        assert!(Composition::new(vec![50.0, 50.0]).is_ok());
        assert!(matches!(
            Composition::new(vec![60.0, 39.2]),
            Err(FeatureError::BadSum { .. })
        ));
        assert!(matches!(
            Composition::new(vec![110.0, -10.0]),
            Err(FeatureError::NegativeComponent { index: 1, .. })
        ));
    }

    #[test]
    fn pure_element_limits() {
        let reg = reg5();
        for i in 0..reg.len() {
            let y = compute_features(&Composition::pure(reg.len(), i), &reg).unwrap();
            assert_eq!(y.dh_mix(), 0.0);
            assert_eq!(y.r_delta(), 0.0);
            assert_eq!(y.chi_delta(), 0.0);
            assert_eq!(y.r_mean(), reg.element(i).atomic_radius);
            assert_eq!(y.chi_mean(), reg.element(i).electronegativity);
        }
    }

    #[test]
    fn equiatomic_binary_enthalpy() {
        let reg = Registry::default_39().subset_by_symbols(&["Ni", "Ti"]).unwrap();
        let y = compute_features(&Composition::new(vec![50.0, 50.0]).unwrap(), &reg).unwrap();
        let h = reg.pair_enthalpy(0, 1).unwrap();
        assert!((y.dh_mix() - h).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let reg = reg5();
        let x = Composition::new(vec![50.0, 50.0]).unwrap();
        assert_eq!(
            compute_features(&x, &reg),
            Err(FeatureError::DimensionMismatch { expected: 5, found: 2 })
        );
    }

    #[test]
    fn linear_columns_are_constant() {
        let reg = reg5();
        let a = compute_jacobian(&Composition::new(vec![40.0, 30.0, 10.0, 10.0, 10.0]).unwrap(), &reg).unwrap();
        let b = compute_jacobian(&Composition::new(vec![5.0, 5.0, 80.0, 5.0, 5.0]).unwrap(), &reg).unwrap();
        for j in [1, 3, 5] {
            assert_eq!(a.column(j), b.column(j));
        }
        assert_eq!(a.rows[2][3], reg.element(2).atomic_radius / 100.0);
    }

    #[test]
    fn pure_element_jacobian_is_flagged() {
        let reg = reg5();
        let jac = compute_jacobian(&Composition::pure(5, 0), &reg).unwrap();
        assert!(jac.r_delta_singular && jac.chi_delta_singular);
        assert!(jac.column(4).iter().all(|&v| v == 0.0));
        assert!(jac.column(6).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vec_convention_switch_inverts_ratio() {
        let reg = reg5();
        let swapped = reg.clone().with_vec_convention(VecConvention::AtomicNumberOverValence);
        let x = Composition::pure(5, 0);
        let a = compute_features(&x, &reg).unwrap().vec();
        let b = compute_features(&x, &swapped).unwrap().vec();
        assert!((a * b - 1.0).abs() < 1e-14);
        assert!((a - 10.0 / 28.0).abs() < 1e-15);
    }

    fn composition_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("non-zero", |w| {
            let s: f64 = w.iter().sum();
            (s > 1e-3).then(|| w.iter().map(|v| 100.0 * v / s).collect())
        })
    }

    proptest! {
        #[test]
        fn spreads_are_nonnegative(x in composition_strategy(5)) {
            let y = features_ambient(&x, &reg5()).unwrap();
            prop_assert!(y.r_delta() >= 0.0);
            prop_assert!(y.chi_delta() >= 0.0);
        }

        #[test]
        fn permutation_invariance(x in composition_strategy(5), shift in 1usize..5) {
            let reg = reg5();
            let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
            let reg_p = reg.subset(&perm).unwrap();
            let x_p: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
            let a = features_ambient(&x, &reg).unwrap();
            let b = features_ambient(&x_p, &reg_p).unwrap();
            for k in 0..N_FEATURES {
                let scale = a.0[k].abs().max(if k == 0 { 1.0 } else { 1e-300 });
                prop_assert!((a.0[k] - b.0[k]).abs() <= 1e-12 * scale, "feature {}", k);
            }
        }
    }
}
