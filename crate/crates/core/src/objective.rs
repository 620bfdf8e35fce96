//! Design objectives, constraints and the simplex projection.
//!
//! * `f1 = ((Ts - T̂(x)) / Ts)²`, surrogate mismatch to a target temperature
//! * `f2 = Σ C_i x_i m_i / Σ x_l m_l`, mass-weighted element cost
//! * `g1 = Σx - 100`
//! * `g2 = min_l ‖y(x) - y_l‖ - τ`, distance to the nearest known alloy

use crate::dataset::NeighborIndex;
use crate::error::ObjectiveError;
use crate::features::{features_ambient, jacobian_ambient, Composition, N_FEATURES};
use crate::registry::Registry;
use crate::surrogate::Surrogate;

/// Tolerance on `λ1 + λ2 = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_TAU: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizers {
    pub f1: f64,
    pub f2: f64,
}

impl Default for Normalizers {
    fn default() -> Self {
        Normalizers { f1: 1.0, f2: 1.0 }
    }
}

/// Weighted, normalized two-objective problem.
#[derive(Clone, Copy)]
pub struct ObjectiveSpec<'a> {
    pub lambda1: f64,
    pub lambda2: f64,
    /// °C, non-zero.
    pub ts_target: f64,
    pub surrogate: Option<&'a dyn Surrogate>,
    pub registry: &'a Registry,
    pub normalizers: Normalizers,
}

impl std::fmt::Debug for ObjectiveSpec<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("lambda1", &self.lambda1)
            .field("lambda2", &self.lambda2)
            .field("ts_target", &self.ts_target)
            .field("has_surrogate", &self.surrogate.is_some())
            .field("normalizers", &self.normalizers)
            .finish()
    }
}

/// Objective parts at one point. `f1` and the prediction are absent when
/// `λ1 = 0`, in which case the surrogate is never called.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub f1: Option<f64>,
    pub predicted_ts: Option<f64>,
    pub f2: f64,
    pub value: f64,
}

impl<'a> ObjectiveSpec<'a> {
    pub fn new(
        lambda1: f64,
        lambda2: f64,
        ts_target: f64,
        surrogate: Option<&'a dyn Surrogate>,
        registry: &'a Registry,
    ) -> Result<Self, ObjectiveError> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0) || (lambda1 + lambda2 - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(ObjectiveError::BadWeights(lambda1, lambda2));
        }
        if ts_target == 0.0 || !ts_target.is_finite() {
            return Err(ObjectiveError::ZeroTarget);
        }
        if lambda1 > 0.0 && surrogate.is_none() {
            return Err(ObjectiveError::MissingSurrogate);
        }
        Ok(ObjectiveSpec {
            lambda1,
            lambda2,
            ts_target,
            surrogate,
            registry,
            normalizers: Normalizers::default(),
        })
    }

    pub fn with_normalizers(mut self, n: Normalizers) -> Result<Self, ObjectiveError> {
        if self.lambda1 > 0.0 && !(n.f1 > 0.0) {
            return Err(ObjectiveError::ZeroNormalizer(1));
        }
        if self.lambda2 > 0.0 && !(n.f2 > 0.0) {
            return Err(ObjectiveError::ZeroNormalizer(2));
        }
        self.normalizers = n;
        Ok(self)
    }

    /// Sets the normalizers to `f1(x0)` and `f2(x0)`. A zero `f1(x0)` is
    /// replaced by 1 and reported in the returned warnings.
    pub fn capture_normalizers(&mut self, x0: &[f64]) -> Result<Vec<String>, ObjectiveError> {
        let mut warnings = Vec::new();
        let f1 = if self.lambda1 > 0.0 {
            let v = self.f1(x0)?;
            if v == 0.0 {
                warnings.push("f1(x0) is zero; its normalizer was replaced by 1".to_string());
                1.0
            } else {
                v
            }
        } else {
            1.0
        };
        let mut f2 = eval_f2(x0, self.registry);
        if self.lambda2 == 0.0 && !(f2 > 0.0) {
            f2 = 1.0;
        }
        *self = self.with_normalizers(Normalizers { f1, f2 })?;
        Ok(warnings)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        let s = self.surrogate.ok_or(ObjectiveError::MissingSurrogate)?;
        Ok(s.predict(&features_ambient(x, self.registry)?))
    }

    pub fn f1(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        let r = (self.ts_target - self.predict(x)?) / self.ts_target;
        Ok(r * r)
    }

    pub fn f2(&self, x: &[f64]) -> f64 {
        eval_f2(x, self.registry)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation, ObjectiveError> {
        let (f1, predicted_ts) = if self.lambda1 > 0.0 {
            let t = self.predict(x)?;
            let r = (self.ts_target - t) / self.ts_target;
            (Some(r * r), Some(t))
        } else {
            (None, None)
        };
        let f2 = self.f2(x);
        let mut value = 0.0;
        if let Some(f1) = f1 {
            value += self.lambda1 * (f1 / self.normalizers.f1);
        }
        if self.lambda2 > 0.0 {
            value += self.lambda2 * (f2 / self.normalizers.f2);
        }
        Ok(Evaluation {
            f1,
            predicted_ts,
            f2,
            value,
        })
    }

    /// `λ1 f1/f1(x0) + λ2 f2/f2(x0)`.
    pub fn scalarized(&self, x: &[f64]) -> Result<f64, ObjectiveError> {
        Ok(self.evaluate(x)?.value)
    }

    /// Gradient of `f1` in percentage space; needs a differentiable surrogate.
    pub fn grad_f1(&self, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        let s = self.surrogate.ok_or(ObjectiveError::MissingSurrogate)?;
        if !s.is_differentiable() {
            return Err(ObjectiveError::UnsupportedSurrogate);
        }
        let y = features_ambient(x, self.registry)?;
        let dz = s.input_gradient(&y).ok_or(ObjectiveError::UnsupportedSurrogate)?;
        let t = s.predict(&y);
        let scale = -2.0 * (self.ts_target - t) / (self.ts_target * self.ts_target);
        let j = jacobian_ambient(x, self.registry)?;
        Ok(j.apply(&dz).into_iter().map(|g| g * scale).collect())
    }

    pub fn grad_scalarized(&self, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        let mut g = vec![0.0; x.len()];
        if self.lambda1 > 0.0 {
            let w = self.lambda1 / self.normalizers.f1;
            for (gi, v) in g.iter_mut().zip(self.grad_f1(x)?) {
                *gi += w * v;
            }
        }
        if self.lambda2 > 0.0 {
            let w = self.lambda2 / self.normalizers.f2;
            for (gi, v) in g.iter_mut().zip(grad_f2(x, self.registry)) {
                *gi += w * v;
            }
        }
        Ok(g)
    }
}

/// Mass-weighted mean element cost.
pub fn eval_f2(x: &[f64], reg: &Registry) -> f64 {
    let (mut w, mut s) = (0.0, 0.0);
    for (i, &xi) in x.iter().enumerate() {
        let e = reg.element(i);
        w += e.cost * xi * e.molar_mass;
        s += xi * e.molar_mass;
    }
    w / s
}

/// `∂f2/∂x_i = m_i (C_i S - W) / S²`.
pub fn grad_f2(x: &[f64], reg: &Registry) -> Vec<f64> {
    let (mut w, mut s) = (0.0, 0.0);
    for (i, &xi) in x.iter().enumerate() {
        let e = reg.element(i);
        w += e.cost * xi * e.molar_mass;
        s += xi * e.molar_mass;
    }
    (0..x.len())
        .map(|i| {
            let e = reg.element(i);
            e.molar_mass * (e.cost * s - w) / (s * s)
        })
        .collect()
}

pub fn eval_g1(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() - 100.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G2Evaluation {
    pub value: f64,
    pub distance: f64,
    /// Row of the nearest known alloy; ties go to the lowest row.
    pub nearest: usize,
}

/// Distance-to-data constraint `g2 ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub tau: f64,
    pub index: NeighborIndex,
}

impl ConstraintSet {
    pub fn new(tau: f64, index: NeighborIndex) -> Result<Self, ObjectiveError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(ObjectiveError::BadTau(tau));
        }
        if index.is_empty() {
            return Err(ObjectiveError::EmptyIndex);
        }
        Ok(ConstraintSet { tau, index })
    }

    pub fn g2(&self, x: &[f64], reg: &Registry) -> Result<G2Evaluation, ObjectiveError> {
        let y = features_ambient(x, reg)?;
        let (distance, nearest) = self.index.min_distance(&y);
        Ok(G2Evaluation {
            value: distance - self.tau,
            distance,
            nearest,
        })
    }

    /// Gradient of the distance to the current nearest row; zero when the
    /// point coincides with it.
    pub fn g2_gradient(&self, x: &[f64], reg: &Registry) -> Result<Vec<f64>, ObjectiveError> {
        let y = features_ambient(x, reg)?;
        let (distance, nearest) = self.index.min_distance(&y);
        if distance == 0.0 {
            return Ok(vec![0.0; x.len()]);
        }
        let q = self.index.to_index_space(&y);
        let r = self.index.row(nearest);
        let mut dy = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            let scale = self.index.scaling().map_or(1.0, |s| s.std[k]);
            dy[k] = (q.0[k] - r.0[k]) / (distance * scale);
        }
        Ok(jacobian_ambient(x, reg)?.apply(&dy))
    }
}

/// Euclidean projection onto `{x ≥ 0, Σx = total}` by sort and threshold.
/// Non-finite entries are treated as 0.
pub fn project_onto_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let clean: Vec<f64> = v.iter().map(|&a| if a.is_finite() { a } else { 0.0 }).collect();
    if clean.is_empty() {
        return clean;
    }
    let mut u = clean.clone();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - total) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    clean.iter().map(|&a| (a - theta).max(0.0)).collect()
}

/// Projection onto the simplex face spanned by `support`; other entries are 0.
pub fn project_onto_support(v: &[f64], support: &[bool], total: f64) -> Vec<f64> {
    let idx: Vec<usize> = (0..v.len()).filter(|&i| support[i]).collect();
    let sub: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
    let p = project_onto_simplex(&sub, total);
    let mut out = vec![0.0; v.len()];
    for (k, &i) in idx.iter().enumerate() {
        out[i] = p[k];
    }
    out
}

/// Projection onto the compositions of `v.len()` elements.
pub fn project_simplex(v: &[f64]) -> Composition {
    Composition::from_projection(project_onto_simplex(v, 100.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_features, FeatureVector};
    use crate::mlp::{init_mlp, MlpArchitecture, MlpModel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Constant(f64);
    impl Surrogate for Constant {
        fn predict(&self, _: &FeatureVector) -> f64 {
            self.0
        }
    }

    fn random_point(rng: &mut impl Rng, n: usize, k: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        for _ in 0..k {
            x[rng.random_range(0..n)] += rng.random_range(0.5..10.0);
        }
        let s: f64 = x.iter().sum();
        x.iter().map(|v| v * 100.0 / s).collect()
    }

    fn scaled_mlp(reg: &Registry, seed: u64) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<FeatureVector> = (0..200)
            .map(|_| features_ambient(&random_point(&mut rng, reg.len(), 4), reg).unwrap())
            .collect();
        let mut m = init_mlp(&MlpArchitecture::new(vec![16, 8], 0.0), seed).unwrap();
        for l in &mut m.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
        m.input_scaling = crate::dataset::Standardization::fit(&ys);
        m.target_mean = 50.0;
        m.target_std = 120.0;
        m
    }

    /// Double-double accumulation, used as an extended-precision oracle.
    fn dd_add(a: (f64, f64), b: f64) -> (f64, f64) {
        let s = a.0 + b;
        let bb = s - a.0;
        let err = (a.0 - (s - bb)) + (b - bb);
        (s, a.1 + err)
    }
    fn dd_mul(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    #[test]
    fn f1_arithmetic() {
        let reg = Registry::default_39();
        let s = Constant(90.0);
        let spec = ObjectiveSpec::new(1.0, 0.0, 100.0, Some(&s), &reg).unwrap();
        let x = Composition::pure(reg.len(), 0);
        assert!((spec.f1(x.as_slice()).unwrap() - 0.01).abs() < 1e-15);
        let hit = Constant(100.0);
        let spec = ObjectiveSpec::new(1.0, 0.0, 100.0, Some(&hit), &reg).unwrap();
        assert_eq!(spec.f1(x.as_slice()).unwrap(), 0.0);
    }

    #[test]
    fn f1_recomposes_the_pipeline() {
        let reg = Registry::default_39();
        let m = scaled_mlp(&reg, 3);
        let spec = ObjectiveSpec::new(1.0, 0.0, 250.0, Some(&m), &reg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = Composition::new(random_point(&mut rng, reg.len(), 5)).unwrap();
            let t = m.forward(&compute_features(&x, &reg).unwrap());
            let expected = ((250.0 - t) / 250.0).powi(2);
            assert_eq!(spec.f1(x.as_slice()).unwrap(), expected);
        }
    }

    #[test]
    fn f2_limits() {
        let reg = Registry::default_39();
        for i in 0..reg.len() {
            let x = Composition::pure(reg.len(), i);
            let f = eval_f2(x.as_slice(), &reg);
            assert!((f - reg.element(i).cost).abs() <= 1e-12 * reg.element(i).cost);
            let g = grad_f2(x.as_slice(), &reg);
            assert!(g[i].abs() < 1e-12 * (1.0 + reg.element(i).cost));
        }
        // equal molar masses, 50/50
        let elements = vec![
            crate::registry::ElementRecord {
                molar_mass: 50.0,
                cost: 3.0,
                ..reg.element(0).clone()
            },
            crate::registry::ElementRecord {
                symbol: "Qq".into(),
                molar_mass: 50.0,
                cost: 11.0,
                ..reg.element(1).clone()
            },
        ];
        let table = crate::registry::MixingEnthalpyTable::from_rows(vec![vec![0.0, -5.0], vec![-5.0, 0.0]]).unwrap();
        let two = Registry::new(elements, table).unwrap();
        assert!((eval_f2(&[50.0, 50.0], &two) - 7.0).abs() < 1e-14);
    }

    #[test]
    fn f2_matches_extended_precision() {
        let reg = Registry::default_39();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let x = random_point(&mut rng, reg.len(), 8);
            let (mut w, mut s) = ((0.0, 0.0), (0.0, 0.0));
            for (i, &xi) in x.iter().enumerate() {
                let e = reg.element(i);
                let xm = dd_mul(xi, e.molar_mass);
                let cxm = dd_mul(e.cost, xm.0);
                w = dd_add(dd_add(w, cxm.0), cxm.1 + e.cost * xm.1);
                s = dd_add(dd_add(s, xm.0), xm.1);
            }
            let expected = (w.0 + w.1) / (s.0 + s.1);
            let got = eval_f2(&x, &reg);
            assert!(((got - expected) / expected).abs() < 1e-12);
        }
    }

    #[test]
    fn f2_gradient_matches_differences_and_is_scale_invariant() {
        let reg = Registry::default_39();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let x = random_point(&mut rng, reg.len(), 6);
            let g = grad_f2(&x, &reg);
            let dot: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
            let scale = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(dot.abs() < 1e-10 * scale * 100.0);
            for i in 0..reg.len() {
                let h = 1e-4;
                let (mut p, mut q) = (x.clone(), x.clone());
                p[i] += h;
                q[i] -= h;
                let fd = (eval_f2(&p, &reg) - eval_f2(&q, &reg)) / (2.0 * h);
                assert!(
                    (g[i] - fd).abs() <= 1e-8 * scale.max(1e-12) + 1e-12,
                    "{} vs {}",
                    g[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn uniform_costs_give_zero_gradient() {
        let base = Registry::default_39();
        let elements = base
            .elements()
            .iter()
            .map(|e| crate::registry::ElementRecord { cost: 7.5, ..e.clone() })
            .collect();
        let reg = Registry::new(elements, base.enthalpy().clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_point(&mut rng, reg.len(), 7);
        assert!(grad_f2(&x, &reg).iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn scalarized_normalization() {
        let reg = Registry::default_39();
        let m = scaled_mlp(&reg, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = random_point(&mut rng, reg.len(), 4);
        let x1 = random_point(&mut rng, reg.len(), 4);
        let mut spec = ObjectiveSpec::new(0.5, 0.5, 300.0, Some(&m), &reg).unwrap();
        assert!(spec.capture_normalizers(&x0).unwrap().is_empty());
        assert!((spec.scalarized(&x0).unwrap() - 1.0).abs() < 1e-15);
        let expected =
            0.5 * spec.f1(&x1).unwrap() / spec.f1(&x0).unwrap() + 0.5 * eval_f2(&x1, &reg) / eval_f2(&x0, &reg);
        assert!((spec.scalarized(&x1).unwrap() - expected).abs() < 1e-14);

        let mut only_f1 = ObjectiveSpec::new(1.0, 0.0, 300.0, Some(&m), &reg).unwrap();
        only_f1.capture_normalizers(&x0).unwrap();
        let r = only_f1.scalarized(&x1).unwrap();
        assert!((r - spec.f1(&x1).unwrap() / spec.f1(&x0).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn cost_only_never_calls_the_surrogate() {
        struct Panics;
        impl Surrogate for Panics {
            fn predict(&self, _: &FeatureVector) -> f64 {
                panic!("surrogate must not be evaluated")
            }
        }
        let reg = Registry::default_39();
        let mut spec = ObjectiveSpec::new(0.0, 1.0, 100.0, Some(&Panics), &reg).unwrap();
        let x0 = Composition::pure(reg.len(), 3);
        spec.capture_normalizers(x0.as_slice()).unwrap();
        assert_eq!(spec.normalizers.f1, 1.0);
        let e = spec.evaluate(x0.as_slice()).unwrap();
        assert_eq!((e.f1, e.value), (None, 1.0));
    }

    #[test]
    fn zero_start_normalizer_is_replaced() {
        let reg = Registry::default_39();
        let hit = Constant(100.0);
        let mut spec = ObjectiveSpec::new(1.0, 0.0, 100.0, Some(&hit), &reg).unwrap();
        let w = spec
            .capture_normalizers(Composition::pure(reg.len(), 0).as_slice())
            .unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(spec.normalizers.f1, 1.0);
        assert!(matches!(
            spec.with_normalizers(Normalizers { f1: 0.0, f2: 1.0 }),
            Err(ObjectiveError::ZeroNormalizer(1))
        ));
    }

    #[test]
    fn spec_validation() {
        let reg = Registry::default_39();
        let s = Constant(1.0);
        assert!(matches!(
            ObjectiveSpec::new(0.6, 0.6, 1.0, Some(&s), &reg),
            Err(ObjectiveError::BadWeights(..))
        ));
        assert!(matches!(
            ObjectiveSpec::new(1.0, 0.0, 0.0, Some(&s), &reg),
            Err(ObjectiveError::ZeroTarget)
        ));
        assert!(matches!(
            ObjectiveSpec::new(0.5, 0.5, 1.0, None, &reg),
            Err(ObjectiveError::MissingSurrogate)
        ));
        let spec = ObjectiveSpec::new(1.0, 0.0, 1.0, Some(&s), &reg).unwrap();
        let x = Composition::pure(reg.len(), 0);
        assert!(matches!(
            spec.grad_f1(x.as_slice()),
            Err(ObjectiveError::UnsupportedSurrogate)
        ));
    }

    #[test]
    fn f1_gradient_matches_differences() {
        let reg = Registry::default_39();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        for s in 0..5 {
            let m = scaled_mlp(&reg, 100 + s);
            let spec = ObjectiveSpec::new(1.0, 0.0, 150.0, Some(&m), &reg).unwrap();
            for _ in 0..10 {
                let x = random_point(&mut rng, reg.len(), 4);
                let g = spec.grad_f1(&x).unwrap();
                let scale = g.iter().map(|v| v.abs()).fold(1e-12, f64::max);
                let h = 1e-5;
                let mut ok = true;
                let mut fd = vec![0.0; x.len()];
                for i in 0..x.len() {
                    let (mut p, mut q) = (x.clone(), x.clone());
                    p[i] += h;
                    q[i] -= h;
                    let (fp, f0, fq) = (spec.f1(&p).unwrap(), spec.f1(&x).unwrap(), spec.f1(&q).unwrap());
                    // second differences flag a ReLU kink inside the stencil
                    if (fp - 2.0 * f0 + fq).abs() > 1e-3 * h * scale {
                        ok = false;
                    }
                    fd[i] = (fp - fq) / (2.0 * h);
                }
                if !ok {
                    continue;
                }
                checked += 1;
                for i in 0..x.len() {
                    assert!((g[i] - fd[i]).abs() / scale < 1e-5, "{i}: {} vs {}", g[i], fd[i]);
                }
            }
        }
        assert!(checked >= 30, "{checked}");
    }

    #[test]
    fn f1_gradient_in_plane_directions() {
        let reg = Registry::default_39();
        let m = scaled_mlp(&reg, 41);
        let spec = ObjectiveSpec::new(1.0, 0.0, 150.0, Some(&m), &reg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_point(&mut rng, reg.len(), 6);
        let g = spec.grad_f1(&x).unwrap();
        let mean_g = g.iter().sum::<f64>() / g.len() as f64;
        for _ in 0..10 {
            let mut d: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            d.iter_mut().for_each(|v| *v -= mean);
            let h = 1e-5;
            let p: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + h * b).collect();
            let q: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - h * b).collect();
            let fd = (spec.f1(&p).unwrap() - spec.f1(&q).unwrap()) / (2.0 * h);
            let projected: f64 = g.iter().zip(&d).map(|(a, b)| (a - mean_g) * b).sum();
            assert!((fd - projected).abs() <= 1e-5 * projected.abs().max(1e-9));
        }
    }

    #[test]
    fn f1_gradient_vanishes_on_target() {
        let reg = Registry::default_39();
        let m = scaled_mlp(&reg, 2);
        let x = Composition::pure(reg.len(), 1);
        let t = m.forward(&compute_features(&x, &reg).unwrap());
        let spec = ObjectiveSpec::new(1.0, 0.0, t, Some(&m), &reg).unwrap();
        assert!(spec.grad_f1(x.as_slice()).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn constraint_values() {
        let reg = Registry::default_39();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<Vec<f64>> = (0..10).map(|_| random_point(&mut rng, reg.len(), 3)).collect();
        let ys: Vec<FeatureVector> = xs.iter().map(|x| features_ambient(x, &reg).unwrap()).collect();
        let cs = ConstraintSet::new(DEFAULT_TAU, NeighborIndex::new(ys).unwrap()).unwrap();
        for x in &xs {
            assert!(eval_g1(x).abs() < 1e-9);
            assert_eq!(cs.g2(x, &reg).unwrap().value, -DEFAULT_TAU);
        }
        assert!(matches!(
            ConstraintSet::new(0.0, cs.index.clone()),
            Err(ObjectiveError::BadTau(_))
        ));
    }

    #[test]
    fn g2_sign_flips_at_tau() {
        let reg = Registry::default_39();
        let base = features_ambient(Composition::pure(reg.len(), 0).as_slice(), &reg).unwrap();
        let mut far = base;
        far.0[2] += 0.4;
        let cs = ConstraintSet::new(0.4, NeighborIndex::new(vec![far]).unwrap()).unwrap();
        let g = cs.g2(Composition::pure(reg.len(), 0).as_slice(), &reg).unwrap();
        assert!(g.value.abs() < 1e-15);
        assert!((g.distance - 0.4).abs() < 1e-15);
    }

    #[test]
    fn g2_gradient_matches_differences() {
        let reg = Registry::default_39();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let ys: Vec<FeatureVector> = (0..30)
            .map(|_| features_ambient(&random_point(&mut rng, reg.len(), 3), &reg).unwrap())
            .collect();
        for index in [
            NeighborIndex::new(ys.clone()).unwrap(),
            NeighborIndex::standardized(ys).unwrap(),
        ] {
            let cs = ConstraintSet::new(0.4, index).unwrap();
            for _ in 0..10 {
                let x = random_point(&mut rng, reg.len(), 4);
                let g = cs.g2_gradient(&x, &reg).unwrap();
                let scale = g.iter().map(|v| v.abs()).fold(1e-12, f64::max);
                for i in 0..x.len() {
                    let h = 1e-6;
                    let (mut p, mut q) = (x.clone(), x.clone());
                    p[i] += h;
                    q[i] -= h;
                    let fd = (cs.g2(&p, &reg).unwrap().value - cs.g2(&q, &reg).unwrap().value) / (2.0 * h);
                    assert!((g[i] - fd).abs() / scale < 1e-5);
                }
            }
        }
    }

    /// Enumerates every support set; the projection is the closest feasible candidate.
    fn brute_force_projection(v: &[f64], total: f64) -> Vec<f64> {
        let n = v.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let theta = (idx.iter().map(|&i| v[i]).sum::<f64>() - total) / idx.len() as f64;
            let mut x = vec![0.0; n];
            let mut feasible = true;
            for &i in &idx {
                x[i] = v[i] - theta;
                if x[i] < -1e-12 {
                    feasible = false;
                }
            }
            if !feasible {
                continue;
            }
            let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn projection_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n = rng.random_range(1..=5);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-150.0..250.0)).collect();
            let p = project_onto_simplex(&v, 100.0);
            let b = brute_force_projection(&v, 100.0);
            for (a, c) in p.iter().zip(&b) {
                assert!((a - c).abs() < 1e-8, "{v:?}: {p:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn projection_fixed_cases() {
        assert_eq!(project_onto_simplex(&[150.0, 50.0], 100.0), vec![100.0, 0.0]);
        let on = [20.0, 30.0, 50.0];
        let p = project_onto_simplex(&on, 100.0);
        for (a, b) in p.iter().zip(&on) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = project_onto_support(&[5.0, 90.0, 40.0], &[true, false, true], 100.0);
        assert_eq!(s, vec![32.5, 0.0, 67.5]);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_nonexpansive_and_valid(
            a in proptest::collection::vec(-300.0f64..300.0, 2..12),
            shift in proptest::collection::vec(-50.0f64..50.0, 12),
        ) {
            let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
            let pa = project_simplex(&a);
            prop_assert!(Composition::new(pa.as_slice().to_vec()).is_ok());
            let again = project_onto_simplex(pa.as_slice(), 100.0);
            for (x, y) in again.iter().zip(pa.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let pb = project_onto_simplex(&b, 100.0);
            let dp: f64 = pa.as_slice().iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(dp <= d + 1e-9);
        }

        #[test]
        fn g2_is_nonpositive_within_tau(offset in 0.0f64..0.8, k in 0usize..7) {
            let reg = Registry::default_39();
            let x = Composition::pure(reg.len(), 2);
            let mut y = compute_features(&x, &reg).unwrap();
            y.0[k] += offset;
            let cs = ConstraintSet::new(0.4, NeighborIndex::new(vec![y]).unwrap()).unwrap();
            let g = cs.g2(x.as_slice(), &reg).unwrap();
            prop_assert_eq!(g.value <= 0.0, g.distance <= 0.4);
        }
    }
}
