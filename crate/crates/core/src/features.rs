//! Feature maps `φ(s,z,a)`, `χ(z,a)`, `ψ(z,a)` and the best-in-class
//! solver over the radius-`B` hypothesis space.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, Scalar};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    TabularOneHot,
    RandomProjection { seed: u64 },
    CustomTable,
}

#[derive(Clone, Debug, PartialEq)]
enum Storage<T> {
    OneHot,
    Dense(Matrix<T>),
}

/// A deterministic map from a row index (an asymmetric or symmetric index,
/// see [`crate::oracles`]) to a vector with ℓ2 norm at most one.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    n_rows: usize,
    dim: usize,
    storage: Storage<T>,
    kind: FeatureKind,
}

impl<T: Scalar> FeatureMap<T> {
    /// One-hot features, `dim = n_rows`.
    pub fn tabular(n_rows: usize) -> Self {
        Self { n_rows, dim: n_rows, storage: Storage::OneHot, kind: FeatureKind::TabularOneHot }
    }

    /// Gaussian rows normalized to unit length, reproducible from `seed`.
    pub fn random(n_rows: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("dim", "feature dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Matrix::zeros(n_rows, dim);
        for i in 0..n_rows {
            let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            for (dst, x) in table.row_mut(i).iter_mut().zip(&row) {
                *dst = T::c(x / norm);
            }
        }
        Ok(Self { n_rows, dim, storage: Storage::Dense(table), kind: FeatureKind::RandomProjection { seed } })
    }

    /// Arbitrary table; every row must have norm at most `1 + 1e-12`.
    pub fn custom(table: Matrix<T>) -> Result<Self> {
        for i in 0..table.rows() {
            let n = crate::scalar::norm2(table.row(i));
            if n > T::one() + T::simplex_tol() {
                return Err(Error::validation(format!("feature row {i}"), format!("norm {n} exceeds 1")));
            }
        }
        Ok(Self {
            n_rows: table.rows(),
            dim: table.cols(),
            storage: Storage::Dense(table),
            kind: FeatureKind::CustomTable,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn evaluate(&self, row: usize) -> Vec<T> {
        match &self.storage {
            Storage::OneHot => {
                let mut v = vec![T::zero(); self.dim];
                v[row] = T::one();
                v
            }
            Storage::Dense(m) => m.row(row).to_vec(),
        }
    }

    /// `⟨β, φ(row)⟩`.
    pub fn dot(&self, beta: &[T], row: usize) -> T {
        match &self.storage {
            Storage::OneHot => beta[row],
            Storage::Dense(m) => dot(beta, m.row(row)),
        }
    }

    /// `out += scale · φ(row)`.
    pub fn add_scaled(&self, out: &mut [T], row: usize, scale: T) {
        match &self.storage {
            Storage::OneHot => out[row] += scale,
            Storage::Dense(m) => {
                for (o, &f) in out.iter_mut().zip(m.row(row)) {
                    *o += scale * f;
                }
            }
        }
    }

    /// `⟨β, φ(·)⟩` for every row.
    pub fn predict_all(&self, beta: &[T]) -> Vec<T> {
        (0..self.n_rows).map(|i| self.dot(beta, i)).collect()
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        match &self.storage {
            Storage::OneHot => Matrix::identity(self.n_rows),
            Storage::Dense(m) => m.clone(),
        }
    }

    /// Sparse CSV `row_index,component_index,value` (zero entries omitted).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row_index,component_index,value\n");
        for i in 0..self.n_rows {
            for (j, v) in self.evaluate(i).iter().enumerate() {
                if *v != T::zero() {
                    let _ = writeln!(out, "{i},{j},{}", v.as_f64());
                }
            }
        }
        out
    }

    /// Reads the CSV form into a custom table of the given shape.
    pub fn from_csv(text: &str, n_rows: usize, dim: usize) -> Result<Self> {
        let mut table = Matrix::zeros(n_rows, dim);
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for (line, rec) in reader.deserialize::<(usize, usize, f64)>().enumerate() {
            let (i, j, v) = rec.map_err(|e| Error::Format(format!("feature CSV record {}: {e}", line + 1)))?;
            if i >= n_rows || j >= dim {
                return Err(Error::Format(format!("feature CSV entry ({i}, {j}) outside {n_rows}x{dim}")));
            }
            table[(i, j)] = T::c(v);
        }
        Self::custom(table)
    }
}

/// Weighted least squares over the ℓ2 ball of radius `radius`:
/// `min_{‖β‖ ≤ B} Σ_i w_i (⟨β, x_i⟩ − y_i)²`.
///
/// Rows with zero weight are dropped. The unconstrained minimal-norm
/// solution is returned when it lies in the ball; otherwise the ridge
/// multiplier `λ` is bisected until `‖β(λ)‖ = B` within `1e-10`.
/// Returns `β` and the weighted residual norm.
pub fn constrained_least_squares<T: Scalar>(
    design: &Matrix<T>,
    target: &[T],
    weights: &[T],
    radius: T,
) -> Result<(Vec<T>, T)> {
    if target.len() != design.rows() || weights.len() != design.rows() {
        return Err(Error::LengthMismatch { left: target.len(), right: design.rows() });
    }
    if !(radius >= T::zero()) {
        return Err(Error::validation("radius", "must be non-negative"));
    }
    let dim = design.cols();
    let support: Vec<usize> = (0..design.rows()).filter(|&i| weights[i] > T::zero()).collect();
    if support.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    if let Some(&i) = support.iter().find(|&&i| !target[i].is_finite()) {
        return Err(Error::validation("target", format!("entry {i} is not finite but has positive weight")));
    }
    let mut gram = Matrix::zeros(dim, dim);
    let mut rhs = vec![T::zero(); dim];
    for &i in &support {
        let x = design.row(i);
        let w = weights[i];
        for a in 0..dim {
            if x[a] == T::zero() {
                continue;
            }
            rhs[a] += w * x[a] * target[i];
            for b in 0..dim {
                gram[(a, b)] += w * x[a] * x[b];
            }
        }
    }
    let (vals, vecs) = gram.symmetric_eigen();
    let vmax = vals.iter().fold(T::zero(), |m: T, v: &T| m.max(v.abs()));
    let cut = vmax * T::tol(1e-12);
    let comps: Vec<(usize, T, T)> = (0..dim)
        .filter(|&k| vals[k] > cut)
        .map(|k| {
            let c: T = (0..dim).map(|i| vecs[(i, k)] * rhs[i]).sum();
            (k, vals[k], c)
        })
        .collect();
    let norm_at = |lam: T| -> T { comps.iter().map(|&(_, v, c)| (c / (v + lam)).powi(2)).sum::<T>().sqrt() };
    let beta_at = |lam: T| -> Vec<T> {
        let mut beta = vec![T::zero(); dim];
        for &(k, v, c) in &comps {
            let coef = c / (v + lam);
            for (i, b) in beta.iter_mut().enumerate() {
                *b += coef * vecs[(i, k)];
            }
        }
        beta
    };
    let beta = if radius == T::zero() {
        vec![T::zero(); dim]
    } else if norm_at(T::zero()) <= radius {
        beta_at(T::zero())
    } else {
        let c_norm = comps.iter().map(|&(_, _, c)| c * c).sum::<T>().sqrt();
        let (mut lo, mut hi) = (T::zero(), c_norm / radius);
        let tol = T::tol(1e-10);
        for _ in 0..400 {
            let mid = (lo + hi) / T::c(2.0);
            let n = norm_at(mid);
            if n > radius {
                lo = mid;
            } else {
                hi = mid;
            }
            if (norm_at(hi) - radius).abs() <= tol * radius.max(T::one()) || hi - lo <= T::epsilon() * hi {
                break;
            }
        }
        let mut beta = beta_at(hi);
        // Guard the ball constraint against the last rounding step.
        let n = crate::scalar::norm2(&beta);
        if n > radius {
            for b in &mut beta {
                *b *= radius / n;
            }
        }
        beta
    };
    let err = weighted_residual(design, &beta, target, weights);
    Ok((beta, err))
}

fn weighted_residual<T: Scalar>(design: &Matrix<T>, beta: &[T], target: &[T], weights: &[T]) -> T {
    (0..design.rows())
        .filter(|&i| weights[i] > T::zero())
        .map(|i| weights[i] * (dot(beta, design.row(i)) - target[i]).powi(2))
        .sum::<T>()
        .sqrt()
}

/// `β*` and `ε_app = min_{f ∈ F^B} ‖f − target‖_d` for a feature map.
pub fn best_in_class<T: Scalar>(
    features: &FeatureMap<T>,
    target: &[T],
    weights: &[T],
    radius: T,
) -> Result<(Vec<T>, T)> {
    if radius <= T::zero() {
        return Err(Error::validation("radius", "B must be positive"));
    }
    constrained_least_squares(&features.to_matrix(), target, weights, radius)
}

/// `‖f‖_μ = √(Σ μ(x) f(x)²)` over entries with positive weight.
pub fn weighted_norm<T: Scalar>(values: &[T], weights: &[T]) -> T {
    values.iter().zip(weights).filter(|(_, &w)| w > T::zero()).map(|(&v, &w)| w * v * v).sum::<T>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabular_is_orthonormal() {
        let f = FeatureMap::<f64>::tabular(5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(dot(&f.evaluate(i), &f.evaluate(j)), if i == j { 1.0 } else { 0.0 });
            }
        }
        let beta = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(f.dot(&beta, 3), 4.0);
    }

    #[test]
    fn random_is_seeded_and_bounded() {
        let a = FeatureMap::<f64>::random(10, 4, 7).unwrap();
        let b = FeatureMap::<f64>::random(10, 4, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, FeatureMap::<f64>::random(10, 4, 8).unwrap());
        for i in 0..10 {
            assert!(crate::scalar::norm2(&a.evaluate(i)) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn tabular_best_in_class_is_exact() {
        let f = FeatureMap::<f64>::tabular(4);
        let target = [1.0, -2.0, 0.5, 7.0];
        let w = [0.25, 0.25, 0.5, 0.0];
        let (beta, err) = best_in_class(&f, &target, &w, 1e6).unwrap();
        assert!(err < 1e-12);
        for i in 0..3 {
            assert!((beta[i] - target[i]).abs() < 1e-10);
        }
        // Off-support component stays at the minimal-norm value.
        assert_eq!(beta[3], 0.0);
    }

    #[test]
    fn zero_radius_limit() {
        let f = FeatureMap::<f64>::tabular(3);
        let target = [1.0, 2.0, 2.0];
        let w = [0.2, 0.3, 0.5];
        let (beta, err) = constrained_least_squares(&f.to_matrix(), &target, &w, 0.0).unwrap();
        assert!(beta.iter().all(|&b| b == 0.0));
        assert!((err - weighted_norm(&target, &w)).abs() < 1e-15);
        let (_, tiny) = best_in_class(&f, &target, &w, 1e-9).unwrap();
        assert!((tiny - weighted_norm(&target, &w)).abs() < 1e-8);
    }

    #[test]
    fn two_point_toy_is_clipped() {
        // φ ≡ 1 scalar, targets 0 and 1, uniform weights: unconstrained
        // optimum 0.5; with B = 0.25 the solution is 0.25 and the residual
        // is √(½·0.25² + ½·0.75²) = √0.3125.
        let design = Matrix::<f64>::from_rows(&[vec![1.0], vec![1.0]]);
        let (beta, err) = constrained_least_squares(&design, &[0.0, 1.0], &[0.5, 0.5], 0.25).unwrap();
        assert!((beta[0] - 0.25).abs() < 1e-10);
        assert!((err - 0.3125f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn degenerate_weights_rejected() {
        let f = FeatureMap::<f64>::tabular(2);
        assert!(matches!(best_in_class(&f, &[1.0, 1.0], &[0.0, 0.0], 1.0), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn csv_round_trip() {
        let f = FeatureMap::<f64>::random(6, 3, 1).unwrap();
        let g = FeatureMap::<f64>::from_csv(&f.to_csv(), 6, 3).unwrap();
        for i in 0..6 {
            for (a, b) in f.evaluate(i).iter().zip(g.evaluate(i)) {
                assert_eq!(*a, b);
            }
        }
        assert!(FeatureMap::<f64>::from_csv("row_index,component_index,value\n0,0,2.0\n", 1, 1).is_err());
    }
}
