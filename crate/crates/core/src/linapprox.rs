//! Linear value-function architectures and weighted projections.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sparse feature vector as `(index, coefficient)` pairs.
pub type SparseFeatures = Vec<(usize, f64)>;

/// `phi(s, a, o)` for a linear architecture over encoded states.
///
/// Implementations must be pure: the same arguments always give the same
/// vector, and evaluation is safe from many threads at once.
pub trait FeatureMap: Send + Sync {
    /// Persistent identifier, stored alongside learned weights.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn n_agent_actions(&self) -> usize;
    fn n_opp_actions(&self) -> usize;
    fn eval(&self, state: u64, a: usize, o: usize) -> SparseFeatures;
}

/// One indicator per `(s, a, o)`: the exact tabular representation.
#[derive(Debug, Clone)]
pub struct TabularFeatures {
    pub n_states: usize,
    pub n_agent_actions: usize,
    pub n_opp_actions: usize,
}

impl FeatureMap for TabularFeatures {
    fn id(&self) -> String {
        format!(
            "tabular-{}x{}x{}",
            self.n_states, self.n_agent_actions, self.n_opp_actions
        )
    }

    fn dim(&self) -> usize {
        self.n_states * self.n_agent_actions * self.n_opp_actions
    }

    fn n_agent_actions(&self) -> usize {
        self.n_agent_actions
    }

    fn n_opp_actions(&self) -> usize {
        self.n_opp_actions
    }

    fn eval(&self, state: u64, a: usize, o: usize) -> SparseFeatures {
        let s = state as usize;
        vec![((s * self.n_agent_actions + a) * self.n_opp_actions + o, 1.0)]
    }
}

pub fn dot(features: &[(usize, f64)], w: &[f64]) -> f64 {
    features.iter().map(|&(i, x)| x * w[i]).sum()
}

/// Learned weights together with what they were learned for.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub features: String,
    pub gamma: f64,
    pub env: String,
}

impl WeightVector {
    pub fn zeros(k: usize, features: impl Into<String>, gamma: f64, env: impl Into<String>) -> Self {
        WeightVector {
            w: vec![0.0; k],
            features: features.into(),
            gamma,
            env: env.into(),
        }
    }

    pub fn k(&self) -> usize {
        self.w.len()
    }
}

/// Uncontrolled Markov chain with a per-state reward and discount.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    rows: Vec<Vec<(usize, f64)>>,
    reward: Vec<f64>,
    discount: f64,
}

impl MarkovChain {
    pub fn new(rows: Vec<Vec<(usize, f64)>>, reward: Vec<f64>, discount: f64) -> Result<Self> {
        let n = rows.len();
        if n == 0 || reward.len() != n {
            return Err(Error::Shape(format!(
                "chain has {n} rows and {} rewards",
                reward.len()
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Invalid(format!("discount {discount} outside (0, 1)")));
        }
        for (s, row) in rows.iter().enumerate() {
            let mut total = 0.0;
            for &(j, p) in row {
                if j >= n || !(p >= 0.0) {
                    return Err(Error::Invalid(format!("row {s}: bad entry ({j}, {p})")));
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Invalid(format!("row {s} sums to {total}")));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Invalid("chain reward is not finite".into()));
        }
        Ok(MarkovChain {
            rows,
            reward,
            discount,
        })
    }

    pub fn from_dense(p: &DMatrix<f64>, reward: Vec<f64>, discount: f64) -> Result<Self> {
        let rows = (0..p.nrows())
            .map(|i| {
                (0..p.ncols())
                    .filter(|&j| p[(i, j)] != 0.0)
                    .map(|j| (j, p[(i, j)]))
                    .collect()
            })
            .collect();
        MarkovChain::new(rows, reward, discount)
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n_states();
        let mut p = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, x) in row {
                p[(i, j)] += x;
            }
        }
        p
    }

    /// `sum_s' P(s'|s) v(s')` per state.
    pub fn expect(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, p)| p * v[j]).sum())
            .collect()
    }

    /// Continuation backup `R_c + gamma P v`.
    pub fn apply_continue(&self, v: &[f64]) -> Vec<f64> {
        self.expect(v)
            .into_iter()
            .zip(&self.reward)
            .map(|(e, r)| r + self.discount * e)
            .collect()
    }

    /// `(I - gamma P)^{-1} R_c`.
    pub fn exact_values(&self) -> Result<Vec<f64>> {
        let n = self.n_states();
        let a = DMatrix::identity(n, n) - self.dense() * self.discount;
        a.lu()
            .solve(&DVector::from_column_slice(&self.reward))
            .map(|v| v.as_slice().to_vec())
            .ok_or_else(|| Error::Singular("I - gamma P".into()))
    }

    fn left_multiply(&self, rho: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rho.len()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                out[j] += rho[i] * p;
            }
        }
        out
    }
}

/// Stationary distribution by power iteration.
///
/// Runs from the uniform distribution and from a point mass on state 0; both
/// must converge (`||rho P - rho||_inf < tol`) and agree within 1e-8, otherwise
/// the chain is reported as periodic/reducible.
pub fn stationary_distribution(chain: &MarkovChain, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = chain.n_states();
    let run = |mut rho: Vec<f64>| -> Result<Vec<f64>> {
        let mut residual = f64::INFINITY;
        for _ in 0..max_iter {
            let next = chain.left_multiply(&rho);
            residual = next
                .iter()
                .zip(&rho)
                .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()));
            let total: f64 = next.iter().sum();
            rho = next.into_iter().map(|x| x / total).collect();
            if residual < tol {
                return Ok(rho);
            }
        }
        Err(Error::NoConvergence {
            iterations: max_iter,
            residual,
        })
    };
    let a = run(vec![1.0 / n as f64; n])?;
    let mut point = vec![0.0; n];
    point[0] = 1.0;
    let b = run(point)?;
    let gap = a
        .iter()
        .zip(&b)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()));
    if gap > 1e-8 {
        return Err(Error::NotUnique { gap });
    }
    Ok(a)
}

/// `(sum_s rho(s) v(s)^2)^(1/2)`.
pub fn weighted_norm(v: &[f64], rho: &[f64]) -> f64 {
    v.iter()
        .zip(rho)
        .map(|(x, p)| p * x * x)
        .sum::<f64>()
        .sqrt()
}

/// Indices of columns of `phi` that are linearly dependent (on the support of
/// `rho`) on the columns before them.
pub fn dependent_columns(phi: &DMatrix<f64>, rho: &[f64]) -> Vec<usize> {
    let n = phi.nrows();
    let scale: Vec<f64> = rho.iter().map(|p| p.max(0.0).sqrt()).collect();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..phi.ncols() {
        let col = DVector::from_fn(n, |i, _| phi[(i, j)] * scale[i]);
        let norm0 = col.norm();
        let mut r = col;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r -= q * c;
            }
        }
        let norm = r.norm();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            dependent.push(j);
        } else {
            basis.push(r / norm);
        }
    }
    dependent
}

/// Weights of the `rho`-weighted orthogonal projection of `v` onto the
/// columns of `phi`. With `ridge = Some(l)`, solves `(Phi^T D Phi + l I) w =
/// Phi^T D v` instead of failing on dependent columns.
pub fn project_weighted(
    phi: &DMatrix<f64>,
    rho: &[f64],
    v: &[f64],
    ridge: Option<f64>,
) -> Result<Vec<f64>> {
    let n = phi.nrows();
    if rho.len() != n || v.len() != n {
        return Err(Error::Shape(format!(
            "basis has {n} rows, rho {} and v {}",
            rho.len(),
            v.len()
        )));
    }
    if ridge.is_none() {
        let dependent = dependent_columns(phi, rho);
        if !dependent.is_empty() {
            return Err(Error::RankDeficient { dependent });
        }
    }
    let d = DVector::from_column_slice(rho);
    let dphi = DMatrix::from_fn(n, phi.ncols(), |i, j| d[i] * phi[(i, j)]);
    let mut gram = phi.transpose() * &dphi;
    if let Some(l) = ridge {
        for i in 0..gram.nrows() {
            gram[(i, i)] += l;
        }
    }
    let rhs = dphi.transpose() * DVector::from_column_slice(v);
    let w = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .ok_or_else(|| Error::Singular("weighted Gram matrix".into()))?;
    Ok(w.as_slice().to_vec())
}

pub fn phi_times(phi: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    (phi * DVector::from_column_slice(w)).as_slice().to_vec()
}

/// How the projected Bellman equation weights states.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// `Phi^T diag(rho) (Phi - gamma P Phi) w = Phi^T diag(rho) R`.
    Distribution(&'a [f64]),
    /// `Phi^T (Phi - gamma P Phi) w = Phi^T R`.
    Uniform,
}

/// Closed-form weights of the projected Bellman fixed point `Phi w = Pi T_c Phi w`.
pub fn fixed_point_weights(
    chain: &MarkovChain,
    phi: &DMatrix<f64>,
    weighting: Weighting<'_>,
) -> Result<Vec<f64>> {
    let n = chain.n_states();
    if phi.nrows() != n {
        return Err(Error::Shape(format!("basis has {} rows, chain {n} states", phi.nrows())));
    }
    let rho: Vec<f64> = match weighting {
        Weighting::Distribution(r) if r.len() == n => r.to_vec(),
        Weighting::Distribution(r) => {
            return Err(Error::Shape(format!("rho has {} entries for {n} states", r.len())))
        }
        Weighting::Uniform => vec![1.0; n],
    };
    let p = chain.dense();
    let gamma = chain.discount();
    let dphi = DMatrix::from_fn(n, phi.ncols(), |i, j| rho[i] * phi[(i, j)]);
    let a = dphi.transpose() * (phi - (&p * phi) * gamma);
    let b = dphi.transpose() * DVector::from_column_slice(chain.reward());
    let w = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("projected Bellman system".into()))?;
    let w = w.as_slice().to_vec();

    // The solution must reproduce itself under projection of the backup.
    let backed = chain.apply_continue(&phi_times(phi, &w));
    let again = project_weighted(phi, &rho, &backed, None)?;
    let scale = w.iter().fold(1.0, |m: f64, x| m.max(x.abs()));
    let drift = again
        .iter()
        .zip(&w)
        .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()));
    if drift > 1e-8 * scale {
        return Err(Error::Singular(format!(
            "projected fixed point check failed (drift {drift:e})"
        )));
    }
    Ok(w)
}

/// `(||V* - Phi w||_rho, ||V* - Pi V*||_rho / sqrt(1 - gamma^2))` for the
/// rho-weighted fixed point `w`. Errors if the left side exceeds the right.
pub fn pythagorean_bound(chain: &MarkovChain, phi: &DMatrix<f64>, rho: &[f64]) -> Result<(f64, f64)> {
    let exact = chain.exact_values()?;
    let w = fixed_point_weights(chain, phi, Weighting::Distribution(rho))?;
    let approx = phi_times(phi, &w);
    let diff: Vec<f64> = exact.iter().zip(&approx).map(|(a, b)| a - b).collect();
    let lhs = weighted_norm(&diff, rho);
    let proj = phi_times(phi, &project_weighted(phi, rho, &exact, None)?);
    let perr: Vec<f64> = exact.iter().zip(&proj).map(|(a, b)| a - b).collect();
    let gamma = chain.discount();
    let rhs = weighted_norm(&perr, rho) / (1.0 - gamma * gamma).sqrt();
    if lhs > rhs + 1e-9 {
        return Err(Error::BoundViolated(format!(
            "approximation error {lhs} exceeds {rhs}"
        )));
    }
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(p: &[&[f64]], r: &[f64], gamma: f64) -> MarkovChain {
        let n = p.len();
        MarkovChain::from_dense(&DMatrix::from_fn(n, n, |i, j| p[i][j]), r.to_vec(), gamma).unwrap()
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let c = chain(
            &[
                &[0.1, 0.2, 0.3, 0.4],
                &[0.4, 0.1, 0.2, 0.3],
                &[0.3, 0.4, 0.1, 0.2],
                &[0.2, 0.3, 0.4, 0.1],
            ],
            &[0.0; 4],
            0.9,
        );
        let rho = stationary_distribution(&c, 1e-12, 1_000_000).unwrap();
        for x in rho {
            assert!((x - 0.25).abs() < 1e-10);
        }
    }

    #[test]
    fn two_state_balance() {
        let (p, q) = (0.3, 0.1);
        let c = chain(&[&[1.0 - p, p], &[q, 1.0 - q]], &[0.0; 2], 0.9);
        let rho = stationary_distribution(&c, 1e-12, 1_000_000).unwrap();
        assert!((rho[0] - q / (p + q)).abs() < 1e-9);
        assert!((rho[1] - p / (p + q)).abs() < 1e-9);
    }

    #[test]
    fn identity_chain_is_not_unique() {
        let c = chain(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0; 2], 0.9);
        assert!(matches!(
            stationary_distribution(&c, 1e-12, 1000),
            Err(Error::NotUnique { .. })
        ));
    }

    #[test]
    fn periodic_chain_does_not_converge() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]], &[0.0; 2], 0.9);
        assert!(matches!(
            stationary_distribution(&c, 1e-12, 1000),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn norm_definition() {
        assert_eq!(weighted_norm(&[0.0, 0.0], &[0.5, 0.5]), 0.0);
        let v = [1.0, -2.0, 3.0, 0.5];
        let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((weighted_norm(&v, &[0.25; 4]) - l2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_onto_identity_and_constants() {
        let v = [1.0, 4.0, -2.0];
        let rho = [0.2, 0.3, 0.5];
        let w = project_weighted(&DMatrix::identity(3, 3), &rho, &v, None).unwrap();
        for (a, b) in w.iter().zip(v) {
            assert!((a - b).abs() < 1e-12);
        }
        let ones = DMatrix::from_element(3, 1, 1.0);
        let w = project_weighted(&ones, &[1.0 / 3.0; 3], &v, None).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_reports_dependent_columns() {
        let phi = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 1.0, 2.0, 0.0]);
        match project_weighted(&phi, &[1.0 / 3.0; 3], &[1.0, 2.0, 3.0], None) {
            Err(Error::RankDeficient { dependent }) => assert_eq!(dependent, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
        assert!(project_weighted(&phi, &[1.0 / 3.0; 3], &[1.0, 2.0, 3.0], Some(1e-6)).is_ok());
    }

    #[test]
    fn fixed_point_identity_basis_is_exact() {
        let c = chain(
            &[&[0.5, 0.5, 0.0], &[0.1, 0.6, 0.3], &[0.2, 0.2, 0.6]],
            &[1.0, -1.0, 2.0],
            0.9,
        );
        let exact = c.exact_values().unwrap();
        let w = fixed_point_weights(&c, &DMatrix::identity(3, 3), Weighting::Uniform).unwrap();
        for (a, b) in w.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_basis_constant_reward() {
        let c = chain(&[&[0.5, 0.5], &[0.1, 0.9]], &[2.0, 2.0], 0.8);
        let rho = stationary_distribution(&c, 1e-12, 1_000_000).unwrap();
        let ones = DMatrix::from_element(2, 1, 1.0);
        let w = fixed_point_weights(&c, &ones, Weighting::Distribution(&rho)).unwrap();
        assert!((w[0] - 10.0).abs() < 1e-9);
        let (lhs, rhs) = pythagorean_bound(&c, &ones, &rho).unwrap();
        assert!(lhs < 1e-9 && rhs < 1e-9);
    }

    #[test]
    fn pythagorean_identity_basis_is_zero() {
        let c = chain(&[&[0.5, 0.5], &[0.1, 0.9]], &[1.0, 3.0], 0.8);
        let rho = stationary_distribution(&c, 1e-12, 1_000_000).unwrap();
        let (lhs, rhs) = pythagorean_bound(&c, &DMatrix::identity(2, 2), &rho).unwrap();
        assert!(lhs < 1e-9 && rhs < 1e-9);
    }

    #[test]
    fn tabular_features_are_indicators() {
        let f = TabularFeatures {
            n_states: 3,
            n_agent_actions: 2,
            n_opp_actions: 2,
        };
        assert_eq!(f.dim(), 12);
        assert_eq!(f.eval(2, 1, 0), vec![(10, 1.0)]);
    }
}
