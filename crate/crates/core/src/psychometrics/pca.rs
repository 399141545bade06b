//! Principal components of the seven standardized personality measures,
//! fitted on the pooled sample of husbands and wives.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Trait;

pub const N_TRAITS: usize = 7;
/// Convergence tolerance handed to the symmetric eigen-solver.
pub const EIGEN_TOLERANCE: f64 = 1e-12;
/// Loadings at least this fraction of the largest one are flagged in the
/// cut-off report.
pub const DEFAULT_CUTOFF: f64 = 0.8;
/// PC scores are mapped onto `[SCALE_MIN, SCALE_MAX]`.
pub const SCALE_MIN: f64 = 1.0;
pub const SCALE_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub traits: Vec<Trait>,
    pub n_obs: usize,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Unit eigenvectors of the correlation matrix, row-major `7 x k`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Correlations between measures and components (`eigenvector * sqrt(eigenvalue)`),
    /// row-major `7 x k`.
    pub loadings: Vec<Vec<f64>>,
    /// Retained eigenvalues, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Full spectrum of the correlation matrix, nonincreasing.
    pub spectrum: Vec<f64>,
    pub variance_shares: Vec<f64>,
    /// Raw component-score range on the fitting sample, used for the 1-100 rescale.
    pub scale_bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffEntry {
    pub component: usize,
    pub trait_: Trait,
    pub loading: f64,
    /// Loading is the largest in absolute value within its component.
    pub largest: bool,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector_matrix(&self) -> DMatrix<f64> {
        let k = self.n_components();
        DMatrix::from_fn(N_TRAITS, k, |i, j| self.eigenvectors[i][j])
    }

    pub fn loading_matrix(&self) -> DMatrix<f64> {
        let k = self.n_components();
        DMatrix::from_fn(N_TRAITS, k, |i, j| self.loadings[i][j])
    }

    /// Component scores of one person before rescaling.
    pub fn raw_scores(&self, x: &[f64; N_TRAITS]) -> Vec<f64> {
        (0..self.n_components())
            .map(|c| {
                (0..N_TRAITS)
                    .map(|t| (x[t] - self.means[t]) / self.sds[t] * self.eigenvectors[t][c])
                    .sum()
            })
            .collect()
    }

    /// Traits whose loading is at least `fraction` of the largest absolute
    /// loading of their component.
    pub fn cutoff_report(&self, fraction: f64) -> Vec<CutoffEntry> {
        let mut out = Vec::new();
        for c in 0..self.n_components() {
            let (arg, max) = (0..N_TRAITS)
                .map(|t| (t, self.loadings[t][c].abs()))
                .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
            for t in 0..N_TRAITS {
                let l = self.loadings[t][c];
                if l.abs() >= fraction * max {
                    out.push(CutoffEntry {
                        component: c,
                        trait_: self.traits[t],
                        loading: l,
                        largest: t == arg,
                    });
                }
            }
        }
        out
    }

    pub fn explained_share(&self) -> f64 {
        self.variance_shares.iter().sum()
    }
}

/// Fit with the default two retained components.
pub fn fit_pca(scores: &DMatrix<f64>) -> Result<PcaModel> {
    fit_pca_components(scores, 2)
}

pub fn fit_pca_components(scores: &DMatrix<f64>, n_components: usize) -> Result<PcaModel> {
    let (n, p) = scores.shape();
    if p != N_TRAITS {
        return Err(Error::invalid(format!("expected {N_TRAITS} trait columns, got {p}")));
    }
    if n < 8 {
        return Err(Error::invalid(format!("PCA needs at least 8 rows, got {n}")));
    }
    if n_components == 0 || n_components > N_TRAITS {
        return Err(Error::invalid("number of components must be in 1..=7"));
    }
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    let mut z = scores.clone();
    for j in 0..p {
        let col = scores.column(j);
        let m = col.sum() / n as f64;
        let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        if !(var > 0.0) {
            return Err(Error::Numerical(format!("{} has zero variance", Trait::ALL[j])));
        }
        means[j] = m;
        sds[j] = var.sqrt();
        for i in 0..n {
            z[(i, j)] = (scores[(i, j)] - m) / sds[j];
        }
    }
    let corr = (z.transpose() * &z) / (n - 1) as f64;
    let eig = SymmetricEigen::try_new(corr, EIGEN_TOLERANCE, 0)
        .ok_or_else(|| Error::Numerical("eigen-solver did not converge".into()))?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if spectrum[p - 1] < 1e-10 {
        return Err(Error::Numerical("rank-deficient correlation matrix".into()));
    }

    let mut vectors = DMatrix::zeros(p, n_components);
    for (c, &src) in order.iter().take(n_components).enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        // largest |entry| positive
        let arg = v.iamax();
        if v[arg] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(c, &v);
    }
    let eigenvalues: Vec<f64> = spectrum[..n_components].to_vec();
    let scores_raw = &z * &vectors;
    let mut scale_bounds = Vec::with_capacity(n_components);
    for c in 0..n_components {
        let col = scores_raw.column(c);
        let (lo, hi) = (col.min(), col.max());
        if !(hi > lo) {
            return Err(Error::Numerical(format!("component {} has no spread", c + 1)));
        }
        scale_bounds.push((lo, hi));
    }
    Ok(PcaModel {
        traits: Trait::ALL.to_vec(),
        n_obs: n,
        means,
        sds,
        eigenvectors: (0..p).map(|i| vectors.row(i).iter().copied().collect()).collect(),
        loadings: (0..p)
            .map(|i| (0..n_components).map(|c| vectors[(i, c)] * eigenvalues[c].sqrt()).collect())
            .collect(),
        variance_shares: eigenvalues.iter().map(|l| l / p as f64).collect(),
        eigenvalues,
        spectrum,
        scale_bounds,
    })
}

/// Affine map of a raw score onto `[1, 100]`, clamped outside the fitting range.
pub fn rescale(raw: f64, bounds: (f64, f64)) -> Result<f64> {
    let (lo, hi) = bounds;
    if !(hi > lo) {
        return Err(Error::Numerical("scale bounds have max = min".into()));
    }
    let s = SCALE_MIN + (SCALE_MAX - SCALE_MIN) * (raw - lo) / (hi - lo);
    Ok(s.clamp(SCALE_MIN, SCALE_MAX))
}

/// Scaled component scores, one row per person.
pub fn project_and_scale(model: &PcaModel, scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = model.n_components();
    let mut out = DMatrix::zeros(scores.nrows(), k);
    for i in 0..scores.nrows() {
        let mut x = [0.0; N_TRAITS];
        for (t, v) in x.iter_mut().enumerate() {
            *v = scores[(i, t)];
        }
        for (c, raw) in model.raw_scores(&x).into_iter().enumerate() {
            out[(i, c)] = rescale(raw, model.scale_bounds[c])?;
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Population correlation with two blocks: extraversion, self-esteem and
    /// cognitive engagement at 0.6; conscientiousness and neuroticism at 0.5.
    pub(crate) fn two_block_correlation() -> DMatrix<f64> {
        let block_a = [Trait::Extraversion, Trait::SelfEsteem, Trait::CognitiveEngagement];
        let block_b = [Trait::Conscientiousness, Trait::Neuroticism];
        DMatrix::from_fn(7, 7, |i, j| {
            let (ti, tj) = (Trait::ALL[i], Trait::ALL[j]);
            if i == j {
                1.0
            } else if block_a.contains(&ti) && block_a.contains(&tj) {
                0.6
            } else if block_b.contains(&ti) && block_b.contains(&tj) {
                0.5
            } else {
                0.0
            }
        })
    }

    pub(crate) fn draw_correlated(corr: &DMatrix<f64>, n: usize, seed: u64) -> DMatrix<f64> {
        let l = corr.clone().cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n, 7);
        for i in 0..n {
            let e = nalgebra::DVector::from_fn(7, |_, _| StandardNormal.sample(&mut rng));
            let x = &l * e;
            for j in 0..7 {
                out[(i, j)] = 3.0 + 0.5 * x[j];
            }
        }
        out
    }

    #[test]
    fn independent_traits_have_flat_spectrum() {
        // exact zero sample correlation: orthogonal +-1 columns from a Hadamard design
        let h8 = [
            [1, 1, 1, 1, 1, 1, 1, 1],
            [1, -1, 1, -1, 1, -1, 1, -1],
            [1, 1, -1, -1, 1, 1, -1, -1],
            [1, -1, -1, 1, 1, -1, -1, 1],
            [1, 1, 1, 1, -1, -1, -1, -1],
            [1, -1, 1, -1, -1, 1, -1, 1],
            [1, 1, -1, -1, -1, -1, 1, 1],
            [1, -1, -1, 1, -1, 1, 1, -1],
        ];
        let x = DMatrix::from_fn(8, 7, |i, j| 3.0 + h8[i][j + 1] as f64);
        let m = fit_pca_components(&x, 7).unwrap();
        for l in &m.spectrum {
            assert!((l - 1.0).abs() < 1e-10);
        }
        for s in &m.variance_shares {
            assert!((s - 1.0 / 7.0).abs() < 1e-10);
        }
    }

    #[test]
    fn spectrum_sums_to_trait_count_and_loadings_reproduce_eigenvalues() {
        let x = draw_correlated(&two_block_correlation(), 2000, 1);
        let m = fit_pca(&x).unwrap();
        assert!((m.spectrum.iter().sum::<f64>() - 7.0).abs() < 1e-10);
        assert!(m.eigenvalues[0] >= m.eigenvalues[1]);
        let l = m.loading_matrix();
        let llt = SymmetricEigen::new(&l * l.transpose());
        let mut ev: Vec<f64> = llt.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        assert!((ev[0] - m.eigenvalues[0]).abs() < 1e-10);
        assert!((ev[1] - m.eigenvalues[1]).abs() < 1e-10);
        // unit eigenvectors are orthonormal
        let v = m.eigenvector_matrix();
        assert!((v.transpose() * &v - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn two_factor_structure_gives_expected_cutoff_pattern() {
        let x = draw_correlated(&two_block_correlation(), 5000, 2);
        let m = fit_pca(&x).unwrap();
        let report = m.cutoff_report(DEFAULT_CUTOFF);
        let pc1: Vec<Trait> = report.iter().filter(|e| e.component == 0).map(|e| e.trait_).collect();
        let pc2: Vec<Trait> = report.iter().filter(|e| e.component == 1).map(|e| e.trait_).collect();
        assert_eq!(pc1, vec![Trait::Extraversion, Trait::SelfEsteem, Trait::CognitiveEngagement]);
        assert_eq!(pc2, vec![Trait::Neuroticism, Trait::Conscientiousness]);
        assert!(report.iter().all(|e| e.loading > 0.0));
    }

    #[test]
    fn deterministic_fit() {
        let x = draw_correlated(&two_block_correlation(), 500, 3);
        assert_eq!(fit_pca(&x).unwrap(), fit_pca(&x).unwrap());
    }

    #[test]
    fn rank_deficient_input_errors() {
        let mut x = draw_correlated(&two_block_correlation(), 100, 4);
        for i in 0..100 {
            x[(i, 6)] = 2.0 * x[(i, 0)] - x[(i, 1)];
        }
        assert!(fit_pca(&x).is_err());
    }

    #[test]
    fn rescale_endpoints_and_clamp() {
        let b = (-2.0, 4.0);
        assert_eq!(rescale(-2.0, b).unwrap(), 1.0);
        assert_eq!(rescale(4.0, b).unwrap(), 100.0);
        assert!((rescale(1.0, b).unwrap() - 50.5).abs() < 1e-12);
        assert_eq!(rescale(4.0 + 1e-9, b).unwrap(), 100.0);
        assert_eq!(rescale(-7.0, b).unwrap(), 1.0);
        assert!(rescale(0.0, (1.0, 1.0)).is_err());
    }

    #[test]
    fn projection_is_monotone_in_raw_score() {
        let x = draw_correlated(&two_block_correlation(), 300, 5);
        let m = fit_pca(&x).unwrap();
        let scaled = project_and_scale(&m, &x).unwrap();
        let mut pairs: Vec<(f64, f64)> = (0..300)
            .map(|i| {
                let row: [f64; 7] = std::array::from_fn(|t| x[(i, t)]);
                (m.raw_scores(&row)[0], scaled[(i, 0)])
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[1].1 > w[0].1 || w[1].0 == w[0].0);
        }
        assert!(scaled.iter().all(|s| (1.0..=100.0).contains(s)));
    }
}
