//! Fréchet distance between Gaussian fits of feature distributions, used to
//! quantify inter-domain gaps.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::model::Model;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns). Deterministic sweep order.
fn jacobi_eigh(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let tol = 1e-12;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= tol * (1.0 + m.diag().iter().map(|d| d.abs()).sum::<f64>()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

/// Symmetric PSD square root via eigendecomposition; tiny negative
/// eigenvalues are clamped to zero.
fn sqrt_sym(a: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = jacobi_eigh(a);
    let n = a.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    for k in 0..n {
        let lam = vals[k].max(0.0).sqrt();
        if lam == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += lam * vecs[(i, k)] * vecs[(j, k)];
            }
        }
    }
    out
}

fn mean_and_cov(features: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let (n, d) = features.dim();
    let mean = features.mean_axis(ndarray::Axis(0)).unwrap();
    let mut cov = Array2::<f64>::zeros((d, d));
    for row in features.rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    (mean, cov)
}

/// FID = ‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2}), computed through
/// the symmetrized product Σ_b^{1/2} Σ_a Σ_b^{1/2}. Clamped at zero.
pub fn fid(features_a: &Array2<f64>, features_b: &Array2<f64>) -> Result<f64> {
    let (na, da) = features_a.dim();
    let (nb, db) = features_b.dim();
    if da != db {
        return Err(Error::Shape(format!(
            "feature dimensions differ: {da} vs {db}"
        )));
    }
    if na < 2 || nb < 2 {
        return Err(Error::Eval("FID needs at least two samples per side".into()));
    }
    if na <= da || nb <= db {
        eprintln!(
            "warning: FID with n ({}, {}) not exceeding d ({da}); covariance estimate is degenerate",
            na, nb
        );
    }
    let (mu_a, cov_a) = mean_and_cov(features_a);
    let (mu_b, cov_b) = mean_and_cov(features_b);

    let mean_term: f64 = mu_a
        .iter()
        .zip(mu_b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    let b_half = sqrt_sym(&cov_b);
    let inner = b_half.dot(&cov_a).dot(&b_half);
    // Restore exact symmetry lost to rounding before the second root.
    let inner_sym = (&inner + &inner.t()) / 2.0;
    let cross = sqrt_sym(&inner_sym);

    let trace = |m: &Array2<f64>| m.diag().sum();
    let value = mean_term + trace(&cov_a) + trace(&cov_b) - 2.0 * trace(&cross);
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainDistanceTable {
    pub domains: Vec<String>,
    /// Symmetric pairwise FID matrix (row-major, diag ≈ 0).
    pub matrix: Vec<Vec<f64>>,
    /// Mean off-diagonal FID per domain.
    pub row_averages: Vec<f64>,
}

impl DomainDistanceTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let width = self
            .domains
            .iter()
            .map(|d| d.len())
            .max()
            .unwrap_or(6)
            .max(7);
        out.push_str(&format!("{:width$}", ""));
        for d in &self.domains {
            out.push_str(&format!(" {d:>width$}"));
        }
        out.push_str(&format!(" {:>width$}\n", "average"));
        for (i, d) in self.domains.iter().enumerate() {
            out.push_str(&format!("{d:width$}"));
            for j in 0..self.domains.len() {
                out.push_str(&format!(" {:>width$.3}", self.matrix[i][j]));
            }
            out.push_str(&format!(" {:>width$.3}\n", self.row_averages[i]));
        }
        out
    }
}

/// Per-domain normal-image features from the model's own backbone (mean
/// pooled top pyramid level).
pub fn domain_features(model: &Model<f32>, domain: &DomainDataset) -> Result<Array2<f64>> {
    if domain.normal.is_empty() {
        return Err(Error::Data(format!("domain {} has no normal images", domain.domain)));
    }
    let d = model.config.extractor.channels;
    let mut out = Array2::<f64>::zeros((domain.normal.len(), d));
    for (i, sample) in domain.normal.iter().enumerate() {
        let f = model.global_feature(&sample.pixels)?;
        out.row_mut(i).assign(&f);
    }
    Ok(out)
}

/// Pairwise FID over the domains' normal-image features.
pub fn domain_distance_table(
    model: &Model<f32>,
    domains: &[DomainDataset],
) -> Result<DomainDistanceTable> {
    if domains.len() < 2 {
        return Err(Error::Config("domain distance table needs >= 2 domains".into()));
    }
    let features: Vec<Array2<f64>> = domains
        .iter()
        .map(|d| domain_features(model, d))
        .collect::<Result<_>>()?;
    let n = domains.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = fid(&features[i], &features[j])?;
            matrix[i][j] = v;
            matrix[j][i] = v;
        }
    }
    let row_averages = (0..n)
        .map(|i| {
            let sum: f64 = (0..n).filter(|&j| j != i).map(|j| matrix[i][j]).sum();
            sum / (n - 1) as f64
        })
        .collect();
    Ok(DomainDistanceTable {
        domains: domains.iter().map(|d| d.domain.clone()).collect(),
        matrix,
        row_averages,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn jacobi_diagonalizes_random_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let d = rng.gen_range(2..8);
            let mut a = Array2::<f64>::zeros((d, d));
            for i in 0..d {
                for j in i..d {
                    let v = rng.gen_range(-1.0..1.0);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            let (vals, vecs) = jacobi_eigh(&a);
            // Reconstruction: V diag(vals) Vᵀ == A.
            let mut rec = Array2::<f64>::zeros((d, d));
            for k in 0..d {
                for i in 0..d {
                    for j in 0..d {
                        rec[(i, j)] += vals[k] * vecs[(i, k)] * vecs[(j, k)];
                    }
                }
            }
            for (x, y) in rec.iter().zip(a.iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sqrt_sym_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 5;
        let b = Array2::<f64>::from_shape_fn((d, d), |_| rng.gen_range(-1.0..1.0));
        let psd = b.dot(&b.t());
        let root = sqrt_sym(&psd);
        let sq = root.dot(&root);
        for (x, y) in sq.iter().zip(psd.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    fn gaussian_features(
        rng: &mut ChaCha8Rng,
        n: usize,
        d: usize,
        mix: &Array2<f64>,
        shift: &[f64],
    ) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((n, d));
        for i in 0..n {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            for j in 0..d {
                let mut v = shift[j];
                for k in 0..d {
                    v += mix[(j, k)] * z[k];
                }
                out[(i, j)] = v;
            }
        }
        out
    }

    #[test]
    fn fid_identity_symmetry_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 4;
        let mix = Array2::<f64>::from_shape_fn((d, d), |(i, j)| {
            if i == j {
                1.0
            } else {
                0.3 * ((i + j) as f64).sin()
            }
        });
        let a = gaussian_features(&mut rng, 2000, d, &mix, &[0.0; 4]);
        let b = gaussian_features(&mut rng, 2000, d, &mix, &[1.0, -0.5, 0.25, 0.0]);

        assert!(fid(&a, &a).unwrap() < 1e-6);
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-6);
        // Equal covariances: FID ≈ ‖δ‖² = 1 + 0.25 + 0.0625 = 1.3125.
        let expect = 1.0 + 0.25 + 0.0625;
        assert!(
            (ab - expect).abs() / expect < 0.10,
            "fid {ab} vs analytic {expect}"
        );
        assert!(fid(&a, &Array2::zeros((5, 3))).is_err());
    }

    #[test]
    fn fid_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 3;
        let mix = Array2::<f64>::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { 0.2 });
        let a = gaussian_features(&mut rng, 500, d, &mix, &[0.0; 3]);
        let b = gaussian_features(&mut rng, 500, d, &mix, &[0.8, 0.0, -0.3]);
        let base = fid(&a, &b).unwrap();

        // Rotation about the first axis.
        let th = 0.7f64;
        let mut rot = Array2::<f64>::eye(d);
        rot[(1, 1)] = th.cos();
        rot[(1, 2)] = -th.sin();
        rot[(2, 1)] = th.sin();
        rot[(2, 2)] = th.cos();
        let ra = a.dot(&rot.t());
        let rb = b.dot(&rot.t());
        let rotated = fid(&ra, &rb).unwrap();
        assert!((base - rotated).abs() < 1e-4);
    }

    #[test]
    fn identical_domains_have_near_zero_distance() {
        use crate::model::ModelConfig;
        use crate::pyramid::{BackboneKind, ExtractorConfig};
        use crate::synthetic::{generate_synthetic_domain, TextureFamily, TextureSpec};

        let model = Model::<f32>::new(
            ModelConfig {
                extractor: ExtractorConfig {
                    backbone: BackboneKind::SmallCnn,
                    levels: 1,
                    channels: 8,
                    bifpn_repeats: 1,
                    backbone_weights: None,
                },
                input_size: 32,
                projection_dim: 8,
                mlp_hidden: vec![6],
                norm_mean: [0.5; 3],
                norm_std: [0.5; 3],
            },
            1,
        )
        .unwrap();

        let mk = |name: &str, family, seed| {
            let spec = TextureSpec {
                family,
                size: 32,
                ..TextureSpec::default()
            };
            let mut d = generate_synthetic_domain(name, &spec, 12, 0, seed).unwrap();
            d.domain = name.to_string();
            d
        };
        // Two copies of the same distribution plus one very different domain.
        let a = mk("a", TextureFamily::Stripes, 5);
        let b = mk("b", TextureFamily::Stripes, 6);
        let c = mk("c", TextureFamily::Dots, 7);
        let table = domain_distance_table(&model, &[a, b, c]).unwrap();
        assert!(table.matrix[0][0] < 1e-6);
        assert!((table.matrix[0][1] - table.matrix[1][0]).abs() < 1e-9);
        // The shared-family pair sits closer than either pair with the dots domain.
        assert!(table.matrix[0][1] < table.matrix[0][2]);
        assert!(table.matrix[0][1] < table.matrix[1][2]);
        let rendered = table.render();
        assert!(rendered.contains("average"));
    }
}
