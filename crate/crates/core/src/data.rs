//! Multi-domain image data: samples, datasets, leave-one-out splits, and
//! query-reference episode sampling.

use std::collections::BTreeSet;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Where a sample sits in the dataset layout. Reference banks draw from
/// training normals only; evaluation scores the test pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleOrigin {
    Train,
    Test,
}

/// One image with its image-level label and, for abnormal evaluation data,
/// an optional pixel mask.
#[derive(Debug, Clone)]
pub struct ImageSample {
    /// H×W×3, values in [0, 1], already resized to the model input size.
    pub pixels: Array3<f32>,
    /// 0 = normal, 1 = abnormal.
    pub label: u8,
    pub domain: String,
    /// H×W, 1 marks defect pixels. Present only on abnormal samples.
    pub mask: Option<Array2<u8>>,
    /// Layout-relative source identifier, e.g. `carpet/test/hole/003.png`.
    pub path: String,
    pub origin: SampleOrigin,
}

impl ImageSample {
    pub fn size(&self) -> (usize, usize) {
        let d = self.pixels.dim();
        (d.0, d.1)
    }
}

/// All samples of one domain, split by label.
#[derive(Debug, Clone)]
pub struct DomainDataset {
    pub domain: String,
    pub normal: Vec<ImageSample>,
    pub abnormal: Vec<ImageSample>,
}

impl DomainDataset {
    /// Normals available as references (training split of the layout).
    pub fn train_normals(&self) -> Vec<&ImageSample> {
        self.normal
            .iter()
            .filter(|s| s.origin == SampleOrigin::Train)
            .collect()
    }

    /// Test pool: held-out normals plus every abnormal sample.
    pub fn test_pool(&self) -> Vec<&ImageSample> {
        self.normal
            .iter()
            .filter(|s| s.origin == SampleOrigin::Test)
            .chain(self.abnormal.iter())
            .collect()
    }

    pub fn all_paths(&self) -> BTreeSet<String> {
        self.normal
            .iter()
            .chain(self.abnormal.iter())
            .map(|s| s.path.clone())
            .collect()
    }
}

/// Leave-one-domain-out split with the reference fraction used at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub source_domains: Vec<String>,
    pub target_domain: String,
    pub reference_fraction: f64,
}

pub fn make_leave_one_out_split(
    domains: &[String],
    target: &str,
    reference_fraction: f64,
) -> Result<SplitConfig> {
    if !domains.iter().any(|d| d == target) {
        return Err(Error::Config(format!(
            "target domain {target:?} is not among {domains:?}"
        )));
    }
    if !(reference_fraction > 0.0 && reference_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "reference_fraction must lie in (0, 1], got {reference_fraction}"
        )));
    }
    let source_domains: Vec<String> = domains
        .iter()
        .filter(|d| d.as_str() != target)
        .cloned()
        .collect();
    if source_domains.is_empty() {
        return Err(Error::Config(format!(
            "leave-one-out split for {target:?} leaves no source domains"
        )));
    }
    let unique: BTreeSet<&String> = source_domains.iter().collect();
    if unique.len() != source_domains.len() {
        return Err(Error::Config("source domains must be pairwise distinct".into()));
    }
    Ok(SplitConfig {
        source_domains,
        target_domain: target.to_string(),
        reference_fraction,
    })
}

/// One training episode: a labelled query and same-domain normal references.
#[derive(Debug, Clone)]
pub struct Episode {
    pub query: ImageSample,
    pub reference: Vec<ImageSample>,
    pub domain: String,
}

/// Draw `k` distinct indices from `0..n`, skipping `exclude`.
fn sample_distinct(
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
    exclude: Option<usize>,
) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).filter(|i| Some(*i) != exclude).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let j = rng.gen_range(0..pool.len());
        out.push(pool.swap_remove(j));
    }
    out
}

/// Sample a query-reference episode from the source domains.
///
/// The query label is drawn first (abnormal with probability
/// `abnormal_prob`); the domain is then drawn uniformly among domains that
/// can serve that label with `n_ref` leftover normals, which realizes the
/// resample-on-insufficiency rule with a single draw.
pub fn sample_episode(
    sources: &[DomainDataset],
    n_ref: usize,
    abnormal_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    if sources.is_empty() {
        return Err(Error::Data("no source domains to sample from".into()));
    }
    let abnormal = rng.gen_bool(abnormal_prob);
    let eligible: Vec<usize> = sources
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            let needed = if abnormal { n_ref } else { n_ref + 1 };
            d.normal.len() >= needed && (!abnormal || !d.abnormal.is_empty())
        })
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Data(format!(
            "no source domain can serve a {} query with {n_ref} references",
            if abnormal { "abnormal" } else { "normal" }
        )));
    }
    let dom = &sources[eligible[rng.gen_range(0..eligible.len())]];

    let (query, exclude) = if abnormal {
        let qi = rng.gen_range(0..dom.abnormal.len());
        (dom.abnormal[qi].clone(), None)
    } else {
        let qi = rng.gen_range(0..dom.normal.len());
        (dom.normal[qi].clone(), Some(qi))
    };
    let reference: Vec<ImageSample> = sample_distinct(rng, dom.normal.len(), n_ref, exclude)
        .into_iter()
        .map(|i| dom.normal[i].clone())
        .collect();

    Ok(Episode {
        domain: dom.domain.clone(),
        query,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic_domain, TextureFamily, TextureSpec};
    use rand_chacha::rand_core::SeedableRng;

    fn tiny_sources(n_domains: usize) -> Vec<DomainDataset> {
        (0..n_domains)
            .map(|i| {
                let spec = TextureSpec {
                    family: match i % 4 {
                        0 => TextureFamily::Stripes,
                        1 => TextureFamily::Checker,
                        2 => TextureFamily::PerlinNoise,
                        _ => TextureFamily::Dots,
                    },
                    size: 16,
                    ..TextureSpec::default()
                };
                generate_synthetic_domain(&format!("dom{i}"), &spec, 10, 4, 100 + i as u64)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn split_excludes_target() {
        let domains: Vec<String> = ["carpet", "grid", "leather", "tile", "wood"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let split = make_leave_one_out_split(&domains, "grid", 0.1).unwrap();
        assert_eq!(split.source_domains, vec!["carpet", "leather", "tile", "wood"]);
        assert_eq!(split.target_domain, "grid");
    }

    #[test]
    fn split_rejects_unknown_target_and_empty_sources() {
        let domains = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            make_leave_one_out_split(&domains, "c", 0.5),
            Err(Error::Config(_))
        ));
        let single = vec!["a".to_string()];
        assert!(matches!(
            make_leave_one_out_split(&single, "a", 0.5),
            Err(Error::Config(_))
        ));
        assert!(make_leave_one_out_split(&domains, "a", 0.0).is_err());
        assert!(make_leave_one_out_split(&domains, "a", 1.5).is_err());
    }

    #[test]
    fn episodes_are_same_domain_with_normal_references() {
        let sources = tiny_sources(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let ep = sample_episode(&sources, 2, 0.5, &mut rng).unwrap();
            assert_eq!(ep.reference.len(), 2);
            for r in &ep.reference {
                assert_eq!(r.label, 0);
                assert_eq!(r.domain, ep.domain);
            }
            assert_eq!(ep.query.domain, ep.domain);
            // A normal query never doubles as its own reference.
            if ep.query.label == 0 {
                assert!(ep.reference.iter().all(|r| r.path != ep.query.path));
            }
        }
    }

    #[test]
    fn episode_stream_is_deterministic() {
        let sources = tiny_sources(2);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| {
                    let ep = sample_episode(&sources, 1, 0.5, &mut rng).unwrap();
                    (ep.query.path.clone(), ep.reference[0].path.clone())
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn zero_abnormal_probability_yields_normal_queries() {
        let sources = tiny_sources(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let ep = sample_episode(&sources, 1, 0.0, &mut rng).unwrap();
            assert_eq!(ep.query.label, 0);
        }
    }

    #[test]
    fn domain_choice_is_uniform_within_binomial_bound() {
        let sources = tiny_sources(4);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            let ep = sample_episode(&sources, 1, 0.5, &mut rng).unwrap();
            let idx = sources.iter().position(|d| d.domain == ep.domain).unwrap();
            counts[idx] += 1;
        }
        let p = 0.25;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - mean).abs() <= 4.0 * sigma,
                "domain frequency {c} outside 4 sigma of {mean}"
            );
        }
    }

    #[test]
    fn insufficient_domains_error_out() {
        let mut sources = tiny_sources(1);
        sources[0].normal.truncate(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_episode(&sources, 2, 0.0, &mut rng),
            Err(Error::Data(_))
        ));
    }
}
