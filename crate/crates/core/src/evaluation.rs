//! Image- and pixel-level AUROC evaluation plus the reference-fraction sweep.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::inference::{build_reference_bank, score_pixels, score_query};
use crate::model::Model;

/// Rank-based AUROC (Mann–Whitney), ties counted as 0.5.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Eval(format!(
            "scores and labels differ in length: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Eval("AUROC needs both classes present".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Eval("AUROC scores must be finite".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average ranks within tied groups keep the tie contribution at 0.5.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let numer = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(numer / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageScoreRecord {
    pub path: String,
    pub score: f32,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub target: String,
    pub reference_fraction: f64,
    pub seed: u64,
    pub bank_images: usize,
    pub image_auc: f64,
    /// Present iff every abnormal test image carries a pixel mask.
    pub pixel_auc: Option<f64>,
    pub per_image: Vec<ImageScoreRecord>,
}

/// Score the target domain's test pool against a bank built from its
/// training normals at the given fraction.
pub fn evaluate_target(
    model: &Model<f32>,
    target: &DomainDataset,
    fraction: f64,
    seed: u64,
) -> Result<EvalReport> {
    let bank_pool = target.train_normals();
    if bank_pool.is_empty() {
        return Err(Error::Data(format!(
            "target domain {} has no training normals for the reference bank",
            target.domain
        )));
    }
    let test_pool = target.test_pool();
    let has_pos = test_pool.iter().any(|s| s.label == 1);
    let has_neg = test_pool.iter().any(|s| s.label == 0);
    if !has_pos || !has_neg {
        return Err(Error::Eval(format!(
            "target domain {} test pool needs both normal and abnormal images",
            target.domain
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank = build_reference_bank(&bank_pool, fraction, model, &mut rng)?;

    let mut per_image = Vec::with_capacity(test_pool.len());
    let mut scores = Vec::with_capacity(test_pool.len());
    let mut labels = Vec::with_capacity(test_pool.len());
    for sample in &test_pool {
        let s = score_query(sample, &bank, model)?;
        let y = s.image_score();
        per_image.push(ImageScoreRecord {
            path: sample.path.clone(),
            score: y,
            label: sample.label,
        });
        scores.push(y as f64);
        labels.push(sample.label);
    }
    let image_auc = auroc(&scores, &labels)?;

    // Pixel-level AUROC pools every pixel of the test set into one curve.
    let masks_complete = test_pool
        .iter()
        .filter(|s| s.label == 1)
        .all(|s| s.mask.is_some());
    let pixel_auc = if masks_complete {
        let n = model.config.input_size;
        let mut pixel_scores = Vec::with_capacity(test_pool.len() * n * n);
        let mut pixel_labels = Vec::with_capacity(test_pool.len() * n * n);
        for sample in &test_pool {
            let map = score_pixels(sample, &bank, model)?;
            for y in 0..n {
                for x in 0..n {
                    pixel_scores.push(map.map[(y, x)] as f64);
                    pixel_labels.push(match &sample.mask {
                        Some(m) => m[(y, x)],
                        None => 0,
                    });
                }
            }
        }
        Some(auroc(&pixel_scores, &pixel_labels)?)
    } else {
        None
    };

    Ok(EvalReport {
        target: target.domain.clone(),
        reference_fraction: fraction,
        seed,
        bank_images: bank.image_ids.len(),
        image_auc,
        pixel_auc,
        per_image,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub mean_image_auc: f64,
    pub mean_pixel_auc: Option<f64>,
    pub per_seed: Vec<(u64, f64, Option<f64>)>,
}

/// Evaluate each fraction across the seeds and average. Duplicate fractions
/// are dropped with a warning.
pub fn sweep_reference_fraction(
    model: &Model<f32>,
    target: &DomainDataset,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if fractions.is_empty() {
        return Err(Error::Config("sweep needs at least one fraction".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut unique: Vec<f64> = Vec::new();
    for &f in fractions {
        if unique.iter().any(|&u| u == f) {
            eprintln!("warning: duplicate sweep fraction {f} ignored");
        } else {
            unique.push(f);
        }
    }

    let mut rows = Vec::with_capacity(unique.len());
    for &fraction in &unique {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut image_sum = 0.0;
        let mut pixel_sum = 0.0;
        let mut pixel_all = true;
        for &seed in seeds {
            let report = evaluate_target(model, target, fraction, seed)?;
            image_sum += report.image_auc;
            match report.pixel_auc {
                Some(p) => pixel_sum += p,
                None => pixel_all = false,
            }
            per_seed.push((seed, report.image_auc, report.pixel_auc));
        }
        rows.push(SweepRow {
            fraction,
            mean_image_auc: image_sum / seeds.len() as f64,
            mean_pixel_auc: pixel_all.then(|| pixel_sum / seeds.len() as f64),
            per_seed,
        });
    }
    Ok(rows)
}
