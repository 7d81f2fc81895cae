//! Target-domain inference: reference bank construction, image-level
//! predictions, and pixel-level anomaly maps.
//!
//! The bank pools the patch embeddings of the selected normal images per
//! scale, so the patch-score maximum ranges over the whole bank. Patch scores
//! scatter back to the input grid as stride-aligned cells (nearest-neighbor
//! expansion); the pixel map is the elementwise maximum across scales, which
//! makes the image score exactly the maximum of the pixel map.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::comparer::{patch_scores_var, AnomalyScores, PooledPatchesVar};
use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::model::{Model, PatchSetVar};
use crate::pyramid::patchify;

/// Cap on pair-matrix rows per scoring chunk.
const PAIR_CHUNK_ROWS: usize = 1 << 16;

/// Pooled normal-image patch embeddings of the target domain.
#[derive(Debug, Clone)]
pub struct ReferenceBank {
    /// Per-scale pooled patch matrices, rows from all bank images.
    pub per_scale: Vec<Array2<f32>>,
    /// Source identifiers of the pooled images.
    pub image_ids: Vec<String>,
    pub fraction: f64,
}

/// Select ⌈fraction·n⌉ images (at least one) deterministically from `rng` and
/// pool their per-scale patch embeddings.
pub fn build_reference_bank(
    normals: &[&ImageSample],
    fraction: f64,
    model: &Model<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<ReferenceBank> {
    if normals.is_empty() {
        return Err(Error::Data("reference bank needs at least one normal image".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "reference fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if let Some(bad) = normals.iter().find(|s| s.label != 0) {
        return Err(Error::Data(format!(
            "reference bank candidate {} is not a normal image",
            bad.path
        )));
    }
    let n = normals.len();
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut pool: Vec<usize> = (0..n).collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let j = rng.gen_range(0..pool.len());
        chosen.push(pool.swap_remove(j));
    }

    let levels = model.config.extractor.levels;
    let mut parts: Vec<Vec<Array2<f32>>> = vec![Vec::new(); levels];
    let mut image_ids = Vec::with_capacity(k);
    for &idx in &chosen {
        let sample = normals[idx];
        let pyramid = model.extract_pyramid(&sample.pixels)?;
        for set in patchify(&pyramid) {
            parts[set.scale_index].push(set.patches);
        }
        image_ids.push(sample.path.clone());
    }
    let per_scale = parts
        .into_iter()
        .map(|p| {
            let c = p[0].ncols();
            let rows: usize = p.iter().map(|m| m.nrows()).sum();
            let mut pooled = Array2::<f32>::zeros((rows, c));
            let mut at = 0;
            for m in p {
                pooled
                    .slice_mut(ndarray::s![at..at + m.nrows(), ..])
                    .assign(&m);
                at += m.nrows();
            }
            pooled
        })
        .collect();

    Ok(ReferenceBank {
        per_scale,
        image_ids,
        fraction,
    })
}

/// Patch scores of one query against the pooled bank (chunked over bank rows
/// to bound memory; the running maximum is exact).
pub fn score_query(
    query: &ImageSample,
    bank: &ReferenceBank,
    model: &Model<f32>,
) -> Result<AnomalyScores> {
    if bank.per_scale.is_empty() || bank.per_scale.iter().any(|m| m.nrows() == 0) {
        return Err(Error::Data("reference bank is empty".into()));
    }
    if bank.per_scale.len() != model.config.extractor.levels {
        return Err(Error::Shape(format!(
            "bank has {} scales, model expects {}",
            bank.per_scale.len(),
            model.config.extractor.levels
        )));
    }
    let pyramid = model.extract_pyramid(&query.pixels)?;
    let query_sets = patchify(&pyramid);

    let mut per_scale = Vec::with_capacity(query_sets.len());
    let mut coords = Vec::with_capacity(query_sets.len());
    let mut strides = Vec::with_capacity(query_sets.len());
    let mut grids = Vec::with_capacity(query_sets.len());
    for set in &query_sets {
        let n_q = set.patches.nrows();
        let bank_rows = &bank.per_scale[set.scale_index];
        let chunk = (PAIR_CHUNK_ROWS / n_q.max(1)).max(1);
        let mut best = ndarray::Array1::<f32>::from_elem(n_q, f32::NEG_INFINITY);
        let mut at = 0;
        while at < bank_rows.nrows() {
            let end = (at + chunk).min(bank_rows.nrows());
            let mut g = Graph::<f32>::new();
            let qv = g.input(set.patches.clone().into_dyn());
            let q = PatchSetVar {
                var: qv,
                coords: set.coords.clone(),
                scale_index: set.scale_index,
                stride: set.stride,
                grid: (0, 0),
            };
            let rv = g.input(bank_rows.slice(ndarray::s![at..end, ..]).to_owned().into_dyn());
            let pooled = PooledPatchesVar {
                var: rv,
                scale_index: set.scale_index,
                count: end - at,
            };
            let s = patch_scores_var(&mut g, model, &q, &pooled)?;
            for (b, v) in best.iter_mut().zip(g.value(s).iter()) {
                if *v > *b {
                    *b = *v;
                }
            }
            at = end;
        }
        per_scale.push(best);
        coords.push(set.coords.clone());
        strides.push(set.stride);
        let side = model.config.input_size / set.stride;
        grids.push((side, side));
    }

    Ok(AnomalyScores {
        per_scale,
        coords,
        strides,
        grids,
    })
}

/// Image-level prediction: the maximum patch score over all scales.
pub fn score_image(
    query: &ImageSample,
    bank: &ReferenceBank,
    model: &Model<f32>,
) -> Result<(f32, AnomalyScores)> {
    let scores = score_query(query, bank, model)?;
    Ok((scores.image_score(), scores))
}

/// Pixel-level anomaly map at input resolution.
#[derive(Debug, Clone)]
pub struct PixelAnomalyMap {
    /// H×W scores in (0, 1).
    pub map: Array2<f32>,
    /// (scale, patch index) of the maximum contributor per pixel, row-major.
    pub provenance: Vec<(u8, u32)>,
}

/// Scatter per-patch scores to stride-aligned cells and take the elementwise
/// maximum across scales.
pub fn scatter_scores(scores: &AnomalyScores, input_size: usize) -> PixelAnomalyMap {
    let mut map = Array2::<f32>::from_elem((input_size, input_size), f32::NEG_INFINITY);
    let mut provenance = vec![(0u8, 0u32); input_size * input_size];
    for (scale, ((per_patch, coords), stride)) in scores
        .per_scale
        .iter()
        .zip(scores.coords.iter())
        .zip(scores.strides.iter())
        .enumerate()
    {
        for (j, &(r, c)) in coords.iter().enumerate() {
            let v = per_patch[j];
            for y in r * stride..((r + 1) * stride).min(input_size) {
                for x in c * stride..((c + 1) * stride).min(input_size) {
                    if v > map[(y, x)] {
                        map[(y, x)] = v;
                        provenance[y * input_size + x] = (scale as u8, j as u32);
                    }
                }
            }
        }
    }
    PixelAnomalyMap { map, provenance }
}

/// ŷ(p): per-pixel maximum over the scores of all patches containing p.
pub fn score_pixels(
    query: &ImageSample,
    bank: &ReferenceBank,
    model: &Model<f32>,
) -> Result<PixelAnomalyMap> {
    let scores = score_query(query, bank, model)?;
    Ok(scatter_scores(&scores, model.config.input_size))
}

/// Write the grayscale map and a red-blend overlay next to `out_stem`.
pub fn export_heatmap(
    map: &PixelAnomalyMap,
    original: &ImageSample,
    out_stem: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let (h, w) = map.map.dim();
    let gray_path = out_stem.with_file_name(format!(
        "{}_heat.png",
        out_stem.file_name().unwrap_or_default().to_string_lossy()
    ));
    let overlay_path = out_stem.with_file_name(format!(
        "{}_overlay.png",
        out_stem.file_name().unwrap_or_default().to_string_lossy()
    ));
    if let Some(parent) = gray_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }

    let mut gray = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (map.map[(y, x)] * 255.0).round().clamp(0.0, 255.0) as u8;
            gray.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    gray.save(&gray_path).map_err(|e| Error::Image {
        path: gray_path.clone(),
        source: e,
    })?;

    let (oh, ow, _) = original.pixels.dim();
    let mut overlay = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let a = map.map[(y, x)].clamp(0.0, 1.0);
            let (orig_r, orig_g, orig_b) = if y < oh && x < ow {
                (
                    original.pixels[(y, x, 0)],
                    original.pixels[(y, x, 1)],
                    original.pixels[(y, x, 2)],
                )
            } else {
                (0.0, 0.0, 0.0)
            };
            let px = [
                ((orig_r + a * (1.0 - orig_r)) * 255.0).round() as u8,
                ((orig_g * (1.0 - a)) * 255.0).round() as u8,
                ((orig_b * (1.0 - a)) * 255.0).round() as u8,
            ];
            overlay.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    overlay.save(&overlay_path).map_err(|e| Error::Image {
        path: overlay_path.clone(),
        source: e,
    })?;

    Ok((gray_path, overlay_path))
}
