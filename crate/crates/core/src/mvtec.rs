//! MVTec-AD directory layout: loading and writing.
//!
//! Layout per domain:
//!   <root>/<domain>/train/good/*.png
//!   <root>/<domain>/test/<defect_type>/*.png   ("good" = normal test images)
//!   <root>/<domain>/ground_truth/<defect_type>/<stem>_mask.png
//!
//! Synthetic datasets are written in the same tree so every downstream
//! consumer is format-agnostic.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use ndarray::{Array2, Array3};

use crate::data::{DomainDataset, ImageSample, SampleOrigin};
use crate::error::{Error, Result};

/// Decode an RGB image, resize to `size`×`size` (bilinear), scale to [0, 1].
pub fn load_image_rgb(path: &Path, size: usize) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let rgb = img.to_rgb8();
    let rgb = if (rgb.width() as usize, rgb.height() as usize) == (size, size) {
        rgb
    } else {
        image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle)
    };
    let mut out = Array3::<f32>::zeros((size, size, 3));
    for y in 0..size {
        for x in 0..size {
            let p = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out[(y, x, c)] = p.0[c] as f32 / 255.0;
            }
        }
    }
    Ok(out)
}

fn load_mask(path: &Path, size: usize) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let gray = img.to_luma8();
    let gray = if (gray.width() as usize, gray.height() as usize) == (size, size) {
        gray
    } else {
        image::imageops::resize(&gray, size as u32, size as u32, FilterType::Nearest)
    };
    let mut out = Array2::<u8>::zeros((size, size));
    for y in 0..size {
        for x in 0..size {
            out[(y, x)] = (gray.get_pixel(x as u32, y as u32).0[0] != 0) as u8;
        }
    }
    Ok(out)
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Load one domain; collected warnings (e.g. abnormal images without a
/// ground-truth mask) are returned instead of printed.
pub fn load_mvtec_layout_with_warnings(
    root: &Path,
    domain: &str,
    input_size: usize,
) -> Result<(DomainDataset, Vec<String>)> {
    let dom_dir = root.join(domain);
    if !dom_dir.is_dir() {
        return Err(Error::Layout { path: dom_dir });
    }
    let train_good = dom_dir.join("train").join("good");
    if !train_good.is_dir() {
        return Err(Error::Layout { path: train_good });
    }

    let mut warnings = Vec::new();
    let mut normal = Vec::new();
    let mut abnormal = Vec::new();

    let rel = |p: &Path| -> String {
        p.strip_prefix(root)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    };

    for file in png_files(&train_good)? {
        normal.push(ImageSample {
            pixels: load_image_rgb(&file, input_size)?,
            label: 0,
            domain: domain.to_string(),
            mask: None,
            path: rel(&file),
            origin: SampleOrigin::Train,
        });
    }

    let test_dir = dom_dir.join("test");
    if test_dir.is_dir() {
        for sub in sorted_subdirs(&test_dir)? {
            let kind = sub.file_name().unwrap().to_string_lossy().to_string();
            for file in png_files(&sub)? {
                if kind == "good" {
                    normal.push(ImageSample {
                        pixels: load_image_rgb(&file, input_size)?,
                        label: 0,
                        domain: domain.to_string(),
                        mask: None,
                        path: rel(&file),
                        origin: SampleOrigin::Test,
                    });
                } else {
                    let stem = file.file_stem().unwrap().to_string_lossy();
                    let mask_path = dom_dir
                        .join("ground_truth")
                        .join(&kind)
                        .join(format!("{stem}_mask.png"));
                    let mask = if mask_path.is_file() {
                        Some(load_mask(&mask_path, input_size)?)
                    } else {
                        warnings.push(format!(
                            "abnormal sample {} has no ground-truth mask at {}",
                            rel(&file),
                            mask_path.display()
                        ));
                        None
                    };
                    abnormal.push(ImageSample {
                        pixels: load_image_rgb(&file, input_size)?,
                        label: 1,
                        domain: domain.to_string(),
                        mask,
                        path: rel(&file),
                        origin: SampleOrigin::Test,
                    });
                }
            }
        }
    }

    Ok((
        DomainDataset {
            domain: domain.to_string(),
            normal,
            abnormal,
        },
        warnings,
    ))
}

pub fn load_mvtec_layout(root: &Path, domain: &str, input_size: usize) -> Result<DomainDataset> {
    let (dataset, warnings) = load_mvtec_layout_with_warnings(root, domain, input_size)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(dataset)
}

fn save_png_rgb(pixels: &Array3<f32>, path: &Path) -> Result<()> {
    let (h, w, _) = pixels.dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (pixels[(y, x, 0)] * 255.0).round().clamp(0.0, 255.0) as u8,
                (pixels[(y, x, 1)] * 255.0).round().clamp(0.0, 255.0) as u8,
                (pixels[(y, x, 2)] * 255.0).round().clamp(0.0, 255.0) as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

fn save_png_mask(mask: &Array2<u8>, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Luma([mask[(y, x)] * 255]));
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Write a dataset as an MVTec-layout tree under `root`. Sample paths are
/// already layout-relative, so this is the inverse of the loader.
pub fn write_mvtec_layout(dataset: &DomainDataset, root: &Path) -> Result<()> {
    for sample in dataset.normal.iter().chain(dataset.abnormal.iter()) {
        let out = root.join(&sample.path);
        save_png_rgb(&sample.pixels, &out)?;
        if let Some(mask) = &sample.mask {
            // <domain>/test/<kind>/<stem>.png -> <domain>/ground_truth/<kind>/<stem>_mask.png
            let parts: Vec<&str> = sample.path.split('/').collect();
            if parts.len() == 4 && parts[1] == "test" {
                let stem = parts[3].trim_end_matches(".png");
                let mask_rel: PathBuf = [
                    parts[0],
                    "ground_truth",
                    parts[2],
                    &format!("{stem}_mask.png"),
                ]
                .iter()
                .collect();
                save_png_mask(mask, &root.join(mask_rel))?;
            }
        }
    }
    Ok(())
}
