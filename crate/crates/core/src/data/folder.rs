//! Image-folder ingestion: `<root>/<class_name>/<file>`.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Domain, DomainSpec, ResizeMethod, Sample};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

const EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

fn filter(method: ResizeMethod) -> FilterType {
    match method {
        ResizeMethod::Bicubic => FilterType::CatmullRom,
        ResizeMethod::Bilinear => FilterType::Triangle,
        ResizeMethod::Nearest => FilterType::Nearest,
    }
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if want_dirs && path.is_dir() {
            out.push(path);
        } else if !want_dirs && path.is_file() {
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Decodes to RGB, resizes to `size × size` when needed, stores CHW bytes.
pub(crate) fn load_image(path: &Path, size: usize, method: ResizeMethod) -> Result<Vec<u8>> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let mut rgb = img.to_rgb8();
    if rgb.width() as usize != size || rgb.height() as usize != size {
        rgb = image::imageops::resize(&rgb, size as u32, size as u32, filter(method));
    }
    let mut out = vec![0u8; 3 * size * size];
    for (x, y, px) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            out[(ch * size + y as usize) * size + x as usize] = px[ch];
        }
    }
    Ok(out)
}

fn pick<T: Clone>(items: &[T], n: usize, seed: u64) -> Vec<T> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen: Vec<usize> = idx.into_iter().take(n).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| items[i].clone()).collect()
}

pub(crate) fn build(spec: &DomainSpec, train_root: &Path, test_root: &Path, test_cap: Option<usize>) -> Result<Domain> {
    for root in [train_root, test_root] {
        if !root.is_dir() {
            return Err(Error::MissingSource(root.to_path_buf()));
        }
    }
    let classes = sorted_entries(train_root, true)?;
    if classes.len() < spec.num_classes {
        return Err(Error::Shortfall {
            domain: spec.name.clone(),
            detail: format!("requested {} classes, {} available", spec.num_classes, classes.len()),
        });
    }
    let class_names: Vec<String> = if classes.len() == spec.num_classes {
        classes.iter().map(|p| file_name(p)).collect()
    } else {
        let names: Vec<String> = classes.iter().map(|p| file_name(p)).collect();
        pick(&names, spec.num_classes, derive_seed(["classes".to_string(), spec.class_subset_seed.to_string()]))
    };

    let mut train = Vec::with_capacity(spec.num_classes * spec.train_per_class);
    let mut test = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        let files = sorted_entries(&train_root.join(class), false)?;
        if files.len() < spec.train_per_class {
            return Err(Error::Shortfall {
                domain: spec.name.clone(),
                detail: format!("class {class}: requested {} training images, {} available", spec.train_per_class, files.len()),
            });
        }
        let seed = derive_seed(["samples".to_string(), spec.sample_subset_seed.to_string(), class.clone()]);
        for f in pick(&files, spec.train_per_class, seed) {
            train.push(Sample {
                id: format!("{}/train/{class}/{}", spec.name, file_name(&f)),
                label: label as u32,
                image: load_image(&f, spec.image_size, spec.resize_method)?,
            });
        }

        let test_dir = test_root.join(class);
        if !test_dir.is_dir() {
            return Err(Error::Shortfall { domain: spec.name.clone(), detail: format!("class {class} has no test directory") });
        }
        let mut files = sorted_entries(&test_dir, false)?;
        if files.is_empty() {
            return Err(Error::Shortfall { domain: spec.name.clone(), detail: format!("class {class} has no test images") });
        }
        if let Some(cap) = test_cap {
            if files.len() < cap {
                return Err(Error::Shortfall {
                    domain: spec.name.clone(),
                    detail: format!("class {class}: requested {cap} test images, {} available", files.len()),
                });
            }
            files = pick(&files, cap, derive_seed(["test".to_string(), spec.sample_subset_seed.to_string(), class.clone()]));
        }
        for f in files {
            test.push(Sample {
                id: format!("{}/test/{class}/{}", spec.name, file_name(&f)),
                label: label as u32,
                image: load_image(&f, spec.image_size, spec.resize_method)?,
            });
        }
    }
    Ok(Domain { spec: spec.clone(), task_label: 0, class_names, train, test })
}
