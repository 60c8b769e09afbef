#![allow(dead_code)]

pub mod cases;
pub mod gradcheck;
pub mod oracle;
pub mod protocol;

use std::fs;
use std::path::{Path, PathBuf};

use handid::datasets::{HandImageRecord, Identity, Subset};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// An image whose coarse color layout identifies `identity`; `sample`
/// perturbs it with noise and a small brightness shift.
pub fn synthetic_image(identity: usize, sample: usize, size: u32) -> RgbImage {
    let mut id_rng = ChaCha8Rng::seed_from_u64(1000 + identity as u64);
    let cells: Vec<[u8; 3]> = (0..16).map(|_| [id_rng.random(), id_rng.random(), id_rng.random()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(((identity as u64) << 20) ^ sample as u64);
    let shift: i16 = rng.random_range(-12..=12);
    RgbImage::from_fn(size, size, |x, y| {
        let cell = (4 * y / size) * 4 + 4 * x / size;
        let base = cells[cell as usize];
        let mut px = [0u8; 3];
        for c in 0..3 {
            let noise: i16 = rng.random_range(-10..=10);
            px[c] = (base[c] as i16 + shift + noise).clamp(0, 255) as u8;
        }
        Rgb(px)
    })
}

pub fn save(img: &RgbImage, path: &Path) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    img.save(path).unwrap();
}

/// `n_ids` identities with `per_id` images each, written under `dir`.
pub fn hd_records(dir: &Path, n_ids: usize, per_id: usize, size: u32) -> Vec<HandImageRecord> {
    let mut out = Vec::new();
    for i in 0..n_ids {
        for j in 0..per_id {
            let path = dir.join(format!("{i:03}")).join(format!("{j:02}.png"));
            save(&synthetic_image(i, j, size), &path);
            out.push(HandImageRecord::hd(path, &format!("{i:03}"), false));
        }
    }
    out
}

pub fn subset_words(subset: Subset) -> (&'static str, &'static str) {
    match subset {
        Subset::DorsalRight => ("dorsal", "right"),
        Subset::DorsalLeft => ("dorsal", "left"),
        Subset::PalmarRight => ("palmar", "right"),
        Subset::PalmarLeft => ("palmar", "left"),
        Subset::Hd => panic!("HD has no 11k metadata"),
    }
}

/// One 11k-style dataset under `root`: a metadata sheet plus images.
/// `images[s][i]` is the image count of identity `i` in subset `s`.
/// Accessory rows are added for the first identity of each subset.
pub fn write_11k(root: &Path, subsets: &[(Subset, Vec<usize>)], size: u32) -> PathBuf {
    let mut csv = String::from("filename,subject,aspect,side,accessories\n");
    let mut subject = 0usize;
    for (subset, counts) in subsets {
        let (aspect, side) = subset_words(*subset);
        for (i, &n) in counts.iter().enumerate() {
            subject += 1;
            for j in 0..n {
                let name = format!("Hand_{subject:07}_{aspect}_{side}_{j:02}.png");
                save(&synthetic_image(subject, j, size), &root.join(&name));
                csv.push_str(&format!("{name},{subject:07},{aspect},{side},0\n"));
            }
            if i == 0 {
                let name = format!("Hand_{subject:07}_{aspect}_{side}_acc.png");
                save(&synthetic_image(subject, 99, size), &root.join(&name));
                csv.push_str(&format!("{name},{subject:07},{aspect},{side},1\n"));
            }
        }
    }
    let meta = root.join("HandInfo.csv");
    fs::write(&meta, csv).unwrap();
    meta
}

/// HD layout: one directory per identity and `n_low` low-quality images.
pub fn write_hd(root: &Path, counts: &[usize], n_low: usize, size: u32) {
    for (i, &n) in counts.iter().enumerate() {
        for j in 0..n {
            save(&synthetic_image(5000 + i, j, size), &root.join(format!("{:04}", i + 1)).join(format!("{j:02}.png")));
        }
    }
    for k in 0..n_low {
        save(&synthetic_image(9000 + k, 0, size), &root.join("low_quality").join(format!("lq_{k:04}.png")));
    }
}

pub fn identity_strings(records: &[HandImageRecord]) -> Vec<Identity> {
    let mut ids: Vec<Identity> = records.iter().map(|r| r.identity.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}
