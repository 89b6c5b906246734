//! Seeded synthetic corpus: nested-ellipsoid phantoms as in-distribution
//! volumes, plus four corruption kinds that remove or distort the structure.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::{self, hash64, stream};
use crate::volume::{self, DatasetEntry, DatasetManifest, Label, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorruptionKind {
    /// Uniform low-level noise, no structure at all.
    BlankNoise,
    /// Slice and height axes swapped: the volume was acquired in another plane.
    WrongPlane,
    /// Content translated so most of it leaves the field of view.
    OutOfFov,
    /// Heavy blur plus strong noise.
    LowQuality,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::BlankNoise,
        CorruptionKind::WrongPlane,
        CorruptionKind::OutOfFov,
        CorruptionKind::LowQuality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::BlankNoise => "blank_noise",
            CorruptionKind::WrongPlane => "wrong_plane",
            CorruptionKind::OutOfFov => "out_of_fov",
            CorruptionKind::LowQuality => "low_quality",
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenConfig {
    pub seed: u64,
    pub n_good: usize,
    pub n_bad_per_kind: usize,
    pub slices: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_good: 220,
            n_bad_per_kind: 5,
            slices: 4,
            height: volume::DEFAULT_SIZE,
            width: volume::DEFAULT_SIZE,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slices < 2 {
            return Err(Error::InvalidArgument(format!(
                "corpus volumes need at least 2 slices, got {}",
                self.slices
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("slice size must be positive".into()));
        }
        Ok(())
    }
}

pub const CENTER_JITTER: f64 = 0.05;
pub const RADIUS_JITTER: f64 = 0.10;
pub const INTENSITY_JITTER: f64 = 0.1;
pub const PHANTOM_NOISE: f64 = 0.02;

pub const BLANK_LEVEL: f64 = 0.1;
pub const BLANK_NOISE: f64 = 0.05;
pub const FOV_SHIFT_FRACTION: f64 = 0.7;
pub const BLUR_SIZE: usize = 5;
pub const BLUR_PASSES: usize = 3;
pub const LOW_QUALITY_NOISE: f64 = 0.15;

/// Relative radii and base intensities of the nested shells, outermost first.
const SHELLS: [(f64, f64); 3] = [(1.0, 0.35), (0.62, 0.6), (0.3, 0.9)];

fn symmetric(rng: &mut seed::Rng, amplitude: f64) -> f64 {
    rng.gen_range(-amplitude..=amplitude)
}

/// A phantom of nested ellipsoids centred in the field of view.
///
/// Centre, radii and shell intensities are jittered by the seed; every voxel
/// then gets uniform noise of amplitude [`PHANTOM_NOISE`].
pub fn gen_good(seed: u64, slices: usize, h: usize, w: usize) -> Result<Volume> {
    if slices == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument("phantom dimensions must be positive".into()));
    }
    let mut rng = seed::rng(seed);
    let cx = w as f64 * (0.5 + symmetric(&mut rng, CENTER_JITTER));
    let cy = h as f64 * (0.5 + symmetric(&mut rng, CENTER_JITTER));
    let rx = 0.35 * w as f64 * (1.0 + symmetric(&mut rng, RADIUS_JITTER));
    let ry = 0.40 * h as f64 * (1.0 + symmetric(&mut rng, RADIUS_JITTER));
    let shells: Vec<(f64, f64)> = SHELLS
        .iter()
        .map(|&(r, level)| (r, (level + symmetric(&mut rng, INTENSITY_JITTER)).clamp(0.0, 1.0)))
        .collect();

    let mut data = Vec::with_capacity(slices * h * w);
    for s in 0..slices {
        // Ellipsoid cross-section: shells shrink towards the outer slices.
        let z = (2 * s + 1) as f64 / slices as f64 - 1.0;
        let scale = (1.0 - 0.5 * z * z).sqrt();
        for y in 0..h {
            let dy = (y as f64 + 0.5 - cy) / (ry * scale);
            for x in 0..w {
                let dx = (x as f64 + 0.5 - cx) / (rx * scale);
                let r2 = dx * dx + dy * dy;
                let base = shells
                    .iter()
                    .rev()
                    .find(|(r, _)| r2 <= r * r)
                    .map_or(0.0, |&(_, level)| level);
                data.push((base + symmetric(&mut rng, PHANTOM_NOISE)).clamp(0.0, 1.0));
            }
        }
    }
    Volume::new("phantom", slices, h, w, data)
}

/// Swaps the slice and height axes: `S×H×W → H×S×W`.
pub fn transpose_slice_axis(v: &Volume) -> Result<Volume> {
    let (s, h, w) = v.shape();
    let mut data = Vec::with_capacity(s * h * w);
    for y in 0..h {
        for z in 0..s {
            data.extend_from_slice(&v.slice(z)[y * w..(y + 1) * w]);
        }
    }
    Volume::new(v.id(), h, s, w, data)
}

fn box_blur(src: &[f64], h: usize, w: usize, size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut sum = 0.0;
            let mut count = 0usize;
            for yy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                    sum += src[yy as usize * w + xx as usize];
                    count += 1;
                }
            }
            out[y as usize * w + x as usize] = sum / count as f64;
        }
    }
    out
}

pub fn corrupt(v: &Volume, kind: CorruptionKind, seed: u64) -> Result<Volume> {
    let (s, h, w) = v.shape();
    let mut rng = seed::rng(seed);
    let out = match kind {
        CorruptionKind::BlankNoise => {
            let data = (0..s * h * w)
                .map(|_| BLANK_LEVEL + symmetric(&mut rng, BLANK_NOISE))
                .collect();
            Volume::new(v.id(), s, h, w, data)?
        }
        CorruptionKind::WrongPlane => {
            if s < 2 {
                return Err(Error::InvalidArgument(
                    "wrong_plane needs at least 2 slices to transpose".into(),
                ));
            }
            volume::preprocess(&transpose_slice_axis(v)?, h, w)?
        }
        CorruptionKind::OutOfFov => {
            let shift = (FOV_SHIFT_FRACTION * w as f64).round() as usize;
            let mut data = vec![0.0; s * h * w];
            for (z, slice) in v.slices().enumerate() {
                for y in 0..h {
                    let row = &slice[y * w..(y + 1) * w];
                    let dst = &mut data[(z * h + y) * w..(z * h + y + 1) * w];
                    if shift < w {
                        dst[shift..].copy_from_slice(&row[..w - shift]);
                    }
                }
            }
            Volume::new(v.id(), s, h, w, data)?
        }
        CorruptionKind::LowQuality => {
            let mut data = Vec::with_capacity(s * h * w);
            for slice in v.slices() {
                let mut img = slice.to_vec();
                for _ in 0..BLUR_PASSES {
                    img = box_blur(&img, h, w, BLUR_SIZE);
                }
                data.extend(
                    img.into_iter()
                        .map(|p| (p + symmetric(&mut rng, LOW_QUALITY_NOISE)).clamp(0.0, 1.0)),
                );
            }
            Volume::new(v.id(), s, h, w, data)?
        }
    };
    Ok(out)
}

struct Item {
    index: usize,
    id: String,
    kind: Option<CorruptionKind>,
}

fn corpus_items(cfg: &GenConfig) -> Vec<Item> {
    let mut items: Vec<Item> = (0..cfg.n_good)
        .map(|i| Item {
            index: i,
            id: format!("good_{i:04}"),
            kind: None,
        })
        .collect();
    for kind in CorruptionKind::ALL {
        for j in 0..cfg.n_bad_per_kind {
            items.push(Item {
                index: items.len(),
                id: format!("bad_{kind}_{j:04}"),
                kind: Some(kind),
            });
        }
    }
    items
}

/// Generates the volume for corpus item `index` (goods first, then each kind in order).
pub fn gen_item(cfg: &GenConfig, index: usize, kind: Option<CorruptionKind>) -> Result<Volume> {
    let item_seed = hash64(cfg.seed, index as u64);
    let phantom = gen_good(hash64(item_seed, stream::PHANTOM), cfg.slices, cfg.height, cfg.width)?;
    match kind {
        None => Ok(phantom),
        Some(kind) => corrupt(&phantom, kind, hash64(item_seed, stream::CORRUPTION)),
    }
}

/// Writes the corpus under `out_dir/volumes/<id>/` plus `out_dir/manifest.csv`.
pub fn gen_corpus(cfg: &GenConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let items = corpus_items(cfg);
    items.par_iter().try_for_each(|item| -> Result<()> {
        let v = gen_item(cfg, item.index, item.kind)?.with_id(item.id.clone());
        volume::save_volume(&v, &out_dir.join("volumes").join(&item.id))
    })?;
    let mut manifest = DatasetManifest::new(out_dir);
    manifest.entries = items
        .into_iter()
        .map(|item| DatasetEntry {
            path: format!("volumes/{}", item.id),
            label: if item.kind.is_some() { Label::Bad } else { Label::Good },
            corruption_kind: item.kind,
            id: item.id,
        })
        .collect();
    volume::write_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
