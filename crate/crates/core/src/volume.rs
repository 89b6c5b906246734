//! Volumes, the on-disk slice format, dataset manifests and resizing.
//!
//! A volume lives on disk as a directory of 8-bit binary PGM slices named
//! `slice_0000.pgm`, `slice_0001.pgm`, ... Intensities are mapped `v/255` on
//! load and quantized with rounding on save.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::synth::CorruptionKind;

pub const DEFAULT_SIZE: usize = 64;
pub const MANIFEST_HEADER: [&str; 4] = ["id", "path", "label", "corruption_kind"];

/// A stack of grayscale slices, `depth × height × width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    id: String,
    depth: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    source_path: Option<PathBuf>,
}

impl Volume {
    pub fn new(
        id: impl Into<String>,
        depth: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "volume dimensions must be positive, got {depth}x{height}x{width}"
            )));
        }
        if data.len() != depth * height * width {
            return Err(Error::dims(
                format!("{} voxels ({depth}x{height}x{width})", depth * height * width),
                format!("{} voxels", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("voxel value {bad}")));
        }
        Ok(Self {
            id: id.into(),
            depth,
            height,
            width,
            data,
            source_path: None,
        })
    }

    pub fn filled(id: impl Into<String>, depth: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(id, depth, height, width, vec![value; depth * height * width])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn source_path(&self) -> Option<&Path> {
        self.source_path.as_deref()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn slice(&self, index: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[index * n..(index + 1) * n]
    }

    pub fn slices(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.height * self.width)
    }

    pub fn get(&self, s: usize, y: usize, x: usize) -> f64 {
        self.data[(s * self.height + y) * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn slice_file_name(index: usize) -> String {
    format!("slice_{index:04}.pgm")
}

fn parse_slice_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("slice_")?.strip_suffix(".pgm")?;
    if digits.len() < 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parses a binary PGM (P5) with maxval 255. Returns `(height, width, bytes)`.
pub fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P5" {
        return Err(Error::format(path, "expected binary PGM magic 'P5'"));
    }
    let number = |field: &[u8], what: &str| -> Result<usize> {
        std::str::from_utf8(field)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::format(path, format!("invalid {what} in PGM header")))
    };
    let width = number(fields[1], "width")?;
    let height = number(fields[2], "height")?;
    let maxval = number(fields[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(path, "PGM dimensions must be positive"));
    }
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval} (expected 255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "missing raster after PGM header"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    if raster.len() != width * height {
        return Err(Error::format(
            path,
            format!("expected {} raster bytes, found {}", width * height, raster.len()),
        ));
    }
    Ok((height, width, raster.to_vec()))
}

pub fn encode_pgm(height: usize, width: usize, raster: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(raster);
    out
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a volume directory. The volume id is the directory name.
pub fn load_volume(dir: &Path) -> Result<Volume> {
    let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indexed = Vec::new();
    for entry in listing {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(index) = name.to_str().and_then(parse_slice_index) {
            indexed.push((index, entry.path()));
        }
    }
    if indexed.is_empty() {
        return Err(Error::format(dir, "no slice_NNNN.pgm files found"));
    }
    indexed.sort_by_key(|(i, _)| *i);
    for (expected, (index, path)) in indexed.iter().enumerate() {
        if *index != expected {
            return Err(Error::format(
                path,
                format!("non-contiguous slice indices: expected {expected}, found {index}"),
            ));
        }
    }

    let mut dims = None;
    let mut data = Vec::new();
    for (_, path) in &indexed {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (h, w, raster) = parse_pgm(path, &bytes)?;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::dims(format!("{}x{} slice", d.0, d.1), format!("{h}x{w} in {}", path.display())));
            }
            Some(_) => {}
        }
        data.extend(raster.iter().map(|&b| f64::from(b) / 255.0));
    }
    let (height, width) = dims.expect("at least one slice");
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut volume = Volume::new(id, indexed.len(), height, width, data)?;
    volume.source_path = Some(dir.to_path_buf());
    Ok(volume)
}

/// Writes one PGM per slice into `dir`, creating it if needed.
pub fn save_volume(volume: &Volume, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (index, slice) in volume.slices().enumerate() {
        let raster: Vec<u8> = slice.iter().map(|&v| quantize(v)).collect();
        let path = dir.join(slice_file_name(index));
        fs::write(&path, encode_pgm(volume.height, volume.width, &raster)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Bilinear resize of one slice with align-corners sampling.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| coord(x, out_w, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, out_h, h);
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &cols {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Resizes every slice to `target_h × target_w` and clamps intensities to [0,1].
pub fn preprocess(volume: &Volume, target_h: usize, target_w: usize) -> Result<Volume> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "target size must be positive, got {target_h}x{target_w}"
        )));
    }
    let mut data = Vec::with_capacity(volume.depth * target_h * target_w);
    for slice in volume.slices() {
        if volume.height == target_h && volume.width == target_w {
            data.extend_from_slice(slice);
        } else {
            data.extend(resize_bilinear(slice, volume.height, volume.width, target_h, target_w));
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    let mut out = Volume::new(volume.id.clone(), volume.depth, target_h, target_w, data)?;
    out.source_path = volume.source_path.clone();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Good,
    Bad,
    Unknown,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Good => "good",
            Label::Bad => "bad",
            Label::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "good" => Ok(Label::Good),
            "bad" => Ok(Label::Bad),
            "unknown" => Ok(Label::Unknown),
            other => Err(Error::InvalidArgument(format!("unknown label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub id: String,
    /// Volume directory, relative to the manifest root.
    pub path: String,
    pub label: Label,
    pub corruption_kind: Option<CorruptionKind>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &DatasetEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    pub fn good_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == Label::Good)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks id uniqueness, path containment and label/kind consistency.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate id '{}'", entry.id)));
            }
            let relative = Path::new(&entry.path);
            if entry.path.is_empty()
                || relative
                    .components()
                    .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
            {
                return Err(Error::InvalidArgument(format!(
                    "path '{}' of '{}' does not resolve under the manifest root",
                    entry.path, entry.id
                )));
            }
            if entry.label == Label::Good && entry.corruption_kind.is_some() {
                return Err(Error::InvalidArgument(format!(
                    "'{}' is labeled good but carries a corruption kind",
                    entry.id
                )));
            }
        }
        Ok(())
    }
}

/// Reads a manifest CSV. The root is the directory containing the file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    if headers.iter().ne(MANIFEST_HEADER) {
        return Err(Error::format(
            path,
            format!("header must be '{}'", MANIFEST_HEADER.join(",")),
        ));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = DatasetManifest::new(root);
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let row = line + 2;
        let label = record[2]
            .parse::<Label>()
            .map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        let corruption_kind = match &record[3] {
            "" => None,
            kind => Some(
                kind.parse::<CorruptionKind>()
                    .map_err(|e| Error::format(path, format!("row {row}: {e}")))?,
            ),
        };
        manifest.entries.push(DatasetEntry {
            id: record[0].to_string(),
            path: record[1].to_string(),
            label,
            corruption_kind,
        });
    }
    manifest
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::format(path, e.to_string());
    writer.write_record(MANIFEST_HEADER).map_err(to_err)?;
    for e in &manifest.entries {
        let kind = e.corruption_kind.map(|k| k.as_str()).unwrap_or("");
        writer
            .write_record([e.id.as_str(), e.path.as_str(), e.label.as_str(), kind])
            .map_err(to_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a list of ids, one per line. Blank lines and `#` comments are skipped.
pub fn load_id_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn write_id_list(ids: &[String], path: &Path) -> Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
