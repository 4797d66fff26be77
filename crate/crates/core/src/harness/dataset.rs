//! OTB-style dataset directories.
//!
//! ```text
//! seq/
//!   img/0001.ppm, 0002.ppm, ...   binary PPM (P6)
//!   groundtruth_rect.txt          x,y,w,h per line, 0-based, top-left origin
//! ```
//!
//! Tracking results use the same box format plus a `meta.json` sidecar in
//! the same directory.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use crate::backbone::Image;
use crate::error::{FcotError, Result};
use crate::geometry::BBox;
use crate::harness::synth::Sequence;

pub const IMG_DIR: &str = "img";
pub const GROUND_TRUTH_FILE: &str = "groundtruth_rect.txt";
pub const META_FILE: &str = "meta.json";

fn io_err(path: &Path, e: impl std::fmt::Display) -> FcotError {
    FcotError::Io(format!("{}: {e}", path.display()))
}

/// File name of 0-based frame `k`: `0001.ppm` for k = 0.
pub fn frame_name(k: usize) -> String {
    format!("{:04}.ppm", k + 1)
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut buf = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf.push((img.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&buf, w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|e| io_err(path, e))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let decoded = ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .with_guessed_format()
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| io_err(path, e))?
        .to_rgb8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let raw = decoded.into_raw();
    Ok(Image::from_fn(h, w, |y, x| {
        let i = 3 * (y * w + x);
        [0, 1, 2].map(|c| raw[i + c] as f64 / 255.0)
    }))
}

/// One `x,y,w,h` line per box.
pub fn format_boxes(boxes: &[BBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let [x, y, w, h] = b.to_xywh();
        s.push_str(&format!("{x},{y},{w},{h}\n"));
    }
    s
}

/// Parses box lines. Commas, tabs and spaces all separate fields, as found
/// in OTB files; blank lines are skipped.
pub fn parse_boxes(text: &str) -> Result<Vec<BBox>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| FcotError::Parse(format!("line {}: {e}: {line:?}", i + 1)))?;
        let [x, y, w, h] = vals[..] else {
            return Err(FcotError::Parse(format!("line {}: expected 4 fields, got {}", i + 1, vals.len())));
        };
        out.push(BBox::from_xywh(x, y, w, h).map_err(|e| FcotError::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn read_boxes(path: &Path) -> Result<Vec<BBox>> {
    parse_boxes(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

pub fn write_boxes(path: &Path, boxes: &[BBox]) -> Result<()> {
    fs::write(path, format_boxes(boxes)).map_err(|e| io_err(path, e))
}

pub fn write_dataset(dir: &Path, seq: &Sequence) -> Result<()> {
    if seq.frames.len() != seq.ground_truth.len() {
        return Err(FcotError::LengthMismatch { predictions: seq.frames.len(), ground_truth: seq.ground_truth.len() });
    }
    let img_dir = dir.join(IMG_DIR);
    fs::create_dir_all(&img_dir).map_err(|e| io_err(&img_dir, e))?;
    for (k, f) in seq.frames.iter().enumerate() {
        write_image(&img_dir.join(frame_name(k)), f)?;
    }
    write_boxes(&dir.join(GROUND_TRUTH_FILE), &seq.ground_truth)
}

/// Sorted frame paths of a dataset directory.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let img_dir = dir.join(IMG_DIR);
    let mut frames: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&img_dir).map_err(|e| io_err(&img_dir, e))? {
        let path = entry.map_err(|e| io_err(&img_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ppm") {
            continue;
        }
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FcotError::Parse(format!("{}: frame name is not a number", path.display())))?;
        frames.push((index, path));
    }
    frames.sort();
    if frames.is_empty() {
        return Err(FcotError::Io(format!("{}: no .ppm frames", img_dir.display())));
    }
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

pub fn read_dataset(dir: &Path) -> Result<Sequence> {
    let frames = frame_paths(dir)?.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    let ground_truth = read_boxes(&dir.join(GROUND_TRUTH_FILE))?;
    if ground_truth.len() != frames.len() {
        return Err(FcotError::Parse(format!(
            "{}: {} frames but {} ground-truth boxes",
            dir.display(),
            frames.len(),
            ground_truth.len()
        )));
    }
    Ok(Sequence { frames, ground_truth })
}

/// Sidecar written next to a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: u64,
    pub frames: usize,
    pub fps: f64,
}

/// Path of the sidecar for a results file.
pub fn meta_path(results: &Path) -> PathBuf {
    results.parent().unwrap_or(Path::new("")).join(META_FILE)
}

pub fn write_results(path: &Path, boxes: &[BBox], meta: &RunMeta) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    write_boxes(path, boxes)?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| FcotError::Io(e.to_string()))?;
    let mp = meta_path(path);
    fs::write(&mp, json + "\n").map_err(|e| io_err(&mp, e))
}

pub fn read_meta(results: &Path) -> Result<RunMeta> {
    let mp = meta_path(results);
    let text = fs::read_to_string(&mp).map_err(|e| io_err(&mp, e))?;
    serde_json::from_str(&text).map_err(|e| FcotError::Parse(format!("{}: {e}", mp.display())))
}
