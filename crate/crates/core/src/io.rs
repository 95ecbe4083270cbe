//! File formats: frame images, frame directories, CSV tables, SVG trajectory
//! plots and synthetic scenario export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, ExtendedColorType, ImageEncoder};
use thiserror::Error;

use crate::annotate::{format_annotations, CanonicalTrajectory, CurvePoint, ReplacedStat};
use crate::homography::Point2;
use crate::raster::{GrayImage, RasterError};
use crate::synth::GroundTruthScenario;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Raster { path: PathBuf, source: RasterError },
    #[error("{0}: no PGM or PNG frames found")]
    NoFrames(PathBuf),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Extensions accepted as frames.
pub const FRAME_EXTENSIONS: [&str; 3] = ["pgm", "png", "pnm"];

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let wrap = |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(wrap)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

/// Decodes a PGM/PNG (or any format the decoder recognizes) into luma.
/// Colour images use 0.299 R + 0.587 G + 0.114 B; 16-bit samples keep their
/// full precision.
pub fn load_image(path: &Path) -> Result<GrayImage, IoError> {
    let bytes = fs::read(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let img = image::load_from_memory(&bytes).map_err(|e| IoError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raster = if img.color().has_color() {
        GrayImage::from_rgb8(w, h, img.to_rgb8().as_raw())
    } else if matches!(img.color(), ColorType::L16 | ColorType::La16) {
        let data = img
            .to_luma16()
            .as_raw()
            .iter()
            .map(|&v| f64::from(v) / 65535.0)
            .collect();
        GrayImage::new(w, h, data)
    } else {
        GrayImage::from_u8(w, h, img.to_luma8().as_raw())
    };
    raster.map_err(|source| IoError::Raster {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an 8-bit binary PGM.
pub fn save_pgm(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &img.to_u8(),
            img.width() as u32,
            img.height() as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| IoError::Write {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    write_bytes(path, &out)
}

/// Frame files of a directory in natural order (`frame2` before `frame10`).
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let entries = fs::read_dir(dir).map_err(|source| IoError::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort_by(|a, b| {
        let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned());
        natord::compare(&name(a).unwrap_or_default(), &name(b).unwrap_or_default())
    });
    if files.is_empty() {
        return Err(IoError::NoFrames(dir.to_path_buf()));
    }
    Ok(files)
}

pub fn load_frames(dir: &Path) -> Result<Vec<GrayImage>, IoError> {
    list_frames(dir)?.iter().map(|p| load_image(p)).collect()
}

fn csv_string(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| IoError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn curve_csv(curve: &[CurvePoint]) -> Result<String, IoError> {
    csv_string(
        &["threshold", "rate"],
        curve
            .iter()
            .map(|p| vec![p.threshold.to_string(), p.rate.to_string()]),
    )
}

pub fn replaced_csv(stats: &[ReplacedStat]) -> Result<String, IoError> {
    csv_string(
        &["threshold", "replaced_fraction"],
        stats
            .iter()
            .map(|s| vec![s.threshold.to_string(), s.replaced_fraction.to_string()]),
    )
}

/// `frame,x,y`, with empty fields for absent points.
pub fn points_csv(points: &[Option<Point2>]) -> Result<String, IoError> {
    csv_string(
        &["frame", "x", "y"],
        points
            .iter()
            .enumerate()
            .map(|(i, p)| vec![i.to_string(), opt(p.map(|p| p.x)), opt(p.map(|p| p.y))]),
    )
}

/// `frame,x,y,smoothed_x,smoothed_y` in canonical coordinates.
pub fn canonical_csv(
    raw: &CanonicalTrajectory,
    smoothed: &CanonicalTrajectory,
) -> Result<String, IoError> {
    csv_string(
        &["frame", "x", "y", "smoothed_x", "smoothed_y"],
        raw.points
            .iter()
            .zip(&smoothed.points)
            .enumerate()
            .map(|(i, (r, s))| {
                vec![
                    i.to_string(),
                    opt(r.map(|p| p.x)),
                    opt(r.map(|p| p.y)),
                    opt(s.map(|p| p.x)),
                    opt(s.map(|p| p.y)),
                ]
            }),
    )
}

/// Planar plot of raw and smoothed canonical centers with flagged frames
/// circled. `timestamp` goes into a comment and is omitted when `None`.
pub fn trajectory_svg(
    raw: &CanonicalTrajectory,
    smoothed: &CanonicalTrajectory,
    flagged: &[bool],
    title: &str,
    timestamp: Option<&str>,
) -> String {
    const SIZE: (f64, f64) = (640.0, 480.0);
    const PAD: f64 = 40.0;
    let all: Vec<Point2> = raw
        .points
        .iter()
        .chain(&smoothed.points)
        .flatten()
        .copied()
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &all {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = ((SIZE.0 - 2.0 * PAD) / span).min((SIZE.1 - 2.0 * PAD) / span);
    let map = |p: &Point2| (PAD + (p.x - x0) * scale, PAD + (p.y - y0) * scale);
    let polyline = |pts: &[Option<Point2>], style: &str| {
        let mut out = String::new();
        // one polyline per run of present points
        for run in pts.split(|p| p.is_none()).filter(|r| r.len() > 1) {
            let coords: Vec<String> = run
                .iter()
                .flatten()
                .map(|p| {
                    let (x, y) = map(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            out.push_str(&format!(
                "  <polyline points=\"{}\" {style}/>\n",
                coords.join(" ")
            ));
        }
        out
    };

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        SIZE.0, SIZE.1, SIZE.0, SIZE.1
    ));
    if let Some(ts) = timestamp {
        s.push_str(&format!("  <!-- generated {ts} -->\n"));
    }
    s.push_str(&format!(
        "  <title>{}</title>\n  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        escape(title)
    ));
    s.push_str(&polyline(
        &raw.points,
        "fill=\"none\" stroke=\"#9a9a9a\" stroke-width=\"1\"",
    ));
    for p in raw.points.iter().flatten() {
        let (x, y) = map(p);
        s.push_str(&format!(
            "  <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.5\" fill=\"#9a9a9a\"/>\n"
        ));
    }
    s.push_str(&polyline(
        &smoothed.points,
        "fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"2\"",
    ));
    for (p, _) in raw.points.iter().zip(flagged).filter(|(_, &f)| f) {
        if let Some(p) = p {
            let (x, y) = map(p);
            s.push_str(&format!(
                "  <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n"
            ));
        }
    }
    s.push_str(&format!(
        "  <text x=\"{PAD}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">annotated (grey), smoothed (blue), flagged (red)</text>\n",
        SIZE.1 - 12.0
    ));
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes `frames/NNNNNN.pgm`, `annotations.txt` (noisy boxes),
/// `groundtruth.txt` (true boxes) and `groundtruth.json`.
pub fn export_scenario(dir: &Path, scenario: &GroundTruthScenario) -> Result<(), IoError> {
    for (i, f) in scenario.frames.iter().enumerate() {
        save_pgm(&dir.join("frames").join(format!("{i:06}.pgm")), f)?;
    }
    write_bytes(
        &dir.join("annotations.txt"),
        format_annotations(&scenario.noisy).as_bytes(),
    )?;
    write_bytes(
        &dir.join("groundtruth.txt"),
        format_annotations(&scenario.true_trajectory()).as_bytes(),
    )?;
    write_json(&dir.join("groundtruth.json"), &scenario.truth)
}
