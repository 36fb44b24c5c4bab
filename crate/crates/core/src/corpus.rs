//! Image decoding and manifest ingestion for pair and quintuplet datasets.
//!
//! Manifests are line-delimited JSON, one record per line. Images are
//! decoded to a single normalized luma plane at the boundary; everything
//! downstream works on `ImagePlane`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// BT.601 luma weights applied to 8-bit RGB before normalization to [0,1].
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("failed to decode {path}: {reason}")]
    DecodeError { path: PathBuf, reason: String },
    #[error("{path}:{line}: schema error: {reason}")]
    SchemaError {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: human_second_fraction {value} outside [0,1]")]
    RangeError {
        path: PathBuf,
        line: usize,
        value: f64,
    },
    #[error("{path}:{line}: expected exactly 4 enhanced entries, got {count}")]
    CardinalityError {
        path: PathBuf,
        line: usize,
        count: usize,
    },
    #[error("invalid image plane: {0}")]
    InvalidPlane(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Single-channel raster of luma values, row-major.
///
/// Planes produced by [`load_image`] are normalized to [0,1]; planes that
/// come out of the toy SR network may leave that range (nothing clamps
/// network outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, CorpusError> {
        if width == 0 || height == 0 {
            return Err(CorpusError::InvalidPlane(format!(
                "dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(CorpusError::InvalidPlane(format!(
                "data length {} != {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Crop to the rectangle with top-left (left, top) and the given size.
    pub fn crop(
        &self,
        top: usize,
        left: usize,
        w: usize,
        h: usize,
    ) -> Result<ImagePlane, CorpusError> {
        if left + w > self.width || top + h > self.height || w == 0 || h == 0 {
            return Err(CorpusError::InvalidPlane(format!(
                "crop {w}x{h}@({top},{left}) out of bounds for {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in top..top + h {
            data.extend_from_slice(&self.data[y * self.width + left..y * self.width + left + w]);
        }
        Ok(ImagePlane {
            width: w,
            height: h,
            data,
        })
    }

    /// 2x downsample by averaging disjoint 2x2 blocks (truncates odd edges).
    pub fn downsample2(&self) -> Result<ImagePlane, CorpusError> {
        let w = self.width / 2;
        let h = self.height / 2;
        if w == 0 || h == 0 {
            return Err(CorpusError::InvalidPlane(
                "image too small to downsample".into(),
            ));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.get(2 * x, 2 * y)
                    + self.get(2 * x + 1, 2 * y)
                    + self.get(2 * x, 2 * y + 1)
                    + self.get(2 * x + 1, 2 * y + 1);
                data.push(s / 4.0);
            }
        }
        ImagePlane::new(w, h, data)
    }
}

/// Decode an 8-bit PNG or binary PPM/PGM file into a normalized luma plane.
///
/// RGB is converted with the BT.601 weighting 0.299R + 0.587G + 0.114B and
/// divided by 255; grayscale is divided by 255. An alpha channel, if
/// present, is ignored. 16-bit imagery is rejected.
pub fn load_image(path: &Path) -> Result<ImagePlane, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::FileNotFound(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| CorpusError::DecodeError {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    use image::DynamicImage;
    let (width, height, data) = match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data = g.into_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
            (w, h, data)
        }
        DynamicImage::ImageLumaA8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data = g
                .into_raw()
                .chunks_exact(2)
                .map(|px| f64::from(px[0]) / 255.0)
                .collect();
            (w, h, data)
        }
        DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let data = rgb.into_raw().chunks_exact(3).map(luma_from_rgb).collect();
            (w, h, data)
        }
        DynamicImage::ImageRgba8(rgba) => {
            let (w, h) = (rgba.width() as usize, rgba.height() as usize);
            let data = rgba
                .into_raw()
                .chunks_exact(4)
                .map(|px| luma_from_rgb(&px[..3]))
                .collect();
            (w, h, data)
        }
        other => {
            return Err(CorpusError::DecodeError {
                path: path.to_path_buf(),
                reason: format!("unsupported bit depth or layout: {:?}", other.color()),
            })
        }
    };
    ImagePlane::new(width, height, data)
}

fn luma_from_rgb(px: &[u8]) -> f64 {
    (LUMA_WEIGHTS[0] * f64::from(px[0])
        + LUMA_WEIGHTS[1] * f64::from(px[1])
        + LUMA_WEIGHTS[2] * f64::from(px[2]))
        / 255.0
}

/// Write a plane as an 8-bit grayscale PNG, clamping to [0,1] and rounding.
pub fn save_png(plane: &ImagePlane, path: &Path) -> Result<(), CorpusError> {
    let bytes: Vec<u8> = plane
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(plane.width() as u32, plane.height() as u32, bytes)
        .expect("dimensions match data length");
    buf.save(path).map_err(|e| CorpusError::DecodeError {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One SBS-style comparison row: two super-resolved versions of the same
/// input, plus the fraction of annotators preferring the second image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub model_a: String,
    pub model_b: String,
    pub img_a: PathBuf,
    pub img_b: PathBuf,
    pub human_second_fraction: f64,
    pub split: Split,
}

impl PairRecord {
    /// Order-insensitive identifier of the compared model pair:
    /// `group_key("A","B") == group_key("B","A")`.
    pub fn group_key(&self) -> String {
        if self.model_a <= self.model_b {
            format!("{}|{}", self.model_a, self.model_b)
        } else {
            format!("{}|{}", self.model_b, self.model_a)
        }
    }

    fn validate(&self, path: &Path, line: usize) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.human_second_fraction)
            || !self.human_second_fraction.is_finite()
        {
            return Err(CorpusError::RangeError {
                path: path.to_path_buf(),
                line,
                value: self.human_second_fraction,
            });
        }
        if self.img_a.as_os_str().is_empty() || self.img_b.as_os_str().is_empty() {
            return Err(CorpusError::SchemaError {
                path: path.to_path_buf(),
                line,
                reason: "empty image path".into(),
            });
        }
        Ok(())
    }
}

/// Human label attached to each enhanced ground-truth: better than, similar
/// to, or worse than the original.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Similar,
    Negative,
}

impl Label {
    /// The only monotone ordinal embedding of the three labels.
    pub fn ordinal(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Similar => 1,
            Label::Positive => 2,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Positive => write!(f, "positive"),
            Label::Similar => write!(f, "similar"),
            Label::Negative => write!(f, "negative"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedEntry {
    pub path: PathBuf,
    pub label: Label,
}

/// One original HR patch plus its four labeled enhanced versions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quintuplet {
    pub id: String,
    pub original: PathBuf,
    pub enhanced: Vec<EnhancedEntry>,
}

impl Quintuplet {
    pub fn labels(&self) -> Vec<Label> {
        self.enhanced.iter().map(|e| e.label).collect()
    }

    pub fn has_negative(&self) -> bool {
        self.enhanced.iter().any(|e| e.label == Label::Negative)
    }

    fn validate(&self, path: &Path, line: usize) -> Result<(), CorpusError> {
        if self.enhanced.len() != 4 {
            return Err(CorpusError::CardinalityError {
                path: path.to_path_buf(),
                line,
                count: self.enhanced.len(),
            });
        }
        Ok(())
    }
}

/// A validated, order-preserving list of records loaded from one file.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest<R> {
    pub records: Vec<R>,
    pub source_path: PathBuf,
}

pub type PairsManifest = Manifest<PairRecord>;
pub type QuintupletsManifest = Manifest<Quintuplet>;

fn load_lines<R, F>(path: &Path, validate: F) -> Result<Manifest<R>, CorpusError>
where
    R: for<'de> Deserialize<'de>,
    F: Fn(&R, &Path, usize) -> Result<(), CorpusError>,
{
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::FileNotFound(path.to_path_buf()),
        _ => CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: R = serde_json::from_str(&line).map_err(|e| CorpusError::SchemaError {
            path: path.to_path_buf(),
            line: line_no,
            reason: e.to_string(),
        })?;
        validate(&record, path, line_no)?;
        records.push(record);
    }
    Ok(Manifest {
        records,
        source_path: path.to_path_buf(),
    })
}

fn save_lines<R: Serialize>(records: &[R], path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("manifest records serialize");
        writeln!(w, "{line}").map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

/// Load a pairs manifest (one JSON object per line, pairs schema).
pub fn load_pairs_manifest(path: &Path) -> Result<PairsManifest, CorpusError> {
    load_lines(path, PairRecord::validate)
}

/// Load a quintuplet manifest (one JSON object per line, quintuplet schema).
pub fn load_quintuplet_manifest(path: &Path) -> Result<QuintupletsManifest, CorpusError> {
    load_lines(path, Quintuplet::validate)
}

pub fn save_pairs_manifest(records: &[PairRecord], path: &Path) -> Result<(), CorpusError> {
    save_lines(records, path)
}

pub fn save_quintuplet_manifest(records: &[Quintuplet], path: &Path) -> Result<(), CorpusError> {
    save_lines(records, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        p
    }

    #[test]
    fn white_rgb_pixel_is_unit_luma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("white.png");
        image::RgbImage::from_pixel(1, 1, image::Rgb([255, 255, 255]))
            .save(&p)
            .unwrap();
        let plane = load_image(&p).unwrap();
        assert_eq!(plane.width(), 1);
        assert_eq!(plane.height(), 1);
        assert!((plane.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_red_pixel_matches_bt601_weight() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.png");
        image::RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0]))
            .save(&p)
            .unwrap();
        let plane = load_image(&p).unwrap();
        // Independent evaluation of the weighting arithmetic.
        let expected = (0.299_f64 * 255.0 + 0.587 * 0.0 + 0.114 * 0.0) / 255.0;
        assert!((plane.data()[0] - expected).abs() < 1e-12);
        assert!((plane.data()[0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn zero_grayscale_decodes_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zeros.png");
        image::GrayImage::from_pixel(2, 2, image::Luma([0]))
            .save(&p)
            .unwrap();
        let plane = load_image(&p).unwrap();
        assert_eq!(plane.data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pgm_binary_decodes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.pgm");
        let mut f = File::create(&p).unwrap();
        f.write_all(b"P5\n2 1\n255\n").unwrap();
        f.write_all(&[0u8, 255u8]).unwrap();
        drop(f);
        let plane = load_image(&p).unwrap();
        assert_eq!(plane.data(), &[0.0, 1.0]);
    }

    #[test]
    fn sixteen_bit_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_pixel(2, 2, image::Luma([1024u16]));
        img.save(&p).unwrap();
        match load_image(&p) {
            Err(CorpusError::DecodeError { .. }) => {}
            other => panic!("expected DecodeError, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_reports_not_found() {
        match load_image(Path::new("/nonexistent/img.png")) {
            Err(CorpusError::FileNotFound(_)) => {}
            other => panic!("expected FileNotFound, got {other:?}"),
        }
    }

    #[test]
    fn pairs_manifest_loads_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "pairs.jsonl",
            concat!(
                r#"{"id":"p1","model_a":"m1","model_b":"m2","img_a":"a.png","img_b":"b.png","human_second_fraction":0.7,"split":"train"}"#,
                "\n",
                r#"{"id":"p2","model_a":"m2","model_b":"m1","img_a":"c.png","img_b":"d.png","human_second_fraction":0.2,"split":"test"}"#,
                "\n"
            ),
        );
        let m = load_pairs_manifest(&p).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].id, "p1");
        assert_eq!(m.records[1].id, "p2");
        // group_key is order-insensitive.
        assert_eq!(m.records[0].group_key(), m.records[1].group_key());
    }

    #[test]
    fn fraction_out_of_range_is_range_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "pairs.jsonl",
            concat!(
                r#"{"id":"p1","model_a":"m1","model_b":"m2","img_a":"a.png","img_b":"b.png","human_second_fraction":0.7,"split":"train"}"#,
                "\n",
                r#"{"id":"p2","model_a":"m1","model_b":"m2","img_a":"a.png","img_b":"b.png","human_second_fraction":1.3,"split":"train"}"#,
                "\n"
            ),
        );
        match load_pairs_manifest(&p) {
            Err(CorpusError::RangeError { line, value, .. }) => {
                assert_eq!(line, 2);
                assert!((value - 1.3).abs() < 1e-12);
            }
            other => panic!("expected RangeError, got {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "empty.jsonl", "");
        let m = load_pairs_manifest(&p).unwrap();
        assert!(m.records.is_empty());
    }

    #[test]
    fn quintuplet_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "q.jsonl",
            concat!(
                r#"{"id":"q1","original":"o.png","enhanced":[{"path":"e1.png","label":"positive"},{"path":"e2.png","label":"similar"},{"path":"e3.png","label":"negative"},{"path":"e4.png","label":"positive"}]}"#,
                "\n"
            ),
        );
        let m = load_quintuplet_manifest(&p).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].enhanced.len(), 4);
        assert!(m.records[0].has_negative());
    }

    #[test]
    fn three_enhanced_entries_is_cardinality_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "q.jsonl",
            concat!(
                r#"{"id":"q1","original":"o.png","enhanced":[{"path":"e1.png","label":"positive"},{"path":"e2.png","label":"similar"},{"path":"e3.png","label":"negative"}]}"#,
                "\n"
            ),
        );
        match load_quintuplet_manifest(&p) {
            Err(CorpusError::CardinalityError { count, .. }) => assert_eq!(count, 3),
            other => panic!("expected CardinalityError, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_schema_error_naming_it() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "q.jsonl",
            concat!(
                r#"{"id":"q1","original":"o.png","enhanced":[{"path":"e1.png","label":"great"},{"path":"e2.png","label":"similar"},{"path":"e3.png","label":"negative"},{"path":"e4.png","label":"positive"}]}"#,
                "\n"
            ),
        );
        match load_quintuplet_manifest(&p) {
            Err(CorpusError::SchemaError { reason, line, .. }) => {
                assert_eq!(line, 1);
                assert!(reason.contains("great"), "reason should name the label: {reason}");
            }
            other => panic!("expected SchemaError, got {other:?}"),
        }
    }

    #[test]
    fn crop_and_downsample_shapes() {
        let plane = ImagePlane::new(4, 4, (0..16).map(f64::from).collect()).unwrap();
        let c = plane.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[5.0, 6.0, 9.0, 10.0]);
        let d = plane.downsample2().unwrap();
        assert_eq!(d.width(), 2);
        assert_eq!(d.get(0, 0), (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
    }
}
