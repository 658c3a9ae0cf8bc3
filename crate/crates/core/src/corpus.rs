//! Annotation corpora: WIDER FACE ground-truth files, image-size sidecars,
//! synthetic corpora and aspect-ratio coverage.
//!
//! The WIDER FACE ground-truth grammar is a sequence of blocks:
//!
//! ```text
//! <image path>
//! <face count>
//! x y w h blur expression illumination invalid occlusion pose   (count lines)
//! ```
//!
//! A block with count 0 is followed by a single all-zero placeholder line,
//! which is discarded when present.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::matching::Arsd;
use crate::rng;
use crate::{Error, Result};

/// One annotated face. Coordinates are kept as read, so degenerate boxes
/// (`w <= 0` or `h <= 0`) survive parsing and can be filtered later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceAnnotation {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub blur: u8,
    pub expression: u8,
    pub illumination: u8,
    pub invalid: u8,
    pub occlusion: u8,
    pub pose: u8,
}

impl FaceAnnotation {
    /// A face with all attribute codes zero.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        FaceAnnotation {
            x,
            y,
            w,
            h,
            blur: 0,
            expression: 0,
            illumination: 0,
            invalid: 0,
            occlusion: 0,
            pose: 0,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.w > 0.0 && self.h > 0.0)
    }

    pub fn is_invalid(&self) -> bool {
        self.invalid == 1
    }

    pub fn bbox(&self) -> Result<BBox> {
        BBox::new(self.x, self.y, self.w, self.h)
    }

    /// `h / w`; meaningless for degenerate boxes.
    pub fn aspect_ratio(&self) -> f64 {
        self.h / self.w
    }
}

/// Which faces an analysis considers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaceFilter {
    /// Drop `invalid == 1` and degenerate boxes.
    #[default]
    Valid,
    /// Drop only degenerate boxes.
    NonDegenerate,
}

impl FaceFilter {
    pub fn keep(&self, face: &FaceAnnotation) -> bool {
        match self {
            FaceFilter::Valid => !face.is_degenerate() && !face.is_invalid(),
            FaceFilter::NonDegenerate => !face.is_degenerate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: String,
    pub width: Option<f64>,
    pub height: Option<f64>,
    pub faces: Vec<FaceAnnotation>,
}

impl ImageRecord {
    pub fn dims(&self) -> Option<(f64, f64)> {
        self.width.zip(self.height)
    }

    /// Faces passing `filter`, clamped to the image when its size is
    /// known. Faces that clamp to nothing are dropped. Each box keeps the
    /// index of its annotation.
    pub fn boxes(&self, filter: FaceFilter) -> Vec<(usize, BBox)> {
        self.faces
            .iter()
            .enumerate()
            .filter(|(_, f)| filter.keep(f))
            .filter_map(|(k, f)| {
                let (mut x1, mut y1, mut x2, mut y2) = (f.x, f.y, f.x + f.w, f.y + f.h);
                if let Some((w, h)) = self.dims() {
                    x1 = x1.clamp(0.0, w);
                    x2 = x2.clamp(0.0, w);
                    y1 = y1.clamp(0.0, h);
                    y2 = y2.clamp(0.0, h);
                }
                BBox::new(x1, y1, x2 - x1, y2 - y1).ok().map(|b| (k, b))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub images: usize,
    pub faces: usize,
    pub degenerate: usize,
    pub invalid: usize,
    pub valid: usize,
    pub empty_images: usize,
}

pub fn summarize(corpus: &[ImageRecord]) -> CorpusSummary {
    let mut s = CorpusSummary {
        images: corpus.len(),
        ..CorpusSummary::default()
    };
    for rec in corpus {
        if rec.faces.is_empty() {
            s.empty_images += 1;
        }
        for f in &rec.faces {
            s.faces += 1;
            s.degenerate += f.is_degenerate() as usize;
            s.invalid += f.is_invalid() as usize;
            s.valid += FaceFilter::Valid.keep(f) as usize;
        }
    }
    s
}

fn parse_face_line(line: &str, line_no: usize) -> Result<FaceAnnotation> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 10 {
        return Err(Error::parse(
            line_no,
            format!("expected 10 integer fields, found {}", fields.len()),
        ));
    }
    let mut v = [0i64; 10];
    for (slot, field) in v.iter_mut().zip(&fields) {
        *slot = field
            .parse()
            .map_err(|_| Error::parse(line_no, format!("non-integer field {field:?}")))?;
    }
    let attr = |idx: usize, name: &str, max: i64| -> Result<u8> {
        if (0..=max).contains(&v[idx]) {
            Ok(v[idx] as u8)
        } else {
            Err(Error::parse(
                line_no,
                format!("{name} code {} out of range 0..={max}", v[idx]),
            ))
        }
    };
    Ok(FaceAnnotation {
        x: v[0] as f64,
        y: v[1] as f64,
        w: v[2] as f64,
        h: v[3] as f64,
        blur: attr(4, "blur", 2)?,
        expression: attr(5, "expression", 1)?,
        illumination: attr(6, "illumination", 1)?,
        invalid: attr(7, "invalid", 1)?,
        occlusion: attr(8, "occlusion", 2)?,
        pose: attr(9, "pose", 1)?,
    })
}

fn is_numeric_line(line: &str) -> bool {
    let mut any = false;
    for f in line.split_whitespace() {
        if f.parse::<i64>().is_err() {
            return false;
        }
        any = true;
    }
    any
}

/// Parses a WIDER FACE ground-truth file. Records come back in file order
/// and each holds exactly the declared number of faces.
pub fn parse_wider<R: BufRead>(reader: R) -> Result<Vec<ImageRecord>> {
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    parse_wider_lines(&lines)
}

pub fn parse_wider_str(text: &str) -> Result<Vec<ImageRecord>> {
    let lines: Vec<String> = text.lines().map(str::to_owned).collect();
    parse_wider_lines(&lines)
}

fn parse_wider_lines(lines: &[String]) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    let mut i = 0;
    let eof = lines.len() + 1;
    while i < lines.len() {
        let path = lines[i].trim();
        if path.is_empty() {
            i += 1;
            continue;
        }
        if is_numeric_line(path) {
            return Err(Error::parse(
                i + 1,
                "expected an image path, found a numeric line (face count mismatch?)",
            ));
        }
        let path = path.to_string();
        i += 1;

        let Some(count_line) = lines.get(i) else {
            return Err(Error::parse(eof, format!("missing face count for {path}")));
        };
        let count: usize = count_line
            .trim()
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("malformed face count {:?}", count_line.trim())))?;
        i += 1;

        let mut faces = Vec::with_capacity(count);
        if count == 0 {
            if lines.get(i).is_some_and(|l| is_numeric_line(l)) {
                parse_face_line(&lines[i], i + 1)?;
                i += 1;
            }
        } else {
            for k in 0..count {
                let Some(line) = lines.get(i) else {
                    return Err(Error::parse(
                        eof,
                        format!("short block for {path}: expected {count} face lines, found {k}"),
                    ));
                };
                faces.push(parse_face_line(line, i + 1)?);
                i += 1;
            }
        }
        records.push(ImageRecord {
            path,
            width: None,
            height: None,
            faces,
        });
    }
    Ok(records)
}

fn int_field(v: f64, what: &str, path: &str) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::validation(format!(
            "{path}: {what} = {v} is not an integer; the annotation format is integral"
        )));
    }
    Ok(v as i64)
}

/// Writes records in the WIDER FACE ground-truth layout, including the
/// placeholder line for empty images and the trailing space the original
/// files carry on box lines.
pub fn write_wider<W: Write>(records: &[ImageRecord], mut out: W) -> Result<()> {
    for rec in records {
        writeln!(out, "{}", rec.path)?;
        writeln!(out, "{}", rec.faces.len())?;
        if rec.faces.is_empty() {
            writeln!(out, "0 0 0 0 0 0 0 0 0 0 ")?;
        }
        for f in &rec.faces {
            writeln!(
                out,
                "{} {} {} {} {} {} {} {} {} {} ",
                int_field(f.x, "x", &rec.path)?,
                int_field(f.y, "y", &rec.path)?,
                int_field(f.w, "w", &rec.path)?,
                int_field(f.h, "h", &rec.path)?,
                f.blur,
                f.expression,
                f.illumination,
                f.invalid,
                f.occlusion,
                f.pose
            )?;
        }
    }
    Ok(())
}

pub fn write_wider_string(records: &[ImageRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_wider(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("writer emits UTF-8"))
}

#[derive(Debug, Deserialize)]
struct DimsRow {
    path: String,
    width: f64,
    height: f64,
}

/// Reads a `path,width,height` sidecar CSV.
pub fn read_dims_csv<R: std::io::Read>(reader: R) -> Result<HashMap<String, (f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(1, format!("dims CSV header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "width", "height"] {
        return Err(Error::parse(1, "dims CSV header must be path,width,height"));
    }
    let mut out = HashMap::new();
    for row in rdr.deserialize::<DimsRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, format!("dims CSV: {e}"))
        })?;
        if !(row.width > 0.0 && row.height > 0.0) {
            return Err(Error::validation(format!(
                "{}: image dimensions must be positive",
                row.path
            )));
        }
        out.insert(row.path, (row.width, row.height));
    }
    Ok(out)
}

/// Fills in image sizes from a sidecar map; records not in the map keep
/// whatever they had.
pub fn attach_dims(records: &mut [ImageRecord], dims: &HashMap<String, (f64, f64)>) {
    for rec in records {
        if let Some(&(w, h)) = dims.get(&rec.path) {
            rec.width = Some(w);
            rec.height = Some(h);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArLaw {
    /// Log-uniform on `[lo, hi)`.
    LogUniform { lo: f64, hi: f64 },
    /// Face `i` takes `list[i % list.len()]`.
    FixedList(Vec<f64>),
}

impl ArLaw {
    fn validate(&self) -> Result<()> {
        match self {
            ArLaw::LogUniform { lo, hi } if *lo > 0.0 && hi > lo && hi.is_finite() => Ok(()),
            ArLaw::LogUniform { lo, hi } => Err(Error::validation(format!(
                "log-uniform law needs 0 < lo < hi, got ({lo}, {hi})"
            ))),
            ArLaw::FixedList(v) if !v.is_empty() && v.iter().all(|r| r.is_finite() && *r > 0.0) => Ok(()),
            ArLaw::FixedList(_) => Err(Error::validation("fixed AR list must be non-empty and positive")),
        }
    }
}

pub const SYNTHETIC_MIN_WIDTH: f64 = 4.0;
pub const SYNTHETIC_MAX_WIDTH: f64 = 512.0;

/// Deterministic corpus of `n` single-face images. Widths are log-uniform
/// on `[4, 512)`, aspect ratios follow `law`, and each image is at least
/// 1024 px per side with 25% headroom around the face. Draws come from
/// `rng::substream(seed, 0)` in the order width, AR (log-uniform only),
/// x offset, y offset.
pub fn generate_synthetic(seed: u64, n: usize, law: &ArLaw) -> Result<Vec<ImageRecord>> {
    if n == 0 {
        return Err(Error::validation("synthetic corpus needs n > 0"));
    }
    law.validate()?;
    let mut stream = rng::substream(seed, 0);
    let (wlo, whi) = (SYNTHETIC_MIN_WIDTH.ln(), SYNTHETIC_MAX_WIDTH.ln());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let w = (wlo + (whi - wlo) * rng::unit(&mut stream)).exp();
        let ar = match law {
            ArLaw::LogUniform { lo, hi } => (lo.ln() + (hi.ln() - lo.ln()) * rng::unit(&mut stream)).exp(),
            ArLaw::FixedList(list) => list[i % list.len()],
        };
        let h = w * ar;
        let img_w = (w * 1.25).ceil().max(1024.0);
        let img_h = (h * 1.25).ceil().max(1024.0);
        let x = (img_w - w) * rng::unit(&mut stream);
        let y = (img_h - h) * rng::unit(&mut stream);
        out.push(ImageRecord {
            path: format!("synthetic/{i:06}.jpg"),
            width: Some(img_w),
            height: Some(img_h),
            faces: vec![FaceAnnotation::new(x, y, w, h)],
        });
    }
    Ok(out)
}

/// Fraction of faces passing `filter` whose aspect ratio lies in
/// `D(anchor_ar, eta)`.
pub fn ar_coverage(corpus: &[ImageRecord], anchor_ar: f64, eta: f64, filter: FaceFilter) -> Result<f64> {
    let domain = Arsd::new(anchor_ar, eta)?;
    let (mut inside, mut total) = (0usize, 0usize);
    for f in corpus.iter().flat_map(|r| &r.faces).filter(|f| filter.keep(f)) {
        total += 1;
        inside += domain.contains(f.aspect_ratio()) as usize;
    }
    if total == 0 {
        return Err(Error::validation("coverage needs at least one face"));
    }
    Ok(inside as f64 / total as f64)
}
