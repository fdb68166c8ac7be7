//! File formats and rendering.
//!
//! `.flo` layout (little-endian):
//!
//! ```text
//! offset 0   f32  202021.25 (bytes "PIEH")
//! offset 4   i32  width
//! offset 8   i32  height
//! offset 12  f32  u, v interleaved, row-major from the top-left pixel
//! ```
//!
//! Laplace scale fields reuse the same container with `(b_u, b_v)` in place
//! of `(u, v)` and a JSON sidecar `<file>.json` holding
//! `{"payload": "laplace_scale"}`.
//!
//! KITTI flow PNGs are 16-bit RGB with `u = (R - 2^15) / 64`,
//! `v = (G - 2^15) / 64` and the pixel valid iff `B > 0`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalmetrics::{sparsification_error, EntropyMap, SparsificationCurve};
use crate::fields::{ensure_same_dims, FlowField, UncertaintyField, ValidMask};

pub const FLO_MAGIC: f32 = 202021.25;
const FLO_HEADER: usize = 12;

/// Decodes a `.flo` buffer. Fails on a bad tag, non-positive dimensions,
/// a payload of the wrong length or non-finite values.
pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < FLO_HEADER {
        return Err(Error::format(
            "flo",
            format!("{} bytes is shorter than the header", bytes.len()),
        ));
    }
    let word = |o: usize| [bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::format("flo", format!("bad magic {magic}")));
    }
    let width = i32::from_le_bytes(word(4));
    let height = i32::from_le_bytes(word(8));
    if width <= 0 || height <= 0 {
        return Err(Error::format(
            "flo",
            format!("non-positive dimensions {width}x{height}"),
        ));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format("flo", "dimensions overflow"))?;
    let payload = &bytes[FLO_HEADER..];
    if payload.len() != expected {
        return Err(Error::format(
            "flo",
            format!(
                "payload is {} bytes, expected {expected} for {width}x{height}",
                payload.len()
            ),
        ));
    }
    let n = width * height;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for px in payload.chunks_exact(8) {
        u.push(f32::from_le_bytes([px[0], px[1], px[2], px[3]]) as f64);
        v.push(f32::from_le_bytes([px[4], px[5], px[6], px[7]]) as f64);
    }
    FlowField::new(width, height, u, v).map_err(|e| Error::format("flo", e.to_string()))
}

/// Encodes a field as `.flo`. Values are stored as `f32`.
pub fn write_flo(field: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(FLO_HEADER + field.len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(field.width() as i32).to_le_bytes());
    out.extend_from_slice(&(field.height() as i32).to_le_bytes());
    for (u, v) in field.u().iter().zip(field.v()) {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_flo_file(path: &Path) -> Result<FlowField> {
    read_flo(&read_bytes(path)?)
}

pub fn write_flo_file(path: &Path, field: &FlowField) -> Result<()> {
    write_bytes(path, &write_flo(field))
}

const SCALE_PAYLOAD: &str = "laplace_scale";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    payload: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes raw scales (zeros allowed) as a `.flo` with its sidecar tag.
pub fn write_scale_file(path: &Path, width: usize, height: usize, b_u: &[f64], b_v: &[f64]) -> Result<()> {
    let field = FlowField::new(width, height, b_u.to_vec(), b_v.to_vec())?;
    write_flo_file(path, &field)?;
    let tag = serde_json::to_string(&Sidecar {
        payload: SCALE_PAYLOAD.into(),
    })?;
    write_bytes(&sidecar_path(path), tag.as_bytes())
}

pub fn write_uncertainty_file(path: &Path, unc: &UncertaintyField) -> Result<()> {
    let (w, h) = unc.dims();
    write_scale_file(path, w, h, unc.b_u(), unc.b_v())
}

/// Reads a scale file. A sidecar, when present, must declare Laplace scales.
/// Scales below the floor are raised to it.
pub fn read_uncertainty_file(path: &Path) -> Result<UncertaintyField> {
    let side = sidecar_path(path);
    if side.exists() {
        let tag: Sidecar =
            serde_json::from_slice(&read_bytes(&side)?).map_err(|e| Error::format("scale sidecar", e.to_string()))?;
        if tag.payload != SCALE_PAYLOAD {
            return Err(Error::format(
                "scale sidecar",
                format!("unexpected payload {:?}", tag.payload),
            ));
        }
    }
    let raw = read_flo_file(path)?;
    let (w, h) = raw.dims();
    let (b_u, b_v) = raw.into_parts();
    UncertaintyField::floored(w, h, b_u, b_v).map_err(|e| Error::format("scale", e.to_string()))
}

const KITTI_OFFSET: f64 = 32768.0;
const KITTI_SCALE: f64 = 64.0;

/// Decodes a KITTI flow PNG. Invalid pixels get zero flow.
pub fn read_kitti_png(bytes: &[u8]) -> Result<(FlowField, ValidMask)> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let buf = match img {
        image::DynamicImage::ImageRgb16(b) => b,
        other => {
            return Err(Error::format(
                "kitti png",
                format!("expected 16-bit RGB, got {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for px in buf.pixels() {
        let ok = px[2] > 0;
        valid.push(ok);
        if ok {
            u.push((px[0] as f64 - KITTI_OFFSET) / KITTI_SCALE);
            v.push((px[1] as f64 - KITTI_OFFSET) / KITTI_SCALE);
        } else {
            u.push(0.0);
            v.push(0.0);
        }
    }
    Ok((FlowField::new(w, h, u, v)?, ValidMask::new(w, h, valid)?))
}

fn kitti_channel(x: f64) -> u16 {
    (x * KITTI_SCALE + KITTI_OFFSET).round().clamp(0.0, 65535.0) as u16
}

/// Encodes a flow field and mask as a KITTI flow PNG. Values are rounded to
/// the nearest 1/64 pixel; exact for multiples of 1/64 in `[-512, 512)`.
pub fn write_kitti_png(field: &FlowField, mask: &ValidMask) -> Result<Vec<u8>> {
    ensure_same_dims(field.dims(), mask.dims())?;
    let (w, h) = field.dims();
    let mut buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        *px = if mask.is_valid(i) {
            Rgb([kitti_channel(field.u()[i]), kitti_channel(field.v()[i]), 1])
        } else {
            Rgb([KITTI_OFFSET as u16, KITTI_OFFSET as u16, 0])
        };
    }
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// The 55-entry Middlebury color wheel: red-yellow (15), yellow-green (6),
/// green-cyan (4), cyan-blue (11), blue-magenta (13), magenta-red (6).
pub fn color_wheel() -> Vec<[f64; 3]> {
    const SEGMENTS: [(usize, [f64; 3], [f64; 3]); 6] = [
        (15, [255.0, 0.0, 0.0], [0.0, 255.0, 0.0]),
        (6, [255.0, 255.0, 0.0], [-255.0, 0.0, 0.0]),
        (4, [0.0, 255.0, 0.0], [0.0, 0.0, 255.0]),
        (11, [0.0, 255.0, 255.0], [0.0, -255.0, 0.0]),
        (13, [0.0, 0.0, 255.0], [255.0, 0.0, 0.0]),
        (6, [255.0, 0.0, 255.0], [0.0, 0.0, -255.0]),
    ];
    let mut wheel = Vec::with_capacity(55);
    for (n, start, delta) in SEGMENTS {
        for i in 0..n {
            let t = (255 * i / n) as f64 / 255.0;
            wheel.push([
                start[0] + t * delta[0],
                start[1] + t * delta[1],
                start[2] + t * delta[2],
            ]);
        }
    }
    wheel
}

/// Continuous position of direction `(u, v)` on the color wheel, in
/// `[0, 54]`. Opposite directions are half a wheel apart.
pub fn wheel_position(u: f64, v: f64) -> f64 {
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    (a + 1.0) / 2.0 * 54.0
}

fn flow_color(wheel: &[[f64; 3]], u: f64, v: f64, rad: f64) -> [u8; 3] {
    let fk = wheel_position(u, v);
    let k0 = fk.floor() as usize % wheel.len();
    let k1 = (k0 + 1) % wheel.len();
    let f = fk - fk.floor();
    let mut out = [0u8; 3];
    for c in 0..3 {
        let col0 = wheel[k0][c] / 255.0;
        let col1 = wheel[k1][c] / 255.0;
        let mut col = (1.0 - f) * col0 + f * col1;
        if rad <= 1.0 {
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        out[c] = (255.0 * col).floor().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Color-wheel rendering: hue encodes direction, saturation encodes
/// magnitude relative to `max_magnitude` (default: the largest magnitude
/// in the field). Zero motion is white.
pub fn render_flow(field: &FlowField, max_magnitude: Option<f64>) -> RgbImage {
    let (w, h) = field.dims();
    let max = max_magnitude.unwrap_or_else(|| {
        field
            .u()
            .iter()
            .zip(field.v())
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0, f64::max)
    });
    let wheel = color_wheel();
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        let (mut u, mut v) = (field.u()[i], field.v()[i]);
        if max > 0.0 {
            u /= max;
            v /= max;
        } else {
            u = 0.0;
            v = 0.0;
        }
        *px = Rgb(flow_color(&wheel, u, v, u.hypot(v)));
    }
    img
}

/// Blue, cyan, yellow, red at `t = 0, 1/3, 2/3, 1`, linearly interpolated.
pub fn heatmap_color(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 4] = [
        [0.0, 0.0, 255.0],
        [0.0, 255.0, 255.0],
        [255.0, 255.0, 0.0],
        [255.0, 0.0, 0.0],
    ];
    let t = t.clamp(0.0, 1.0) * 3.0;
    let k = (t.floor() as usize).min(2);
    let f = t - k as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = ((1.0 - f) * STOPS[k][c] + f * STOPS[k + 1][c]).round() as u8;
    }
    out
}

/// Renders `map` with `lo` as blue and `hi` as red; values outside are
/// clamped.
pub fn render_heatmap(map: &EntropyMap, lo: f64, hi: f64) -> Result<RgbImage> {
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::InvalidArgument(format!(
            "heatmap range needs lo < hi, got [{lo}, {hi}]"
        )));
    }
    let norm = map.normalized(lo, hi);
    let mut img = RgbImage::new(map.width as u32, map.height as u32);
    for (px, t) in img.pixels_mut().zip(norm) {
        *px = Rgb(heatmap_color(t));
    }
    Ok(img)
}

/// Renders `map` over its own value range. A constant map comes out as the
/// middle color.
pub fn render_heatmap_auto(map: &EntropyMap) -> RgbImage {
    let (lo, hi) = map.min_max();
    render_heatmap(map, lo, hi).unwrap_or_else(|_| {
        let mut img = RgbImage::new(map.width as u32, map.height as u32);
        img.pixels_mut().for_each(|p| *p = Rgb(heatmap_color(0.5)));
        img
    })
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Binary PPM (P6), for environments without a PNG viewer.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_raw());
    out
}

pub const CURVE_HEADER: [&str; 4] = ["fraction", "value", "oracle", "sparsification_error"];

/// Writes the curve as CSV with the header in [`CURVE_HEADER`], one row per
/// fraction, numbers in scientific notation with 13 significant digits.
pub fn write_curve_csv(curve: &SparsificationCurve, path: &Path) -> Result<()> {
    if curve.is_empty() {
        return Err(Error::InvalidArgument("cannot write an empty curve".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for ((f, v), (o, e)) in curve
        .fractions
        .iter()
        .zip(&curve.values)
        .zip(curve.oracle_values.iter().zip(sparsification_error(curve)))
    {
        w.write_record([f, v, o, &e].map(|x| format!("{x:.12e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<SparsificationCurve> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(CURVE_HEADER) {
        return Err(Error::format("curve csv", "unexpected header"));
    }
    let mut curve = SparsificationCurve {
        fractions: Vec::new(),
        values: Vec::new(),
        oracle_values: Vec::new(),
        degenerate: false,
    };
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format("curve csv", format!("bad number in column {i}")))
        };
        curve.fractions.push(num(0)?);
        curve.values.push(num(1)?);
        curve.oracle_values.push(num(2)?);
    }
    if curve.is_empty() {
        return Err(Error::format("curve csv", "no rows"));
    }
    curve.degenerate = curve.values[0] == 0.0;
    Ok(curve)
}

/// Evaluation summary written by `flowuq eval` and embedded in experiment
/// reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub aepe: f64,
    /// `None` when every image has zero error.
    pub ause: Option<f64>,
    pub oracle_epe: Option<f64>,
    pub member_variance: Option<f64>,
    pub per_image: Vec<ImageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageReport {
    pub name: String,
    pub aepe: f64,
    pub ause: Option<f64>,
    pub oracle_epe: Option<f64>,
    pub member_variance: Option<f64>,
}

impl EvalReport {
    /// Parses and checks a report; unknown or missing keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}
