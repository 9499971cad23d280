//! Netpbm frames, intrinsics documents and ASCII PLY output.

use std::fmt::Write as _;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{ColorFrame, DepthFrame, Intrinsics, PointCloud, RigExtrinsics};

/// Camera calibration for a depth/color rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntrinsicsDoc {
    pub depth_intrinsics: Intrinsics,
    pub color_intrinsics: Intrinsics,
    pub rig: RigExtrinsics,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntrinsicsDoc {
    depth_intrinsics: Intrinsics,
    color_intrinsics: Intrinsics,
    baseline: Option<[f64; 3]>,
}

pub fn read_intrinsics(text: &str) -> Result<IntrinsicsDoc> {
    let raw: RawIntrinsicsDoc =
        serde_json::from_str(text).map_err(|e| Error::parse("intrinsics JSON", e.to_string()))?;
    let baseline = raw
        .baseline
        .ok_or_else(|| Error::Validation("intrinsics: field `baseline` is required".into()))?;
    let doc = IntrinsicsDoc {
        depth_intrinsics: raw.depth_intrinsics,
        color_intrinsics: raw.color_intrinsics,
        rig: RigExtrinsics { baseline },
    };
    doc.depth_intrinsics.validate()?;
    doc.color_intrinsics.validate()?;
    doc.rig.validate()?;
    Ok(doc)
}

pub fn write_intrinsics(doc: &IntrinsicsDoc) -> String {
    let value = serde_json::json!({
        "depth_intrinsics": doc.depth_intrinsics,
        "color_intrinsics": doc.color_intrinsics,
        "baseline": doc.rig.baseline,
    });
    let mut text = serde_json::to_string_pretty(&value).expect("intrinsics serialize");
    text.push('\n');
    text
}

struct NetpbmHeader {
    width: u32,
    height: u32,
    maxval: u32,
    payload_offset: usize,
}

/// Parses a binary Netpbm header with the given magic. Comments run from `#`
/// to end of line; exactly one whitespace byte separates maxval from the
/// payload.
fn parse_netpbm_header(bytes: &[u8], magic: &[u8; 2], kind: &str) -> Result<NetpbmHeader> {
    let err = |offset: usize, msg: &str| Error::parse(kind, format!("byte {offset}: {msg}"));
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(err(
            0,
            &format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        let mut saw_space = false;
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    saw_space = true;
                }
                Some(b) if b.is_ascii_whitespace() => {
                    pos += 1;
                    saw_space = true;
                }
                _ => break,
            }
        }
        if !saw_space {
            return Err(err(pos, "expected whitespace in header"));
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err(start, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| err(start, "header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected a single whitespace byte after maxval")),
    }
    let [width, height, maxval] = fields;
    Ok(NetpbmHeader {
        width,
        height,
        maxval,
        payload_offset: pos,
    })
}

fn payload<'a>(
    bytes: &'a [u8],
    header: &NetpbmHeader,
    bytes_per_pixel: usize,
    kind: &str,
) -> Result<&'a [u8]> {
    let need = header.width as usize * header.height as usize * bytes_per_pixel;
    let have = bytes.len() - header.payload_offset;
    if have < need {
        return Err(Error::parse(
            kind,
            format!(
                "byte {}: truncated payload, expected {need} bytes after the header, found {have}",
                bytes.len()
            ),
        ));
    }
    if have > need {
        return Err(Error::parse(
            kind,
            format!(
                "byte {}: {} bytes of trailing data after the payload",
                header.payload_offset + need,
                have - need
            ),
        ));
    }
    Ok(&bytes[header.payload_offset..])
}

/// Reads a 16-bit big-endian P5 depth map in millimeters.
pub fn read_depth_pgm(bytes: &[u8]) -> Result<DepthFrame> {
    const KIND: &str = "depth PGM";
    let header = parse_netpbm_header(bytes, b"P5", KIND)?;
    if header.maxval != 65535 {
        return Err(Error::parse(
            KIND,
            format!(
                "byte {}: maxval must be 65535, found {}",
                header.payload_offset - 1,
                header.maxval
            ),
        ));
    }
    let data = payload(bytes, &header, 2, KIND)?;
    let samples = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    DepthFrame::new(header.width, header.height, samples)
}

pub fn write_depth_pgm(frame: &DepthFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", frame.width(), frame.height()).into_bytes();
    out.reserve(frame.samples().len() * 2);
    for s in frame.samples() {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

/// Reads an 8-bit P6 color image.
pub fn read_color_ppm(bytes: &[u8]) -> Result<ColorFrame> {
    const KIND: &str = "color PPM";
    let header = parse_netpbm_header(bytes, b"P6", KIND)?;
    if header.maxval != 255 {
        return Err(Error::parse(
            KIND,
            format!(
                "byte {}: maxval must be 255, found {}",
                header.payload_offset - 1,
                header.maxval
            ),
        ));
    }
    let data = payload(bytes, &header, 3, KIND)?;
    let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    ColorFrame::new(header.width, header.height, pixels)
}

pub fn write_color_ppm(frame: &ColorFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.reserve(frame.pixels().len() * 3);
    for p in frame.pixels() {
        out.extend_from_slice(p);
    }
    out
}

/// ASCII PLY with float xyz (6 decimals) and uchar rgb per vertex.
pub fn write_ply(cloud: &PointCloud) -> Vec<u8> {
    let mut out = String::with_capacity(200 + cloud.len() * 40);
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", cloud.len()).unwrap();
    for name in ["x", "y", "z"] {
        writeln!(out, "property float {name}").unwrap();
    }
    for name in ["red", "green", "blue"] {
        writeln!(out, "property uchar {name}").unwrap();
    }
    out.push_str("end_header\n");
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        writeln!(
            out,
            "{:.6} {:.6} {:.6} {} {} {}",
            p[0], p[1], p[2], c[0], c[1], c[2]
        )
        .unwrap();
    }
    out.into_bytes()
}
