//! Pixel-level instance masks.
//!
//! Each pixel holds `class_code * 1000 + counter`; codes below 1000 are
//! background.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Rect;

pub const CODE_DIVISOR: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u16>,
}

/// Decoded mask code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MaskInstance {
    pub code: u16,
    pub class_code: u32,
    pub counter: u32,
}

pub fn decode_code(code: u16) -> Option<MaskInstance> {
    let c = code as u32;
    (c >= CODE_DIVISOR).then(|| MaskInstance {
        code,
        class_code: c / CODE_DIVISOR,
        counter: c % CODE_DIVISOR,
    })
}

pub fn encode_code(class_code: u32, counter: u32) -> Result<u16> {
    if class_code == 0 || counter >= CODE_DIVISOR {
        return Err(Error::Invalid(format!(
            "cannot encode class {class_code} counter {counter}"
        )));
    }
    u16::try_from(class_code * CODE_DIVISOR + counter)
        .map_err(|_| Error::Invalid(format!("mask code overflow for class {class_code}")))
}

impl InstanceMask {
    pub fn new(width: usize, height: usize) -> Self {
        InstanceMask {
            width,
            height,
            codes: vec![0; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> u16 {
        self.codes[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, code: u16) {
        self.codes[v * self.width + u] = code;
    }

    pub fn row(&self, v: usize) -> &[u16] {
        &self.codes[v * self.width..(v + 1) * self.width]
    }

    /// Instances present in the mask, ascending by code.
    pub fn instances(&self) -> Vec<MaskInstance> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &c in &self.codes {
            seen[c as usize] = true;
        }
        (CODE_DIVISOR as usize..seen.len())
            .filter(|&c| seen[c])
            .filter_map(|c| decode_code(c as u16))
            .collect()
    }

    pub fn pixel_counts(&self) -> BTreeMap<u16, usize> {
        let mut counts = BTreeMap::new();
        for &c in &self.codes {
            if c as u32 >= CODE_DIVISOR {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Tight pixel bounding rectangle of every instance.
    pub fn bounding_rects(&self) -> BTreeMap<u16, Rect> {
        let mut acc: BTreeMap<u16, (usize, usize, usize, usize)> = BTreeMap::new();
        for v in 0..self.height {
            for (u, &c) in self.row(v).iter().enumerate() {
                if (c as u32) < CODE_DIVISOR {
                    continue;
                }
                let e = acc.entry(c).or_insert((u, v, u, v));
                e.0 = e.0.min(u);
                e.1 = e.1.min(v);
                e.2 = e.2.max(u);
                e.3 = e.3.max(v);
            }
        }
        acc.into_iter()
            .map(|(c, (u0, v0, u1, v1))| {
                (c, Rect::new(u0 as f64, v0 as f64, (u1 + 1) as f64, (v1 + 1) as f64))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskEncoding {
    /// Single-channel 16-bit PNG.
    Png16,
    /// Binary 16-bit PGM (P5, maxval 65535).
    Pgm,
    /// Text grid: `width height` header then one row of codes per line.
    Text,
}

impl MaskEncoding {
    pub fn extension(self) -> &'static str {
        match self {
            MaskEncoding::Png16 => "png",
            MaskEncoding::Pgm => "pgm",
            MaskEncoding::Text => "txt",
        }
    }
}

impl FromStr for MaskEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "png16" | "png" => Ok(MaskEncoding::Png16),
            "pgm" => Ok(MaskEncoding::Pgm),
            "txt" | "text" => Ok(MaskEncoding::Text),
            other => Err(Error::UnknownEncoding(other.to_string())),
        }
    }
}

impl std::fmt::Display for MaskEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskEncoding::Png16 => "png16",
            MaskEncoding::Pgm => "pgm",
            MaskEncoding::Text => "txt",
        })
    }
}

pub fn import_instance_mask(path: impl AsRef<Path>, encoding: MaskEncoding) -> Result<InstanceMask> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: msg,
    };
    match encoding {
        MaskEncoding::Png16 => {
            let decoder = png::Decoder::new(reader);
            let mut png = decoder.read_info().map_err(|e| bad(e.to_string()))?;
            let info = png.info();
            if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
                return Err(bad("expected a 16-bit grayscale png".into()));
            }
            let (w, h) = (info.width as usize, info.height as usize);
            let mut buf = vec![0u8; png.output_buffer_size().ok_or_else(|| bad("png too large".into()))?];
            let frame = png.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
            let bytes = &buf[..frame.buffer_size()];
            let codes = bytes
                .chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect::<Vec<_>>();
            if codes.len() != w * h {
                return Err(bad("png pixel count mismatch".into()));
            }
            Ok(InstanceMask { width: w, height: h, codes })
        }
        MaskEncoding::Pgm => {
            let mut data = Vec::new();
            reader.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
            parse_pgm(&data).map_err(bad)
        }
        MaskEncoding::Text => {
            let mut lines = reader.lines().enumerate();
            let perr = |line: usize, message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
            let header = header.map_err(|e| Error::io(path, e))?;
            let dims: Vec<usize> = header
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| perr(1, format!("bad header `{header}`"))))
                .collect::<Result<_>>()?;
            let [w, h] = dims[..] else {
                return Err(perr(1, "header must be `width height`".into()));
            };
            let mut codes = Vec::with_capacity(w * h);
            for (i, line) in lines.take(h) {
                let line = line.map_err(|e| Error::io(path, e))?;
                let row: Vec<u16> = line
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| perr(i + 1, format!("bad code `{t}`"))))
                    .collect::<Result<_>>()?;
                if row.len() != w {
                    return Err(perr(i + 1, format!("expected {w} codes, found {}", row.len())));
                }
                codes.extend(row);
            }
            if codes.len() != w * h {
                return Err(perr(h + 1, "truncated grid".into()));
            }
            Ok(InstanceMask { width: w, height: h, codes })
        }
    }
}

fn parse_pgm(data: &[u8]) -> std::result::Result<InstanceMask, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        while pos < data.len() {
            if data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else if data[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated pgm header".into());
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(format!("unsupported pgm magic `{magic}`"));
    }
    let num = |t: String| t.parse::<usize>().map_err(|_| format!("bad pgm number `{t}`"));
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 65535 {
        return Err(format!("expected maxval 65535, found {maxval}"));
    }
    let body = &data[pos + 1..];
    if body.len() < 2 * w * h {
        return Err("truncated pgm body".into());
    }
    let codes = body[..2 * w * h]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok(InstanceMask { width: w, height: h, codes })
}

pub fn export_instance_mask(mask: &InstanceMask, path: impl AsRef<Path>, encoding: MaskEncoding) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    match encoding {
        MaskEncoding::Png16 => {
            let mut enc = png::Encoder::new(&mut out, mask.width as u32, mask.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::Invalid(format!("png encode: {e}")))?;
            let bytes: Vec<u8> = mask.codes.iter().flat_map(|c| c.to_be_bytes()).collect();
            writer
                .write_image_data(&bytes)
                .map_err(|e| Error::Invalid(format!("png encode: {e}")))?;
        }
        MaskEncoding::Pgm => {
            write!(out, "P5\n{} {}\n65535\n", mask.width, mask.height).map_err(io)?;
            let bytes: Vec<u8> = mask.codes.iter().flat_map(|c| c.to_be_bytes()).collect();
            out.write_all(&bytes).map_err(io)?;
        }
        MaskEncoding::Text => {
            writeln!(out, "{} {}", mask.width, mask.height).map_err(io)?;
            for v in 0..mask.height {
                let row: Vec<String> = mask.row(v).iter().map(|c| c.to_string()).collect();
                writeln!(out, "{}", row.join(" ")).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}
