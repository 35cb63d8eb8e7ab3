//! File codecs: PFM for linear HDR, 8-bit RGB PNG for LDR, 16-bit PNG for
//! RAW mosaics, plus an atomic write helper.

use std::fs;
use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{LdrImage, RadianceImage};

/// Writes `bytes` to a temp file next to `path`, then renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

/// Encodes as little-endian PFM (scale -1.0), scanlines bottom to top.
pub fn encode_pfm(img: &RadianceImage) -> Vec<u8> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let magic = if c == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * c * 4);
    let row_len = w * c;
    for y in (0..h).rev() {
        for v in &img.data()[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<RadianceImage> {
    let mut reader = Cursor::new(bytes);
    let mut header_tokens = Vec::with_capacity(4);
    // Header is whitespace-separated: magic, width, height, scale; one
    // whitespace byte separates the scale from the raster.
    let mut token = String::new();
    while header_tokens.len() < 4 {
        let mut b = [0u8];
        reader
            .read_exact(&mut b)
            .map_err(|_| Error::format("PFM", "truncated header"))?;
        if b[0].is_ascii_whitespace() {
            if !token.is_empty() {
                header_tokens.push(std::mem::take(&mut token));
            }
        } else {
            token.push(b[0] as char);
        }
    }
    let channels = match header_tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format("PFM", format!("bad magic {other:?}"))),
    };
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format("PFM", format!("bad dimension {s:?}")))
    };
    let width = parse_dim(&header_tokens[1])?;
    let height = parse_dim(&header_tokens[2])?;
    let scale: f32 = header_tokens[3]
        .parse()
        .map_err(|_| Error::format("PFM", format!("bad scale {:?}", header_tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("PFM", "scale must be non-zero"));
    }
    let little_endian = scale < 0.0;

    let row_len = width * channels;
    let mut raster = Vec::new();
    reader.read_to_end(&mut raster).map_err(|e| Error::io("<pfm>", e))?;
    if raster.len() < width * height * channels * 4 {
        return Err(Error::format(
            "PFM",
            format!("raster holds {} bytes, need {}", raster.len(), width * height * channels * 4),
        ));
    }
    let mut data = vec![0f32; width * height * channels];
    for (file_row, chunk) in raster.chunks_exact(row_len * 4).take(height).enumerate() {
        let y = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let bytes = [b[0], b[1], b[2], b[3]];
            data[y * row_len + i] = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
        }
    }
    RadianceImage::new(width, height, channels, data)
}

pub fn write_pfm(path: &Path, img: &RadianceImage) -> Result<()> {
    atomic_write(path, &encode_pfm(img))
}

pub fn read_pfm(path: &Path) -> Result<RadianceImage> {
    decode_pfm(&read_bytes(path)?).map_err(|e| match e {
        Error::Format { format, reason } => Error::Format {
            format,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::format("PNG", e.to_string())
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

struct DecodedPng {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: Vec<u8>,
}

fn decode_png<R: BufRead + std::io::Seek>(reader: R) -> Result<DecodedPng> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG", "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data: buf,
    })
}

pub fn encode_png8(img: &LdrImage) -> Result<Vec<u8>> {
    encode_png(img.width(), img.height(), png::ColorType::Rgb, png::BitDepth::Eight, img.data())
}

/// Decodes an 8-bit PNG; grayscale is replicated and alpha dropped.
pub fn decode_png8(bytes: &[u8]) -> Result<LdrImage> {
    let png = decode_png(Cursor::new(bytes))?;
    if png.depth != png::BitDepth::Eight {
        return Err(Error::format("PNG", format!("expected 8-bit samples, got {:?}", png.depth)));
    }
    let data = match png.color {
        png::ColorType::Rgb => png.data,
        png::ColorType::Rgba => png.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => png.data.iter().flat_map(|&g| [g, g, g]).collect(),
        other => return Err(Error::format("PNG", format!("unsupported color type {other:?}"))),
    };
    LdrImage::new(png.width, png.height, data)
}

pub fn write_png8(path: &Path, img: &LdrImage) -> Result<()> {
    atomic_write(path, &encode_png8(img)?)
}

pub fn read_png8(path: &Path) -> Result<LdrImage> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let bytes = {
        let mut v = Vec::new();
        BufReader::new(f).read_to_end(&mut v).map_err(|e| Error::io(path, e))?;
        v
    };
    decode_png8(&bytes)
}

/// A 16-bit PNG raster: one channel (mosaic / depth) or three (RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Png16 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u16>,
}

pub fn encode_png16(img: &Png16) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::invalid(format!("16-bit PNG needs 1 or 3 channels, got {c}"))),
    };
    if img.data.len() != img.width * img.height * img.channels {
        return Err(Error::dims(
            format!("{}", img.width * img.height * img.channels),
            format!("{}", img.data.len()),
        ));
    }
    let bytes: Vec<u8> = img.data.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode_png(img.width, img.height, color, png::BitDepth::Sixteen, &bytes)
}

pub fn decode_png16(bytes: &[u8]) -> Result<Png16> {
    let png = decode_png(Cursor::new(bytes))?;
    if png.depth != png::BitDepth::Sixteen {
        return Err(Error::format("PNG", format!("expected 16-bit samples, got {:?}", png.depth)));
    }
    let channels = match png.color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::format("PNG", format!("unsupported 16-bit color type {other:?}"))),
    };
    let data = png
        .data
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok(Png16 {
        width: png.width,
        height: png.height,
        channels,
        data,
    })
}

pub fn write_png16(path: &Path, img: &Png16) -> Result<()> {
    atomic_write(path, &encode_png16(img)?)
}

pub fn read_png16(path: &Path) -> Result<Png16> {
    decode_png16(&read_bytes(path)?)
}
