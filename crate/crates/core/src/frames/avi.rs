//! Minimal AVI (RIFF) container support: Motion-JPEG and uncompressed
//! 24-bit video streams, read with seeks so only the sampled frames are
//! decoded. OpenDML `AVIX` extensions are followed; `idx1` is ignored and
//! the `movi` list is walked directly.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use image::RgbImage;

use super::source::{select_indices, Sampled};
use super::SamplingPolicy;
use crate::error::{D3Error, Result};

/// Prefix of the decode error raised for streams this reader cannot handle;
/// callers fall back to ffmpeg on it.
pub const UNSUPPORTED_CODEC: &str = "unsupported AVI codec";

const MJPEG_FOURCCS: [&[u8; 4]; 6] = [b"MJPG", b"mjpg", b"AVRn", b"IJPG", b"JPEG", b"dmb1"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Codec {
    Mjpeg,
    /// BI_RGB, 24 bits per pixel, bottom-up unless the height is negative.
    Raw24 { width: u32, height: i32 },
}

#[derive(Debug)]
struct AviIndex {
    fps: f64,
    codec: Codec,
    /// (data offset, size) of every video chunk in presentation order.
    chunks: Vec<(u64, u32)>,
}

struct Reader<R> {
    inner: R,
    path: std::path::PathBuf,
}

impl<R: Read + Seek> Reader<R> {
    fn err(&self, reason: impl Into<String>) -> D3Error {
        D3Error::DecodeError {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    fn fourcc(&mut self) -> Result<[u8; 4]> {
        let mut b = [0u8; 4];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| self.err(format!("truncated file: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.fourcc()?))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| self.err(format!("truncated chunk: {e}")))?;
        Ok(b)
    }

    fn seek(&mut self, pos: u64) -> Result<()> {
        self.inner
            .seek(SeekFrom::Start(pos))
            .map_err(|e| D3Error::io(&self.path, e))?;
        Ok(())
    }
}

fn le32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

#[derive(Default)]
struct Header {
    micros_per_frame: u32,
    video_stream: Option<usize>,
    rate: Option<(u32, u32)>,
    handler: [u8; 4],
    format: Option<Vec<u8>>,
}

fn parse_hdrl<R: Read + Seek>(r: &mut Reader<R>, end: u64, h: &mut Header) -> Result<()> {
    let mut stream = 0usize;
    let mut pos = r.inner.stream_position().map_err(|e| D3Error::io(&r.path, e))?;
    while pos + 8 <= end {
        r.seek(pos)?;
        let id = r.fourcc()?;
        let size = r.u32()?;
        let data = pos + 8;
        match &id {
            b"avih" => {
                let b = r.bytes(size.min(56) as usize)?;
                if b.len() >= 4 {
                    h.micros_per_frame = le32(&b, 0);
                }
            }
            b"LIST" => {
                let kind = r.fourcc()?;
                if &kind == b"strl" {
                    parse_strl(r, data + u64::from(size), stream, h)?;
                    stream += 1;
                }
            }
            _ => {}
        }
        pos = data + u64::from(size) + u64::from(size & 1);
    }
    Ok(())
}

fn parse_strl<R: Read + Seek>(r: &mut Reader<R>, end: u64, stream: usize, h: &mut Header) -> Result<()> {
    let mut pos = r.inner.stream_position().map_err(|e| D3Error::io(&r.path, e))?;
    let mut is_video = false;
    while pos + 8 <= end {
        r.seek(pos)?;
        let id = r.fourcc()?;
        let size = r.u32()?;
        match &id {
            b"strh" if size >= 28 => {
                let b = r.bytes(size.min(56) as usize)?;
                if &b[0..4] == b"vids" && h.video_stream.is_none() {
                    is_video = true;
                    h.video_stream = Some(stream);
                    h.handler.copy_from_slice(&b[4..8]);
                    let (scale, rate) = (le32(&b, 20), le32(&b, 24));
                    if scale > 0 && rate > 0 {
                        h.rate = Some((rate, scale));
                    }
                }
            }
            b"strf" if is_video => {
                h.format = Some(r.bytes(size as usize)?);
            }
            _ => {}
        }
        pos += 8 + u64::from(size) + u64::from(size & 1);
    }
    Ok(())
}

fn collect_movi<R: Read + Seek>(
    r: &mut Reader<R>,
    start: u64,
    end: u64,
    tag: &[u8; 2],
    chunks: &mut Vec<(u64, u32)>,
) -> Result<()> {
    let mut pos = start;
    while pos + 8 <= end {
        r.seek(pos)?;
        let id = r.fourcc()?;
        let size = r.u32()?;
        if &id == b"LIST" {
            // `rec ` groups; descend.
            collect_movi(r, pos + 12, pos + 8 + u64::from(size), tag, chunks)?;
        } else if &id[0..2] == tag && (&id[2..4] == b"dc" || &id[2..4] == b"db") {
            chunks.push((pos + 8, size));
        }
        pos += 8 + u64::from(size) + u64::from(size & 1);
    }
    Ok(())
}

fn index<R: Read + Seek>(r: &mut Reader<R>) -> Result<AviIndex> {
    let file_len = r
        .inner
        .seek(SeekFrom::End(0))
        .map_err(|e| D3Error::io(&r.path, e))?;
    r.seek(0)?;
    if &r.fourcc()? != b"RIFF" {
        return Err(r.err("not a RIFF file"));
    }
    let mut header = Header::default();
    let mut movi_lists = Vec::new();
    let mut riff_pos = 0u64;
    // Top level: RIFF 'AVI ' followed by optional RIFF 'AVIX' extensions.
    while riff_pos + 12 <= file_len {
        r.seek(riff_pos)?;
        if &r.fourcc()? != b"RIFF" {
            break;
        }
        let riff_size = r.u32()?;
        let form = r.fourcc()?;
        if riff_pos == 0 && &form != b"AVI " {
            return Err(r.err("RIFF file is not an AVI"));
        }
        let riff_end = (riff_pos + 8 + u64::from(riff_size)).min(file_len);
        let mut pos = riff_pos + 12;
        while pos + 8 <= riff_end {
            r.seek(pos)?;
            let id = r.fourcc()?;
            let size = r.u32()?;
            let end = (pos + 8 + u64::from(size)).min(riff_end);
            if &id == b"LIST" {
                match &r.fourcc()? {
                    b"hdrl" => parse_hdrl(r, end, &mut header)?,
                    b"movi" => movi_lists.push((pos + 12, end)),
                    _ => {}
                }
            }
            pos += 8 + u64::from(size) + u64::from(size & 1);
        }
        riff_pos = riff_end + (riff_end & 1);
    }

    let stream = header
        .video_stream
        .ok_or_else(|| r.err("no video stream"))?;
    let format = header.format.take().ok_or_else(|| r.err("video stream has no format"))?;
    if format.len() < 20 {
        return Err(r.err("video format header too short"));
    }
    let compression: [u8; 4] = format[16..20].try_into().unwrap_or_default();
    let codec = if MJPEG_FOURCCS.iter().any(|f| **f == compression || **f == header.handler) {
        Codec::Mjpeg
    } else if compression == [0; 4] && u16::from_le_bytes([format[14], format[15]]) == 24 {
        Codec::Raw24 {
            width: le32(&format, 4),
            height: le32(&format, 8) as i32,
        }
    } else {
        return Err(r.err(format!(
            "{UNSUPPORTED_CODEC} {:?}",
            String::from_utf8_lossy(&compression)
        )));
    };
    let fps = match header.rate {
        Some((rate, scale)) => f64::from(rate) / f64::from(scale),
        None if header.micros_per_frame > 0 => 1e6 / f64::from(header.micros_per_frame),
        None => return Err(r.err("stream declares no frame rate")),
    };

    let tag = format!("{stream:02}");
    let tag: [u8; 2] = tag.as_bytes()[..2].try_into().unwrap_or(*b"00");
    let mut chunks = Vec::new();
    for (start, end) in movi_lists {
        collect_movi(r, start, end, &tag, &mut chunks)?;
    }
    Ok(AviIndex { fps, codec, chunks })
}

fn decode_raw24(bytes: &[u8], width: u32, height: i32) -> Option<RgbImage> {
    let h = height.unsigned_abs();
    let stride = (width as usize * 3).div_ceil(4) * 4;
    if bytes.len() < stride * h as usize {
        return None;
    }
    Some(RgbImage::from_fn(width, h, |x, y| {
        let row = if height > 0 { h - 1 - y } else { y } as usize;
        let at = row * stride + x as usize * 3;
        image::Rgb([bytes[at + 2], bytes[at + 1], bytes[at]])
    }))
}

pub(super) fn sample_avi(path: &Path, policy: &SamplingPolicy) -> Result<Sampled> {
    let file = File::open(path).map_err(|e| D3Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: path.to_path_buf(),
    };
    let idx = index(&mut r)?;
    if idx.chunks.is_empty() {
        return Err(D3Error::EmptySource(path.to_path_buf()));
    }
    let n = idx.chunks.len();
    let ts: Vec<f64> = (0..n).map(|i| i as f64 / idx.fps).collect();
    let indices = select_indices(&ts, n as f64 / idx.fps, policy);
    let mut frames = Vec::with_capacity(indices.len());
    for &i in &indices {
        // Zero-length chunks are dropped frames: repeat the last real one.
        let Some(&(offset, size)) = idx.chunks[..=i].iter().rev().find(|c| c.1 > 0) else {
            return Err(r.err(format!("frame {i} has no data")));
        };
        r.seek(offset)?;
        let bytes = r.bytes(size as usize)?;
        let frame = match idx.codec {
            Codec::Mjpeg => super::decode_image_bytes(&bytes, path)?,
            Codec::Raw24 { width, height } => decode_raw24(&bytes, width, height)
                .ok_or_else(|| r.err(format!("frame {i} is shorter than its declared size")))?,
        };
        frames.push(frame);
    }
    Ok((frames, idx.fps, Some(indices)))
}

/// Writes `frames` as a Motion-JPEG AVI at `fps` frames per second.
pub fn write_mjpeg_avi(path: &Path, frames: &[RgbImage], fps: u32, quality: u8) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| D3Error::ConfigError("cannot write an AVI without frames".into()))?;
    let (w, h) = first.dimensions();
    if frames.iter().any(|f| f.dimensions() != (w, h)) {
        return Err(D3Error::ShapeError("all AVI frames must share one size".into()));
    }
    if fps == 0 {
        return Err(D3Error::ConfigError("fps must be positive".into()));
    }
    let mut jpegs = Vec::with_capacity(frames.len());
    for f in frames {
        let mut buf = Vec::new();
        image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality).encode_image(f)?;
        jpegs.push(buf);
    }
    let n = frames.len() as u32;
    let max_chunk = jpegs.iter().map(Vec::len).max().unwrap_or(0) as u32;

    let mut avih = Vec::with_capacity(56);
    for v in [1_000_000 / fps, max_chunk * fps, 0, 0x10, n, 0, 1, max_chunk, w, h, 0, 0, 0, 0] {
        avih.extend_from_slice(&v.to_le_bytes());
    }
    let mut strh = Vec::with_capacity(56);
    strh.extend_from_slice(b"vidsMJPG");
    for v in [0u32, 0, 0, 1, fps, 0, n, max_chunk, u32::MAX, 0] {
        strh.extend_from_slice(&v.to_le_bytes());
    }
    for v in [0u16, 0, w as u16, h as u16] {
        strh.extend_from_slice(&v.to_le_bytes());
    }
    let mut strf = Vec::with_capacity(40);
    strf.extend_from_slice(&40u32.to_le_bytes());
    strf.extend_from_slice(&w.to_le_bytes());
    strf.extend_from_slice(&h.to_le_bytes());
    strf.extend_from_slice(&1u16.to_le_bytes());
    strf.extend_from_slice(&24u16.to_le_bytes());
    strf.extend_from_slice(b"MJPG");
    for v in [w * h * 3, 0, 0, 0, 0] {
        strf.extend_from_slice(&v.to_le_bytes());
    }

    fn chunk(out: &mut Vec<u8>, id: &[u8; 4], data: &[u8]) {
        out.extend_from_slice(id);
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        if data.len() % 2 == 1 {
            out.push(0);
        }
    }
    fn list(out: &mut Vec<u8>, kind: &[u8; 4], body: &[u8]) {
        out.extend_from_slice(b"LIST");
        out.extend_from_slice(&(body.len() as u32 + 4).to_le_bytes());
        out.extend_from_slice(kind);
        out.extend_from_slice(body);
    }

    let mut strl = Vec::new();
    chunk(&mut strl, b"strh", &strh);
    chunk(&mut strl, b"strf", &strf);
    let mut hdrl = Vec::new();
    chunk(&mut hdrl, b"avih", &avih);
    list(&mut hdrl, b"strl", &strl);

    let mut movi = Vec::new();
    let mut idx1 = Vec::new();
    for j in &jpegs {
        // Offsets are relative to the 'movi' fourcc.
        let offset = movi.len() as u32 + 4;
        chunk(&mut movi, b"00dc", j);
        idx1.extend_from_slice(b"00dc");
        for v in [0x10u32, offset, j.len() as u32] {
            idx1.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut body = Vec::new();
    body.extend_from_slice(b"AVI ");
    list(&mut body, b"hdrl", &hdrl);
    list(&mut body, b"movi", &movi);
    chunk(&mut body, b"idx1", &idx1);

    let mut file = File::create(path).map_err(|e| D3Error::io(path, e))?;
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    file.write_all(&out).map_err(|e| D3Error::io(path, e))
}
