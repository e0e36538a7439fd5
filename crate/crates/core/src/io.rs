//! File formats. Three containers cover everything the tool reads and
//! writes besides structured reports:
//!
//! - kernels: plain text, first line `K K`, then `K` rows of `K` decimals;
//! - images for viewing: binary portable graymap/pixmap (`P5`/`P6`,
//!   8-bit, maxval 255), planar tensors interleaved on disk;
//! - images for lossless round-trips: `PFMX C H W` header plus
//!   whitespace-separated decimals.
//!
//! Floats are printed with Rust's shortest-round-trip formatting, so text
//! containers reparse to the exact same bits. `read_image` dispatches on
//! the magic token and accepts any of the three image layouts.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Write a `K x K` kernel as diff-able text.
pub fn write_kernel<T: Scalar>(path: &Path, kernel: &Tensor<T>) -> Result<()> {
    let (kh, kw) = kernel.dims2();
    let mut out = String::new();
    out.push_str(&format!("{kh} {kw}\n"));
    for i in 0..kh {
        let row: Vec<String> = (0..kw).map(|j| format!("{}", kernel.data()[i * kw + j].as_f64())).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a kernel written by [`write_kernel`].
pub fn read_kernel<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, "empty kernel file"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(Error::parse(path, format!("line 1: expected 'K K', got {header:?}")));
    }
    let kh: usize = dims[0].parse().map_err(|_| Error::parse(path, format!("line 1: bad size {:?}", dims[0])))?;
    let kw: usize = dims[1].parse().map_err(|_| Error::parse(path, format!("line 1: bad size {:?}", dims[1])))?;
    if kh == 0 || kw == 0 {
        return Err(Error::parse(path, format!("line 1: zero kernel size {kh}x{kw}")));
    }
    let mut data = Vec::with_capacity(kh * kw);
    for (ln, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: bad number {tok:?}", ln + 1)))?;
            data.push(T::of_f64(v));
        }
    }
    if data.len() != kh * kw {
        return Err(Error::parse(path, format!("expected {} values, found {}", kh * kw, data.len())));
    }
    Ok(Tensor::from_vec(&[kh, kw], data))
}

/// Write a `[c, h, w]` image in `[0, 1]` as an 8-bit graymap (1 channel)
/// or pixmap (3 channels); values are scaled by 255, rounded, and clamped.
pub fn write_image_8bit<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (c, h, w) = img.dims3();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Config(format!("8-bit containers hold 1 or 3 channels, not {c}"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "{magic}\n{w} {h}\n255\n").map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::with_capacity(c * h * w);
    for i in 0..h {
        for j in 0..w {
            for ci in 0..c {
                let v = img.data()[(ci * h + i) * w + j].as_f64();
                bytes.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Write a `[c, h, w]` image losslessly as decimal text.
pub fn write_image_float<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let (c, h, w) = img.dims3();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "PFMX {c} {h} {w}").map_err(|e| Error::io(path, e))?;
    for (i, v) in img.data().iter().enumerate() {
        let sep = if i % w == 0 { '\n' } else { ' ' };
        write!(out, "{sep}{}", v.as_f64()).map_err(|e| Error::io(path, e))?;
    }
    writeln!(out).map_err(|e| Error::io(path, e))
}

/// Read any of the three image containers, dispatching on the magic token.
pub fn read_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut raw = Vec::new();
    File::open(path).map_err(|e| Error::io(path, e))?.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    match raw.get(..2) {
        Some(b"P5") => read_pnm(path, &raw, 1),
        Some(b"P6") => read_pnm(path, &raw, 3),
        Some(b"PF") if raw.starts_with(b"PFMX") => read_pfmx(path, &raw),
        _ => Err(Error::parse(path, "unrecognized image magic (expected P5, P6, or PFMX)")),
    }
}

/// Parse the ASCII header of a binary graymap/pixmap: magic, width,
/// height, maxval, each optionally preceded by `#` comment lines, followed
/// by a single whitespace byte and the raster.
fn read_pnm<T: Scalar>(path: &Path, raw: &[u8], c: usize) -> Result<Tensor<T>> {
    let mut pos = 2; // past the magic
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < raw.len() && raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < raw.len() && raw[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, "truncated header"));
        }
        let txt = std::str::from_utf8(&raw[start..pos]).expect("digits are utf8");
        *field = txt.parse().map_err(|_| Error::parse(path, format!("bad header field {txt:?}")))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::parse(path, format!("unsupported maxval {maxval} (only 255)")));
    }
    if w == 0 || h == 0 {
        return Err(Error::parse(path, format!("degenerate size {w}x{h}")));
    }
    pos += 1; // the single whitespace after maxval
    let need = c * h * w;
    let raster = raw.get(pos..pos + need).ok_or_else(|| {
        Error::parse(path, format!("raster truncated: need {need} bytes, have {}", raw.len().saturating_sub(pos)))
    })?;
    let mut img = Tensor::zeros(&[c, h, w]);
    for i in 0..h {
        for j in 0..w {
            for ci in 0..c {
                let b = raster[(i * w + j) * c + ci];
                img.data_mut()[(ci * h + i) * w + j] = T::of_f64(b as f64 / 255.0);
            }
        }
    }
    Ok(img)
}

fn read_pfmx<T: Scalar>(path: &Path, raw: &[u8]) -> Result<Tensor<T>> {
    let text = std::str::from_utf8(raw).map_err(|_| Error::parse(path, "float container is not utf8"))?;
    let mut toks = text.split_whitespace();
    match toks.next() {
        Some("PFMX") => {}
        other => return Err(Error::parse(path, format!("bad magic {other:?}"))),
    }
    let mut dim = |name: &str| -> Result<usize> {
        toks.next()
            .ok_or_else(|| Error::parse(path, format!("missing {name} in header")))?
            .parse()
            .map_err(|_| Error::parse(path, format!("bad {name} in header")))
    };
    let (c, h, w) = (dim("channel count")?, dim("height")?, dim("width")?);
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::parse(path, format!("degenerate shape {c}x{h}x{w}")));
    }
    let mut data = Vec::with_capacity(c * h * w);
    for tok in toks {
        let v: f64 = tok.parse().map_err(|_| Error::parse(path, format!("bad number {tok:?}")))?;
        data.push(T::of_f64(v));
    }
    if data.len() != c * h * w {
        return Err(Error::parse(path, format!("expected {} values, found {}", c * h * w, data.len())));
    }
    Ok(Tensor::from_vec(&[c, h, w], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("create temp dir")
    }

    #[test]
    fn kernel_text_round_trips_exactly() {
        let dir = tmp();
        let path = dir.path().join("k.txt");
        let k = rng::uniform_tensor::<f64>(&mut rng::stream_rng(1, 0), &[5, 5], 0.0, 0.2);
        write_kernel(&path, &k).unwrap();
        let back: Tensor<f64> = read_kernel(&path).unwrap();
        assert_eq!(back.shape(), &[5, 5]);
        assert_eq!(back.data(), k.data(), "shortest-round-trip printing must reparse to the same bits");
    }

    #[test]
    fn kernel_round_trip_is_exact_in_f32_too() {
        let dir = tmp();
        let path = dir.path().join("k.txt");
        let k = rng::uniform_tensor::<f32>(&mut rng::stream_rng(2, 0), &[3, 3], 0.0, 1.0);
        write_kernel(&path, &k).unwrap();
        let back: Tensor<f32> = read_kernel(&path).unwrap();
        assert_eq!(back.data(), k.data());
    }

    #[test]
    fn graymap_round_trip_stays_within_quantization() {
        let dir = tmp();
        let path = dir.path().join("img.pgm");
        let img = rng::uniform_tensor::<f64>(&mut rng::stream_rng(3, 0), &[1, 9, 13], 0.0, 1.0);
        write_image_8bit(&path, &img).unwrap();
        let back: Tensor<f64> = read_image(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
        // Exact endpoints survive.
        let flat = Tensor::from_vec(&[1, 1, 2], vec![0.0, 1.0]);
        write_image_8bit(&path, &flat).unwrap();
        let back: Tensor<f64> = read_image(&path).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0]);
    }

    #[test]
    fn pixmap_handles_three_channels() {
        let dir = tmp();
        let path = dir.path().join("img.ppm");
        let img = rng::uniform_tensor::<f32>(&mut rng::stream_rng(4, 0), &[3, 6, 5], 0.0, 1.0);
        write_image_8bit(&path, &img).unwrap();
        let back: Tensor<f32> = read_image(&path).unwrap();
        assert_eq!(back.shape(), &[3, 6, 5]);
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn eight_bit_writes_are_deterministic() {
        let dir = tmp();
        let (p1, p2) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
        let img = rng::uniform_tensor::<f32>(&mut rng::stream_rng(5, 0), &[1, 7, 7], 0.0, 1.0);
        write_image_8bit(&p1, &img).unwrap();
        write_image_8bit(&p2, &img).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn float_container_round_trips_bitwise() {
        let dir = tmp();
        let path = dir.path().join("img.pfmx");
        let img = rng::uniform_tensor::<f64>(&mut rng::stream_rng(6, 0), &[2, 4, 3], -1.0, 2.0);
        write_image_float(&path, &img).unwrap();
        let back: Tensor<f64> = read_image(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn comments_in_graymap_headers_are_skipped() {
        let dir = tmp();
        let path = dir.path().join("img.pgm");
        let mut bytes = b"P5\n# a comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[0u8, 255u8]);
        std::fs::write(&path, bytes).unwrap();
        let img: Tensor<f64> = read_image(&path).unwrap();
        assert_eq!(img.shape(), &[1, 1, 2]);
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn malformed_files_name_the_problem() {
        let dir = tmp();
        let path = dir.path().join("bad");
        std::fs::write(&path, "not an image").unwrap();
        let err = read_image::<f64>(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "got {err:?}");

        std::fs::write(&path, "2 2\n0.1 0.2\n0.3\n").unwrap();
        let err = read_kernel::<f64>(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 4 values"), "unhelpful message: {msg}");

        std::fs::write(&path, "2 2\n0.1 oops\n0.3 0.4\n").unwrap();
        let msg = read_kernel::<f64>(&path).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("oops"), "unhelpful message: {msg}");

        std::fs::write(&path, "PFMX 1 2 2\n0.5 0.5 0.5\n").unwrap();
        let msg = read_image::<f64>(&path).unwrap_err().to_string();
        assert!(msg.contains("expected 4 values, found 3"), "unhelpful message: {msg}");

        let missing = dir.path().join("nope.pgm");
        assert!(matches!(read_image::<f64>(&missing).unwrap_err(), Error::Io { .. }));
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let dir = tmp();
        let path = dir.path().join("img.pgm");
        let mut bytes = b"P5\n3 3\n255\n".to_vec();
        bytes.extend_from_slice(&[7u8; 5]); // need 9
        std::fs::write(&path, bytes).unwrap();
        let msg = read_image::<f64>(&path).unwrap_err().to_string();
        assert!(msg.contains("raster truncated"), "unhelpful message: {msg}");
    }
}
