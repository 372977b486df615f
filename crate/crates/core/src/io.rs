//! Binary PGM (`P5`) frame sequences, one file per frame.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frame::{Frame, VideoSequence};

/// Bit depths accepted by [`write_sequence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::UnsupportedBitDepth(other)),
        }
    }

    pub fn max_value(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.pgm")
}

/// Decodes a `P5` image, normalizing samples by the header's maxval.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Frame> {
    let malformed = |reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments between header tokens
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| malformed("bad header"))?);
    }
    if fields[0] != "P5" {
        return Err(malformed("not a binary graymap (expected P5)"));
    }
    let parse = |s: &str| s.parse::<u32>().map_err(|_| malformed("bad header number"));
    let width = parse(fields[1])? as usize;
    let height = parse(fields[2])? as usize;
    let maxval = parse(fields[3])?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedBitDepth(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let needed = width * height * bytes_per_sample;
    if bytes.len() < pos + needed {
        return Err(malformed("truncated raster"));
    }
    let raster = &bytes[pos..pos + needed];
    let scale = maxval as f64;
    let data: Vec<f64> = if bytes_per_sample == 1 {
        raster.iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0))
            .collect()
    };
    Frame::from_intensities(height, width, data)
}

pub fn encode_pgm(frame: &Frame, depth: BitDepth) -> Vec<u8> {
    let maxval = depth.max_value();
    let mut out = format!("P5\n{} {}\n{}\n", frame.width(), frame.height(), maxval).into_bytes();
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
    match depth {
        BitDepth::Eight => out.extend(frame.data().iter().map(|&v| quantize(v) as u8)),
        BitDepth::Sixteen => {
            for &v in frame.data() {
                out.extend_from_slice(&(quantize(v) as u16).to_be_bytes());
            }
        }
    }
    out
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn write_frame(frame: &Frame, path: &Path, depth: BitDepth) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_pgm(frame, depth))
        .map_err(|e| Error::io(path, e))
}

/// Lists `*.pgm` files of a directory in lexicographic order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pgm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if path.is_file() && is_pgm {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn read_sequence(dir: &Path) -> Result<VideoSequence> {
    let paths = list_frames(dir)?;
    if paths.is_empty() {
        return Err(Error::NoFrames(dir.to_path_buf()));
    }
    let frames = paths
        .iter()
        .map(|p| read_frame(p))
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames)
}

/// Writes `frame_00000.pgm`, `frame_00001.pgm`, ... into `dir`, creating it if needed.
pub fn write_sequence(seq: &VideoSequence, dir: &Path, bit_depth: u32) -> Result<()> {
    let depth = BitDepth::from_bits(bit_depth)?;
    write_frames(seq.frames(), dir, depth)
}

pub fn write_frames(frames: &[Frame], dir: &Path, depth: BitDepth) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in frames.iter().enumerate() {
        write_frame(frame, &dir.join(frame_file_name(i)), depth)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_of(value: f64, n: usize) -> VideoSequence {
        VideoSequence::new(vec![Frame::filled(8, 8, value); n]).unwrap()
    }

    #[test]
    fn eight_bit_full_scale_reads_as_one() {
        let dir = tempfile::tempdir().unwrap();
        write_sequence(&seq_of(1.0, 3), dir.path(), 8).unwrap();
        let back = read_sequence(dir.path()).unwrap();
        assert_eq!(back.frame_count(), 3);
        assert!(back.iter().all(|f| f.data().iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn sixteen_bit_normalization() {
        let mut bytes = b"P5\n8 8\n65535\n".to_vec();
        for _ in 0..64 {
            bytes.extend_from_slice(&32768u16.to_be_bytes());
        }
        let f = decode_pgm(&bytes, Path::new("x.pgm")).unwrap();
        assert!((f.get(3, 3) - 32768.0 / 65535.0).abs() < 1e-15);
        assert!((f.get(0, 0) - 0.50000763).abs() < 1e-8);
    }

    #[test]
    fn half_gray_quantizes_to_128() {
        let f = Frame::filled(8, 8, 0.5);
        let bytes = encode_pgm(&f, BitDepth::Eight);
        assert_eq!(*bytes.last().unwrap(), 128);
        let back = decode_pgm(&bytes, Path::new("x.pgm")).unwrap();
        assert_eq!(back.get(0, 0), 128.0 / 255.0);
        let zero = decode_pgm(&encode_pgm(&Frame::zeros(8, 8), BitDepth::Eight), Path::new("z")).unwrap();
        assert_eq!(zero.get(7, 7), 0.0);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let f = decode_pgm(&bytes, Path::new("c.pgm")).unwrap();
        assert_eq!(f.data(), &[0.0, 1.0]);
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_sequence(dir.path()), Err(Error::NoFrames(_))));
        assert!(matches!(
            read_sequence(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
        assert!(matches!(
            write_sequence(&seq_of(0.5, 1), dir.path(), 12),
            Err(Error::UnsupportedBitDepth(12))
        ));
        write_frame(&Frame::zeros(8, 8), &dir.path().join("a.pgm"), BitDepth::Eight).unwrap();
        write_frame(&Frame::zeros(8, 9), &dir.path().join("b.pgm"), BitDepth::Eight).unwrap();
        assert!(matches!(
            read_sequence(dir.path()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n70000\n\0\0", Path::new("d")),
            Err(Error::UnsupportedBitDepth(70000))
        ));
    }

    #[test]
    fn lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        write_frame(&Frame::filled(8, 8, 1.0), &dir.path().join("b.pgm"), BitDepth::Eight).unwrap();
        write_frame(&Frame::zeros(8, 8), &dir.path().join("a.pgm"), BitDepth::Eight).unwrap();
        let seq = read_sequence(dir.path()).unwrap();
        assert_eq!(seq.frames()[0].get(0, 0), 0.0);
        assert_eq!(seq.frames()[1].get(0, 0), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn round_trip_within_quantization(
            values in proptest::collection::vec(0.0f64..=1.0, 64),
            sixteen in proptest::bool::ANY,
        ) {
            let depth = if sixteen { BitDepth::Sixteen } else { BitDepth::Eight };
            let f = Frame::from_intensities(8, 8, values).unwrap();
            let back = decode_pgm(&encode_pgm(&f, depth), Path::new("p")).unwrap();
            let tol = 1.0 / depth.max_value() as f64;
            for (a, b) in f.data().iter().zip(back.data()) {
                proptest::prop_assert!((a - b).abs() <= tol);
            }
        }
    }
}
