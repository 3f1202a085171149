//! Frame directories, transform sidecars and atomic report writes.
//!
//! A frame directory holds `000001.png` (or `.ppm`), `000002.png`, ... with
//! contiguous numbering from 1 and uniform dimensions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};
use crate::geometry::AffineTransform;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    #[default]
    Png,
    /// Binary PPM (P6).
    Ppm,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Png => "png",
            FrameFormat::Ppm => "ppm",
        }
    }

}

/// File name of 0-based frame `index`.
pub fn frame_file_name(index: usize, format: FrameFormat) -> String {
    format!("{:06}.{}", index + 1, format.extension())
}

/// Sorted frame files of a directory, checked for contiguous numbering.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("reading directory {}", dir.display()), e))?;
    let mut numbered = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("reading directory {}", dir.display()), e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("png" | "ppm")) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        if stem.len() >= 6 && stem.bytes().all(|b| b.is_ascii_digit()) {
            let n: usize = stem.parse().map_err(|_| Error::invalid(format!("bad frame name {}", path.display())))?;
            numbered.push((n, path));
        }
    }
    numbered.sort();
    if numbered.is_empty() {
        return Err(Error::invalid(format!("no frames (000001.png or 000001.ppm ...) in {}", dir.display())));
    }
    for (i, (n, path)) in numbered.iter().enumerate() {
        if *n != i + 1 {
            return Err(Error::invalid(format!(
                "frame numbering not contiguous in {}: expected {:06}, found {}",
                dir.display(),
                i + 1,
                path.display()
            ))
            .at_frame(i));
        }
    }
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_rgb8();
    Frame::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw())
}

/// Read every frame of a directory; errors carry the 0-based frame index.
pub fn read_frame_dir(dir: &Path) -> Result<FrameSequence> {
    let files = list_frame_files(dir)?;
    let frames: Vec<Frame> = files
        .par_iter()
        .enumerate()
        .map(|(i, p)| read_frame(p).map_err(|e| e.at_frame(i)))
        .collect::<Result<_>>()?;
    let dims = frames[0].dims();
    if let Some(i) = frames.iter().position(|f| f.dims() != dims) {
        let f = &frames[i];
        return Err(Error::dims(format!("{}x{}", dims.0, dims.1), format!("{}x{}", f.height(), f.width())).at_frame(i));
    }
    FrameSequence::new(frames)
}

pub fn write_frame(frame: &Frame, path: &Path, format: FrameFormat) -> Result<()> {
    let (h, w) = frame.dims();
    let err = |message: String| Error::Image {
        path: path.to_path_buf(),
        message,
    };
    match format {
        FrameFormat::Png => RgbImage::from_raw(w as u32, h as u32, frame.to_rgb8())
            .expect("buffer sized from frame")
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| err(e.to_string())),
        FrameFormat::Ppm => {
            let mut bytes = Vec::new();
            PnmEncoder::new(&mut bytes)
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                .write_image(&frame.to_rgb8(), w as u32, h as u32, ExtendedColorType::Rgb8)
                .map_err(|e| err(e.to_string()))?;
            fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
        }
    }
}

/// Write a sequence as a frame directory, creating it if needed. Existing
/// frame files are removed first so the directory holds exactly `seq`.
pub fn write_frame_dir(seq: &FrameSequence, dir: &Path, format: FrameFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    if let Ok(old) = list_frame_files(dir) {
        for p in old {
            fs::remove_file(&p).map_err(|e| Error::io(format!("removing {}", p.display()), e))?;
        }
    }
    seq.frames()
        .par_iter()
        .enumerate()
        .try_for_each(|(i, f)| write_frame(f, &dir.join(frame_file_name(i, format)), format).map_err(|e| e.at_frame(i)))
}

/// One transform per line: six space-separated coefficients.
pub fn format_sidecar(ts: &[AffineTransform]) -> String {
    let mut s = String::new();
    for t in ts {
        let line: Vec<String> = t.coeffs.iter().map(|c| format!("{c:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_sidecar(text: &str) -> Result<Vec<AffineTransform>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("sidecar line {}: {e}", n + 1)))?;
            let coeffs: [f64; 6] = vals
                .try_into()
                .map_err(|v: Vec<f64>| Error::invalid(format!("sidecar line {}: {} values, expected 6", n + 1, v.len())))?;
            AffineTransform::new(coeffs)
        })
        .collect()
}

pub fn write_sidecar(ts: &[AffineTransform], path: &Path) -> Result<()> {
    write_atomic(path, format_sidecar(ts).as_bytes())
}

pub fn read_sidecar(path: &Path) -> Result<Vec<AffineTransform>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_sidecar(&text)
}

/// Write through a sibling temporary file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).ok_or_else(|| Error::invalid(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(bytes).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    f.sync_all().map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(format!("serializing report: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise(h: usize, w: usize, seed: u64) -> Frame {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    #[test]
    fn round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::new((0..3).map(|s| noise(9, 13, s)).collect()).unwrap();
        for fmt in [FrameFormat::Png, FrameFormat::Ppm] {
            let d = dir.path().join(fmt.extension());
            write_frame_dir(&seq, &d, fmt).unwrap();
            let back = read_frame_dir(&d).unwrap();
            for (a, b) in back.iter().zip(seq.iter()) {
                assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
            }
        }
        let ppm = fs::read(dir.path().join("ppm/000001.ppm")).unwrap();
        assert_eq!(&ppm[..2], b"P6");
    }

    #[test]
    fn gaps_and_corruption_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::new((0..3).map(|s| noise(8, 8, s)).collect()).unwrap();
        write_frame_dir(&seq, dir.path(), FrameFormat::Png).unwrap();
        fs::write(dir.path().join("000002.png"), b"not a png").unwrap();
        match read_frame_dir(dir.path()) {
            Err(Error::Frame { index, .. }) => assert_eq!(index, 1),
            e => panic!("{e:?}"),
        }
        fs::remove_file(dir.path().join("000002.png")).unwrap();
        assert!(matches!(read_frame_dir(dir.path()), Err(Error::Frame { index: 1, .. })));
        assert!(read_frame_dir(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn sidecar_round_trip_is_exact() {
        let ts = vec![AffineTransform::IDENTITY, AffineTransform::similarity_about((3.0, 4.0), 0.013, 1.01, 2.5, -1.25)];
        assert_eq!(parse_sidecar(&format_sidecar(&ts)).unwrap(), ts);
        assert!(parse_sidecar("1 2 3\n").is_err());
        assert!(parse_sidecar("1 2 3 4 5 x\n").is_err());
    }

    proptest! {
        #[test]
        fn png_round_trip_within_quantization(h in 2usize..12, w in 2usize..12, seed in 0u64..1000) {
            let dir = tempfile::tempdir().unwrap();
            let f = noise(h, w, seed);
            let p = dir.path().join("000001.png");
            write_frame(&f, &p, FrameFormat::Png).unwrap();
            let g = read_frame(&p).unwrap();
            prop_assert!(f.data().iter().zip(g.data()).all(|(a, b)| (a - b).abs() <= 1.0 / 255.0));
        }
    }
}
