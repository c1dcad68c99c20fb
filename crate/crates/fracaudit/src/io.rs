//! PNG decoding and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fracaudit_core::image::luma601;
use fracaudit_core::GrayImage;
use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{CliError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Converts any decoded image to 8-bit gray. Colour goes through Rec.601
/// luma; alpha is ignored.
pub fn to_gray(img: DynamicImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma601(p.0[0], p.0[1], p.0[2]))
            .collect(),
    };
    GrayImage::new(w, h, pixels).expect("decoded image dimensions are consistent")
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let img = image::load_from_memory(&bytes).map_err(|e| CliError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(to_gray(img))
}

pub fn encode_png(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(img.pixels(), img.width(), img.height(), ExtendedColorType::L8)
        .expect("encoding into memory cannot fail");
    out
}

pub fn save_png(path: &Path, img: &GrayImage) -> Result<()> {
    write_atomic(path, &encode_png(img))
}

/// Resolves a manifest path against the manifest's directory.
pub fn resolve(root: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Directory containing `file`, or `.` for a bare file name.
pub fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// `path` written relative to `base` when it lies below it, with `/`
/// separators; otherwise the absolute path.
pub fn relative_to(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    match p.strip_prefix(&b) {
        Ok(rel) => rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/"),
        Err(_) => p.to_string_lossy().into_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let img = GrayImage::from_fn(17, 9, |x, y| (x * 13 + y * 7) as u8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.png");
        save_png(&path, &img).unwrap();
        assert_eq!(load_gray(&path).unwrap(), img);
    }

    #[test]
    fn colour_uses_rec601() {
        let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([200, 100, 50]));
        let gray = to_gray(DynamicImage::ImageRgb8(rgb));
        assert_eq!(gray.get(1, 1), luma601(200, 100, 50));
        assert_eq!(luma601(200, 100, 50), 124);
    }

    #[test]
    fn undecodable_file_is_an_io_class_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        fs::write(&path, b"not a png").unwrap();
        let err = load_gray(&path).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_IO);
        assert!(err.to_string().contains("x.png"));
    }

    #[test]
    fn relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        let img = dir.path().join("images/a.png");
        fs::write(&img, b"").unwrap();
        assert_eq!(relative_to(&img, dir.path()), "images/a.png");
        assert_eq!(resolve(dir.path(), "images/a.png"), img);
    }
}
