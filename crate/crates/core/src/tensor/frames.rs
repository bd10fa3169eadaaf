//! PNG frame directories.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{Tensor, VideoClip};
use crate::error::{Error, Result};

/// Loads every `.png` in `path`, in lexicographic filename order, as one clip.
///
/// Pixels are scaled by 1/255. The clip id is the directory name.
pub fn load_frame_dir(path: impl AsRef<Path>) -> Result<VideoClip> {
    let path = path.as_ref();
    let mut files: Vec<_> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.len() < 2 {
        return Err(Error::MissingFrames { path: path.to_path_buf(), found: files.len() });
    }

    let mut dims = None;
    let mut data = Vec::new();
    for file in &files {
        let (h, w, c, pixels) = read_png(file)?;
        match dims {
            None => dims = Some((h, w, c)),
            Some(expected) if expected != (h, w, c) => {
                return Err(Error::InconsistentDimensions {
                    file: file.display().to_string(),
                    expected,
                    got: (h, w, c),
                })
            }
            Some(_) => {}
        }
        data.extend(pixels.iter().map(|&p| p as f64 / 255.0));
    }
    let (h, w, c) = dims.unwrap();
    let frames = Tensor::new(vec![files.len(), h, w, c], data)?;
    let id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    VideoClip::from_frames(frames, id)
}

fn read_png(file: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let unsupported = |msg: String| Error::UnsupportedImage(format!("{}: {msg}", file.display()));
    let reader = BufReader::new(File::open(file).map_err(|e| Error::io(file, e))?);
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| unsupported(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| unsupported(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(unsupported(format!("bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(unsupported(format!("color type {other:?}"))),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let row = w * channels;
    let mut pixels = Vec::with_capacity(h * row);
    for y in 0..h {
        pixels.extend_from_slice(&buf[y * info.line_size..y * info.line_size + row]);
    }
    Ok((h, w, channels, pixels))
}

/// Writes one `[H, W, C]` frame as an 8-bit PNG, rounding to the nearest level.
pub fn save_frame_png(frame: &[f64], height: usize, width: usize, channels: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::UnsupportedImage(format!("{c} channels"))),
    };
    if frame.len() != height * width * channels {
        return Err(Error::ShapeMismatch { expected: vec![height, width, channels], got: vec![frame.len()] });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(to_io)?;
    let bytes: Vec<u8> = frame.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    writer.write_image_data(&bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Writes every frame of `clip` into `dir` as `frame_0000.png`, `frame_0001.png`, ...
pub fn save_clip_pngs(clip: &VideoClip, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for j in 0..clip.len() {
        let path = dir.join(format!("frame_{j:04}.png"));
        save_frame_png(clip.frame(j), clip.height(), clip.width(), clip.channels(), path)?;
    }
    Ok(())
}
