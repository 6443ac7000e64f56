//! RGB images and frame sequences, plus their on-disk forms.

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("pixel buffer has {got} bytes, expected {expected} for {width}x{height} RGB")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        got: usize,
    },
    #[error("frame sequence is empty")]
    NoFrames,
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    MixedDimensions {
        index: usize,
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("fps must be positive and finite, got {0}")]
    BadFps(f64),
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad clip metadata: {reason}")]
    Meta { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MediaError + '_ {
    move |source| MediaError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// 8-bit RGB image. The content hash is computed on first use and cached.
#[derive(Clone)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
    hash: OnceLock<String>,
}

impl PartialEq for Image {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.data == other.data
    }
}

impl Eq for Image {}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("content_hash", &self.content_hash())
            .finish()
    }
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, MediaError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(MediaError::BufferSize {
                width,
                height,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
            hash: OnceLock::new(),
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self::new(width, height, data).expect("sized by construction")
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data).expect("sized by construction")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Hex SHA-256 over the dimensions and pixel buffer.
    pub fn content_hash(&self) -> &str {
        self.hash.get_or_init(|| {
            let mut h = Sha256::new();
            h.update(b"rgb8");
            h.update(self.width.to_le_bytes());
            h.update(self.height.to_le_bytes());
            h.update(&self.data);
            hex::encode(h.finalize())
        })
    }

    /// Copy with every pixel outside `keep` set to black.
    pub fn masked(&self, keep: &[bool]) -> Image {
        let mut data = self.data.clone();
        for (px, &k) in data.chunks_exact_mut(3).zip(keep) {
            if !k {
                px.fill(0);
            }
        }
        Image::new(self.width, self.height, data).expect("same size")
    }

    /// Area-averaging resize (bilinear when upscaling).
    pub fn resized(&self, width: u32, height: u32) -> Image {
        if (width, height) == self.dimensions() {
            return self.clone();
        }
        let buf = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer sized by invariant");
        let out = image::imageops::resize(&buf, width, height, image::imageops::FilterType::Triangle);
        Image::new(width, height, out.into_raw()).expect("resize output sized")
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            encoder,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )
        .expect("encoding to memory cannot fail");
        out
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self, MediaError> {
        let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        let rgb = decoded.into_rgb8();
        let (w, h) = rgb.dimensions();
        Image::new(w, h, rgb.into_raw())
    }

    pub fn load(path: &Path) -> Result<Self, MediaError> {
        Self::from_png(&std::fs::read(path).map_err(io_err(path))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), MediaError> {
        std::fs::write(path, self.to_png()).map_err(io_err(path))
    }
}

/// `meta.json` next to the numbered frames of a clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub fps: f64,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

/// A clip: one or more equally sized frames at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Image>,
    fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image>, fps: f64) -> Result<Self, MediaError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(MediaError::BadFps(fps));
        }
        let first = frames.first().ok_or(MediaError::NoFrames)?.dimensions();
        if let Some((index, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.dimensions() != first)
        {
            return Err(MediaError::MixedDimensions {
                index,
                expected: first,
                got: f.dimensions(),
            });
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn meta(&self) -> ClipMeta {
        let (width, height) = self.dimensions();
        ClipMeta {
            fps: self.fps,
            frame_count: self.frames.len(),
            width,
            height,
        }
    }

    /// Hex SHA-256 over the frame hashes in order plus the rate.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.fps.to_le_bytes());
        for f in &self.frames {
            h.update(f.content_hash().as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Concatenates clips that share dimensions and rate.
    pub fn concat(clips: &[FrameSequence]) -> Result<Self, MediaError> {
        let fps = clips.first().ok_or(MediaError::NoFrames)?.fps;
        let frames = clips.iter().flat_map(|c| c.frames.iter().cloned()).collect();
        Self::new(frames, fps)
    }

    /// `(relative file name, bytes)` for every file of the on-disk form.
    pub fn encode_files(&self) -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = crate::exec::Exec::default()
            .map(&self.frames, |f| f.to_png())
            .into_iter()
            .enumerate()
            .map(|(i, png)| (frame_file_name(i), png))
            .collect();
        let meta = serde_json::to_vec_pretty(&self.meta()).expect("meta serializes");
        files.push(("meta.json".into(), meta));
        files
    }

    pub fn decode_files(meta: &[u8], frames: &[Vec<u8>], origin: &str) -> Result<Self, MediaError> {
        let meta: ClipMeta = serde_json::from_slice(meta).map_err(|e| MediaError::Meta {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        if meta.frame_count != frames.len() {
            return Err(MediaError::Meta {
                path: origin.to_string(),
                reason: format!(
                    "meta lists {} frames, found {}",
                    meta.frame_count,
                    frames.len()
                ),
            });
        }
        let decoded = crate::exec::Exec::default()
            .map(frames, |b| Image::from_png(b))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let clip = Self::new(decoded, meta.fps)?;
        if clip.dimensions() != (meta.width, meta.height) {
            return Err(MediaError::Meta {
                path: origin.to_string(),
                reason: "frame size disagrees with meta.json".into(),
            });
        }
        Ok(clip)
    }

    /// Writes `frame_0000.png ...` and `meta.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), MediaError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, bytes) in self.encode_files() {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, MediaError> {
        let meta_path = dir.join("meta.json");
        let meta = std::fs::read(&meta_path).map_err(io_err(&meta_path))?;
        let parsed: ClipMeta = serde_json::from_slice(&meta).map_err(|e| MediaError::Meta {
            path: meta_path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut frames = Vec::with_capacity(parsed.frame_count);
        for i in 0..parsed.frame_count {
            let path = dir.join(frame_file_name(i));
            frames.push(std::fs::read(&path).map_err(io_err(&path))?);
        }
        Self::decode_files(&meta, &frames, &dir.display().to_string())
    }
}
