//! On-disk formats for video samples.
//!
//! Two variants: a plain JSON document per video, and a binary `.gimv` file
//! for large feature matrices. The binary layout is a 16-byte header
//! (magic `GIMV`, u32 version, u32 T, u32 D, little-endian) followed by
//! T*D little-endian f32 values (row-major), followed by a JSON trailer
//! holding `{id, points, truth}`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FesError;
use crate::types::{GroundTruthInstance, PointLabel, VideoSample};

const GIMV_MAGIC: &[u8; 4] = b"GIMV";
const GIMV_VERSION: u32 = 1;

pub fn write_video_json(path: &Path, video: &VideoSample) -> Result<(), FesError> {
    let text = serde_json::to_string(video)?;
    fs::write(path, text).map_err(|e| FesError::io(path.display().to_string(), e))
}

pub fn read_video_json(path: &Path) -> Result<VideoSample, FesError> {
    let text =
        fs::read_to_string(path).map_err(|e| FesError::io(path.display().to_string(), e))?;
    let video: VideoSample = serde_json::from_str(&text)?;
    video.validate()?;
    Ok(video)
}

#[derive(Serialize, Deserialize)]
struct GimvTrailer {
    id: String,
    points: Vec<PointLabel>,
    truth: Option<Vec<GroundTruthInstance>>,
}

pub fn write_video_gimv(path: &Path, video: &VideoSample) -> Result<(), FesError> {
    let mut buf = Vec::with_capacity(16 + video.t_len * video.dim * 4);
    buf.extend_from_slice(GIMV_MAGIC);
    buf.extend_from_slice(&GIMV_VERSION.to_le_bytes());
    buf.extend_from_slice(&(video.t_len as u32).to_le_bytes());
    buf.extend_from_slice(&(video.dim as u32).to_le_bytes());
    for row in &video.features {
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let trailer = GimvTrailer {
        id: video.id.clone(),
        points: video.points.clone(),
        truth: video.truth.clone(),
    };
    serde_json::to_writer(&mut buf, &trailer)?;
    let mut file =
        fs::File::create(path).map_err(|e| FesError::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| FesError::io(path.display().to_string(), e))
}

pub fn read_video_gimv(path: &Path) -> Result<VideoSample, FesError> {
    let mut file =
        fs::File::open(path).map_err(|e| FesError::io(path.display().to_string(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| FesError::io(path.display().to_string(), e))?;
    let bad = |msg: &str| FesError::InvalidData(format!("{}: {}", path.display(), msg));
    if buf.len() < 16 || &buf[0..4] != GIMV_MAGIC {
        return Err(bad("missing GIMV header"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != GIMV_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let t_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let matrix_bytes = t_len * dim * 4;
    if buf.len() < 16 + matrix_bytes {
        return Err(bad("truncated feature matrix"));
    }
    let mut features = Vec::with_capacity(t_len);
    let mut off = 16;
    for _ in 0..t_len {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = f32::from_le_bytes(buf[off..off + 4].try_into().unwrap());
            row.push(v as f64);
            off += 4;
        }
        features.push(row);
    }
    let trailer: GimvTrailer = serde_json::from_slice(&buf[off..])?;
    let video = VideoSample {
        id: trailer.id,
        t_len,
        dim,
        features,
        points: trailer.points,
        truth: trailer.truth,
    };
    video.validate()?;
    Ok(video)
}

/// Load a video from either format based on the file extension.
pub fn read_video(path: &Path) -> Result<VideoSample, FesError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("gimv") => read_video_gimv(path),
        _ => read_video_json(path),
    }
}
