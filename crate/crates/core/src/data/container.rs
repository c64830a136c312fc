//! Dataset directory layout, all little-endian:
//!
//! * `manifest.json`: version, geometry and one record per sequence with
//!   byte offsets into each payload file plus the scene description.
//! * `frames.itns`: one `ITNS` tensor of shape `[S, k, 3, H, W]`.
//! * `gaze.bin`: per frame, three `f32` values `x, y, valid` (valid is 0 or 1).
//! * `movement.bin`: per frame and part, two `u8` values `label, mask`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::world::SceneMeta;
use super::{DataError, Result};
use crate::encoder::NUM_PARTS;
use crate::objectives::MovementTarget;
use crate::tensor::{read_itns_header, write_itns_header, Tensor};

pub const DATASET_VERSION: u32 = 1;
const CHANNELS: usize = 3;

/// One sample: `k` frames with per-frame gaze and movement targets.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionSequence {
    /// `[k, 3, H, W]` row-major, values in `[0, 1]`.
    pub frames: Vec<f32>,
    /// `[k, 2]` normalized `(x, y)`.
    pub gaze: Vec<f64>,
    pub gaze_valid: Vec<bool>,
    pub movement: MovementTarget,
    pub meta: SceneMeta,
}

impl InteractionSequence {
    pub fn frame(&self, t: usize, size: usize) -> &[f32] {
        let n = CHANNELS * size * size;
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn frames_tensor(&self, k: usize, size: usize) -> Tensor {
        Tensor::new([k, CHANNELS, size, size], self.frames.iter().map(|&v| v as f64).collect()).expect("consistent")
    }

    pub fn timestamps(&self, k: usize, interval: f64) -> Vec<f64> {
        (0..k).map(|t| self.meta.start_time + t as f64 * interval).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub image_size: usize,
    pub seq_len: usize,
    pub frame_interval: f64,
    pub sequences: Vec<InteractionSequence>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    frames_offset: u64,
    gaze_offset: u64,
    movement_offset: u64,
    meta: SceneMeta,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    image_size: usize,
    channels: usize,
    seq_len: usize,
    frame_interval: f64,
    num_sequences: usize,
    sequences: Vec<Record>,
}

impl Dataset {
    pub fn new(
        image_size: usize,
        seq_len: usize,
        frame_interval: f64,
        sequences: Vec<InteractionSequence>,
    ) -> Result<Self> {
        let n = seq_len * CHANNELS * image_size * image_size;
        for (i, s) in sequences.iter().enumerate() {
            if s.frames.len() != n
                || s.gaze.len() != 2 * seq_len
                || s.gaze_valid.len() != seq_len
                || s.movement.steps() != seq_len
            {
                return Err(DataError::Format(format!("sequence {i} does not match the dataset geometry")));
            }
        }
        Ok(Self { image_size, seq_len, frame_interval, sequences })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    fn frame_values(&self) -> usize {
        self.seq_len * CHANNELS * self.image_size * self.image_size
    }

    /// Index-selected subset sharing this geometry.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(), ..self.clone_empty() }
    }

    fn clone_empty(&self) -> Dataset {
        Dataset {
            image_size: self.image_size,
            seq_len: self.seq_len,
            frame_interval: self.frame_interval,
            sequences: Vec::new(),
        }
    }
}

fn frames_header_len() -> u64 {
    (4 + 1 + 4 * 5) as u64
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let k = ds.seq_len;
    let fv = ds.frame_values() as u64;
    let mut frames = BufWriter::new(File::create(dir.join("frames.itns"))?);
    write_itns_header(&mut frames, &[ds.len(), k, CHANNELS, ds.image_size, ds.image_size])?;
    let mut gaze = BufWriter::new(File::create(dir.join("gaze.bin"))?);
    let mut movement = BufWriter::new(File::create(dir.join("movement.bin"))?);
    let mut records = Vec::with_capacity(ds.len());
    for (i, s) in ds.sequences.iter().enumerate() {
        let i = i as u64;
        for v in &s.frames {
            frames.write_all(&v.to_le_bytes())?;
        }
        for t in 0..k {
            for v in [s.gaze[2 * t] as f32, s.gaze[2 * t + 1] as f32, f32::from(u8::from(s.gaze_valid[t]))] {
                gaze.write_all(&v.to_le_bytes())?;
            }
            for p in 0..NUM_PARTS {
                movement
                    .write_all(&[s.movement.labels[t * NUM_PARTS + p], u8::from(s.movement.mask[t * NUM_PARTS + p])])?;
            }
        }
        records.push(Record {
            frames_offset: frames_header_len() + i * fv * 4,
            gaze_offset: i * k as u64 * 12,
            movement_offset: i * (k * NUM_PARTS * 2) as u64,
            meta: s.meta.clone(),
        });
    }
    frames.flush()?;
    gaze.flush()?;
    movement.flush()?;
    let manifest = Manifest {
        version: DATASET_VERSION,
        image_size: ds.image_size,
        channels: CHANNELS,
        seq_len: k,
        frame_interval: ds.frame_interval,
        num_sequences: ds.len(),
        sequences: records,
    };
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| DataError::Format(e.to_string()))?;
    text.push(b'\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| DataError::Format(format!("manifest: {e}")))?;
    if m.version != DATASET_VERSION || m.channels != CHANNELS {
        return Err(DataError::Format(format!("unsupported version {} or channel count {}", m.version, m.channels)));
    }
    if m.sequences.len() != m.num_sequences {
        return Err(DataError::Format(format!(
            "manifest lists {} records but declares {}",
            m.sequences.len(),
            m.num_sequences
        )));
    }
    let (k, size) = (m.seq_len, m.image_size);
    let fv = k * CHANNELS * size * size;

    let mut fr = BufReader::new(File::open(dir.join("frames.itns"))?);
    let shape = read_itns_header(&mut fr)?;
    if shape != [m.num_sequences, k, CHANNELS, size, size] {
        return Err(DataError::Format(format!("frames tensor has shape {shape:?}")));
    }
    let mut frame_bytes = Vec::new();
    fr.read_to_end(&mut frame_bytes)?;
    let gaze_bytes = fs::read(dir.join("gaze.bin"))?;
    let move_bytes = fs::read(dir.join("movement.bin"))?;
    let n = m.num_sequences;
    if frame_bytes.len() != n * fv * 4 || gaze_bytes.len() != n * k * 12 || move_bytes.len() != n * k * NUM_PARTS * 2 {
        return Err(DataError::Format("payload sizes do not match the record count".into()));
    }

    let mut sequences = Vec::with_capacity(n);
    for (i, r) in m.sequences.into_iter().enumerate() {
        let fo = r
            .frames_offset
            .checked_sub(frames_header_len())
            .ok_or_else(|| DataError::Format(format!("record {i}: frames offset inside header")))?
            as usize;
        let (go, mo) = (r.gaze_offset as usize, r.movement_offset as usize);
        if fo + fv * 4 > frame_bytes.len()
            || go + k * 12 > gaze_bytes.len()
            || mo + k * NUM_PARTS * 2 > move_bytes.len()
        {
            return Err(DataError::Format(format!("record {i}: offsets out of bounds")));
        }
        let frames = read_f32s(&frame_bytes[fo..fo + fv * 4]);
        let g = read_f32s(&gaze_bytes[go..go + k * 12]);
        let mut gaze = Vec::with_capacity(2 * k);
        let mut gaze_valid = Vec::with_capacity(k);
        for t in 0..k {
            gaze.extend([g[3 * t] as f64, g[3 * t + 1] as f64]);
            gaze_valid.push(g[3 * t + 2] != 0.0);
        }
        let mv = &move_bytes[mo..mo + k * NUM_PARTS * 2];
        let labels = mv.iter().step_by(2).copied().collect();
        let mask = mv.iter().skip(1).step_by(2).map(|&b| b != 0).collect();
        let movement = MovementTarget::new(labels, mask).map_err(|e| DataError::Format(format!("record {i}: {e}")))?;
        sequences.push(InteractionSequence { frames, gaze, gaze_valid, movement, meta: r.meta });
    }
    Dataset::new(size, k, m.frame_interval, sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_world, WorldConfig};

    fn small() -> Dataset {
        let cfg = WorldConfig { num_sequences: 5, image_size: 16, gaze_dropout: 0.3, ..WorldConfig::default() };
        generate_synthetic_world(&cfg, 4).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        let p = dir.path().join("gaze.bin");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DataError::Format(_))));
    }

    #[test]
    fn timestamps_are_evenly_spaced() {
        let ds = small();
        let ts = ds.sequences[2].timestamps(ds.seq_len, ds.frame_interval);
        for w in ts.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 6.0).abs() < 1e-12);
        }
    }
}
