//! Readers and writers for the raw recording formats.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::{Correspondence, LabelOutput, QuatSample, Result, Sensor, SyncError, NUM_SENSORS};
use crate::encoder::PARTS;

/// Mono audio; multi-channel input is averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub rate: u32,
    pub samples: Vec<f64>,
}

pub fn read_wav(path: &Path) -> Result<Audio> {
    let reader = hound::WavReader::open(path)?;
    decode_wav(reader)
}

pub fn decode_wav<R: Read>(mut reader: hound::WavReader<R>) -> Result<Audio> {
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            reader.samples::<i16>().map(|s| s.map(|v| v as f64 / 32768.0)).collect::<Result<_, _>>()?
        }
        (hound::SampleFormat::Int, 32) => {
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 / 2147483648.0)).collect::<Result<_, _>>()?
        }
        (fmt, bits) => return Err(SyncError::Format(format!("unsupported WAV encoding {fmt:?} {bits}-bit"))),
    };
    let ch = spec.channels.max(1) as usize;
    let samples = interleaved.chunks(ch).map(|c| c.iter().sum::<f64>() / ch as f64).collect();
    Ok(Audio { rate: spec.sample_rate, samples })
}

/// Writes mono 16-bit PCM, clamping to `[-1, 1]`.
pub fn write_wav(path: &Path, audio: &Audio) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

#[derive(Deserialize)]
struct ImuRow {
    timestamp: f64,
    sensor_id: String,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

/// Per-sensor orientation streams sorted by time, indexed like [`Sensor::ALL`].
pub type ImuStreams = Vec<Vec<QuatSample>>;

/// Parses `timestamp,sensor_id,qw,qx,qy,qz`. Sensor ids may be indices or
/// names. Quaternions must be unit length within 1e-3.
pub fn read_imu_csv<R: Read>(input: R) -> Result<ImuStreams> {
    let mut streams: ImuStreams = vec![Vec::new(); NUM_SENSORS];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    for (line, row) in rdr.deserialize::<ImuRow>().enumerate() {
        let row = row?;
        let sensor = Sensor::parse(&row.sensor_id)
            .ok_or_else(|| SyncError::Format(format!("row {}: unknown sensor '{}'", line + 1, row.sensor_id)))?;
        let q = [row.qw, row.qx, row.qy, row.qz];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !row.timestamp.is_finite() || (norm - 1.0).abs() > 1e-3 {
            return Err(SyncError::Format(format!("row {}: quaternion norm {norm} is not unit", line + 1)));
        }
        streams[sensor.index()].push(QuatSample { time: row.timestamp, q });
    }
    for s in &mut streams {
        s.sort_by(|a, b| a.time.total_cmp(&b.time));
    }
    Ok(streams)
}

pub fn write_imu_csv<W: Write>(out: W, streams: &ImuStreams) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "sensor_id", "qw", "qx", "qy", "qz"])?;
    let mut rows: Vec<(f64, usize, QuatSample)> =
        streams.iter().enumerate().flat_map(|(i, s)| s.iter().map(move |q| (q.time, i, *q))).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (t, i, s) in rows {
        w.write_record([
            t.to_string(),
            Sensor::ALL[i].name().to_string(),
            s.q[0].to_string(),
            s.q[1].to_string(),
            s.q[2].to_string(),
            s.q[3].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Frame timestamps at `fps` covering the span where every sensor has data.
pub fn frame_times(streams: &ImuStreams, fps: f64) -> Result<Vec<f64>> {
    if !(fps > 0.0) {
        return Err(SyncError::Format(format!("fps must be positive, got {fps}")));
    }
    let mut start = f64::NEG_INFINITY;
    let mut end = f64::INFINITY;
    for (i, s) in streams.iter().enumerate() {
        let (Some(first), Some(last)) = (s.first(), s.last()) else {
            return Err(SyncError::Format(format!("sensor {} has no samples", Sensor::ALL[i].name())));
        };
        start = start.max(first.time);
        end = end.min(last.time);
    }
    if end < start {
        return Err(SyncError::Format("sensor streams do not overlap in time".into()));
    }
    let n = ((end - start) * fps + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 / fps).collect())
}

#[derive(Deserialize)]
struct CorrRow {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

/// Parses `x1,y1,x2,y2` rows.
pub fn read_correspondences<R: Read>(input: R) -> Result<Vec<Correspondence>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize::<CorrRow>() {
        let r = row?;
        let c = Correspondence::new(r.x1, r.y1, r.x2, r.y2);
        if !c.src.iter().chain(&c.dst).all(|v| v.is_finite()) {
            return Err(SyncError::Format("non-finite coordinate".into()));
        }
        out.push(c);
    }
    Ok(out)
}

/// One row per step: `step,time,<part>,<part>_mask,...`. A masked-out part
/// keeps its label column for inspection.
pub fn write_labels_csv<W: Write>(out: W, labels: &LabelOutput, times: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "time".to_string()];
    for p in PARTS {
        header.push(p.to_string());
        header.push(format!("{p}_mask"));
    }
    w.write_record(&header)?;
    let t = &labels.target;
    for step in 0..t.steps() {
        let mut rec = vec![step.to_string(), times.get(step).map(|v| format!("{v:.6}")).unwrap_or_default()];
        for p in 0..PARTS.len() {
            let i = step * PARTS.len() + p;
            rec.push(t.labels[i].to_string());
            rec.push(u8::from(t.mask[i]).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-sensor counts of each label kind, for reports.
pub fn label_histogram(labels: &LabelOutput) -> BTreeMap<&'static str, [usize; 4]> {
    use super::SensorLabel::*;
    labels
        .sensors
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut h = [0usize; 4];
            for l in s {
                h[match l {
                    Still => 0,
                    Moving => 1,
                    Gray => 2,
                    Missing => 3,
                }] += 1;
            }
            (Sensor::ALL[i].name(), h)
        })
        .collect()
}
