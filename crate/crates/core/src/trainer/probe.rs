use serde::{Deserialize, Serialize};

use super::Result;
use crate::data::Dataset;
use crate::encoder::{InteractionModel, NUM_PARTS};
use crate::nn::ParamStore;
use crate::tensor::{Tape, Tensor};

/// Binary movement accuracy on unaugmented sequences, per part and averaged
/// over parts that had at least one scored frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovementAccuracy {
    pub per_part: Vec<Option<f64>>,
    pub average: f64,
    pub scored_frames: usize,
}

/// Scores the movement head on `indices` of `ds`. A frame counts for a part
/// when its mask is set; the prediction is `logit > 0`.
pub fn movement_accuracy(
    model: &InteractionModel,
    store: &ParamStore,
    ds: &Dataset,
    indices: &[usize],
    chunk: usize,
) -> Result<MovementAccuracy> {
    let (k, size) = (ds.seq_len, ds.image_size);
    let mut hits = [0usize; NUM_PARTS];
    let mut seen = [0usize; NUM_PARTS];
    for idx in indices.chunks(chunk.max(1)) {
        let mut frames = Vec::with_capacity(idx.len() * k * 3 * size * size);
        let mut gaze = Vec::with_capacity(idx.len() * k * 2);
        for &i in idx {
            let s = &ds.sequences[i];
            frames.extend(s.frames.iter().map(|&v| v as f64));
            gaze.extend_from_slice(&s.gaze);
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::new([idx.len(), k, 3, size, size], frames)?);
        let g = if model.config.gaze_conditioned { Some(Tensor::new([idx.len(), k, 2], gaze)?) } else { None };
        let out = model.predict_sequence(&mut tape, &p, x, g.as_ref())?;
        let logits = tape.value(out.movement).data();
        for (j, &i) in idx.iter().enumerate() {
            let m = &ds.sequences[i].movement;
            for f in 0..k * NUM_PARTS {
                if m.mask[f] {
                    let part = f % NUM_PARTS;
                    seen[part] += 1;
                    let pred = u8::from(logits[j * k * NUM_PARTS + f] > 0.0);
                    hits[part] += usize::from(pred == m.labels[f]);
                }
            }
        }
    }
    let per_part: Vec<Option<f64>> =
        (0..NUM_PARTS).map(|q| (seen[q] > 0).then(|| 100.0 * hits[q] as f64 / seen[q] as f64)).collect();
    let scored: Vec<f64> = per_part.iter().flatten().copied().collect();
    let average = if scored.is_empty() { f64::NAN } else { scored.iter().sum::<f64>() / scored.len() as f64 };
    Ok(MovementAccuracy { per_part, average, scored_frames: seen.iter().sum() })
}
