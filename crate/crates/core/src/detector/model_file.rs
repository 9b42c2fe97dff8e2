//! CDM1 model files.
//!
//! ```text
//! "CDM1" | kind u8 (0 = bayes, 1 = neural) | ndims u8 | dims u32 x ndims
//! seed u64 | epochs u32 | nloss u32 | loss f32 x nloss
//! nparams u64 | params f32 x nparams | MD5 of every byte above
//! ```
//!
//! Bayes dims are `[vocab]` and its parameters are the raw token counts
//! followed by the window count per class, so the smoothed distributions are
//! rebuilt exactly on load. Neural dims are `[vocab, embed, hidden, window]`.

use std::path::Path;

use super::{BayesModel, Classifier, ClassifierModel, DetectorError, NeuralModel, TrainingMeta, VOCAB};
use crate::md5::digest;

const MAGIC: &[u8; 4] = b"CDM1";

pub fn write_model(model: &ClassifierModel) -> Vec<u8> {
    let (kind, dims, params): (u8, Vec<u32>, Vec<f32>) = match &model.classifier {
        Classifier::Bayes(m) => {
            let mut p: Vec<f32> = m.counts.iter().flatten().map(|&n| n as f32).collect();
            p.extend(m.windows.iter().map(|&n| n as f32));
            (0, vec![VOCAB as u32], p)
        }
        Classifier::Neural(m) => (
            1,
            [m.vocab, m.embed, m.hidden, m.window_tokens].map(|d| d as u32).to_vec(),
            m.flat(),
        ),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(kind);
    out.push(dims.len() as u8);
    dims.iter().for_each(|d| out.extend_from_slice(&d.to_le_bytes()));
    out.extend_from_slice(&model.meta.seed.to_le_bytes());
    out.extend_from_slice(&model.meta.epochs.to_le_bytes());
    out.extend_from_slice(&(model.meta.losses.len() as u32).to_le_bytes());
    model.meta.losses.iter().for_each(|l| out.extend_from_slice(&l.to_le_bytes()));
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    params.iter().for_each(|p| out.extend_from_slice(&p.to_le_bytes()));
    let check = digest(&out);
    out.extend_from_slice(&check.0);
    out
}

pub fn read_model(data: &[u8]) -> Result<ClassifierModel, DetectorError> {
    let bad = |why: &str| DetectorError::BadModel(why.to_string());
    if data.len() < 4 + 16 || &data[..4] != MAGIC {
        return Err(bad("missing CDM1 magic"));
    }
    let (body, check) = data.split_at(data.len() - 16);
    if digest(body).0[..] != *check {
        return Err(bad("checksum mismatch"));
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8], DetectorError> {
        let s = body.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    let kind = take(1)?[0];
    let ndims = take(1)?[0] as usize;
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        dims.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
    }
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let epochs = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let nloss = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let losses = (0..nloss)
        .map(|_| Ok(f32::from_le_bytes(take(4)?.try_into().unwrap())))
        .collect::<Result<Vec<_>, DetectorError>>()?;
    let nparams = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let raw = take(nparams.checked_mul(4).ok_or_else(|| bad("parameter count overflows"))?)?;
    let params: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    let classifier = match (kind, &dims[..]) {
        (0, &[vocab]) if vocab == VOCAB && nparams == 2 * VOCAB + 2 => {
            let count = |p: &f32| -> Result<u32, DetectorError> {
                if p.fract() == 0.0 && *p >= 0.0 && *p < u32::MAX as f32 {
                    Ok(*p as u32)
                } else {
                    Err(bad("bayes counts must be whole numbers"))
                }
            };
            let clean = params[..VOCAB].iter().map(count).collect::<Result<_, _>>()?;
            let coll = params[VOCAB..2 * VOCAB].iter().map(count).collect::<Result<_, _>>()?;
            let windows = [count(&params[2 * VOCAB])? as u64, count(&params[2 * VOCAB + 1])? as u64];
            if windows.contains(&0) {
                return Err(bad("bayes model has an empty class"));
            }
            Classifier::Bayes(BayesModel::from_counts([clean, coll], windows))
        }
        (1, &[vocab, embed, hidden, window]) => {
            let mut m = NeuralModel::<f32>::new(vocab, embed, hidden, window, 0);
            if nparams != m.param_count() {
                return Err(bad("parameter count does not match dimensions"));
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(bad("non-finite parameter"));
            }
            m.set_flat(&params);
            Classifier::Neural(m)
        }
        _ => return Err(bad("unknown kind or dimensions")),
    };
    Ok(ClassifierModel {
        classifier,
        meta: TrainingMeta { seed, epochs, losses },
    })
}

pub fn save_model(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<(), DetectorError> {
    std::fs::write(path, write_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierModel, DetectorError> {
    read_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Label, LabeledSample, TokenSequence};

    fn bayes() -> ClassifierModel {
        let s = |tokens: Vec<u16>, label| LabeledSample {
            seq: TokenSequence { tokens, offset: 0 },
            label,
        };
        ClassifierModel {
            classifier: Classifier::Bayes(BayesModel::train(&[
                s(vec![1, 2, 2], Label::Clean),
                s(vec![9, 9], Label::Collision),
            ])),
            meta: TrainingMeta::default(),
        }
    }

    #[test]
    fn bayes_round_trip() {
        let m = bayes();
        assert_eq!(read_model(&write_model(&m)).unwrap(), m);
    }

    #[test]
    fn neural_round_trip() {
        let m = ClassifierModel {
            classifier: Classifier::Neural(NeuralModel::new(300, 4, 3, 8, 5)),
            meta: TrainingMeta {
                seed: 5,
                epochs: 2,
                losses: vec![0.7, 0.3],
            },
        };
        assert_eq!(read_model(&write_model(&m)).unwrap(), m);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = write_model(&bayes());
        bytes[40] ^= 1;
        assert!(read_model(&bytes).is_err());
        assert!(read_model(b"CDM2").is_err());
    }
}
