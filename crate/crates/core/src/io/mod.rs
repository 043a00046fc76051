//! Binary artifacts (checkpoints, embedding matrices, index dumps), text
//! corpus formats and run configuration files.

pub mod codec;
mod config;
mod formats;

pub use config::RunConfig;
pub use formats::{
    parse_documents, parse_parallel, read_documents, read_lines, read_parallel, write_documents,
    write_parallel,
};

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annindex::{InvertedList, PartitionedIndex};
use crate::confidence::ConfidenceHead;
use crate::encoder::{DenseLayer, TowerConfig, TowerParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{DualEncoder, Tower};
use crate::textpipe::FeaturizerConfig;
use crate::trainer::{Checkpoint, TrainState};
use codec::{Decoder, Encoder, FileKind};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn put_tower_config(e: &mut Encoder, c: &TowerConfig) {
    e.len(c.input_dim);
    e.len(c.hidden_dims.len());
    for &d in &c.hidden_dims {
        e.len(d);
    }
    e.len(c.residual_skip);
}

fn get_tower_config(d: &mut Decoder<'_>) -> Result<TowerConfig> {
    let input_dim = d.len("input_dim")?;
    let layers = d.len("layer count")?;
    if layers > 1024 {
        return Err(Error::CorruptFile(format!("implausible layer count {layers}")));
    }
    let hidden_dims = (0..layers)
        .map(|_| d.len("hidden dim"))
        .collect::<Result<_>>()?;
    let residual_skip = d.len("residual_skip")?;
    Ok(TowerConfig {
        input_dim,
        hidden_dims,
        residual_skip,
    })
}

fn put_tower_params(e: &mut Encoder, p: &TowerParams<f32>) {
    e.matrix(&p.unigram_table);
    e.matrix(&p.bigram_table);
    for l in &p.layers {
        e.matrix(&l.weights);
        e.f32s(&l.bias);
    }
}

fn get_tower_params(d: &mut Decoder<'_>, c: &TowerConfig) -> Result<TowerParams<f32>> {
    let unigram_table = d.matrix("unigram table")?;
    let bigram_table = d.matrix("bigram table")?;
    let layers = (0..c.hidden_dims.len())
        .map(|_| {
            Ok(DenseLayer {
                weights: d.matrix("layer weights")?,
                bias: d.f32s("layer bias")?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TowerParams {
        unigram_table,
        bigram_table,
        layers,
    })
}

pub fn encode_checkpoint(ckpt: &Checkpoint<f32>) -> Vec<u8> {
    let m = &ckpt.model;
    let mut e = Encoder::new(FileKind::Checkpoint);
    e.u32(m.featurizer.hash_buckets);
    e.u64(m.featurizer.hash_seed);
    e.bool(m.featurizer.lowercase);
    e.bool(m.featurizer.unicode_normalize);
    put_tower_config(&mut e, &m.source.config);
    put_tower_config(&mut e, &m.target.config);
    e.f32(m.head.dropout_rate);
    put_tower_params(&mut e, &m.source.params);
    put_tower_params(&mut e, &m.target.params);
    e.f32s(&m.head.scale_weights);
    e.f32(m.head.scale_bias);
    e.f32s(&m.head.shift_weights);
    e.f32(m.head.shift_bias);
    e.u64(ckpt.state.step);
    let rng = &ckpt.state.rng;
    e.bytes(&rng.get_seed());
    e.u64(rng.get_stream());
    e.u128(rng.get_word_pos());
    e.f32s(&ckpt.state.head_sq_grads);
    e.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint<f32>> {
    let mut d = Decoder::new(bytes, FileKind::Checkpoint)?;
    let featurizer = FeaturizerConfig {
        hash_buckets: d.u32("hash_buckets")?,
        hash_seed: d.u64("hash_seed")?,
        lowercase: d.bool("lowercase")?,
        unicode_normalize: d.bool("unicode_normalize")?,
    };
    let source_cfg = get_tower_config(&mut d)?;
    let target_cfg = get_tower_config(&mut d)?;
    let dropout_rate = d.f32("dropout_rate")?;
    let source = Tower {
        params: get_tower_params(&mut d, &source_cfg)?,
        config: source_cfg,
    };
    let target = Tower {
        params: get_tower_params(&mut d, &target_cfg)?,
        config: target_cfg,
    };
    let head = ConfidenceHead {
        scale_weights: d.f32s("scale weights")?,
        scale_bias: d.f32("scale bias")?,
        shift_weights: d.f32s("shift weights")?,
        shift_bias: d.f32("shift bias")?,
        dropout_rate,
    };
    let step = d.u64("step")?;
    let seed = d.bytes::<32>("rng seed")?;
    let stream = d.u64("rng stream")?;
    let word_pos = d.u128("rng position")?;
    let head_sq_grads = d.f32s("head accumulator")?;
    d.finish()?;

    let model = DualEncoder {
        featurizer,
        source,
        target,
        head,
    };
    model
        .check_shapes()
        .map_err(|e| Error::CorruptFile(format!("inconsistent model: {e}")))?;
    if !head_sq_grads.is_empty() && head_sq_grads.len() != 2 * model.head.feature_dim() + 2 {
        return Err(Error::CorruptFile("head accumulator does not fit the head".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(Checkpoint {
        model,
        state: TrainState {
            step,
            rng,
            head_sq_grads,
        },
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint<f32>) -> Result<()> {
    write_file(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint<f32>> {
    decode_checkpoint(&read_file(path)?)
}

/// Path of the id map written next to an embedding file.
pub fn ids_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".ids");
    PathBuf::from(p)
}

pub fn encode_embeddings(m: &Matrix<f32>) -> Vec<u8> {
    let mut e = Encoder::new(FileKind::Embeddings);
    e.matrix(m);
    e.finish()
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Matrix<f32>> {
    let mut d = Decoder::new(bytes, FileKind::Embeddings)?;
    let m = d.matrix("embeddings")?;
    d.finish()?;
    Ok(m)
}

/// Writes the matrix and a sidecar listing the id of each row, one per line.
pub fn save_embeddings(path: &Path, m: &Matrix<f32>, ids: &[usize]) -> Result<()> {
    if ids.len() != m.rows() {
        return Err(Error::LengthMismatch {
            left: m.rows(),
            right: ids.len(),
        });
    }
    write_file(path, &encode_embeddings(m))?;
    let text: String = ids.iter().map(|i| format!("{i}\n")).collect();
    write_file(&ids_path(path), text.as_bytes())
}

pub fn load_embeddings(path: &Path) -> Result<(Matrix<f32>, Vec<usize>)> {
    let m = decode_embeddings(&read_file(path)?)?;
    let sidecar = ids_path(path);
    let ids = read_lines(&sidecar)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.parse().map_err(|_| Error::Parse {
                path: sidecar.display().to_string(),
                line: i + 1,
                message: format!("not an id: {l:?}"),
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    if ids.len() != m.rows() {
        return Err(Error::LengthMismatch {
            left: m.rows(),
            right: ids.len(),
        });
    }
    Ok((m, ids))
}

pub fn encode_index(index: &PartitionedIndex) -> Vec<u8> {
    let mut e = Encoder::new(FileKind::Index);
    e.len(index.n_probe());
    e.matrix(index.centroids());
    e.len(index.lists().len());
    for l in index.lists() {
        e.len(l.ids.len());
        for &id in &l.ids {
            e.u64(id as u64);
        }
        e.f32s(&l.vectors);
    }
    e.finish()
}

pub fn decode_index(bytes: &[u8]) -> Result<PartitionedIndex> {
    let mut d = Decoder::new(bytes, FileKind::Index)?;
    let n_probe = d.len("n_probe")?;
    let centroids = d.matrix("centroids")?;
    let n_lists = d.len("list count")?;
    if n_lists != centroids.rows() {
        return Err(Error::CorruptFile(format!(
            "{n_lists} lists for {} centroids",
            centroids.rows()
        )));
    }
    let mut lists = Vec::with_capacity(n_lists);
    for _ in 0..n_lists {
        let n = d.len("list length")?;
        let ids = (0..n)
            .map(|_| d.u64("list id").map(|v| v as usize))
            .collect::<Result<_>>()?;
        lists.push(InvertedList {
            ids,
            vectors: d.f32s("list vectors")?,
        });
    }
    d.finish()?;
    PartitionedIndex::from_parts(centroids, lists, n_probe)
        .map_err(|e| Error::CorruptFile(format!("inconsistent index: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::encoder::TowerConfig;
    use rand::RngCore;

    fn small_config() -> ModelConfig {
        let tower = TowerConfig {
            input_dim: 6,
            hidden_dims: vec![6, 5],
            residual_skip: 1,
        };
        ModelConfig {
            featurizer: FeaturizerConfig {
                hash_buckets: 32,
                hash_seed: 9,
                lowercase: false,
                unicode_normalize: true,
            },
            source: tower.clone(),
            target: TowerConfig {
                hidden_dims: vec![7, 5],
                ..tower
            },
            dropout_rate: 0.25,
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut ckpt = Checkpoint::<f32>::init(&small_config(), 5).unwrap();
        ckpt.state.step = 1234;
        ckpt.state.rng.next_u64();
        ckpt.model.head.scale_bias = f32::from_bits(0x3f80_0001);
        ckpt.state.head_sq_grads = (0..2 * ckpt.model.head.feature_dim() + 2).map(|i| i as f32 * 0.5).collect();
        let bytes = encode_checkpoint(&ckpt);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode_checkpoint(&back), bytes);
        let mut a = ckpt.state.rng.clone();
        let mut b = back.state.rng.clone();
        assert_eq!(a.next_u64(), b.next_u64());

        ckpt.state.head_sq_grads.pop();
        assert!(matches!(
            decode_checkpoint(&encode_checkpoint(&ckpt)),
            Err(Error::CorruptFile(_))
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let bytes = encode_checkpoint(&Checkpoint::<f32>::init(&small_config(), 1).unwrap());
        for cut in [5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::CorruptFile(_))), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn magic_and_version_checked() {
        let mut bytes = encode_checkpoint(&Checkpoint::<f32>::init(&small_config(), 1).unwrap());
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        let msg = decode_checkpoint(&bad).unwrap_err().to_string();
        assert!(msg.contains("magic"), "{msg}");
        bytes[4] = 2;
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn embeddings_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let m = Matrix::from_vec(2, 2, vec![0.5, -1.0, 2.0, 1e-30]).unwrap();
        save_embeddings(&path, &m, &[7, 3]).unwrap();
        let (back, ids) = load_embeddings(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(ids, vec![7, 3]);
        assert!(decode_checkpoint(&read_file(&path).unwrap()).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let data: Vec<f32> = (0..40).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let m = Matrix::from_vec(10, 4, data).unwrap();
        let index = PartitionedIndex::build(m, (100..110).collect(), 3, 2, 0).unwrap();
        let back = decode_index(&encode_index(&index)).unwrap();
        assert_eq!(back, index);
    }
}
