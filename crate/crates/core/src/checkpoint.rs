//! Binary checkpoint container for [`TrainState`].
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header,
//! then every tensor listed in the header as raw little-endian values.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowmodels::FlowExtractor;
use crate::nn::ParamSet;
use crate::optim::{Adam, PlateauScheduler};
use crate::scalar::Scalar;
use crate::training::{LrEvent, TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"SFLOWCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: TrainConfig,
    epoch: usize,
    round: usize,
    lr_flow: f64,
    lr_embedder: f64,
    scheduler: PlateauScheduler,
    lr_events: Vec<LrEvent>,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: String,
    extractor_steps: u64,
    embedder_steps: Option<u64>,
    has_best: bool,
    tensors: Vec<TensorEntry>,
}

fn param_entries<T: Scalar>(prefix: &str, params: &ParamSet<T>) -> Vec<TensorEntry> {
    params
        .layout()
        .into_iter()
        .map(|(name, rows, cols)| TensorEntry {
            name: format!("{prefix}/{name}"),
            rows,
            cols,
        })
        .collect()
}

fn flat_entry(name: &str, len: usize) -> TensorEntry {
    TensorEntry {
        name: name.into(),
        rows: 1,
        cols: len,
    }
}

/// Tensor list in payload order, derived from the networks alone.
fn layout<T: Scalar>(state: &TrainState<T>, has_best: bool) -> Vec<TensorEntry> {
    let xp = state.extractor.params();
    let mut out = param_entries("extractor", xp);
    out.push(flat_entry("extractor_adam/m", xp.num_scalars()));
    out.push(flat_entry("extractor_adam/v", xp.num_scalars()));
    if let Some(e) = &state.embedder {
        out.extend(param_entries("embedder", e.params()));
        out.push(flat_entry("embedder_adam/m", e.params().num_scalars()));
        out.push(flat_entry("embedder_adam/v", e.params().num_scalars()));
    }
    if has_best {
        out.push(flat_entry("best_extractor", xp.num_scalars()));
    }
    out
}

pub fn save_checkpoint<T: Scalar>(state: &TrainState<T>, config: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let has_best = state.best_extractor.is_some();
    let header = Header {
        dtype: T::DTYPE.into(),
        config: config.clone(),
        epoch: state.epoch,
        round: state.round,
        lr_flow: state.lr_flow,
        lr_embedder: state.lr_embedder,
        scheduler: state.scheduler.clone(),
        lr_events: state.lr_events.clone(),
        rng_seed: state.rng.get_seed(),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        extractor_steps: state.extractor_opt.step,
        embedder_steps: state.embedder_opt.as_ref().map(|o| o.step),
        has_best,
        tensors: layout(state, has_best),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");

    let mut payload = Vec::new();
    let mut put = |values: &[T]| values.iter().for_each(|v| v.write_le(&mut payload));
    put(&state.extractor.params().flatten());
    put(&state.extractor_opt.m);
    put(&state.extractor_opt.v);
    if let (Some(e), Some(o)) = (&state.embedder, &state.embedder_opt) {
        put(&e.params().flatten());
        put(&o.m);
        put(&o.v);
    }
    if let Some(b) = &state.best_extractor {
        put(b);
    }

    let mut bytes = Vec::with_capacity(20 + json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&payload);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint and rebuilds the state together with the configuration it was saved with.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(TrainConfig, TrainState<T>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = || Error::Truncated {
        path: path.to_path_buf(),
        len: bytes.len() as u64,
    };
    if bytes.len() < 20 {
        return Err(truncated());
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: "not a checkpoint file".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION.to_string(),
            found: version.to_string(),
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < header_len {
        return Err(truncated());
    }
    let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if header.dtype != T::DTYPE {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint holds {} parameters, {} requested",
            header.dtype,
            T::DTYPE
        )));
    }

    let mut state = TrainState::<T>::new(&header.config)?;
    let expected = layout(&state, header.has_best);
    if expected != header.tensors {
        return Err(Error::ArchitectureMismatch(
            "stored tensor layout does not match the stored configuration".into(),
        ));
    }
    let total: usize = expected.iter().map(|t| t.rows * t.cols).sum();
    let mut payload = &body[header_len..];
    if payload.len() != total * T::BYTES {
        return Err(truncated());
    }
    let mut take = |n: usize| -> Vec<T> {
        let (head, rest) = payload.split_at(n * T::BYTES);
        payload = rest;
        head.chunks_exact(T::BYTES).map(T::read_le).collect()
    };

    let nx = state.extractor.params().num_scalars();
    state.extractor.params_mut().assign_flat(&take(nx))?;
    state.extractor_opt = Adam {
        config: header.config.adam(),
        step: header.extractor_steps,
        m: take(nx),
        v: take(nx),
    };
    if let Some(e) = state.embedder.as_mut() {
        let ne = e.params().num_scalars();
        e.params_mut().assign_flat(&take(ne))?;
        state.embedder_opt = Some(Adam {
            config: header.config.adam(),
            step: header.embedder_steps.unwrap_or(0),
            m: take(ne),
            v: take(ne),
        });
    }
    state.best_extractor = header.has_best.then(|| take(nx));

    let mut rng = ChaCha8Rng::from_seed(header.rng_seed);
    rng.set_stream(header.rng_stream);
    rng.set_word_pos(header.rng_word_pos.parse::<u128>().map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: format!("rng position: {e}"),
    })?);
    state.rng = rng;
    state.epoch = header.epoch;
    state.round = header.round;
    state.lr_flow = header.lr_flow;
    state.lr_embedder = header.lr_embedder;
    state.scheduler = header.scheduler;
    state.lr_events = header.lr_events;
    Ok((header.config, state))
}

/// Like [`load_checkpoint`], but refuses checkpoints whose networks differ from `config`.
pub fn load_checkpoint_for<T: Scalar>(path: impl AsRef<Path>, config: &TrainConfig) -> Result<TrainState<T>> {
    let (stored, state) = load_checkpoint(path)?;
    stored
        .architecture_matches(config)
        .map_err(Error::ArchitectureMismatch)?;
    Ok(state)
}
