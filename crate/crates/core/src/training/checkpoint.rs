//! Checkpoint directories: `manifest.json` plus one tensor file per named
//! tensor, written with full `f64` precision so a resumed run continues
//! bit-for-bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::TrainState;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{EncoderPair, Embedding, NormStats, Params};
use crate::objective::MemoryBank;
use crate::tensor::{load_tensor, save_tensor_exact, Tensor};
use crate::VtdlRng;

pub const MANIFEST: &str = "manifest.json";
/// Checkpoint directory name inside a run's output directory.
pub const CHECKPOINT_DIR: &str = "latest";
const FORMAT: &str = "vtdl-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    /// `u128` word position, as a decimal string.
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: Config,
    epoch: usize,
    step: usize,
    m: f64,
    rng: RngState,
    bank_cursor: usize,
    bank_size: usize,
    /// Logical tensor name -> file name within the checkpoint directory.
    tensors: BTreeMap<String, String>,
}

fn corrupt(msg: impl std::fmt::Display) -> Error {
    Error::CheckpointCorrupt(msg.to_string())
}

fn rng_state(rng: &VtdlRng) -> RngState {
    let seed = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    RngState { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
}

fn restore_rng(state: &RngState) -> Result<VtdlRng> {
    if state.seed.len() != 64 {
        return Err(corrupt("rng seed must be 64 hex digits"));
    }
    let mut seed = [0u8; 32];
    for (i, byte) in seed.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&state.seed[2 * i..2 * i + 2], 16).map_err(corrupt)?;
    }
    let mut rng = VtdlRng::from_seed(seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos.parse().map_err(corrupt)?);
    Ok(rng)
}

/// Writes `state` to `dir`, replacing any previous checkpoint there atomically.
pub fn save_checkpoint(dir: &Path, state: &TrainState, cfg: &Config) -> Result<()> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "ckpt".into());
    let parent = dir.parent().unwrap_or(Path::new("."));
    let tmp = parent.join(format!(".{name}.tmp"));
    let old = parent.join(format!(".{name}.old"));
    for stale in [&tmp, &old] {
        if stale.exists() {
            fs::remove_dir_all(stale).map_err(|e| Error::io(stale, e))?;
        }
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let mut tensors = BTreeMap::new();
    let mut write = |key: String, t: &Tensor| -> Result<()> {
        let file = format!("{}.vtdl", key.replace('/', "."));
        save_tensor_exact(t, tmp.join(&file))?;
        tensors.insert(key, file);
        Ok(())
    };
    for (group, params) in [("online", &state.pair.online), ("history", &state.pair.history), ("velocity", &state.velocity)] {
        for (n, t) in params.iter() {
            write(format!("{group}/{n}"), t)?;
        }
    }
    for (n, t) in state.norm_stats.to_tensors() {
        write(format!("norm/{n}"), &t)?;
    }
    if state.bank.capacity() > 0 {
        let dim = state.bank.slots()[0].dim();
        let data = state.bank.slots().iter().flat_map(|s| s.values().iter().copied()).collect();
        write("bank/slots".into(), &Tensor::new(vec![state.bank.capacity(), dim], data)?)?;
    }

    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        config: cfg.clone(),
        epoch: state.epoch,
        step: state.step,
        m: state.pair.m,
        rng: rng_state(&state.rng),
        bank_cursor: state.bank.cursor(),
        bank_size: state.bank.capacity(),
        tensors,
    };
    let path = tmp.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;

    if dir.exists() {
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    if old.exists() {
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]. Any inconsistency is
/// reported as [`Error::CheckpointCorrupt`].
pub fn load_checkpoint(dir: &Path) -> Result<(Config, TrainState)> {
    load(dir).map_err(|e| match e {
        Error::CheckpointCorrupt(_) => e,
        other => corrupt(format!("{}: {other}", dir.display())),
    })
}

fn load(dir: &Path) -> Result<(Config, TrainState)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(corrupt(format!("unknown checkpoint format {} v{}", manifest.format, manifest.version)));
    }
    let cfg = manifest.config;
    let spec = &cfg.model;

    let mut groups: BTreeMap<&str, Vec<(String, Tensor)>> = BTreeMap::new();
    for (key, file) in &manifest.tensors {
        let (group, name) = key.split_once('/').ok_or_else(|| corrupt(format!("bad tensor key {key}")))?;
        if file.contains('/') || file.contains("..") {
            return Err(corrupt(format!("bad tensor file {file}")));
        }
        groups.entry(group).or_default().push((name.to_string(), load_tensor(dir.join(file))?));
    }
    let mut take = |g: &str| groups.remove(g).unwrap_or_default();
    let online = Params::from_named(spec, take("online"))?;
    let history = Params::from_named(spec, take("history"))?;
    let velocity = Params::from_named(spec, take("velocity"))?;
    let norm_stats = NormStats::from_tensors(spec, &take("norm"))?;

    let bank = match take("bank").pop() {
        Some((_, slots)) => {
            let &[k, dim] = slots.shape() else { return Err(corrupt("bank slots must be rank 2")) };
            if k != manifest.bank_size || dim != spec.embed_dim {
                return Err(corrupt("bank shape disagrees with manifest"));
            }
            let slots = slots.data().chunks_exact(dim).map(|c| Embedding::from_unit(c.to_vec())).collect::<Result<_>>()?;
            MemoryBank::from_parts(slots, manifest.bank_cursor)?
        }
        None if manifest.bank_size == 0 => MemoryBank::from_parts(Vec::new(), 0)?,
        None => return Err(corrupt("missing bank slots")),
    };

    let state = TrainState {
        pair: EncoderPair { online, history, m: manifest.m },
        velocity,
        bank,
        norm_stats,
        epoch: manifest.epoch,
        step: manifest.step,
        rng: restore_rng(&manifest.rng)?,
    };
    Ok((cfg, state))
}
