//! Versioned binary files for trained networks and for resumable training state.
//!
//! A checkpoint holds a JSON descriptor (architecture, decision threshold, config
//! hash) followed by little-endian `f32` arrays: standardisation statistics, then
//! weights and biases layer by layer. Training state is stored at `f64` so that a
//! resumed run continues bit-for-bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, ArchSpec, EpochRecord, LayerParams, Network, Params, Standardizer, TrainState};
use crate::binio::{open, write_atomic, BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::scalar::Real;

const CHECKPOINT_MAGIC: &[u8; 8] = b"NOMACNN\0";
const STATE_MAGIC: &[u8; 8] = b"NOMATRN\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub params: Params<f32>,
    pub standardizer: Standardizer,
    pub threshold: f64,
    pub config_hash: String,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn from_network<T: Real>(
        net: &Network<T>,
        standardizer: Standardizer,
        threshold: f64,
        config_hash: impl Into<String>,
        best_epoch: usize,
    ) -> Self {
        Self {
            arch: net.arch().clone(),
            params: net.params().cast(),
            standardizer,
            threshold,
            config_hash: config_hash.into(),
            best_epoch,
        }
    }

    pub fn network<T: Real>(&self) -> Result<Network<T>> {
        Network::from_params(self.arch.clone(), self.params.cast())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    arch: ArchSpec,
    threshold: f64,
    config_hash: String,
    best_epoch: usize,
}

fn write_params<W: std::io::Write, T: Real>(w: &mut BinWriter<W>, p: &Params<T>, wide: bool) -> Result<()> {
    w.u32(p.layers.len() as u32)?;
    for l in &p.layers {
        if wide {
            w.f64_array(l.weights.iter().map(|v| v.as_f64()))?;
            w.f64_array(l.bias.iter().map(|v| v.as_f64()))?;
        } else {
            w.f32_array(l.weights.iter().map(|v| v.as_f64() as f32))?;
            w.f32_array(l.bias.iter().map(|v| v.as_f64() as f32))?;
        }
    }
    Ok(())
}

fn read_params<R: std::io::Read, T: Real>(r: &mut BinReader<R>, wide: bool) -> Result<Params<T>> {
    let n = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let (weights, bias) = if wide {
            (
                r.f64_array()?.into_iter().map(T::lit).collect(),
                r.f64_array()?.into_iter().map(T::lit).collect(),
            )
        } else {
            (
                r.f32_array()?.into_iter().map(|v| T::lit(f64::from(v))).collect(),
                r.f32_array()?.into_iter().map(|v| T::lit(f64::from(v))).collect(),
            )
        };
        layers.push(LayerParams { weights, bias });
    }
    Ok(Params { layers })
}

fn check_version<R: std::io::Read>(r: &mut BinReader<R>) -> Result<()> {
    let v = r.u32()?;
    if v != VERSION {
        return Err(r.fail(format!("unsupported version {v}")));
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let meta = serde_json::to_string(&CheckpointMeta {
        arch: ckpt.arch.clone(),
        threshold: ckpt.threshold,
        config_hash: ckpt.config_hash.clone(),
        best_epoch: ckpt.best_epoch,
    })
    .map_err(|e| Error::format(Some(path.to_path_buf()), e.to_string()))?;
    write_atomic(path, |out| {
        let mut w = BinWriter::new(out, path);
        w.bytes(CHECKPOINT_MAGIC)?;
        w.u32(VERSION)?;
        w.str(&meta)?;
        w.f32_array(ckpt.standardizer.mean.iter().copied())?;
        w.f32_array(ckpt.standardizer.std.iter().copied())?;
        write_params(&mut w, &ckpt.params, false)?;
        w.finish().map(|_| ())
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = open(path)?;
    r.expect(CHECKPOINT_MAGIC)?;
    check_version(&mut r)?;
    let meta: CheckpointMeta = serde_json::from_str(&r.str()?).map_err(|e| r.fail(e.to_string()))?;
    let mean = r.f32_array()?;
    let std = r.f32_array()?;
    if mean.len() != std.len() || mean.len() != meta.arch.input.0 {
        return Err(r.fail("standardizer does not match the input channels"));
    }
    let params = read_params::<_, f32>(&mut r, false)?;
    r.end()?;
    let ckpt = Checkpoint {
        arch: meta.arch,
        params,
        standardizer: Standardizer { mean, std },
        threshold: meta.threshold,
        config_hash: meta.config_hash,
        best_epoch: meta.best_epoch,
    };
    // Validates parameter shapes against the architecture.
    ckpt.network::<f32>()
        .map_err(|e| Error::format(Some(path.to_path_buf()), e.to_string()))?;
    Ok(ckpt)
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    arch: ArchSpec,
    config_hash: String,
    step: u64,
    best_val_loss: f64,
    best_epoch: usize,
    since_best: usize,
    finished: bool,
    log: Vec<EpochRecord>,
}

/// Writes the full training state, tagged with the hash of the run configuration.
pub fn save_train_state<T: Real>(path: &Path, state: &TrainState<T>, config_hash: &str) -> Result<()> {
    let meta = StateMeta {
        arch: state.net.arch().clone(),
        config_hash: config_hash.to_owned(),
        step: state.adam.step,
        best_val_loss: state.best_val_loss,
        best_epoch: state.best_epoch,
        since_best: state.since_best,
        finished: state.finished,
        log: state.log.clone(),
    };
    // Infinity is not representable in JSON; it only occurs before the first epoch.
    let meta = serde_json::to_string(&StateMeta {
        best_val_loss: if meta.best_val_loss.is_finite() { meta.best_val_loss } else { f64::MAX },
        ..meta
    })
    .map_err(|e| Error::format(Some(path.to_path_buf()), e.to_string()))?;
    write_atomic(path, |out| {
        let mut w = BinWriter::new(out, path);
        w.bytes(STATE_MAGIC)?;
        w.u32(VERSION)?;
        w.str(&meta)?;
        for p in [state.net.params(), state.best.params(), &state.adam.m, &state.adam.v] {
            write_params(&mut w, p, true)?;
        }
        w.finish().map(|_| ())
    })
}

/// Reads a training state written by [`save_train_state`], refusing one made under a
/// different configuration.
pub fn load_train_state<T: Real>(path: &Path, config_hash: &str) -> Result<TrainState<T>> {
    let mut r = open(path)?;
    r.expect(STATE_MAGIC)?;
    check_version(&mut r)?;
    let meta: StateMeta = serde_json::from_str(&r.str()?).map_err(|e| r.fail(e.to_string()))?;
    if meta.config_hash != config_hash {
        return Err(Error::FingerprintMismatch {
            what: format!("training state {}", path.display()),
            expected: config_hash.to_owned(),
            found: meta.config_hash,
        });
    }
    let net = Network::from_params(meta.arch.clone(), read_params(&mut r, true)?)?;
    let best = Network::from_params(meta.arch.clone(), read_params(&mut r, true)?)?;
    let m = read_params(&mut r, true)?;
    let v = read_params(&mut r, true)?;
    r.end()?;
    if m.len() != net.params().len() || v.len() != net.params().len() {
        return Err(Error::format(Some(path.to_path_buf()), "optimizer state does not match network"));
    }
    Ok(TrainState {
        net,
        best,
        adam: AdamState { m, v, step: meta.step },
        best_val_loss: if meta.best_val_loss == f64::MAX { f64::INFINITY } else { meta.best_val_loss },
        best_epoch: meta.best_epoch,
        since_best: meta.since_best,
        log: meta.log,
        finished: meta.finished,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Network::<f32>::new(ArchSpec::standard(2, 4, 3), 7).unwrap();
        let st = Standardizer { mean: vec![0.5, -1.0, 0.0, 2.0], std: vec![1.0, 2.0, 0.5, 3.0] };
        let ckpt = Checkpoint::from_network(&net, st, 0.5, "abc", 3);
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.network::<f32>().unwrap(), net);
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Network::<f32>::new(ArchSpec::standard(1, 2, 2), 1).unwrap();
        save_checkpoint(&path, &Checkpoint::from_network(&net, Standardizer::identity(2), 0.5, "h", 1)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
        std::fs::write(&path, b"garbage!garbage!").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::MissingInput(_))));
    }

    #[test]
    fn train_state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        let mut state = TrainState::<f64>::start(ArchSpec::standard(1, 3, 2), 5).unwrap();
        state.adam.step = 17;
        state.adam.m.values_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 1e-3 + 1.0 / 3.0);
        state.log.push(EpochRecord { epoch: 1, train_loss: 0.1, val_loss: 0.2, val_aer: 0.03 });
        save_train_state(&path, &state, "cfg").unwrap();
        let back: TrainState<f64> = load_train_state(&path, "cfg").unwrap();
        assert_eq!(back, state);
        assert!(matches!(
            load_train_state::<f64>(&path, "other"),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}
