//! Checkpoint files: magic + version header, the network spec in its
//! canonical text form, counters, schedule and Adam state, a manifest of
//! named parameter shapes, and little-endian 64-bit float payloads. The
//! writer is canonical, so save → load → save is byte-identical.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::Network;
use crate::net::{parse_network_spec, serialize_network_spec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::adam::AdamState;
use crate::train::metrics::MetricRow;
use crate::train::schedule::{ScheduleMode, ScheduleSpec, ScheduleState};
use crate::train::TrainState;

pub const MAGIC: &[u8; 8] = b"FZNTCKPT";
pub const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn text(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn payload<F: Scalar>(&mut self, t: &Tensor<F>) {
        for &x in t.data() {
            self.f64(x.as_f64());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.path,
                self.pos,
                format!("truncated while reading {what}"),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v)
            .map_err(|_| Error::format(self.path, at, format!("{what} {v} overflows usize")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn text(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let len = self.usize(what)?;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(self.path, at, format!("{what} is not UTF-8")))
    }
}

fn write_schedule(w: &mut Writer, st: &ScheduleState) {
    let spec = &st.spec;
    w.u8(match spec.mode {
        ScheduleMode::Mnist => 0,
        ScheduleMode::Cifar => 1,
    });
    w.f64(spec.base_lr);
    w.f64(spec.per_epoch_decay);
    w.f64(spec.batch_decay_early);
    w.f64(spec.batch_decay_late);
    w.u64(spec.phase_split);
    w.u64(spec.milestones.len() as u64);
    for &m in &spec.milestones {
        w.u64(m);
    }
    w.u64(spec.plateau_patience);
    w.f64(spec.plateau_min_delta);
    w.u32(spec.plateau_max_divisions);
    w.f64(st.lr_hi);
    w.f64(st.lr_lo);
    w.u32(st.plateau_divisions);
    w.f64(st.plateau_best);
    w.u64(st.plateau_wait);
    w.u8(st.pending_division as u8);
}

fn read_schedule(r: &mut Reader) -> Result<ScheduleState> {
    let at = r.pos;
    let mode = match r.u8("schedule mode")? {
        0 => ScheduleMode::Mnist,
        1 => ScheduleMode::Cifar,
        other => {
            return Err(Error::format(
                r.path,
                at,
                format!("unknown schedule mode {other}"),
            ));
        }
    };
    let base_lr = r.f64("base_lr")?;
    let per_epoch_decay = r.f64("per_epoch_decay")?;
    let batch_decay_early = r.f64("batch_decay_early")?;
    let batch_decay_late = r.f64("batch_decay_late")?;
    let phase_split = r.u64("phase_split")?;
    let n_milestones = r.usize("milestone count")?;
    let mut milestones = Vec::with_capacity(n_milestones.min(1024));
    for _ in 0..n_milestones {
        milestones.push(r.u64("milestone")?);
    }
    let plateau_patience = r.u64("plateau_patience")?;
    let plateau_min_delta = r.f64("plateau_min_delta")?;
    let plateau_max_divisions = r.u32("plateau_max_divisions")?;
    let spec = ScheduleSpec {
        mode,
        base_lr,
        milestones,
        per_epoch_decay,
        batch_decay_early,
        batch_decay_late,
        phase_split,
        plateau_patience,
        plateau_min_delta,
        plateau_max_divisions,
    };
    Ok(ScheduleState {
        spec,
        lr_hi: r.f64("lr_hi")?,
        lr_lo: r.f64("lr_lo")?,
        plateau_divisions: r.u32("plateau_divisions")?,
        plateau_best: r.f64("plateau_best")?,
        plateau_wait: r.u64("plateau_wait")?,
        pending_division: r.u8("pending_division")? != 0,
    })
}

fn read_tensors<'a, F: Scalar>(
    r: &mut Reader,
    manifest: &'a [(String, Vec<usize>)],
    section: &str,
) -> Result<Vec<(&'a str, Tensor<F>)>> {
    let mut out = Vec::with_capacity(manifest.len());
    for (name, shape) in manifest {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(F::c(r.f64(section)?));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::format(r.path, r.pos, format!("{section} `{name}`: {e}")))?;
        out.push((name.as_str(), tensor));
    }
    Ok(out)
}

pub fn checkpoint_save<F: Scalar>(state: &TrainState<F>, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.text(&serialize_network_spec(&state.network.spec));
    w.u64(state.seed);
    w.u64(state.batch_size as u64);
    w.u64(state.epochs_done);
    w.u64(state.batch_count);
    write_schedule(&mut w, &state.schedule);
    w.u64(state.adam.t);
    w.f64(state.best_val_error);

    let params = state.network.params();
    w.u64(params.len() as u64);
    for (name, tensor) in &params {
        w.text(name);
        w.u64(tensor.shape().len() as u64);
        for &d in tensor.shape() {
            w.u64(d as u64);
        }
    }
    for (_, tensor) in &params {
        w.payload(tensor);
    }
    for tensor in &state.adam.m {
        w.payload(tensor);
    }
    for tensor in &state.adam.v {
        w.payload(tensor);
    }
    match &state.best_params {
        Some(best) => {
            w.u8(1);
            for tensor in best {
                w.payload(tensor);
            }
        }
        None => w.u8(0),
    }

    w.u64(state.history.len() as u64);
    for row in &state.history {
        w.u64(row.epoch);
        w.u64(row.batch_count);
        w.f64(row.lr);
        w.f64(row.train_loss);
        w.f64(row.val_loss);
        w.f64(row.val_error);
        w.f64(row.wall_seconds);
    }

    std::fs::write(path, &w.buf)?;
    Ok(())
}

pub fn checkpoint_load<F: Scalar>(path: &Path) -> Result<TrainState<F>> {
    let buf = std::fs::read(path)?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path,
    };

    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::format(path, 0, "bad magic, not a checkpoint file"));
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            at,
            format!("unsupported checkpoint version {version} (want {VERSION})"),
        ));
    }
    let spec_text = r.text("network spec")?;
    let spec = parse_network_spec(&spec_text)?;
    let seed = r.u64("seed")?;
    let batch_size = r.usize("batch size")?;
    let epochs_done = r.u64("epochs_done")?;
    let batch_count = r.u64("batch_count")?;
    let schedule = read_schedule(&mut r)?;
    let adam_t = r.u64("adam t")?;
    let best_val_error = r.f64("best_val_error")?;

    let n_params = r.usize("parameter count")?;
    let mut manifest: Vec<(String, Vec<usize>)> = Vec::with_capacity(n_params.min(4096));
    for _ in 0..n_params {
        let name = r.text("parameter name")?;
        let ndim = r.usize("parameter rank")?;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.usize("parameter dim")?);
        }
        manifest.push((name, shape));
    }

    let mut network = Network::<F>::build(&spec, 0)?;
    let named: Vec<(String, Tensor<F>)> = read_tensors(&mut r, &manifest, "parameters")?
        .into_iter()
        .map(|(n, t)| (n.to_string(), t))
        .collect();
    network.set_params(&named)?;

    let m: Vec<Tensor<F>> = read_tensors(&mut r, &manifest, "adam m")?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let v: Vec<Tensor<F>> = read_tensors(&mut r, &manifest, "adam v")?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let adam = AdamState { m, v, t: adam_t };

    let best_params = match r.u8("best flag")? {
        0 => None,
        _ => Some(
            read_tensors(&mut r, &manifest, "best parameters")?
                .into_iter()
                .map(|(_, t)| t)
                .collect(),
        ),
    };

    let n_rows = r.usize("history length")?;
    let mut history = Vec::with_capacity(n_rows.min(1 << 20));
    for _ in 0..n_rows {
        history.push(MetricRow {
            epoch: r.u64("history epoch")?,
            batch_count: r.u64("history batch_count")?,
            lr: r.f64("history lr")?,
            train_loss: r.f64("history train_loss")?,
            val_loss: r.f64("history val_loss")?,
            val_error: r.f64("history val_error")?,
            wall_seconds: r.f64("history wall_seconds")?,
        });
    }
    if r.pos != buf.len() {
        return Err(Error::format(
            path,
            r.pos,
            format!("{} trailing bytes", buf.len() - r.pos),
        ));
    }

    Ok(TrainState {
        network,
        adam,
        schedule,
        epochs_done,
        batch_count,
        batch_size,
        seed,
        best_val_error,
        best_params,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::schedule::ScheduleSpec;

    fn tiny_state() -> TrainState<f64> {
        let spec = parse_network_spec(
            "input 1x6x6\nclasses 3\nfio rules=2 outputs=2 kernel=2\nfl units=3 dropout=0.2\n",
        )
        .unwrap();
        let network = Network::build(&spec, 42).unwrap();
        let mut state = TrainState::new(network, ScheduleSpec::mnist(), 16, 7);
        state.epochs_done = 2;
        state.batch_count = 9;
        state.adam.t = 9;
        state.adam.m[0].data_mut()[0] = 0.125;
        state.adam.v[3].data_mut()[1] = 0.5;
        state.schedule.epoch_started(1);
        state.schedule.batch_finished(1);
        state.best_val_error = 0.25;
        state.best_params = Some(
            state
                .network
                .params()
                .into_iter()
                .map(|(_, t)| t.clone())
                .collect(),
        );
        state.history.push(MetricRow {
            epoch: 0,
            batch_count: 4,
            lr: 1e-3,
            train_loss: 1.0,
            val_loss: 1.125,
            val_error: 0.5,
            wall_seconds: 3.25,
        });
        state.history.push(MetricRow {
            epoch: 1,
            batch_count: 9,
            lr: 9.9e-4,
            train_loss: 0.75,
            val_loss: 1.0,
            val_error: 0.25,
            wall_seconds: 6.5,
        });
        state
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let state = tiny_state();
        checkpoint_save(&state, &a).unwrap();
        let loaded: TrainState<f64> = checkpoint_load(&a).unwrap();
        checkpoint_save(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn round_trip_preserves_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let state = tiny_state();
        checkpoint_save(&state, &path).unwrap();
        let loaded: TrainState<f64> = checkpoint_load(&path).unwrap();

        assert_eq!(loaded.network.spec, state.network.spec);
        for ((an, at), (bn, bt)) in state.network.params().iter().zip(loaded.network.params()) {
            assert_eq!(*an, bn);
            assert_eq!(at.data(), bt.data(), "{an}");
        }
        assert_eq!(loaded.adam, state.adam);
        assert_eq!(loaded.schedule, state.schedule);
        assert_eq!(loaded.epochs_done, 2);
        assert_eq!(loaded.batch_count, 9);
        assert_eq!(loaded.batch_size, 16);
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded.best_val_error, 0.25);
        assert_eq!(
            loaded.best_params.as_ref().unwrap().len(),
            state.best_params.as_ref().unwrap().len()
        );
        assert_eq!(loaded.history, state.history);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        checkpoint_save(&tiny_state(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        let err = checkpoint_load::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.ckpt");
        checkpoint_save(&tiny_state(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = checkpoint_load::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vers.ckpt");
        checkpoint_save(&tiny_state(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99;
        std::fs::write(&path, &bytes).unwrap();
        let err = checkpoint_load::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
