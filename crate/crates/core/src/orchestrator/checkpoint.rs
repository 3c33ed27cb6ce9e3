//! Versioned binary checkpoints. All integers little-endian; tensor values are
//! stored as `f64`, which holds `f32` values exactly.

use std::fs;
use std::path::Path;

use super::{Session, TrainMode, Workers};
use crate::autodiff::ParamStore;
use crate::clock::VirtualClock;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ESCK";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor<T: Real>(&mut self, t: &Tensor<T>) {
        self.u32(t.ndim() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid utf-8 name"))
    }
    /// Reads a tensor and checks it against `expected`.
    fn tensor<T: Real>(&mut self, expected: &[usize], what: &str) -> Result<Tensor<T>> {
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != expected {
            return Err(bad(format!("{what}: shape {shape:?} does not match model {expected:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        Tensor::new(shape, data).map_err(|e| bad(e.to_string()))
    }
}

fn mode_tag(mode: TrainMode) -> u8 {
    match mode {
        TrainMode::Hierarchical => 1,
        TrainMode::Fullcloud => 2,
        TrainMode::Monolithic => 3,
    }
}

fn write_store<T: Real>(w: &mut Writer, name: &str, store: &ParamStore<T>) {
    w.str(name);
    w.u64(store.step_count());
    w.u32(store.params().len() as u32);
    for p in store.params() {
        w.str(&p.name);
        w.tensor(&p.value);
        w.u8(p.first_moment.is_some() as u8 | (p.second_moment.is_some() as u8) << 1);
        for m in [&p.first_moment, &p.second_moment].into_iter().flatten() {
            w.tensor(m);
        }
    }
    w.u32(store.buffers().len() as u32);
    for b in store.buffers() {
        w.str(&b.name);
        w.tensor(&b.value);
    }
}

fn read_store<T: Real>(r: &mut Reader, name: &str, store: &mut ParamStore<T>) -> Result<()> {
    let got = r.str()?;
    if got != name {
        return Err(bad(format!("expected store '{name}', found '{got}'")));
    }
    let step = r.u64()?;
    let count = r.u32()? as usize;
    if count != store.params().len() {
        return Err(bad(format!("store '{name}': {count} parameters, model has {}", store.params().len())));
    }
    for p in store.params_mut() {
        let pname = r.str()?;
        if pname != p.name {
            return Err(bad(format!("parameter '{pname}' where model expects '{}'", p.name)));
        }
        let shape = p.value.shape().to_vec();
        p.value = r.tensor(&shape, &pname)?;
        let flags = r.u8()?;
        p.first_moment = if flags & 1 != 0 { Some(r.tensor(&shape, &pname)?) } else { None };
        p.second_moment = if flags & 2 != 0 { Some(r.tensor(&shape, &pname)?) } else { None };
        p.grad = Tensor::zeros(&shape);
    }
    let count = r.u32()? as usize;
    if count != store.buffers().len() {
        return Err(bad(format!("store '{name}': {count} buffers, model has {}", store.buffers().len())));
    }
    for b in store.buffers_mut() {
        let bname = r.str()?;
        if bname != b.name {
            return Err(bad(format!("buffer '{bname}' where model expects '{}'", b.name)));
        }
        let shape = b.value.shape().to_vec();
        b.value = r.tensor(&shape, &bname)?;
    }
    store.set_step_count(step);
    Ok(())
}

impl<T: Real> Session<T> {
    /// Serializes parameters, optimizer state, epoch, batch counter, clock
    /// and channel state.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u8(T::DTYPE.tag());
        w.u8(mode_tag(self.config.mode));
        w.u32(self.config.position as u32);
        w.u64(self.config.seed);
        w.u64(self.epoch as u64);
        w.u32(self.next_batch_id);
        w.u64(self.clock.now());
        w.u64(self.clock.batches());
        w.u64(self.channel.link_free_at());
        match &self.workers {
            Workers::Split { edge, cloud } => {
                w.u32(2);
                write_store(&mut w, "edge", &edge.store);
                write_store(&mut w, "cloud", &cloud.as_ref().expect("cloud worker present").store);
            }
            Workers::Full(full) => {
                w.u32(1);
                write_store(&mut w, "full", &full.store);
            }
        }
        w.0
    }

    /// Restores state written by [`checkpoint_bytes`](Self::checkpoint_bytes)
    /// into a session built from the same configuration.
    pub fn restore_checkpoint(&mut self, bytes: &[u8]) -> Result<()> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dtype = r.u8()?;
        if dtype != T::DTYPE.tag() {
            return Err(bad(format!("precision tag {dtype} does not match session {}", T::DTYPE.tag())));
        }
        if r.u8()? != mode_tag(self.config.mode) {
            return Err(bad("training mode differs from the configuration"));
        }
        let position = r.u32()? as usize;
        if self.config.mode == TrainMode::Hierarchical && position != self.config.position {
            return Err(bad(format!("split position {position} differs from configured {}", self.config.position)));
        }
        let seed = r.u64()?;
        if seed != self.config.seed {
            return Err(bad(format!("seed {seed} differs from configured {}", self.config.seed)));
        }
        let epoch = r.u64()? as usize;
        let next_batch_id = r.u32()?;
        let now = r.u64()?;
        let batches = r.u64()?;
        let link_free_at = r.u64()?;
        let stores = r.u32()?;
        match &mut self.workers {
            Workers::Split { edge, cloud } if stores == 2 => {
                read_store(&mut r, "edge", &mut edge.store)?;
                read_store(&mut r, "cloud", &mut cloud.as_mut().expect("cloud worker present").store)?;
            }
            Workers::Full(full) if stores == 1 => read_store(&mut r, "full", &mut full.store)?,
            _ => return Err(bad(format!("{stores} stores do not match the session layout"))),
        }
        if r.at != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        self.epoch = epoch;
        self.next_batch_id = next_batch_id;
        self.clock = VirtualClock::restore(now, batches);
        self.channel.set_link_free_at(link_free_at);
        Ok(())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.checkpoint_bytes())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        self.restore_checkpoint(&bytes)
    }
}
