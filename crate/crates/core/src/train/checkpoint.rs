//! Versioned binary checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "MTCK"
//! version      u32      1
//! scalar       u8       bytes per element (4 = f32, 8 = f64)
//! algorithm    u8       0 supervised, 1 pi, 2 mean_teacher, 3 temporal_ensembling
//! step         u64
//! epoch_seen   u64
//! layout       u64      fingerprint of the parameter layout
//! student      weight block
//! teacher      weight block
//! adam_step    u64
//! adam_m       tensor block per trainable parameter, layout order
//! adam_v       tensor block per trainable parameter, layout order
//! ensemble     u8 flag, then when 1:
//!                decay f64, len u64, classes u32,
//!                z: len*classes f64, count: len u32,
//!                pending: per example u8 flag + classes f64 when set
//! streams      u32 count, then per stream: pass u64, cursor u64
//!
//! weight block: u32 count, then per parameter:
//!                name (u16 length + UTF-8), trainable u8, tensor block
//! tensor block: rank u8, dims u32 each, elements
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::adam::AdamState;
use super::config::Algorithm;
use super::step::TrainerState;
use super::temporal::TemporalEnsembleStore;
use crate::data::StreamPosition;
use crate::error::{Error, Result};
use crate::nn::{ModelSpec, Param, WeightSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.write_u16::<LE>(v).expect("vec write");
    }
    fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LE>(v).expect("vec write");
    }
    fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LE>(v).expect("vec write");
    }
    fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LE>(v).expect("vec write");
    }
    fn name(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn tensor<T: Scalar>(&mut self, t: &Tensor<T>) {
        self.u8(t.rank() as u8);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &x in t.data() {
            x.write_le(&mut self.buf);
        }
    }
    fn weights<T: Scalar>(&mut self, w: &WeightSet<T>) {
        self.u32(w.params().len() as u32);
        for p in w.params() {
            self.name(&p.name);
            self.u8(p.trainable as u8);
            self.tensor(&p.value);
        }
    }
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl Reader<'_> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.cur.position(),
            detail: detail.into(),
        }
    }
    fn wrap<X>(&self, r: std::io::Result<X>, what: &str) -> Result<X> {
        r.map_err(|_| self.err(format!("truncated while reading {what}")))
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        let r = self.cur.read_u8();
        self.wrap(r, what)
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        let r = self.cur.read_u16::<LE>();
        self.wrap(r, what)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        let r = self.cur.read_u32::<LE>();
        self.wrap(r, what)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        let r = self.cur.read_u64::<LE>();
        self.wrap(r, what)
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        let r = self.cur.read_f64::<LE>();
        self.wrap(r, what)
    }
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut b = vec![0; n];
        let r = self.cur.read_exact(&mut b);
        self.wrap(r, what)?;
        Ok(b)
    }
    fn name(&mut self) -> Result<String> {
        let n = self.u16("name length")? as usize;
        let b = self.bytes(n, "name")?;
        String::from_utf8(b).map_err(|_| self.err("parameter name is not UTF-8"))
    }
    fn tensor<T: Scalar>(&mut self) -> Result<Tensor<T>> {
        let rank = self.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("tensor dimension")? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = self.bytes(len * T::BYTES, "tensor data")?;
        let data = raw.chunks(T::BYTES).map(T::read_le).collect();
        Tensor::new(shape, data).map_err(|e| self.err(e.to_string()))
    }
    fn weights<T: Scalar>(&mut self, spec: &ModelSpec) -> Result<WeightSet<T>> {
        let n = self.u32("parameter count")? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = self.name()?;
            let trainable = self.u8("trainable flag")? != 0;
            let value = self.tensor()?;
            params.push(Param {
                name,
                value,
                trainable,
            });
        }
        WeightSet::from_params(spec, params)
    }
}

/// Serializes trainer and sampler state.
pub fn encode_checkpoint<T: Scalar>(state: &TrainerState<T>, streams: &[StreamPosition]) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u8(T::BYTES as u8);
    w.u8(state.algorithm.code());
    w.u64(state.step);
    w.u64(state.epoch_seen);
    w.u64(state.student.layout_id());
    w.weights(&state.student);
    w.weights(&state.teacher);
    w.u64(state.adam.step);
    for m in &state.adam.m {
        w.tensor(m);
    }
    for v in &state.adam.v {
        w.tensor(v);
    }
    match &state.ensemble {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.f64(s.decay);
            w.u64(s.len() as u64);
            w.u32(s.classes as u32);
            for &z in &s.z {
                w.f64(z);
            }
            for &c in &s.count {
                w.u32(c);
            }
            for p in &s.pending {
                match p {
                    None => w.u8(0),
                    Some(v) => {
                        w.u8(1);
                        for &x in v {
                            w.f64(x);
                        }
                    }
                }
            }
        }
    }
    w.u32(streams.len() as u32);
    for s in streams {
        w.u64(s.pass);
        w.u64(s.cursor as u64);
    }
    w.buf
}

pub fn decode_checkpoint<T: Scalar>(
    bytes: &[u8],
    spec: &ModelSpec,
    path: &Path,
) -> Result<(TrainerState<T>, Vec<StreamPosition>)> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        path,
    };
    if r.bytes(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let width = r.u8("scalar width")? as usize;
    if width != T::BYTES {
        return Err(r.err(format!(
            "checkpoint holds {width}-byte scalars, reader expects {} ({})",
            T::BYTES,
            T::NAME
        )));
    }
    let code = r.u8("algorithm")?;
    let algorithm = Algorithm::from_code(code).ok_or_else(|| r.err(format!("unknown algorithm code {code}")))?;
    let step = r.u64("step")?;
    let epoch_seen = r.u64("epoch")?;
    let layout = r.u64("layout")?;
    let student: WeightSet<T> = r.weights(spec)?;
    if student.layout_id() != layout {
        return Err(Error::Provenance(format!(
            "checkpoint layout {layout:#x} does not match the model ({:#x})",
            student.layout_id()
        )));
    }
    let teacher = r.weights(spec)?;
    let mut adam = AdamState::new(&student);
    adam.step = r.u64("optimizer step")?;
    for k in 0..adam.m.len() {
        adam.m[k] = r.tensor()?;
    }
    for k in 0..adam.v.len() {
        adam.v[k] = r.tensor()?;
    }
    for (k, name) in adam.names.iter().enumerate() {
        let want = student.get(name).expect("trainable name").shape();
        if adam.m[k].shape() != want || adam.v[k].shape() != want {
            return Err(r.err(format!("optimizer moments of {name} have the wrong shape")));
        }
    }
    let ensemble = match r.u8("ensemble flag")? {
        0 => None,
        _ => {
            let decay = r.f64("ensemble decay")?;
            let len = r.u64("ensemble size")? as usize;
            let classes = r.u32("ensemble classes")? as usize;
            let mut s = TemporalEnsembleStore::new(len, classes, decay)?;
            for z in s.z.iter_mut() {
                *z = r.f64("ensemble values")?;
            }
            for c in s.count.iter_mut() {
                *c = r.u32("ensemble counts")?;
            }
            for p in s.pending.iter_mut() {
                if r.u8("pending flag")? != 0 {
                    let mut v = Vec::with_capacity(classes);
                    for _ in 0..classes {
                        v.push(r.f64("pending prediction")?);
                    }
                    *p = Some(v);
                }
            }
            Some(s)
        }
    };
    let n = r.u32("stream count")? as usize;
    let mut streams = Vec::with_capacity(n);
    for _ in 0..n {
        let pass = r.u64("stream pass")?;
        let cursor = r.u64("stream cursor")? as usize;
        streams.push(StreamPosition { pass, cursor });
    }
    if (r.cur.position() as usize) != bytes.len() {
        return Err(r.err("trailing bytes after checkpoint"));
    }
    Ok((
        TrainerState {
            algorithm,
            step,
            student,
            teacher,
            adam,
            ensemble,
            epoch_seen,
        },
        streams,
    ))
}

/// Writes atomically: a temporary sibling is renamed over `path`.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    state: &TrainerState<T>,
    streams: &[StreamPosition],
) -> Result<()> {
    let bytes = encode_checkpoint(state, streams);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    spec: &ModelSpec,
) -> Result<(TrainerState<T>, Vec<StreamPosition>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, spec, path)
}
