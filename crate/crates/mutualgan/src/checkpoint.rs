//! Binary checkpoint of a complete [`TrainState`].
//!
//! Layout: `MGAN`, version (u32 LE), tensor count (u32 LE), then per tensor the
//! name length (u16 LE), UTF-8 name, rank (u8), dims (u32 LE each) and f32 LE
//! payload. Network parameters are named `<net>.<param>`, optimizer moments
//! live under `opt.`, the PRNG under `rng.` and counters plus the model
//! descriptors under `meta.`. Integers are stored as 16-bit limbs, each an
//! exactly representable f32.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use mutualgan_core::networks::{ArchDescriptor, ModelArch, NetworkParams, Networks, Role};
use mutualgan_core::optim::AdamState;
use mutualgan_core::training::{TrainState, CRITIC_GROUP, GENERATOR_GROUP};
use mutualgan_core::Tensor;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"MGAN";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, not a checkpoint")]
    BadMagic(Vec<u8>),
    #[error("unsupported checkpoint version {found} (this build reads {VERSION})")]
    Version { found: u32 },
    #[error("truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last tensor")]
    Trailing(usize),
    #[error("tensor name is not UTF-8")]
    Name,
    #[error("duplicate tensor {0}")]
    Duplicate(String),
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("unexpected tensor {0}")]
    Unexpected(String),
    #[error("tensor {name}: shape {found:?}, expected {expected:?}")]
    Shape { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("tensor {0} does not hold an integer")]
    Integer(String),
    #[error("inconsistent model: {0}")]
    Model(#[from] mutualgan_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

type Entries = BTreeMap<String, Tensor>;

fn limbs(v: u128, n: usize) -> Tensor {
    Tensor::from_fn(&[n], |i| ((v >> (16 * i)) & 0xffff) as f32)
}

fn unlimb(name: &str, t: &Tensor, n: usize) -> Result<u128, CheckpointError> {
    if t.shape() != [n] {
        return Err(CheckpointError::Shape { name: name.into(), found: t.shape().to_vec(), expected: vec![n] });
    }
    let mut v = 0u128;
    for (i, &x) in t.data().iter().enumerate() {
        if !(0.0..65536.0).contains(&x) || x.fract() != 0.0 {
            return Err(CheckpointError::Integer(name.into()));
        }
        v |= (x as u128) << (16 * i);
    }
    Ok(v)
}

fn arch_tensor(arch: &ModelArch) -> Tensor {
    let ds = [arch.generator, arch.discriminator, arch.encoder_a, arch.encoder_b];
    let vals: Vec<f32> = ds
        .iter()
        .flat_map(|d| [d.base_channels, d.stages, d.res_blocks, d.latent_channels])
        .map(|v| v as f32)
        .collect();
    Tensor::new(&[4, 4], vals).expect("fixed shape")
}

fn arch_from(t: &Tensor) -> Result<ModelArch, CheckpointError> {
    if t.shape() != [4, 4] || t.data().iter().any(|v| *v < 0.0 || v.fract() != 0.0 || *v > 65535.0) {
        return Err(CheckpointError::Integer("meta.arch".into()));
    }
    let d: Vec<ArchDescriptor> =
        t.data().chunks(4).map(|c| ArchDescriptor::new(c[0] as usize, c[1] as usize, c[2] as usize, c[3] as usize)).collect();
    Ok(ModelArch { generator: d[0], discriminator: d[1], encoder_a: d[2], encoder_b: d[3] })
}

/// Parameter names (`<net>.<param>`) of a group in optimizer order.
fn group_names(nets: &Networks, group: &[Role]) -> Vec<String> {
    nets.iter()
        .filter(|n| group.contains(&n.role()))
        .flat_map(|n| n.entries().iter().map(move |(k, _)| format!("{}.{k}", n.role().prefix())))
        .collect()
}

fn state_entries(state: &TrainState) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    out.push(("meta.arch".into(), arch_tensor(state.nets.arch())));
    out.push(("meta.step".into(), limbs(state.step as u128, 4)));
    out.push(("meta.epoch".into(), limbs(state.epoch as u128, 4)));
    for net in state.nets.iter() {
        for (k, t) in net.entries() {
            out.push((format!("{}.{k}", net.role().prefix()), t.clone()));
        }
    }
    for (tag, group, opt) in [("gen", &GENERATOR_GROUP[..], &state.opt_generators), ("critic", &CRITIC_GROUP[..], &state.opt_critics)] {
        out.push((format!("opt.{tag}.step"), limbs(opt.step() as u128, 4)));
        let names = group_names(&state.nets, group);
        for (name, m) in names.iter().zip(opt.first_moments()) {
            out.push((format!("opt.{tag}.m.{name}"), m.clone()));
        }
        for (name, v) in names.iter().zip(opt.second_moments()) {
            out.push((format!("opt.{tag}.v.{name}"), v.clone()));
        }
    }
    let seed = state.rng.get_seed();
    out.push(("rng.seed".into(), Tensor::from_fn(&[16], |i| u16::from_le_bytes([seed[2 * i], seed[2 * i + 1]]) as f32)));
    out.push(("rng.stream".into(), limbs(state.rng.get_stream() as u128, 4)));
    out.push(("rng.word_pos".into(), limbs(state.rng.get_word_pos(), 8)));
    out
}

pub fn encode(state: &TrainState) -> Vec<u8> {
    encode_tensors(&state_entries(state))
}

/// Serializes a raw tensor table.
pub fn encode_tensors(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses the raw tensor table without interpreting names.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic").map_err(|_| CheckpointError::BadMagic(bytes.to_vec()))?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic.to_vec()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap());
        let name = std::str::from_utf8(r.take(len as usize, "name")?).map_err(|_| CheckpointError::Name)?.to_owned();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::Truncated("payload"))?;
        let raw = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated("payload"))?, "payload")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(&shape, data).map_err(|_| CheckpointError::Shape {
            name: name.clone(),
            found: shape.clone(),
            expected: vec![],
        })?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - r.pos));
    }
    Ok(out)
}

fn take(map: &mut Entries, name: &str) -> Result<Tensor, CheckpointError> {
    map.remove(name).ok_or_else(|| CheckpointError::Missing(name.into()))
}

fn take_like(map: &mut Entries, name: &str, like: &Tensor) -> Result<Tensor, CheckpointError> {
    let t = take(map, name)?;
    if t.shape() != like.shape() {
        return Err(CheckpointError::Shape { name: name.into(), found: t.shape().to_vec(), expected: like.shape().to_vec() });
    }
    Ok(t)
}

pub fn decode(bytes: &[u8]) -> Result<TrainState, CheckpointError> {
    let mut map = Entries::new();
    for (name, t) in decode_tensors(bytes)? {
        if map.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::Duplicate(name));
        }
    }
    let arch = arch_from(&take(&mut map, "meta.arch")?)?;
    arch.validate()?;
    let step = unlimb("meta.step", &take(&mut map, "meta.step")?, 4)? as u64;
    let epoch = unlimb("meta.epoch", &take(&mut map, "meta.epoch")?, 4)? as u64;

    // shapes come from a reference model with the stored descriptors
    let reference = Networks::init(arch, 0)?;
    let mut nets = Vec::new();
    for net in reference.iter() {
        let mut entries = Vec::new();
        for (k, like) in net.entries() {
            let name = format!("{}.{k}", net.role().prefix());
            entries.push((k.clone(), take_like(&mut map, &name, like)?));
        }
        nets.push(NetworkParams::from_entries(net.role(), net.arch(), entries)?);
    }
    let nets = Networks::from_parts(arch, nets)?;

    let mut opts = Vec::new();
    for (tag, group) in [("gen", &GENERATOR_GROUP[..]), ("critic", &CRITIC_GROUP[..])] {
        let key = format!("opt.{tag}.step");
        let opt_step = unlimb(&key, &take(&mut map, &key)?, 4)? as u64;
        let names = group_names(&nets, group);
        let params: Vec<&Tensor> =
            nets.iter().filter(|n| group.contains(&n.role())).flat_map(|n| n.entries().iter().map(|(_, t)| t)).collect();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, p) in names.iter().zip(&params) {
            m.push(take_like(&mut map, &format!("opt.{tag}.m.{name}"), p)?);
            v.push(take_like(&mut map, &format!("opt.{tag}.v.{name}"), p)?);
        }
        opts.push(AdamState::from_parts(opt_step, m, v)?);
    }
    let opt_critics = opts.pop().expect("two groups");
    let opt_generators = opts.pop().expect("two groups");

    let seed_t = take(&mut map, "rng.seed")?;
    if seed_t.shape() != [16] {
        return Err(CheckpointError::Shape { name: "rng.seed".into(), found: seed_t.shape().to_vec(), expected: vec![16] });
    }
    let mut seed = [0u8; 32];
    for (i, &x) in seed_t.data().iter().enumerate() {
        if !(0.0..65536.0).contains(&x) || x.fract() != 0.0 {
            return Err(CheckpointError::Integer("rng.seed".into()));
        }
        seed[2 * i..2 * i + 2].copy_from_slice(&(x as u16).to_le_bytes());
    }
    let stream = unlimb("rng.stream", &take(&mut map, "rng.stream")?, 4)? as u64;
    let word_pos = unlimb("rng.word_pos", &take(&mut map, "rng.word_pos")?, 8)?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    if let Some(name) = map.into_keys().next() {
        return Err(CheckpointError::Unexpected(name));
    }
    Ok(TrainState { nets, opt_generators, opt_critics, step, epoch, rng })
}

/// Writes through a temporary file so a failed write never leaves a partial checkpoint.
pub fn save(path: &Path, state: &TrainState) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("partial");
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(&encode(state))?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io(e));
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}
