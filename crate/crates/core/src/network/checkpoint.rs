//! Binary checkpoint: `LSKC` magic, version, a TOML config block, counters,
//! random-stream states, then named tensor records with shape headers. Masks
//! are stored as LSB-first bitsets in slot-major order next to their group
//! partition descriptor.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conv::{GroupPartition, GroupedSparseKernel};
use crate::cws::ChannelPermutation;
use crate::{Error, Result};

use super::layers::{BatchNorm, Linear, Param, SparseConv};
use super::model::{LskBlock, LskNetwork, NetworkConfig};
use super::train::{TrainSchedule, Trainer};

const MAGIC: &[u8; 4] = b"LSKC";
const VERSION: u32 = 1;

/// Position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    network: NetworkConfig,
    schedule: TrainSchedule,
}

/// Complete training state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: LskNetwork,
    pub schedule: TrainSchedule,
    pub iteration: u64,
    pub sds_events: u64,
    pub sort_events: u64,
    pub last_permutation: Option<ChannelPermutation>,
    pub rng: RngState,
    pub mask_rng: RngState,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            network: t.net.clone(),
            schedule: t.schedule.clone(),
            iteration: t.iteration,
            sds_events: t.sds_events,
            sort_events: t.sort_events,
            last_permutation: t.last_permutation.clone(),
            rng: RngState::capture(&t.rng),
            mask_rng: RngState::capture(&t.mask_rng),
        }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer {
            net: self.network,
            schedule: self.schedule,
            iteration: self.iteration,
            sds_events: self.sds_events,
            sort_events: self.sort_events,
            last_permutation: self.last_permutation,
            rng: self.rng.restore(),
            mask_rng: self.mask_rng.restore(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = ConfigBlock { network: self.network.config().clone(), schedule: self.schedule.clone() };
        let text = toml::to_string(&cfg).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        put_u32(&mut out, text.len() as u32);
        out.extend_from_slice(text.as_bytes());
        for v in [self.iteration, self.sds_events, self.sort_events] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for r in [&self.rng, &self.mask_rng] {
            out.extend_from_slice(&r.seed);
            out.extend_from_slice(&r.stream.to_le_bytes());
            out.extend_from_slice(&r.word_pos.to_le_bytes());
        }
        let records = network_records(&self.network, self.last_permutation.as_ref());
        put_u32(&mut out, records.len() as u32);
        for (name, rec) in &records {
            rec.write(name, &mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(incompatible("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(incompatible(&format!("version {version}, expected {VERSION}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| incompatible("config block is not UTF-8"))?;
        let cfg: ConfigBlock = toml::from_str(text).map_err(|e| incompatible(&format!("config block: {e}")))?;
        let iteration = r.u64()?;
        let sds_events = r.u64()?;
        let sort_events = r.u64()?;
        let mut rngs = [RngState { seed: [0; 32], stream: 0, word_pos: 0 }; 2];
        for state in &mut rngs {
            state.seed.copy_from_slice(r.take(32)?);
            state.stream = r.u64()?;
            state.word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        }
        let count = r.u32()? as usize;
        let mut records = BTreeMap::new();
        for _ in 0..count {
            let (name, rec) = Record::read(&mut r)?;
            records.insert(name, rec);
        }
        if r.pos != bytes.len() {
            return Err(incompatible("trailing bytes"));
        }
        let mut store = Store(records);
        let (network, last_permutation) = network_from_records(cfg.network, &mut store)?;
        Ok(Self {
            network,
            schedule: cfg.schedule,
            iteration,
            sds_events,
            sort_events,
            last_permutation,
            rng: rngs[0],
            mask_rng: rngs[1],
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

/// Hex SHA-256 of a file's bytes.
pub fn checkpoint_hash(path: &Path) -> Result<String> {
    let digest = Sha256::digest(std::fs::read(path)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn incompatible(msg: &str) -> Error {
    Error::IncompatibleCheckpoint(msg.to_string())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

enum Record {
    F32(Vec<usize>, Vec<f32>),
    Bits(Vec<usize>, Vec<bool>),
    U32(Vec<usize>, Vec<u32>),
    Text(String),
}

impl Record {
    fn write(&self, name: &str, out: &mut Vec<u8>) {
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        let (kind, dims): (u8, Vec<usize>) = match self {
            Record::F32(d, _) => (0, d.clone()),
            Record::Bits(d, _) => (1, d.clone()),
            Record::U32(d, _) => (2, d.clone()),
            Record::Text(t) => (3, vec![t.len()]),
        };
        out.push(kind);
        put_u32(out, dims.len() as u32);
        for d in dims {
            put_u32(out, d as u32);
        }
        match self {
            Record::F32(_, v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Record::U32(_, v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Record::Bits(_, v) => {
                let mut bytes = vec![0u8; v.len().div_ceil(8)];
                for (k, &b) in v.iter().enumerate() {
                    if b {
                        bytes[k / 8] |= 1 << (k % 8);
                    }
                }
                out.extend_from_slice(&bytes);
            }
            Record::Text(t) => out.extend_from_slice(t.as_bytes()),
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<(String, Record)> {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| incompatible("record name is not UTF-8"))?;
        let kind = r.take(1)?[0];
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(incompatible("implausible tensor rank"));
        }
        let dims: Vec<usize> = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let n: usize = dims.iter().product();
        let rec = match kind {
            0 => Record::F32(
                dims,
                r.take(n.checked_mul(4).ok_or_else(|| incompatible("tensor too large"))?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => {
                let bytes = r.take(n.div_ceil(8))?;
                Record::Bits(dims, (0..n).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect())
            }
            2 => Record::U32(
                dims,
                r.take(n.checked_mul(4).ok_or_else(|| incompatible("tensor too large"))?)?
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            3 => Record::Text(String::from_utf8(r.take(n)?.to_vec()).map_err(|_| incompatible("text is not UTF-8"))?),
            k => return Err(incompatible(&format!("unknown record kind {k}"))),
        };
        Ok((name, rec))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| incompatible("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

type Records = Vec<(String, Record)>;

fn push_param(out: &mut Records, name: &str, dims: Vec<usize>, p: &Param) {
    out.push((name.to_string(), Record::F32(dims.clone(), p.value.clone())));
    out.push((format!("{name}.m"), Record::F32(dims.clone(), p.m.clone())));
    out.push((format!("{name}.v"), Record::F32(dims, p.v.clone())));
}

fn push_linear(out: &mut Records, name: &str, l: &Linear) {
    push_param(out, &format!("{name}.weight"), vec![l.out_dim, l.in_dim], &l.weight);
    push_param(out, &format!("{name}.bias"), vec![l.out_dim], &l.bias);
}

fn push_norm(out: &mut Records, name: &str, n: &BatchNorm) {
    let c = n.channels();
    push_param(out, &format!("{name}.gamma"), vec![c], &n.gamma);
    push_param(out, &format!("{name}.beta"), vec![c], &n.beta);
    out.push((format!("{name}.running_mean"), Record::F32(vec![c], n.running_mean.clone())));
    out.push((format!("{name}.running_var"), Record::F32(vec![c], n.running_var.clone())));
}

fn push_conv(out: &mut Records, name: &str, c: &SparseConv) {
    let k = &c.kernel;
    let dims = vec![k.num_slots(), k.d_out(), k.d_in()];
    out.push((format!("{name}.partition"), Record::Text(k.partition().descriptor())));
    out.push((format!("{name}.weight"), Record::F32(dims.clone(), k.weights().to_vec())));
    out.push((format!("{name}.mask"), Record::Bits(dims.clone(), k.mask().to_vec())));
    out.push((format!("{name}.weight.m"), Record::F32(dims.clone(), c.m.clone())));
    out.push((format!("{name}.weight.v"), Record::F32(dims, c.v.clone())));
}

fn ids(v: &[usize]) -> Vec<u32> {
    v.iter().map(|&i| i as u32).collect()
}

fn network_records(net: &LskNetwork, perm: Option<&ChannelPermutation>) -> Records {
    let mut out = Vec::new();
    push_linear(&mut out, "stem", &net.stem);
    push_norm(&mut out, "stem.norm", &net.stem_norm);
    out.push(("channels.stream".into(), Record::U32(vec![net.stream_ids.len()], net.stream_ids.clone())));
    for (b, block) in net.blocks.iter().enumerate() {
        push_conv(&mut out, &format!("blocks.{b}.conv1"), &block.conv1);
        push_norm(&mut out, &format!("blocks.{b}.norm"), &block.norm);
        push_conv(&mut out, &format!("blocks.{b}.conv2"), &block.conv2);
        out.push((format!("blocks.{b}.channels"), Record::U32(vec![block.inner_ids.len()], block.inner_ids.clone())));
    }
    push_linear(&mut out, "head", &net.head);
    if let Some(p) = perm {
        out.push(("permutation.stream".into(), Record::U32(vec![p.stream.len()], ids(&p.stream))));
        for (b, inner) in p.inner.iter().enumerate() {
            out.push((format!("permutation.blocks.{b}"), Record::U32(vec![inner.len()], ids(inner))));
        }
    }
    out
}

struct Store(BTreeMap<String, Record>);

impl Store {
    fn missing(name: &str) -> Error {
        incompatible(&format!("missing or mistyped record {name}"))
    }

    fn f32(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        match self.0.remove(name) {
            Some(Record::F32(d, v)) => Ok((d, v)),
            _ => Err(Self::missing(name)),
        }
    }

    fn f32_len(&mut self, name: &str, len: usize) -> Result<Vec<f32>> {
        let (_, v) = self.f32(name)?;
        if v.len() != len {
            return Err(incompatible(&format!("record {name} has {} values, expected {len}", v.len())));
        }
        Ok(v)
    }

    fn u32(&mut self, name: &str) -> Result<Vec<u32>> {
        match self.0.remove(name) {
            Some(Record::U32(_, v)) => Ok(v),
            _ => Err(Self::missing(name)),
        }
    }

    fn bits(&mut self, name: &str) -> Result<Vec<bool>> {
        match self.0.remove(name) {
            Some(Record::Bits(_, v)) => Ok(v),
            _ => Err(Self::missing(name)),
        }
    }

    fn text(&mut self, name: &str) -> Result<String> {
        match self.0.remove(name) {
            Some(Record::Text(t)) => Ok(t),
            _ => Err(Self::missing(name)),
        }
    }

    fn param(&mut self, name: &str) -> Result<(Vec<usize>, Param)> {
        let (dims, value) = self.f32(name)?;
        let m = self.f32_len(&format!("{name}.m"), value.len())?;
        let v = self.f32_len(&format!("{name}.v"), value.len())?;
        Ok((dims, Param { value, m, v }))
    }

    fn linear(&mut self, name: &str) -> Result<Linear> {
        let (dims, weight) = self.param(&format!("{name}.weight"))?;
        let (_, bias) = self.param(&format!("{name}.bias"))?;
        if dims.len() != 2 || bias.len() != dims[0] || weight.len() != dims[0] * dims[1] {
            return Err(incompatible(&format!("bad shape for {name}")));
        }
        Ok(Linear { weight, bias, in_dim: dims[1], out_dim: dims[0] })
    }

    fn norm(&mut self, name: &str) -> Result<BatchNorm> {
        let (_, gamma) = self.param(&format!("{name}.gamma"))?;
        let c = gamma.len();
        let (_, beta) = self.param(&format!("{name}.beta"))?;
        let running_mean = self.f32_len(&format!("{name}.running_mean"), c)?;
        let running_var = self.f32_len(&format!("{name}.running_var"), c)?;
        if beta.len() != c {
            return Err(incompatible(&format!("bad shape for {name}")));
        }
        Ok(BatchNorm { gamma, beta, running_mean, running_var })
    }

    fn conv(&mut self, name: &str) -> Result<SparseConv> {
        let partition = GroupPartition::from_descriptor(&self.text(&format!("{name}.partition"))?)
            .map_err(|e| incompatible(&format!("{name}: {e}")))?;
        let (dims, weights) = self.f32(&format!("{name}.weight"))?;
        let mask = self.bits(&format!("{name}.mask"))?;
        if dims.len() != 3 || dims[0] != partition.num_slots() || mask.len() != weights.len() {
            return Err(incompatible(&format!("bad shape for {name}")));
        }
        let m = self.f32_len(&format!("{name}.weight.m"), weights.len())?;
        let v = self.f32_len(&format!("{name}.weight.v"), weights.len())?;
        let kernel = GroupedSparseKernel::with_mask(partition, dims[1], dims[2], weights, mask)
            .map_err(|e| incompatible(&format!("{name}: {e}")))?;
        Ok(SparseConv { kernel, m, v })
    }
}

fn network_from_records(config: NetworkConfig, store: &mut Store) -> Result<(LskNetwork, Option<ChannelPermutation>)> {
    let stem = store.linear("stem")?;
    let stem_norm = store.norm("stem.norm")?;
    let stream_ids = store.u32("channels.stream")?;
    let mut blocks = Vec::with_capacity(config.num_blocks);
    for b in 0..config.num_blocks {
        blocks.push(LskBlock {
            conv1: store.conv(&format!("blocks.{b}.conv1"))?,
            norm: store.norm(&format!("blocks.{b}.norm"))?,
            conv2: store.conv(&format!("blocks.{b}.conv2"))?,
            inner_ids: store.u32(&format!("blocks.{b}.channels"))?,
        });
    }
    let head = store.linear("head")?;
    let perm = match store.u32("permutation.stream") {
        Ok(stream) => {
            let inner = (0..config.num_blocks)
                .map(|b| store.u32(&format!("permutation.blocks.{b}")).map(|v| v.iter().map(|&i| i as usize).collect()))
                .collect::<Result<Vec<Vec<usize>>>>()?;
            Some(ChannelPermutation { stream: stream.iter().map(|&i| i as usize).collect(), inner })
        }
        Err(_) => None,
    };
    let net = LskNetwork::from_parts(config, stem, stem_norm, blocks, head, stream_ids)
        .map_err(|e| incompatible(&e.to_string()))?;
    Ok((net, perm))
}
