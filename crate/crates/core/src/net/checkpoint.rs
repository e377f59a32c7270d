//! Binary checkpoint container: a small header describing the layer
//! chains, followed by contiguous little-endian f32 parameter arrays in
//! layer order. Round-trips are byte-exact.

use std::path::Path;

use super::graph::LayerGraph;
use super::network::Network;
use super::profile::{FusionMode, FusionPoint};
use super::two_stream::TwoStreamGraph;
use super::{LayerShape, LayerSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"AUNC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub profile: String,
    pub fusion: FusionMode,
    pub seed: u64,
}

pub fn save_network(path: &Path, net: &Network<f32>, meta: &CheckpointMeta) -> Result<()> {
    let bytes = save_network_bytes(net, meta);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(Network<f32>, CheckpointMeta)> {
    if !path.exists() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "file does not exist".into(),
        });
    }
    let bytes = std::fs::read(path)?;
    load_network_bytes(&bytes).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn save_network_bytes(net: &Network<f32>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_str(&mut buf, &meta.profile);
    put_str(&mut buf, meta.fusion.as_str());
    put_u64(&mut buf, meta.seed);
    match net {
        Network::Single(g) => {
            buf.push(0); // no fusion point
            buf.push(1); // one section
            put_section_header(&mut buf, g);
            put_section_params(&mut buf, g);
        }
        Network::TwoStream(ts) => {
            buf.push(ts.fusion().code());
            buf.push(3);
            for g in [ts.color(), ts.motion(), ts.head()] {
                put_section_header(&mut buf, g);
            }
            for g in [ts.color(), ts.motion(), ts.head()] {
                put_section_params(&mut buf, g);
            }
        }
    }
    buf
}

pub fn load_network_bytes(bytes: &[u8]) -> Result<(Network<f32>, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::data("bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint version {}",
            version
        )));
    }
    let profile = r.string()?;
    let fusion = FusionMode::parse(&r.string()?)?;
    let seed = r.u64()?;
    let fusion_code = r.u8()?;
    let sections = r.u8()?;
    let meta = CheckpointMeta {
        profile,
        fusion,
        seed,
    };
    match sections {
        1 => {
            if fusion_code != 0 {
                return Err(Error::data("single-section checkpoint with fusion point"));
            }
            let mut g = read_section_header(&mut r)?;
            read_section_params(&mut r, &mut g)?;
            r.finish()?;
            Ok((Network::Single(g), meta))
        }
        3 => {
            let point = FusionPoint::from_code(fusion_code)?;
            let mut graphs = Vec::with_capacity(3);
            for _ in 0..3 {
                graphs.push(read_section_header(&mut r)?);
            }
            for g in graphs.iter_mut() {
                read_section_params(&mut r, g)?;
            }
            r.finish()?;
            let head = graphs.pop().unwrap();
            let motion = graphs.pop().unwrap();
            let color = graphs.pop().unwrap();
            let ts = TwoStreamGraph::from_parts(color, motion, point, head)?;
            Ok((Network::TwoStream(ts), meta))
        }
        n => Err(Error::data(format!("bad section count {}", n))),
    }
}

fn put_section_header(buf: &mut Vec<u8>, g: &LayerGraph<f32>) {
    match *g.input_shape() {
        LayerShape::Map { c, h, w } => {
            buf.push(0);
            put_u32(buf, c as u32);
            put_u32(buf, h as u32);
            put_u32(buf, w as u32);
        }
        LayerShape::Flat(d) => {
            buf.push(1);
            put_u32(buf, d as u32);
        }
    }
    put_u32(buf, g.layers().len() as u32);
    for layer in g.layers() {
        let (kind, trainable, d0, d1) = match *layer {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                trainable,
            } => (1u8, trainable, in_channels as u32, out_channels as u32),
            LayerSpec::MaxPool2x2 => (2, false, 0, 0),
            LayerSpec::Relu => (3, false, 0, 0),
            LayerSpec::Flatten => (4, false, 0, 0),
            LayerSpec::Fc {
                in_dim,
                out_dim,
                trainable,
            } => (5, trainable, in_dim as u32, out_dim as u32),
            LayerSpec::Softmax => (6, false, 0, 0),
        };
        buf.push(kind);
        buf.push(trainable as u8);
        put_u32(buf, d0);
        put_u32(buf, d1);
    }
}

fn read_section_header(r: &mut Reader<'_>) -> Result<LayerGraph<f32>> {
    let input = match r.u8()? {
        0 => {
            let c = r.u32()? as usize;
            let h = r.u32()? as usize;
            let w = r.u32()? as usize;
            LayerShape::map(c, h, w)
        }
        1 => LayerShape::Flat(r.u32()? as usize),
        t => return Err(Error::data(format!("bad shape tag {}", t))),
    };
    let n = r.u32()? as usize;
    if n == 0 || n > 10_000 {
        return Err(Error::data(format!("implausible layer count {}", n)));
    }
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = r.u8()?;
        let trainable = r.u8()? != 0;
        let d0 = r.u32()? as usize;
        let d1 = r.u32()? as usize;
        layers.push(match kind {
            1 => LayerSpec::Conv3x3 {
                in_channels: d0,
                out_channels: d1,
                trainable,
            },
            2 => LayerSpec::MaxPool2x2,
            3 => LayerSpec::Relu,
            4 => LayerSpec::Flatten,
            5 => LayerSpec::Fc {
                in_dim: d0,
                out_dim: d1,
                trainable,
            },
            6 => LayerSpec::Softmax,
            k => return Err(Error::data(format!("bad layer kind {}", k))),
        });
    }
    LayerGraph::zeroed(input, layers)
}

fn put_section_params(buf: &mut Vec<u8>, g: &LayerGraph<f32>) {
    for i in g.param_layer_indices() {
        let p = g.params_at(i).expect("param layer");
        for v in p.w.iter().chain(&p.b) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_section_params(r: &mut Reader<'_>, g: &mut LayerGraph<f32>) -> Result<()> {
    for i in g.param_layer_indices() {
        let p = g.params_at_mut(i).expect("param layer");
        let n = p.w.len() + p.b.len();
        let raw = r.take(4 * n)?;
        for (k, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if k < p.w.len() {
                p.w[k] = v;
            } else {
                p.b[k - p.w.len()] = v;
            }
        }
    }
    Ok(())
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    let b = s.as_bytes();
    buf.extend_from_slice(&(b.len() as u16).to_le_bytes());
    buf.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data("checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = {
            let b = self.take(2)?;
            u16::from_le_bytes([b[0], b[1]]) as usize
        };
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::data("checkpoint string not utf-8"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::data(format!(
                "{} trailing bytes after checkpoint payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
