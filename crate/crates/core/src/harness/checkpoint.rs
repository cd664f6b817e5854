//! Binary checkpoints of a trained model.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic | 8 bytes, `RSCKPT01` |
//! | input rank `r`, then `r` dims | `u32`, `u64 × r` |
//! | layer count `L` | `u32` |
//! | per layer: name length, name (UTF-8), field count `k`, fields | `u8`, bytes, `u32`, `f64 × k` |
//! | parameter entry count `E` | `u32` |
//! | per entry: layer, role code, rank, dims | `u32`, `u8`, `u32`, `u64 × rank` |
//! | batch-norm stats count `B` | `u32` |
//! | per stats block: layer, features | `u32`, `u64` |
//! | payload length `P` | `u64` |
//! | payload | `f64 × P` |
//!
//! Layer fields: `dense` (in, out), `relu` (), `batchnorm1d` (features,
//! momentum, eps), `dropout` (rate), `conv2d` (in, out, kernel, stride,
//! padding), `maxpool2d` (kernel, stride), `flatten` (). Role codes: 0 weight,
//! 1 bias, 2 gamma, 3 beta. The payload holds the flat parameters in entry
//! order followed by, for each stats block, its running means then running
//! variances.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Model, Network, ParamRole, ParamStore, RunningStats};
use crate::Model64;

pub const MAGIC: &[u8; 8] = b"RSCKPT01";

/// Layer names that are valid activations elsewhere but break piecewise
/// linearity, so a checkpoint holding them is refused with a specific error.
const NON_PIECEWISE_LINEAR: [&str; 7] = ["sigmoid", "tanh", "softmax", "gelu", "silu", "swish", "elu"];

fn layer_fields(layer: &LayerSpec) -> Vec<f64> {
    match *layer {
        LayerSpec::Dense { in_features, out_features } => vec![in_features as f64, out_features as f64],
        LayerSpec::Relu | LayerSpec::Flatten => vec![],
        LayerSpec::BatchNorm1d { features, momentum, eps } => vec![features as f64, momentum, eps],
        LayerSpec::Dropout { rate } => vec![rate],
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
            vec![in_channels as f64, out_channels as f64, kernel as f64, stride as f64, padding as f64]
        }
        LayerSpec::MaxPool2d { kernel, stride } => vec![kernel as f64, stride as f64],
    }
}

pub fn encode(model: &Model64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let u32_ = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    let u64_ = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u64).to_le_bytes());
    let net = &model.network;
    u32_(&mut out, net.input_shape().len());
    for &d in net.input_shape() {
        u64_(&mut out, d);
    }
    u32_(&mut out, net.layers().len());
    for layer in net.layers() {
        let name = layer.name().as_bytes();
        out.push(name.len() as u8);
        out.extend_from_slice(name);
        let fields = layer_fields(layer);
        u32_(&mut out, fields.len());
        for f in fields {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    let entries = model.params.entries();
    u32_(&mut out, entries.len());
    for e in entries {
        u32_(&mut out, e.layer);
        out.push(e.role.code());
        u32_(&mut out, e.shape.len());
        for &d in &e.shape {
            u64_(&mut out, d);
        }
    }
    let stats = &model.stats;
    u32_(&mut out, stats.layers.len());
    for (slot, &layer) in stats.layers.iter().enumerate() {
        u32_(&mut out, layer);
        u64_(&mut out, stats.means[slot].len());
    }
    let stat_len: usize = stats.means.iter().map(|m| 2 * m.len()).sum();
    u64_(&mut out, model.params.flat_len() + stat_len);
    let payload = model.params.flat().iter().chain(stats.means.iter().zip(&stats.vars).flat_map(|(m, v)| m.iter().chain(v)));
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} too large")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_layer(index: usize, name: &str, f: &[f64]) -> Result<LayerSpec> {
    let want = |n: usize| {
        if f.len() == n {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("layer {index} ({name}): expected {n} fields, found {}", f.len())))
        }
    };
    let u = |x: f64| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
            Ok(x as usize)
        } else {
            Err(Error::Checkpoint(format!("layer {index} ({name}): bad integer field {x}")))
        }
    };
    Ok(match name {
        "dense" => {
            want(2)?;
            LayerSpec::Dense { in_features: u(f[0])?, out_features: u(f[1])? }
        }
        "relu" => {
            want(0)?;
            LayerSpec::Relu
        }
        "flatten" => {
            want(0)?;
            LayerSpec::Flatten
        }
        "batchnorm1d" => {
            want(3)?;
            LayerSpec::BatchNorm1d { features: u(f[0])?, momentum: f[1], eps: f[2] }
        }
        "dropout" => {
            want(1)?;
            LayerSpec::Dropout { rate: f[0] }
        }
        "conv2d" => {
            want(5)?;
            LayerSpec::Conv2d { in_channels: u(f[0])?, out_channels: u(f[1])?, kernel: u(f[2])?, stride: u(f[3])?, padding: u(f[4])? }
        }
        "maxpool2d" => {
            want(2)?;
            LayerSpec::MaxPool2d { kernel: u(f[0])?, stride: u(f[1])? }
        }
        other if NON_PIECEWISE_LINEAR.contains(&other) => {
            return Err(Error::NotPiecewiseLinear { layer: index, kind: other.to_owned() })
        }
        other => return Err(Error::Checkpoint(format!("layer {index}: unknown layer kind {other:?}"))),
    })
}

pub fn decode(bytes: &[u8]) -> Result<Model64> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let rank = r.u32()?;
    let input_shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for i in 0..n_layers {
        let len = r.u8()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint(format!("layer {i}: name is not UTF-8")))?.to_owned();
        let k = r.u32()?;
        let fields = (0..k).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(decode_layer(i, &name, &fields)?);
    }
    let network = Network::new(input_shape, layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut params = ParamStore::<f64>::zeros_for(&network);
    let n_entries = r.u32()?;
    if n_entries != params.entries().len() {
        return Err(Error::Checkpoint(format!("expected {} parameter entries, found {n_entries}", params.entries().len())));
    }
    for e in params.entries() {
        let layer = r.u32()?;
        let role = ParamRole::from_code(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown parameter role".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if layer != e.layer || role != e.role || shape != e.shape {
            return Err(Error::Checkpoint(format!("parameter entry {} does not match the network", e.name())));
        }
    }
    let mut stats = RunningStats::<f64>::for_network(&network);
    let n_stats = r.u32()?;
    if n_stats != stats.layers.len() {
        return Err(Error::Checkpoint(format!("expected {} batch-norm blocks, found {n_stats}", stats.layers.len())));
    }
    for slot in 0..n_stats {
        let layer = r.u32()?;
        let features = r.u64()?;
        if layer != stats.layers[slot] || features != stats.means[slot].len() {
            return Err(Error::Checkpoint(format!("batch-norm block {slot} does not match the network")));
        }
    }
    let stat_len: usize = stats.means.iter().map(|m| 2 * m.len()).sum();
    let payload = r.u64()?;
    if payload != params.flat_len() + stat_len {
        return Err(Error::Checkpoint(format!("payload has {payload} values, expected {}", params.flat_len() + stat_len)));
    }
    for v in params.flat_mut() {
        *v = r.f64()?;
    }
    for slot in 0..stats.layers.len() {
        for v in stats.means[slot].iter_mut().chain(stats.vars[slot].iter_mut()) {
            *v = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing byte(s)", bytes.len() - r.pos)));
    }
    Model::from_parts(network, params, stats)
}

pub fn save(model: &Model64, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model64> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::zoo;
    use crate::rng::{stream, Stream};

    #[test]
    fn round_trip_is_exact() {
        let net = zoo::mlp(5, &[4, 3], 2, true, Some(0.5));
        let mut model = Model::<f64>::init(net, &mut stream(1, Stream::Init));
        model.stats.means[0][1] = 0.25;
        model.stats.vars[1][2] = 3.5;
        let back = decode(&encode(&model)).unwrap();
        assert_eq!(back, model);

        let conv = Model::<f64>::init(zoo::lenet5_lite(16, 3), &mut stream(2, Stream::Init));
        assert_eq!(decode(&encode(&conv)).unwrap(), conv);
    }

    #[test]
    fn header_starts_with_magic_and_shapes() {
        let model = Model::<f64>::init(zoo::mlp(3, &[2], 1, false, None), &mut stream(0, Stream::Init));
        let bytes = encode(&model);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 3);
        let tail = bytes.len() - 8 * model.params.flat_len();
        let p0 = f64::from_le_bytes(bytes[tail..tail + 8].try_into().unwrap());
        assert_eq!(p0, model.params.flat()[0]);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let model = Model::<f64>::init(zoo::mlp(3, &[2], 1, false, None), &mut stream(0, Stream::Init));
        let bytes = encode(&model);
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn sigmoid_layer_is_not_piecewise_linear() {
        let model = Model::<f64>::init(zoo::mlp(3, &[2], 1, false, None), &mut stream(0, Stream::Init));
        let mut bytes = encode(&model);
        // layer 1 is "relu" (4 bytes); rename it to an equally long "tanh"
        let at = bytes.windows(4).position(|w| w == b"relu").unwrap();
        bytes[at..at + 4].copy_from_slice(b"tanh");
        assert!(matches!(decode(&bytes), Err(Error::NotPiecewiseLinear { layer: 1, .. })));
    }
}
