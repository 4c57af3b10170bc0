//! Self-describing weight checkpoints.
//!
//! Layout, all little-endian: magic `S2CK`, version (u16), then the network
//! configuration (depth, features, input channels, output channels and
//! scale as u32, residual scaling as f64, interpolation kernel as u8), the
//! declared parameter count (u64) and the tensor count (u32). Each tensor
//! follows as its rank (u32), its dimensions (u32 each) and its f32 values.
//! Tensors appear in declaration order, kernel before bias for every
//! convolution; kernels have shape `[f_out, f_in, 3, 3]`.

use std::path::Path;

use s2sr_core::network::{param_count, ConvParams, KERNEL};
use s2sr_core::resample::Upsampling;
use s2sr_core::{NetworkConfig, NetworkWeights};

use crate::bin_io::{put_f32s, read_file, write_file, Reader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"S2CK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_weights(config: &NetworkConfig, weights: &NetworkWeights<f32>) -> Result<Vec<u8>> {
    config.validate()?;
    weights.check(config)?;
    let mut out = Vec::with_capacity(64 + weights.param_count() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [config.depth, config.features, config.input_channels, config.output_channels, config.scale] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&config.lambda.to_le_bytes());
    out.push(config.upsampling.code());
    out.extend_from_slice(&(param_count(config) as u64).to_le_bytes());
    out.extend_from_slice(&(2 * config.layer_count() as u32).to_le_bytes());
    for conv in weights.convs() {
        put_tensor(&mut out, &[conv.f_out(), conv.f_in(), KERNEL, KERNEL], conv.kernel());
        put_tensor(&mut out, &[conv.f_out()], conv.bias());
    }
    Ok(out)
}

fn put_tensor(out: &mut Vec<u8>, dims: &[usize], values: &[f32]) {
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    put_f32s(out, values);
}

pub fn decode_weights(path: &Path, bytes: &[u8]) -> Result<(NetworkConfig, NetworkWeights<f32>)> {
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionUnsupported { path: path.to_path_buf(), found: version.into() });
    }
    let depth = r.u32("depth")? as usize;
    let features = r.u32("features")? as usize;
    let input_channels = r.u32("input channels")? as usize;
    let output_channels = r.u32("output channels")? as usize;
    let scale = r.u32("scale")? as usize;
    let lambda = r.f64("lambda")?;
    let code = r.u8("interpolation kernel")?;
    let upsampling =
        Upsampling::from_code(code).ok_or_else(|| r.corrupt(format!("unknown interpolation code {code}")))?;
    if depth > 4096 || features > 65536 {
        return Err(r.corrupt(format!("implausible network size d={depth} f={features}")));
    }
    let config = NetworkConfig { depth, features, input_channels, output_channels, lambda, scale, upsampling };
    config.validate().map_err(|e| r.corrupt(format!("invalid configuration: {e}")))?;
    let declared = r.u64("parameter count")?;
    if declared != param_count(&config) as u64 {
        return Err(
            r.corrupt(format!("declares {declared} parameters, the configuration has {}", param_count(&config)))
        );
    }
    let count = r.u32("tensor count")? as usize;
    let shapes = config.conv_shapes();
    if count != 2 * shapes.len() {
        return Err(r.corrupt(format!("{count} tensors for {} convolutions", shapes.len())));
    }
    let mut convs = Vec::with_capacity(shapes.len());
    for &(f_out, f_in) in &shapes {
        let kernel = read_tensor(&mut r, &[f_out, f_in, KERNEL, KERNEL])?;
        let bias = read_tensor(&mut r, &[f_out])?;
        convs.push(ConvParams::new(f_out, f_in, kernel, bias)?);
    }
    r.finish()?;
    let weights = NetworkWeights::from_convs(&config, convs)?;
    Ok((config, weights))
}

fn read_tensor(r: &mut Reader<'_>, expected: &[usize]) -> Result<Vec<f32>> {
    let rank = r.u32("tensor rank")? as usize;
    if rank > 8 {
        return Err(r.corrupt(format!("tensor rank {rank}")));
    }
    let dims = (0..rank).map(|_| r.u32("tensor shape").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    if dims != expected {
        return Err(r.corrupt(format!("tensor shape {dims:?}, expected {expected:?}")));
    }
    r.f32s(dims.iter().product(), "tensor values")
}

pub fn save_weights(config: &NetworkConfig, weights: &NetworkWeights<f32>, path: &Path) -> Result<()> {
    write_file(path, &encode_weights(config, weights)?)
}

pub fn load_weights(path: &Path) -> Result<(NetworkConfig, NetworkWeights<f32>)> {
    decode_weights(path, &read_file(path)?)
}

/// Loads a checkpoint that must have been written for `expected`.
pub fn load_weights_for(path: &Path, expected: &NetworkConfig) -> Result<NetworkWeights<f32>> {
    let (config, weights) = load_weights(path)?;
    if &config != expected {
        return Err(s2sr_core::Error::ShapeMismatch(format!(
            "{} holds a d={} f={} network with {}->{} bands, expected d={} f={} with {}->{}",
            path.display(),
            config.depth,
            config.features,
            config.input_channels,
            config.output_channels,
            expected.depth,
            expected.features,
            expected.input_channels,
            expected.output_channels
        ))
        .into());
    }
    Ok(weights)
}
