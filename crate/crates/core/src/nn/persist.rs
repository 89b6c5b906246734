//! Text weights file.
//!
//! ```text
//! format_version 1
//! input_h 64
//! input_w 64
//! conv1_filters 8
//! conv2_filters 16
//! embed_dim 32
//! init_seed 7
//! layer conv1.w 8 1 3 3
//! -1.2345678901234567e-1 ...
//! ...
//! end
//! ```
//!
//! Values are written with 17 significant digits so every `f64` survives the
//! round trip bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{EmbeddingNet, NetSpec, Params, LAYER_NAMES};

pub const FORMAT_VERSION: u32 = 1;
const VALUES_PER_LINE: usize = 8;

pub fn render_net(net: &EmbeddingNet) -> String {
    let s = &net.spec;
    let mut out = String::new();
    let _ = writeln!(out, "format_version {FORMAT_VERSION}");
    let _ = writeln!(out, "input_h {}", s.input_h);
    let _ = writeln!(out, "input_w {}", s.input_w);
    let _ = writeln!(out, "conv1_filters {}", s.conv1_filters);
    let _ = writeln!(out, "conv2_filters {}", s.conv2_filters);
    let _ = writeln!(out, "embed_dim {}", s.embed_dim);
    let _ = writeln!(out, "init_seed {}", net.init_seed);
    for (name, tensor) in LAYER_NAMES.iter().zip(net.params.tensors()) {
        let dims: Vec<String> = tensor.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(out, "layer {name} {}", dims.join(" "));
        for chunk in tensor.data().chunks(VALUES_PER_LINE) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn save_net(net: &EmbeddingNet, path: &Path) -> Result<()> {
    fs::write(path, render_net(net)).map_err(|e| Error::io(path, e))
}

pub fn load_net(path: &Path) -> Result<EmbeddingNet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_net(&text).map_err(|e| match e {
        Error::Format { reason, .. } => Error::format(path, reason),
        other => other,
    })
}

pub fn parse_net(text: &str) -> Result<EmbeddingNet> {
    let bad = |reason: String| Error::format("<weights>", reason);
    let mut tokens = text.split_ascii_whitespace();
    let mut header = |key: &str| -> Result<u64> {
        match (tokens.next(), tokens.next()) {
            (Some(k), Some(v)) if k == key => v
                .parse::<u64>()
                .map_err(|_| bad(format!("invalid value '{v}' for {key}"))),
            (Some(k), _) => Err(bad(format!("expected '{key}', found '{k}'"))),
            _ => Err(bad(format!("missing '{key}'"))),
        }
    };
    let version = header("format_version")?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let as_usize = |v: u64| usize::try_from(v).map_err(|_| bad("dimension too large".into()));
    let spec = NetSpec {
        input_h: as_usize(header("input_h")?)?,
        input_w: as_usize(header("input_w")?)?,
        conv1_filters: as_usize(header("conv1_filters")?)?,
        conv2_filters: as_usize(header("conv2_filters")?)?,
        embed_dim: as_usize(header("embed_dim")?)?,
    };
    spec.validate().map_err(|e| bad(e.to_string()))?;
    let init_seed = header("init_seed")?;

    let mut params = Params::zeros(&spec);
    for (name, tensor) in LAYER_NAMES.iter().zip(params.tensors_mut()) {
        match (tokens.next(), tokens.next()) {
            (Some("layer"), Some(n)) if n == *name => {}
            _ => return Err(bad(format!("expected layer {name}"))),
        }
        for (axis, &expected) in tensor.shape().to_vec().iter().enumerate() {
            let dim = tokens
                .next()
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| bad(format!("{name}: missing dimension {axis}")))?;
            if dim != expected {
                return Err(Error::dims(
                    format!("{name} axis {axis} = {expected}"),
                    format!("{dim}"),
                ));
            }
        }
        for slot in tensor.data_mut() {
            let token = tokens.next().ok_or_else(|| bad(format!("{name}: truncated values")))?;
            let value: f64 = token
                .parse()
                .map_err(|_| bad(format!("{name}: invalid number '{token}'")))?;
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("{name} contains {token}")));
            }
            *slot = value;
        }
    }
    if tokens.next() != Some("end") || tokens.next().is_some() {
        return Err(bad("expected 'end' after the last layer".into()));
    }
    Ok(EmbeddingNet {
        spec,
        params,
        init_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = EmbeddingNet::init(NetSpec::with_input(16, 8), 42).unwrap();
        let back = parse_net(&render_net(&net)).unwrap();
        assert_eq!(back.spec, net.spec);
        assert_eq!(back.init_seed, 42);
        for (a, b) in net.params.tensors().iter().zip(back.params.tensors()) {
            let bits = |t: &crate::nn::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn rejects_other_versions() {
        let net = EmbeddingNet::init(NetSpec::with_input(8, 8), 1).unwrap();
        let text = render_net(&net).replacen("format_version 1", "format_version 2", 1);
        assert!(matches!(parse_net(&text), Err(Error::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn rejects_shape_and_syntax_problems() {
        let net = EmbeddingNet::init(NetSpec::with_input(8, 8), 1).unwrap();
        let text = render_net(&net);
        let wrong_shape = text.replacen("layer conv1.b 8", "layer conv1.b 9", 1);
        assert!(matches!(parse_net(&wrong_shape), Err(Error::DimensionMismatch { .. })));
        let truncated = &text[..text.len() / 2];
        assert!(matches!(parse_net(truncated), Err(Error::Format { .. })));
        let no_end = text.replace("end\n", "");
        assert!(parse_net(&no_end).is_err());
        assert!(parse_net("hello").is_err());
    }
}
