//! Plain-text parameter checkpoints.
//!
//! ```text
//! feddkd-params v1
//! <layer_index> <tensor_name> <dim>[x<dim>...] <value> <value> ...
//! ```
//!
//! One line per tensor, fields separated by single spaces. Values use the
//! shortest representation that parses back to the identical `f64`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Param, ParamKind, ParamSet};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

const MAGIC: &str = "feddkd-params v1";

pub fn encode_params<T: Scalar>(params: &ParamSet<T>) -> String {
    let mut out = String::from(MAGIC);
    out.push('\n');
    for p in params.iter() {
        let dims: Vec<String> = p.tensor.shape().iter().map(usize::to_string).collect();
        write!(out, "{} {} {}", p.layer, p.kind.name(), dims.join("x")).unwrap();
        for v in p.tensor.data() {
            write!(out, " {}", v.to_f64_lossy()).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn decode_params<T: Scalar>(text: &str) -> Result<ParamSet<T>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim_end() == MAGIC => {}
        _ => return Err(Error::Checkpoint(format!("missing '{MAGIC}' header"))),
    }
    let mut params = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let bad = |msg: &str| Error::Checkpoint(format!("line {lineno}: {msg}"));
        let mut fields = line.split_ascii_whitespace();
        let layer = fields
            .next()
            .and_then(|f| f.parse::<usize>().ok())
            .ok_or_else(|| bad("bad layer index"))?;
        let kind = fields
            .next()
            .and_then(ParamKind::from_name)
            .ok_or_else(|| bad("unknown tensor name"))?;
        let shape = fields
            .next()
            .ok_or_else(|| bad("missing shape"))?
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad shape"))?;
        let data = fields
            .map(|f| f.parse::<f64>().map(T::of))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad value"))?;
        let tensor = Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))?;
        params.push(Param {
            layer,
            kind,
            tensor,
        });
    }
    Ok(ParamSet::new(params))
}

pub fn save_params<T: Scalar>(params: &ParamSet<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<ParamSet<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_params(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Network;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_exactly(seed in any::<u64>(), bn in any::<bool>()) {
            let net = Network::mlp(3, &[4], 2, bn).unwrap();
            let p: ParamSet = net.init(seed);
            let back: ParamSet = decode_params(&encode_params(&p)).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_params::<f64>("nope\n").is_err());
        assert!(decode_params::<f64>("feddkd-params v1\n0 weight 2x2 1 2 3\n").is_err());
        assert!(decode_params::<f64>("feddkd-params v1\n0 gamma 1 1\n").is_err());
    }
}
