//! Binary weight files.
//!
//! ```text
//! "PLAB"               4 bytes magic
//! version              u16 LE (currently 1)
//! layer count          u32 LE, weight-bearing layers only
//! per layer:
//!   kind               u8 (1 = conv, 2 = dense)
//!   weight rank        u8
//!   weight extents     rank x u32 LE
//!   bias length        u32 LE
//!   weight values      f64 LE, row-major
//!   bias values        f64 LE
//! ```
//!
//! The topology itself lives in the plain-text spec; loading checks that the
//! file matches it.

use super::{LayerParams, LayerSpec, NetError, Network, NetworkSpec};
use crate::tensorcore::Tensor;

pub const MAGIC: &[u8; 4] = b"PLAB";
pub const VERSION: u16 = 1;

pub fn save_weights(net: &Network) -> Vec<u8> {
    let layers: Vec<(u8, &LayerParams)> = net
        .spec()
        .layers
        .iter()
        .zip(net.layer_params())
        .filter_map(|(l, p)| {
            let kind = match l {
                LayerSpec::Conv { .. } => 1,
                _ => 2,
            };
            p.as_ref().map(|p| (kind, p))
        })
        .collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for (kind, p) in layers {
        out.push(kind);
        out.push(p.weight.shape().len() as u8);
        for &d in p.weight.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(p.bias.len() as u32).to_le_bytes());
        for v in p.weight.data().iter().chain(p.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NetError::WeightFormat(format!("truncated at byte {} (wanted {n} more)", self.at))
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NetError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| NetError::WeightFormat("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn load_weights(spec: NetworkSpec, bytes: &[u8]) -> Result<Network, NetError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(NetError::WeightFormat("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(NetError::WeightFormat(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut loaded = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let kind = r.u8()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let bias_len = r.u32()? as usize;
        let weight = Tensor::from_vec(&shape, r.f64s(shape.iter().product())?)?;
        let bias = Tensor::from_vec(&[bias_len], r.f64s(bias_len)?)?;
        loaded.push((kind, LayerParams { weight, bias }));
    }
    if r.at != bytes.len() {
        return Err(NetError::WeightFormat(format!(
            "{} trailing bytes",
            bytes.len() - r.at
        )));
    }
    let mut loaded = loaded.into_iter();
    let mut params = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        if !layer.has_params() {
            params.push(None);
            continue;
        }
        let want = if matches!(layer, LayerSpec::Conv { .. }) { 1 } else { 2 };
        match loaded.next() {
            Some((kind, p)) if kind == want => params.push(Some(p)),
            Some((kind, _)) => {
                return Err(NetError::WeightFormat(format!(
                    "layer kind {kind} where the network spec expects {want}"
                )))
            }
            None => return Err(NetError::WeightFormat("fewer layers than the network spec".into())),
        }
    }
    if loaded.next().is_some() {
        return Err(NetError::WeightFormat("more layers than the network spec".into()));
    }
    Network::from_parts(spec, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let net = Network::build(NetworkSpec::mini_cnn_a(), 1).unwrap();
        let bytes = save_weights(&net);
        assert_eq!(&bytes[..4], b"PLAB");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 6);
        // first layer: conv, rank 4, [16, 3, 3, 3], bias 16
        assert_eq!(bytes[10], 1);
        assert_eq!(bytes[11], 4);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 16);
    }

    #[test]
    fn rejects_corruption() {
        let spec = NetworkSpec::mini_cnn_a();
        let net = Network::build(spec.clone(), 1).unwrap();
        let bytes = save_weights(&net);
        assert!(load_weights(spec.clone(), &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(load_weights(spec.clone(), &bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(load_weights(spec, &extra).is_err());
        assert!(load_weights(NetworkSpec::mini_cnn_v(), &bytes).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn roundtrip_is_bit_exact(seed in any::<u64>(), poke in any::<u64>()) {
            let spec = NetworkSpec::mini_cnn_a();
            let mut net = Network::build(spec.clone(), seed).unwrap();
            // include awkward values: negative zero, subnormal, extremes
            let w = net.layer_params_mut()[0].as_mut().unwrap();
            let d = w.weight.data_mut();
            d[0] = -0.0;
            d[1] = f64::MIN_POSITIVE / 4.0;
            d[2] = f64::MAX;
            d[3] = f64::from_bits(poke >> 2);
            let back = load_weights(spec, &save_weights(&net)).unwrap();
            let a: Vec<u64> = net.param_tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect();
            let b: Vec<u64> = back.param_tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect();
            prop_assert_eq!(a, b);
        }
    }
}
