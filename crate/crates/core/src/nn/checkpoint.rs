//! Network checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic        4 bytes  "SKNN"
//! version      u32      1
//! layer_count  u32
//! per layer:   u32 input_dim, u32 output_dim, u32 activation
//!              (0 = relu, 1 = sigmoid, 2 = identity)
//! per layer:   output_dim × input_dim f32 weights, row-major
//!              (row = output unit), then output_dim f32 biases
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Activation, Layer, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SKNN";
const VERSION: u32 = 1;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "network checkpoint",
        reason: reason.into(),
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn activation_code(a: Activation) -> u32 {
    match a {
        Activation::Relu => 0,
        Activation::Sigmoid => 1,
        Activation::Identity => 2,
    }
}

pub fn write_network<W: Write>(net: &Network, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&(layer.input_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.output_dim() as u32).to_le_bytes())?;
        w.write_all(&activation_code(layer.activation).to_le_bytes())?;
    }
    for layer in net.layers() {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_network<R: Read>(r: &mut R) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(r)? as usize;
    if count == 0 || count > 64 {
        return Err(bad(format!("implausible layer count {count}")));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let input = read_u32(r)? as usize;
        let output = read_u32(r)? as usize;
        let activation = match read_u32(r)? {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            2 => Activation::Identity,
            c => return Err(bad(format!("unknown activation code {c}"))),
        };
        shapes.push((input, output, activation));
    }
    let mut layers = Vec::with_capacity(count);
    for (input, output, activation) in shapes {
        let mut weights = Array2::zeros((output, input));
        for v in weights.iter_mut() {
            *v = f64::from(read_f32(r)?);
        }
        let mut bias = Array1::zeros(output);
        for v in bias.iter_mut() {
            *v = f64::from(read_f32(r)?);
        }
        layers.push(Layer {
            weights,
            bias,
            activation,
        });
    }
    Network::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::new(&[5, 7, 3], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 2 * 12 + 4 * net.num_params());
        let back = read_network(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dims(), net.dims());
        for (a, b) in net.layers().iter().zip(back.layers()) {
            assert_eq!(a.activation, b.activation);
            for (x, y) in a.weights.iter().zip(b.weights.iter()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_network(&mut &b"NOPE\x01\0\0\0"[..]).is_err());
        let mut truncated = Vec::new();
        let net = Network::new(&[2, 2], Activation::Identity, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        write_network(&net, &mut truncated).unwrap();
        truncated.pop();
        assert!(read_network(&mut truncated.as_slice()).is_err());
    }
}
