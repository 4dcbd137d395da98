//! The twelve candidate operations and their instantiated forms.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, ParamId, ParamStore, Session, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CandidateOp {
    SkipConnect,
    MaxPool3x3,
    AvgPool3x3,
    EcaNet3x3,
    SepConv3x3,
    SepConv5x5,
    SepConv7x7,
    DilConv3x3,
    DilConv5x5,
    Lbcnn3x3,
    Lbcnn5x5,
    Conv7x1_1x7,
}

impl CandidateOp {
    /// All candidates; position in this array is the op index used for tie-breaking.
    pub const ALL: [CandidateOp; 12] = [
        CandidateOp::SkipConnect,
        CandidateOp::MaxPool3x3,
        CandidateOp::AvgPool3x3,
        CandidateOp::EcaNet3x3,
        CandidateOp::SepConv3x3,
        CandidateOp::SepConv5x5,
        CandidateOp::SepConv7x7,
        CandidateOp::DilConv3x3,
        CandidateOp::DilConv5x5,
        CandidateOp::Lbcnn3x3,
        CandidateOp::Lbcnn5x5,
        CandidateOp::Conv7x1_1x7,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CandidateOp::SkipConnect => "skip_connect",
            CandidateOp::MaxPool3x3 => "max_pool_3x3",
            CandidateOp::AvgPool3x3 => "avg_pool_3x3",
            CandidateOp::EcaNet3x3 => "eca_net_3x3",
            CandidateOp::SepConv3x3 => "sep_conv_3x3",
            CandidateOp::SepConv5x5 => "sep_conv_5x5",
            CandidateOp::SepConv7x7 => "sep_conv_7x7",
            CandidateOp::DilConv3x3 => "dil_conv_3x3",
            CandidateOp::DilConv5x5 => "dil_conv_5x5",
            CandidateOp::Lbcnn3x3 => "lbcnn_3x3",
            CandidateOp::Lbcnn5x5 => "lbcnn_5x5",
            CandidateOp::Conv7x1_1x7 => "conv_7x1_1x7",
        }
    }

    /// Ops that allocate no trainable tensors.
    pub fn is_parameter_free(self) -> bool {
        matches!(
            self,
            CandidateOp::SkipConnect | CandidateOp::MaxPool3x3 | CandidateOp::AvgPool3x3
        )
    }
}

impl fmt::Display for CandidateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CandidateOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace("ecanet", "eca_net");
        CandidateOp::ALL
            .into_iter()
            .find(|op| op.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown operation `{s}`")))
    }
}

impl Serialize for CandidateOp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for CandidateOp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Trainable scalars allocated by one instance of `op`.
///
/// Separable convolutions run the (depthwise, pointwise) pair twice, the
/// first pass keeping `c_in` channels. Local binary convolutions count only
/// their learned 1x1 projection.
pub fn op_param_count(op: CandidateOp, c_in: usize, c_out: usize) -> usize {
    let sq = |k: usize| k * k;
    match op {
        CandidateOp::SkipConnect | CandidateOp::MaxPool3x3 | CandidateOp::AvgPool3x3 => 0,
        CandidateOp::EcaNet3x3 => 3,
        CandidateOp::SepConv3x3 => 2 * c_in * sq(3) + c_in * c_in + c_in * c_out,
        CandidateOp::SepConv5x5 => 2 * c_in * sq(5) + c_in * c_in + c_in * c_out,
        CandidateOp::SepConv7x7 => 2 * c_in * sq(7) + c_in * c_in + c_in * c_out,
        CandidateOp::DilConv3x3 => c_in * sq(3) + c_in * c_out,
        CandidateOp::DilConv5x5 => c_in * sq(5) + c_in * c_out,
        CandidateOp::Lbcnn3x3 | CandidateOp::Lbcnn5x5 => c_in * c_out,
        CandidateOp::Conv7x1_1x7 => 7 * c_in * c_out + 7 * c_out * c_out,
    }
}

/// Output length of a same-padded odd kernel along one axis.
pub(crate) fn strided(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// Floating-point operations of one instance for a single image of
/// spatial size `h x w`, at 2 per multiply-accumulate.
pub fn op_flops(op: CandidateOp, c_in: usize, c_out: usize, h: usize, w: usize, stride: usize) -> u64 {
    let (oh, ow) = (strided(h, stride), strided(w, stride));
    let out_hw = (oh * ow) as u64;
    let (ci, co) = (c_in as u64, c_out as u64);
    let dw = |k: u64| 2 * k * k * ci * out_hw;
    match op {
        CandidateOp::SkipConnect | CandidateOp::MaxPool3x3 | CandidateOp::AvgPool3x3 => 0,
        CandidateOp::EcaNet3x3 => 2 * 3 * ci,
        CandidateOp::SepConv3x3 | CandidateOp::SepConv5x5 | CandidateOp::SepConv7x7 => {
            let k = op_kernel(op) as u64;
            2 * dw(k) + 2 * ci * ci * out_hw + 2 * ci * co * out_hw
        }
        CandidateOp::DilConv3x3 | CandidateOp::DilConv5x5 | CandidateOp::Lbcnn3x3 | CandidateOp::Lbcnn5x5 => {
            dw(op_kernel(op) as u64) + 2 * ci * co * out_hw
        }
        CandidateOp::Conv7x1_1x7 => 2 * 7 * ci * co * (h * ow) as u64 + 2 * 7 * co * co * out_hw,
    }
}

fn op_kernel(op: CandidateOp) -> usize {
    match op {
        CandidateOp::SepConv3x3 | CandidateOp::DilConv3x3 | CandidateOp::Lbcnn3x3 => 3,
        CandidateOp::SepConv5x5 | CandidateOp::DilConv5x5 | CandidateOp::Lbcnn5x5 => 5,
        CandidateOp::SepConv7x7 => 7,
        _ => 3,
    }
}

fn kaiming<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

/// Random ternary depthwise kernel with half of its taps zero.
fn ternary_kernel<R: Rng + ?Sized>(c: usize, k: usize, rng: &mut R) -> Tensor {
    let data = (0..c * k * k)
        .map(|_| match rng.random_range(0..4u8) {
            0 => -1.0,
            1 => 1.0,
            _ => 0.0,
        })
        .collect();
    Tensor::new(vec![c, 1, k, k], data).expect("shape matches")
}

/// A candidate operation bound to its parameters.
#[derive(Debug, Clone)]
pub enum OpInstance {
    Identity,
    Subsample,
    MaxPool { stride: usize },
    AvgPool { stride: usize },
    Eca { stride: usize, weight: ParamId },
    SepConv { k: usize, stride: usize, dw1: ParamId, pw1: ParamId, dw2: ParamId, pw2: ParamId },
    DilConv { k: usize, stride: usize, dw: ParamId, pw: ParamId },
    Lbcnn { stride: usize, kernel: Tensor, pw: ParamId },
    Conv7 { stride: usize, row: ParamId, col: ParamId },
}

impl OpInstance {
    /// Allocates `op` into `store`. Parameter-free ops require `c_in == c_out`.
    pub fn new<R: Rng + ?Sized>(
        op: CandidateOp,
        c_in: usize,
        c_out: usize,
        stride: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 || !(stride == 1 || stride == 2) {
            return Err(Error::InvalidArgument(format!(
                "{op}: c_in={c_in}, c_out={c_out}, stride={stride}"
            )));
        }
        if (op.is_parameter_free() || op == CandidateOp::EcaNet3x3) && c_in != c_out {
            return Err(Error::InvalidArgument(format!("{op} cannot change channels {c_in} -> {c_out}")));
        }
        let mut param = |suffix: &str, shape: &[usize], rng: &mut R| {
            store.add(format!("{prefix}.{suffix}"), kaiming(shape, rng))
        };
        Ok(match op {
            CandidateOp::SkipConnect if stride == 1 => OpInstance::Identity,
            CandidateOp::SkipConnect => OpInstance::Subsample,
            CandidateOp::MaxPool3x3 => OpInstance::MaxPool { stride },
            CandidateOp::AvgPool3x3 => OpInstance::AvgPool { stride },
            CandidateOp::EcaNet3x3 => OpInstance::Eca {
                stride,
                weight: param("eca", &[1, 1, 3, 1], rng),
            },
            CandidateOp::SepConv3x3 | CandidateOp::SepConv5x5 | CandidateOp::SepConv7x7 => {
                let k = op_kernel(op);
                OpInstance::SepConv {
                    k,
                    stride,
                    dw1: param("dw1", &[c_in, 1, k, k], rng),
                    pw1: param("pw1", &[c_in, c_in, 1, 1], rng),
                    dw2: param("dw2", &[c_in, 1, k, k], rng),
                    pw2: param("pw2", &[c_out, c_in, 1, 1], rng),
                }
            }
            CandidateOp::DilConv3x3 | CandidateOp::DilConv5x5 => {
                let k = op_kernel(op);
                OpInstance::DilConv {
                    k,
                    stride,
                    dw: param("dw", &[c_in, 1, k, k], rng),
                    pw: param("pw", &[c_out, c_in, 1, 1], rng),
                }
            }
            CandidateOp::Lbcnn3x3 | CandidateOp::Lbcnn5x5 => {
                let kernel = ternary_kernel(c_in, op_kernel(op), rng);
                OpInstance::Lbcnn {
                    stride,
                    kernel,
                    pw: param("pw", &[c_out, c_in, 1, 1], rng),
                }
            }
            CandidateOp::Conv7x1_1x7 => OpInstance::Conv7 {
                stride,
                row: param("conv1x7", &[c_out, c_in, 1, 7], rng),
                col: param("conv7x1", &[c_out, c_out, 7, 1], rng),
            },
        })
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        match self {
            OpInstance::Identity => Ok(x),
            OpInstance::Subsample => s.graph.avg_pool(x, 1, 2, 0),
            OpInstance::MaxPool { stride } => s.graph.max_pool(x, 3, *stride, 1),
            OpInstance::AvgPool { stride } => s.graph.avg_pool(x, 3, *stride, 1),
            OpInstance::Eca { stride, weight } => {
                let x = if *stride == 2 { s.graph.avg_pool(x, 1, 2, 0)? } else { x };
                let [n, c, _, _] = s.graph.value(x).dims4("eca")?;
                let w = s.param(*weight);
                let g = &mut s.graph;
                let desc = g.global_avg_pool(x)?;
                let desc = g.reshape(desc, &[n, 1, c, 1])?;
                let mixed = g.conv2d(desc, w, 1, 1, 1)?;
                let mixed = g.reshape(mixed, &[n, c, 1, 1])?;
                let gate = g.sigmoid(mixed);
                g.channel_gate(x, gate)
            }
            OpInstance::SepConv { k: _, stride, dw1, pw1, dw2, pw2 } => {
                let (dw1, pw1, dw2, pw2) = (s.param(*dw1), s.param(*pw1), s.param(*dw2), s.param(*pw2));
                let c = s.graph.shape(x)[1];
                let g = &mut s.graph;
                let y = g.relu(x);
                let y = g.conv2d(y, dw1, *stride, 1, c)?;
                let y = g.conv2d(y, pw1, 1, 1, 1)?;
                let y = g.batch_norm(y)?;
                let y = g.relu(y);
                let y = g.conv2d(y, dw2, 1, 1, c)?;
                let y = g.conv2d(y, pw2, 1, 1, 1)?;
                g.batch_norm(y)
            }
            OpInstance::DilConv { k: _, stride, dw, pw } => {
                let (dw, pw) = (s.param(*dw), s.param(*pw));
                let c = s.graph.shape(x)[1];
                let g = &mut s.graph;
                let y = g.relu(x);
                let y = g.conv2d(y, dw, *stride, 2, c)?;
                let y = g.conv2d(y, pw, 1, 1, 1)?;
                g.batch_norm(y)
            }
            OpInstance::Lbcnn { stride, kernel, pw } => {
                let pw = s.param(*pw);
                let c = s.graph.shape(x)[1];
                let g = &mut s.graph;
                let k = g.constant(kernel.clone());
                let y = g.conv2d(x, k, *stride, 1, c)?;
                let y = g.relu(y);
                let y = g.conv2d(y, pw, 1, 1, 1)?;
                g.batch_norm(y)
            }
            OpInstance::Conv7 { stride, row, col } => {
                let (row, col) = (s.param(*row), s.param(*col));
                let g = &mut s.graph;
                let y = g.relu(x);
                let y = g.conv2d_geom(y, row, ConvGeom::same((1, 7), (1, *stride), (1, 1), 1))?;
                let y = g.conv2d_geom(y, col, ConvGeom::same((7, 1), (*stride, 1), (1, 1), 1))?;
                g.batch_norm(y)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_round_trip_and_accept_mixed_case() {
        for op in CandidateOp::ALL {
            assert_eq!(op.name().parse::<CandidateOp>().unwrap(), op);
        }
        assert_eq!("EcaNet_3x3".parse::<CandidateOp>().unwrap(), CandidateOp::EcaNet3x3);
        assert_eq!("Lbcnn_5x5".parse::<CandidateOp>().unwrap(), CandidateOp::Lbcnn5x5);
        assert!("none".parse::<CandidateOp>().is_err());
    }

    #[test]
    fn zero_parameter_ops() {
        assert_eq!(op_param_count(CandidateOp::SkipConnect, 16, 16), 0);
        assert_eq!(op_param_count(CandidateOp::MaxPool3x3, 16, 16), 0);
        assert_eq!(op_param_count(CandidateOp::AvgPool3x3, 16, 16), 0);
    }

    #[test]
    fn sep_conv_3x3_count_by_tensor_enumeration() {
        // depthwise 16x1x3x3, pointwise 16x16x1x1, depthwise 16x1x3x3, pointwise 16x16x1x1
        let enumerated = 16 * 9 + 16 * 16 + 16 * 9 + 16 * 16;
        assert_eq!(enumerated, 800);
        assert_eq!(op_param_count(CandidateOp::SepConv3x3, 16, 16), enumerated);
    }

    #[test]
    fn allocated_scalars_match_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for op in CandidateOp::ALL {
            for (c_in, c_out) in [(1, 1), (4, 4), (16, 16), (3, 8), (8, 5)] {
                if (op.is_parameter_free() || op == CandidateOp::EcaNet3x3) && c_in != c_out {
                    continue;
                }
                for stride in [1, 2] {
                    let mut store = ParamStore::new();
                    OpInstance::new(op, c_in, c_out, stride, &mut store, "op", &mut rng).unwrap();
                    assert_eq!(store.numel(), op_param_count(op, c_in, c_out), "{op} {c_in}->{c_out}");
                }
            }
        }
    }

    #[test]
    fn forward_shapes_and_flops_agree_with_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for op in CandidateOp::ALL {
            for stride in [1, 2] {
                let (c_in, c_out) = if op.is_parameter_free() || op == CandidateOp::EcaNet3x3 { (4, 4) } else { (4, 6) };
                let mut store = ParamStore::new();
                let inst = OpInstance::new(op, c_in, c_out, stride, &mut store, "op", &mut rng).unwrap();
                let mut s = Session::new(&store);
                let x = s.graph.constant(Tensor::randn(&[1, c_in, 8, 6], 1.0, &mut rng));
                let y = inst.forward(&mut s, x).unwrap();
                let expect = [1, c_out, strided(8, stride), strided(6, stride)];
                assert_eq!(s.graph.shape(y), expect, "{op} stride {stride}");
                assert_eq!(s.graph.flops(), op_flops(op, c_in, c_out, 8, 6, stride), "{op} stride {stride}");
            }
        }
    }
}
