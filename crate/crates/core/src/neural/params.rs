use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::NeuralError;
use crate::scalar::Real;

/// All trainable weights. Matrices are row-major `[out, in]`.
///
/// * embedding `(D+2) -> H`, tanh
/// * message MLP `2H -> H -> H`, ReLU hidden layer, linear output; intra-entity
///   edges add `msg_intra` to the hidden pre-activation
/// * GRU gates over `[h, m]` (update `z`, reset `r`, candidate `h~`)
/// * readout MLP `H -> H -> 1` on the summed node states
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    input_dim: usize,
    hidden: usize,
    pub embed_w: Vec<T>,
    pub embed_b: Vec<T>,
    pub msg_w1: Vec<T>,
    pub msg_b1: Vec<T>,
    pub msg_intra: Vec<T>,
    pub msg_w2: Vec<T>,
    pub msg_b2: Vec<T>,
    pub gru_wz: Vec<T>,
    pub gru_bz: Vec<T>,
    pub gru_wr: Vec<T>,
    pub gru_br: Vec<T>,
    pub gru_wh: Vec<T>,
    pub gru_bh: Vec<T>,
    pub read_w1: Vec<T>,
    pub read_b1: Vec<T>,
    pub read_w2: Vec<T>,
    pub read_b2: Vec<T>,
}

/// Named view of one parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub shape: [usize; 2],
}

macro_rules! blocks {
    ($self:ident, $($field:ident),*) => {
        [$(&$self.$field),*]
    };
}

macro_rules! blocks_mut {
    ($self:ident, $($field:ident),*) => {
        [$(&mut $self.$field),*]
    };
}

const BLOCK_NAMES: [&str; 17] = [
    "embed_w",
    "embed_b",
    "msg_w1",
    "msg_b1",
    "msg_intra",
    "msg_w2",
    "msg_b2",
    "gru_wz",
    "gru_bz",
    "gru_wr",
    "gru_br",
    "gru_wh",
    "gru_bh",
    "read_w1",
    "read_b1",
    "read_w2",
    "read_b2",
];

impl<T: Real> NetParams<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let mut p = Self {
            input_dim,
            hidden,
            embed_w: Vec::new(),
            embed_b: Vec::new(),
            msg_w1: Vec::new(),
            msg_b1: Vec::new(),
            msg_intra: Vec::new(),
            msg_w2: Vec::new(),
            msg_b2: Vec::new(),
            gru_wz: Vec::new(),
            gru_bz: Vec::new(),
            gru_wr: Vec::new(),
            gru_br: Vec::new(),
            gru_wh: Vec::new(),
            gru_bh: Vec::new(),
            read_w1: Vec::new(),
            read_b1: Vec::new(),
            read_w2: Vec::new(),
            read_b2: Vec::new(),
        };
        let shapes = p.layout();
        for (v, b) in p.blocks_mut().into_iter().zip(shapes) {
            *v = vec![T::zero(); b.shape[0] * b.shape[1]];
        }
        p
    }

    /// Glorot-uniform weights, zero biases, reproducible per seed.
    pub fn random(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(input_dim, hidden);
        let shapes = p.layout();
        for (v, b) in p.blocks_mut().into_iter().zip(shapes) {
            let [rows, cols] = b.shape;
            if cols == 1 || b.name == "msg_intra" {
                continue;
            }
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            for x in v.iter_mut() {
                *x = T::lit(rng.random_range(-limit..limit));
            }
        }
        p
    }

    /// Every block filled with uniform noise in `[-scale, scale]`, biases included.
    pub fn random_dense(input_dim: usize, hidden: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(input_dim, hidden);
        for v in p.blocks_mut() {
            for x in v.iter_mut() {
                *x = T::lit(rng.random_range(-scale..scale));
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn layout(&self) -> [ParamBlock; 17] {
        let (d, h) = (self.input_dim, self.hidden);
        let shapes: [[usize; 2]; 17] = [
            [h, d],
            [h, 1],
            [h, 2 * h],
            [h, 1],
            [h, 1],
            [h, h],
            [h, 1],
            [h, 2 * h],
            [h, 1],
            [h, 2 * h],
            [h, 1],
            [h, 2 * h],
            [h, 1],
            [h, h],
            [h, 1],
            [1, h],
            [1, 1],
        ];
        std::array::from_fn(|k| ParamBlock { name: BLOCK_NAMES[k], shape: shapes[k] })
    }

    pub fn blocks(&self) -> [&Vec<T>; 17] {
        blocks!(
            self, embed_w, embed_b, msg_w1, msg_b1, msg_intra, msg_w2, msg_b2, gru_wz, gru_bz, gru_wr, gru_br, gru_wh,
            gru_bh, read_w1, read_b1, read_w2, read_b2
        )
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<T>; 17] {
        blocks_mut!(
            self, embed_w, embed_b, msg_w1, msg_b1, msg_intra, msg_w2, msg_b2, gru_wz, gru_bz, gru_wr, gru_br, gru_wh,
            gru_bh, read_w1, read_b1, read_w2, read_b2
        )
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *d + alpha * *s;
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for b in self.blocks_mut() {
            for x in b.iter_mut() {
                *x = *x * alpha;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn l2_norm(&self) -> T {
        self.blocks().iter().flat_map(|b| b.iter()).fold(T::zero(), |a, &x| a + x * x).sqrt()
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        let mut out = NetParams::<U>::zeros(self.input_dim, self.hidden);
        for (dst, src) in out.blocks_mut().into_iter().zip(self.blocks()) {
            *dst = src.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
struct BlockFile<T> {
    name: String,
    shape: [usize; 2],
    data: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
struct ParamsFile<T> {
    input_dim: usize,
    hidden: usize,
    blocks: Vec<BlockFile<T>>,
}

impl<T: Real> Serialize for NetParams<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let blocks = self
            .layout()
            .iter()
            .zip(self.blocks())
            .map(|(b, v)| BlockFile { name: b.name.to_string(), shape: b.shape, data: v.clone() })
            .collect();
        ParamsFile { input_dim: self.input_dim, hidden: self.hidden, blocks }.serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for NetParams<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = ParamsFile::<T>::deserialize(d)?;
        NetParams::from_file(file).map_err(serde::de::Error::custom)
    }
}

impl<T: Real> NetParams<T> {
    fn from_file(file: ParamsFile<T>) -> Result<Self, NeuralError> {
        let mut p = Self::zeros(file.input_dim, file.hidden);
        let layout = p.layout();
        if file.blocks.len() != layout.len() {
            return Err(NeuralError::Params(format!("expected {} blocks, found {}", layout.len(), file.blocks.len())));
        }
        for ((dst, want), got) in p.blocks_mut().into_iter().zip(layout).zip(file.blocks) {
            if got.name != want.name || got.shape != want.shape || got.data.len() != want.shape[0] * want.shape[1] {
                return Err(NeuralError::Params(format!(
                    "block `{}` {:?} does not match expected `{}` {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
            *dst = got.data;
        }
        if !p.is_finite() {
            return Err(NeuralError::Params("non-finite weight".into()));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_keeps_every_bit() {
        let p = NetParams::<f64>::random_dense(5, 4, 3, 0.7);
        let text = serde_json::to_string(&p).unwrap();
        let back: NetParams<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["blocks"][2]["name"], "msg_w1");
        assert_eq!(v["blocks"][2]["shape"], serde_json::json!([4, 8]));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = NetParams::<f64>::random(5, 4, 3);
        let mut v = serde_json::to_value(&p).unwrap();
        v["blocks"][0]["shape"] = serde_json::json!([4, 6]);
        assert!(serde_json::from_value::<NetParams<f64>>(v).is_err());
    }

    #[test]
    fn parameter_count() {
        let p = NetParams::<f64>::zeros(18, 32);
        let h = 32;
        let expected = h * 18 + h + (2 * h * h + 2 * h + h * h + h) + 3 * (2 * h * h + h) + (h * h + h + h + 1);
        assert_eq!(p.n_params(), expected);
    }
}
