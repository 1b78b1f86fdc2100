//! Condition encoders: RSS fragments or transmitter locations → a fixed-size
//! embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{concat, Bound, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::scenario::TxLocation;
use crate::selection::Fragment;
use crate::Scalar;

/// Affine map between dBm and the model's `[-1, 1]` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min_dbm: f64,
    pub max_dbm: f64,
}

impl Normalizer {
    pub fn new(min_dbm: f64, max_dbm: f64) -> Result<Self> {
        if !(min_dbm.is_finite() && max_dbm.is_finite() && min_dbm < max_dbm) {
            return Err(Error::Configuration(format!(
                "normalization bounds [{min_dbm}, {max_dbm}] are not an interval"
            )));
        }
        Ok(Self { min_dbm, max_dbm })
    }

    pub fn normalize(&self, dbm: f64) -> f64 {
        2.0 * (dbm - self.min_dbm) / (self.max_dbm - self.min_dbm) - 1.0
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        (x + 1.0) / 2.0 * (self.max_dbm - self.min_dbm) + self.min_dbm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Fragments,
    #[serde(rename = "tx")]
    TxLocations,
}

impl ConditionKind {
    pub fn code(self) -> u32 {
        match self {
            ConditionKind::Fragments => 0,
            ConditionKind::TxLocations => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(ConditionKind::Fragments),
            1 => Ok(ConditionKind::TxLocations),
            other => Err(Error::Format(format!("unknown condition kind {other}"))),
        }
    }
}

impl std::str::FromStr for ConditionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fragments" => Ok(ConditionKind::Fragments),
            "tx" | "tx_locations" => Ok(ConditionKind::TxLocations),
            other => Err(Error::Configuration(format!(
                "unknown condition kind {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConditionKind::Fragments => "fragments",
            ConditionKind::TxLocations => "tx",
        })
    }
}

/// The model's conditioning input. The maximum list length lives in
/// [`EncoderConfig::capacity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "lowercase")]
pub enum ConditionSet {
    Fragments(Vec<Fragment>),
    #[serde(rename = "tx")]
    TxLocations(Vec<TxLocation>),
}

impl ConditionSet {
    pub fn kind(&self) -> ConditionKind {
        match self {
            ConditionSet::Fragments(_) => ConditionKind::Fragments,
            ConditionSet::TxLocations(_) => ConditionKind::TxLocations,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ConditionSet::Fragments(f) => f.len(),
            ConditionSet::TxLocations(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major normalized values followed by the origin as fractions of the grid.
pub fn flatten_fragment(f: &Fragment, norm: &Normalizer, grid_n: usize) -> Vec<f64> {
    f.values_dbm
        .iter()
        .map(|&v| norm.normalize(v as f64))
        .chain([
            f.origin.0 as f64 / grid_n as f64,
            f.origin.1 as f64 / grid_n as f64,
        ])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: ConditionKind,
    pub grid_n: usize,
    /// Output embedding length.
    pub d_cond: usize,
    /// Hidden width of the fragment network.
    pub hidden: usize,
    /// Most fragments (or transmitters) accepted.
    pub capacity: usize,
    /// Fragment side length.
    pub k: usize,
    /// Per-transmitter embedding length.
    pub tx_dim: usize,
}

impl EncoderConfig {
    pub fn new(kind: ConditionKind, grid_n: usize, k: usize) -> Self {
        Self {
            kind,
            grid_n,
            d_cond: 64,
            hidden: 128,
            capacity: match kind {
                ConditionKind::Fragments => 10,
                ConditionKind::TxLocations => 2,
            },
            k,
            tx_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_cond == 0 || self.hidden == 0 || self.capacity == 0 || self.tx_dim == 0 {
            return Err(Error::Configuration(
                "encoder widths and capacity must be positive".into(),
            ));
        }
        if self.k == 0 || self.k > self.grid_n {
            return Err(Error::Configuration(format!(
                "fragment size {} invalid",
                self.k
            )));
        }
        Ok(())
    }

    fn fragment_width(&self) -> usize {
        self.k * self.k + 2
    }
}

#[derive(Debug, Clone, Copy)]
enum Layers {
    Fragments { l1: Linear, l2: Linear, l3: Linear },
    Tx { a1: Linear, a2: Linear, out: Linear },
}

#[derive(Debug, Clone, Copy)]
pub struct ConditionEncoder {
    pub cfg: EncoderConfig,
    layers: Layers,
}

impl ConditionEncoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        cfg: EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let layers = match cfg.kind {
            ConditionKind::Fragments => {
                let d_in = cfg.capacity * cfg.fragment_width();
                Layers::Fragments {
                    l1: Linear::new(store, "enc.frag.l1", d_in, cfg.hidden, rng),
                    l2: Linear::new(store, "enc.frag.l2", cfg.hidden, cfg.hidden, rng),
                    l3: Linear::new(store, "enc.frag.l3", cfg.hidden, cfg.d_cond, rng),
                }
            }
            ConditionKind::TxLocations => Layers::Tx {
                a1: Linear::new(store, "enc.tx.a1", 2, cfg.tx_dim, rng),
                a2: Linear::new(store, "enc.tx.a2", cfg.tx_dim, cfg.tx_dim, rng),
                out: Linear::new(
                    store,
                    "enc.tx.out",
                    cfg.capacity * cfg.tx_dim,
                    cfg.d_cond,
                    rng,
                ),
            },
        };
        Ok(Self { cfg, layers })
    }

    fn check(&self, cond: &ConditionSet) -> Result<()> {
        if cond.kind() != self.cfg.kind {
            return Err(Error::Condition(format!(
                "encoder expects {} but got {}",
                self.cfg.kind,
                cond.kind()
            )));
        }
        if cond.len() > self.cfg.capacity {
            return Err(Error::Condition(format!(
                "{} items exceed capacity {}",
                cond.len(),
                self.cfg.capacity
            )));
        }
        Ok(())
    }

    /// Zero-padded concatenation of flattened fragments, `[capacity·(k²+2), 1]`.
    pub fn fragment_input<S: Scalar>(
        &self,
        fragments: &[Fragment],
        norm: &Normalizer,
    ) -> Result<Tensor<S>> {
        let width = self.cfg.fragment_width();
        let mut v = vec![0.0; self.cfg.capacity * width];
        for (i, f) in fragments.iter().enumerate() {
            let fits = f.origin.0 + f.size_k <= self.cfg.grid_n
                && f.origin.1 + f.size_k <= self.cfg.grid_n;
            if f.size_k != self.cfg.k || f.values_dbm.len() != f.size_k * f.size_k || !fits {
                return Err(Error::Condition(format!(
                    "fragment {i} is not a {k}x{k} window inside the grid",
                    k = self.cfg.k
                )));
            }
            v[i * width..(i + 1) * width].copy_from_slice(&flatten_fragment(
                f,
                norm,
                self.cfg.grid_n,
            ));
        }
        Tensor::from_f64(&[v.len(), 1], &v)
    }

    /// Embedding `[d_cond, 1]` of `cond`.
    pub fn encode<'t, S: Scalar>(
        &self,
        p: &Bound<'t, S>,
        tape: &'t Tape<S>,
        cond: &ConditionSet,
        norm: &Normalizer,
    ) -> Result<Var<'t, S>> {
        self.check(cond)?;
        match (&self.layers, cond) {
            (Layers::Fragments { l1, l2, l3 }, ConditionSet::Fragments(frags)) => {
                let x = tape.constant(self.fragment_input(frags, norm)?);
                let h = l1.forward(p, &x)?.silu();
                let h = l2.forward(p, &h)?.silu();
                l3.forward(p, &h)
            }
            (Layers::Tx { a1, a2, out }, ConditionSet::TxLocations(txs)) => {
                let n = self.cfg.grid_n as f64;
                let mut parts = Vec::with_capacity(txs.len() + 1);
                for tx in txs {
                    if tx.x >= self.cfg.grid_n || tx.y >= self.cfg.grid_n {
                        return Err(Error::Condition(format!(
                            "transmitter {tx:?} outside the grid"
                        )));
                    }
                    let xy = tape.constant(Tensor::from_f64(
                        &[2, 1],
                        &[tx.x as f64 / n, tx.y as f64 / n],
                    )?);
                    parts.push(a2.forward(p, &a1.forward(p, &xy)?.silu())?);
                }
                let pad = (self.cfg.capacity - txs.len()) * self.cfg.tx_dim;
                if pad > 0 {
                    parts.push(tape.constant(Tensor::zeros(&[pad, 1])));
                }
                out.forward(p, &concat(&parts)?)
            }
            _ => unreachable!("kind checked above"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn norm() -> Normalizer {
        Normalizer::new(-120.0, -20.0).unwrap()
    }

    fn frag(origin: (usize, usize), values: [f32; 4]) -> Fragment {
        Fragment {
            origin,
            size_k: 2,
            values_dbm: values.to_vec(),
        }
    }

    fn encoder(kind: ConditionKind) -> (ParamStore<f64>, ConditionEncoder) {
        let mut store = ParamStore::new();
        let mut cfg = EncoderConfig::new(kind, 32, 2);
        cfg.capacity = if kind == ConditionKind::Fragments {
            8
        } else {
            2
        };
        let enc =
            ConditionEncoder::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (store, enc)
    }

    fn embed(
        store: &ParamStore<f64>,
        enc: &ConditionEncoder,
        cond: &ConditionSet,
    ) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let out = enc.encode(&p, &tape, cond, &norm())?.to_tensor();
        Ok(out.into_data())
    }

    #[test]
    fn flatten_is_row_major_with_origin() {
        let n = norm();
        let v = flatten_fragment(&frag((0, 0), [-120.0, -70.0, -20.0, -120.0]), &n, 32);
        assert_eq!(v, vec![-1.0, 0.0, 1.0, -1.0, 0.0, 0.0]);
        let v = flatten_fragment(&frag((16, 8), [-120.0; 4]), &n, 32);
        assert_eq!(&v[4..], &[0.5, 0.25]);
        assert!(v[..4].iter().all(|&x| x == -1.0));
    }

    #[test]
    fn padding_follows_first_fragment() {
        let (_, enc) = encoder(ConditionKind::Fragments);
        let x: Tensor<f64> = enc
            .fragment_input(&[frag((1, 1), [-50.0; 4])], &norm())
            .unwrap();
        assert_eq!(x.len(), 8 * 6);
        assert!(x.data()[6..].iter().all(|&v| v == 0.0));
        assert!(x.data()[..6].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn fixed_output_length_and_determinism() {
        let (store, enc) = encoder(ConditionKind::Fragments);
        let empty = embed(&store, &enc, &ConditionSet::Fragments(vec![])).unwrap();
        assert_eq!(empty.len(), 64);
        assert_eq!(
            empty,
            embed(&store, &enc, &ConditionSet::Fragments(vec![])).unwrap()
        );
        let two = ConditionSet::Fragments(vec![frag((0, 0), [-30.0; 4]), frag((4, 4), [-90.0; 4])]);
        let swapped =
            ConditionSet::Fragments(vec![frag((4, 4), [-90.0; 4]), frag((0, 0), [-30.0; 4])]);
        assert_eq!(embed(&store, &enc, &two).unwrap().len(), 64);
        assert_ne!(
            embed(&store, &enc, &two).unwrap(),
            embed(&store, &enc, &swapped).unwrap()
        );
    }

    #[test]
    fn capacity_and_kind_enforced() {
        let (store, enc) = encoder(ConditionKind::Fragments);
        let many = ConditionSet::Fragments(vec![frag((0, 0), [-30.0; 4]); 9]);
        assert!(matches!(
            embed(&store, &enc, &many),
            Err(Error::Condition(_))
        ));
        let tx = ConditionSet::TxLocations(vec![TxLocation { x: 1, y: 1 }]);
        assert!(matches!(embed(&store, &enc, &tx), Err(Error::Condition(_))));
    }

    #[test]
    fn tx_embedding_shares_weights() {
        let (store, enc) = encoder(ConditionKind::TxLocations);
        let Layers::Tx { a1, a2, .. } = enc.layers else {
            panic!()
        };
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let slot = |x: f64, y: f64| {
            let xy = tape.constant(Tensor::from_f64(&[2, 1], &[x, y]).unwrap());
            a2.forward(&p, &a1.forward(&p, &xy).unwrap().silu())
                .unwrap()
                .to_tensor()
        };
        assert_eq!(slot(0.25, 0.5), slot(0.25, 0.5));
        let t = TxLocation { x: 31, y: 31 };
        let out = embed(&store, &enc, &ConditionSet::TxLocations(vec![t, t])).unwrap();
        assert_eq!(out.len(), 64);
        let three = ConditionSet::TxLocations(vec![t; 3]);
        assert!(embed(&store, &enc, &three).is_err());
    }
}
