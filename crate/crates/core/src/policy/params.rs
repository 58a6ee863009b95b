use rand::Rng;

use super::nn::{MlpSpec, Scalar};

/// Number of embedding keys: 4 block bits plus the diagonal flag.
pub const NUM_KEYS: usize = 32;
/// Per-qubit count features `eta_{i,1}`.
pub const ETA1: usize = 9;
/// `eta_{i,1}` followed by the diagonal rank indicators `eta_{i,2}`.
pub const ETA: usize = 11;
/// Invariant count means appended to the readout statistics.
pub const CBAR: usize = 7;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Where every parameter tensor lives in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub h: usize,
    pub rounds: usize,
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub embed: usize,
    pub node: MlpSpec,
    pub msg: MlpSpec,
    pub upd: MlpSpec,
    /// `(gain, bias)` offsets per message round.
    pub ln: Vec<(usize, usize)>,
    pub global: MlpSpec,
    pub local: MlpSpec,
    pub cz: MlpSpec,
    pub value: MlpSpec,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    next: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.next;
        self.next += shape.iter().product::<usize>();
        self.tensors.push(TensorSpec { name, shape, offset });
        offset
    }

    fn mlp(&mut self, name: &str, d_in: usize, d_hid: usize, d_out: usize) -> MlpSpec {
        MlpSpec {
            w1: self.tensor(format!("{name}.w1"), vec![d_in, d_hid]),
            b1: self.tensor(format!("{name}.b1"), vec![d_hid]),
            w2: self.tensor(format!("{name}.w2"), vec![d_hid, d_out]),
            b2: self.tensor(format!("{name}.b2"), vec![d_out]),
            d_in,
            d_hid,
            d_out,
        }
    }
}

impl Layout {
    pub fn new(h: usize, rounds: usize) -> Self {
        assert!(h > 0, "hidden width must be positive");
        let hid = 2 * h;
        let mut b = Builder {
            tensors: Vec::new(),
            next: 0,
        };
        let embed = b.tensor("embed".into(), vec![NUM_KEYS, h]);
        let node = b.mlp("node", 5 * h + ETA, hid, h);
        let msg = b.mlp("msg", 4 * h + 1, hid, h);
        let upd = b.mlp("upd", 3 * h + ETA1, hid, h);
        let ln = (0..rounds)
            .map(|k| {
                (
                    b.tensor(format!("ln{k}.gain"), vec![h]),
                    b.tensor(format!("ln{k}.bias"), vec![h]),
                )
            })
            .collect();
        let global = b.mlp("global", 3 * h + CBAR, hid, h);
        let local = b.mlp("local", 3 * h + ETA + 2, hid, 1);
        let cz = b.mlp("cz", 6 * h, hid, 1);
        let value = b.mlp("value", 3 * h + CBAR, hid, 1);
        Layout {
            h,
            rounds,
            total: b.next,
            tensors: b.tensors,
            embed,
            node,
            msg,
            upd,
            ln,
            global,
            local,
            cz,
            value,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Learned parameters of the policy/value network plus its structural sizes.
/// Nothing here depends on the qubit count.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyWeights<T = f32> {
    layout: Layout,
    params: Vec<T>,
}

impl<T: Scalar> PolicyWeights<T> {
    /// Fan-in scaled uniform init for linear maps, zero biases, unit layer-norm
    /// gains, and embedding rows with unit expected norm.
    pub fn init<R: Rng + ?Sized>(h: usize, rounds: usize, rng: &mut R) -> Self {
        let layout = Layout::new(h, rounds);
        let mut params = vec![T::zero(); layout.total];
        let embed_scale = (3.0 / h as f64).sqrt();
        for v in &mut params[layout.embed..layout.embed + NUM_KEYS * h] {
            *v = T::from_f64(rng.random_range(-embed_scale..embed_scale));
        }
        for spec in [
            layout.node,
            layout.msg,
            layout.upd,
            layout.global,
            layout.local,
            layout.cz,
            layout.value,
        ] {
            let a1 = 1.0 / (spec.d_in as f64).sqrt();
            for v in &mut params[spec.w1..spec.w1 + spec.d_in * spec.d_hid] {
                *v = T::from_f64(rng.random_range(-a1..a1));
            }
            let a2 = 1.0 / (spec.d_hid as f64).sqrt();
            for v in &mut params[spec.w2..spec.w2 + spec.d_hid * spec.d_out] {
                *v = T::from_f64(rng.random_range(-a2..a2));
            }
        }
        for &(gain, _) in &layout.ln {
            params[gain..gain + h].fill(T::one());
        }
        Self { layout, params }
    }

    pub fn from_parts(layout: Layout, params: Vec<T>) -> Self {
        assert_eq!(layout.total, params.len());
        Self { layout, params }
    }

    pub fn h(&self) -> usize {
        self.layout.h
    }

    pub fn rounds(&self) -> usize {
        self.layout.rounds
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.tensor(name).map(|t| &self.params[t.range()])
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> PolicyWeights<U> {
        PolicyWeights {
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::from_f64(Scalar::to_f64(*v))).collect(),
        }
    }
}
