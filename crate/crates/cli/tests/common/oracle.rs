//! Dense reference implementations written with plain loops over `Vec<f64>`,
//! sharing nothing with the library except the parameter naming scheme.

use latepool::ParamStore;

pub type Mat = Vec<Vec<f64>>;

fn fetch(store: &ParamStore<f64>, name: &str) -> latepool::Tensor<f64> {
    let id = store.find(name).unwrap_or_else(|| panic!("missing parameter {name}"));
    store.get(id).clone()
}

fn matrix(store: &ParamStore<f64>, name: &str) -> Mat {
    let t = fetch(store, name);
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn vector(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    fetch(store, name).data().to_vec()
}

/// Weight `[out × in]` and bias `[out]`.
pub struct Affine {
    w: Mat,
    b: Vec<f64>,
}

impl Affine {
    pub fn load(store: &ParamStore<f64>, prefix: &str) -> Self {
        Self {
            w: matrix(store, &format!("{prefix}.weight")),
            b: vector(store, &format!("{prefix}.bias")),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn apply_rows(&self, x: &Mat) -> Mat {
        x.iter().map(|r| self.apply(r)).collect()
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| g * (v - mean) / (var + eps).sqrt() + b)
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub struct DenseLayer {
    q: Affine,
    k: Affine,
    v: Affine,
    o: Affine,
    ln1: (Vec<f64>, Vec<f64>),
    ffn_in: Affine,
    ffn_out: Affine,
    ln2: (Vec<f64>, Vec<f64>),
}

pub struct DenseBert {
    pub cls: Option<Vec<f64>>,
    pub positional: Option<Mat>,
    pub layers: Vec<DenseLayer>,
    pub heads: usize,
    pub eps: f64,
}

impl DenseBert {
    pub fn load(store: &ParamStore<f64>, prefix: &str, layers: usize, heads: usize, eps: f64) -> Self {
        let cls = store.find(&format!("{prefix}.cls")).map(|id| store.get(id).data().to_vec());
        let positional = store.find(&format!("{prefix}.positional")).map(|_| matrix(store, &format!("{prefix}.positional")));
        let layers = (0..layers)
            .map(|l| {
                let p = format!("{prefix}.layer{l}");
                DenseLayer {
                    q: Affine::load(store, &format!("{p}.attn.query")),
                    k: Affine::load(store, &format!("{p}.attn.key")),
                    v: Affine::load(store, &format!("{p}.attn.value")),
                    o: Affine::load(store, &format!("{p}.attn.output")),
                    ln1: (vector(store, &format!("{p}.ln1.gamma")), vector(store, &format!("{p}.ln1.beta"))),
                    ffn_in: Affine::load(store, &format!("{p}.pffn.in")),
                    ffn_out: Affine::load(store, &format!("{p}.pffn.out")),
                    ln2: (vector(store, &format!("{p}.ln2.gamma")), vector(store, &format!("{p}.ln2.beta"))),
                }
            })
            .collect();
        Self { cls, positional, layers, heads, eps }
    }

    /// `y_cls` for features `x` (`T` rows) with the given augmented positions masked.
    pub fn y_cls(&self, x: &Mat, masked: &[usize]) -> Vec<f64> {
        let d = x[0].len();
        let first = match &self.cls {
            Some(c) => c.clone(),
            None => (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / x.len() as f64).collect(),
        };
        let mut z: Mat = std::iter::once(first).chain(x.iter().cloned()).collect();
        if let Some(p) = &self.positional {
            for (i, row) in z.iter_mut().enumerate() {
                *row = add(row, &p[i]);
            }
        }
        for layer in &self.layers {
            z = self.layer(layer, &z, masked);
        }
        z[0].clone()
    }

    fn layer(&self, l: &DenseLayer, z: &Mat, masked: &[usize]) -> Mat {
        let n = z.len();
        let d = z[0].len();
        let dh = d / self.heads;
        let (q, k, v) = (l.q.apply_rows(z), l.k.apply_rows(z), l.v.apply_rows(z));
        let mut mixed = vec![vec![0.0; d]; n];
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mut w = softmax(&logits);
                for &m in masked {
                    w[m] = 0.0;
                }
                for c in cols.clone() {
                    mixed[i][c] = (0..n).map(|j| w[j] * v[j][c]).sum();
                }
            }
        }
        (0..n)
            .map(|i| {
                let r1 = add(&z[i], &l.o.apply(&mixed[i]));
                let z1 = layer_norm(&r1, &l.ln1.0, &l.ln1.1, self.eps);
                let hidden: Vec<f64> = l.ffn_in.apply(&z1).into_iter().map(gelu).collect();
                let r2 = add(&z1, &l.ffn_out.apply(&hidden));
                layer_norm(&r2, &l.ln2.0, &l.ln2.1, self.eps)
            })
            .collect()
    }
}

/// `x + W_o (softmax(θ φᵀ) g) + b_o` over the rows of `x`.
pub fn dense_nonlocal(store: &ParamStore<f64>, prefix: &str, x: &Mat) -> Mat {
    let th = Affine::load(store, &format!("{prefix}.theta")).apply_rows(x);
    let ph = Affine::load(store, &format!("{prefix}.phi")).apply_rows(x);
    let gv = Affine::load(store, &format!("{prefix}.g")).apply_rows(x);
    let out = Affine::load(store, &format!("{prefix}.output"));
    let n = x.len();
    let d = x[0].len();
    (0..n)
        .map(|i| {
            let logits: Vec<f64> = (0..n).map(|j| th[i].iter().zip(&ph[j]).map(|(a, b)| a * b).sum()).collect();
            let w = softmax(&logits);
            let mixed: Vec<f64> = (0..d).map(|c| (0..n).map(|j| w[j] * gv[j][c]).sum()).collect();
            add(&x[i], &out.apply(&mixed))
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    num / den
}
