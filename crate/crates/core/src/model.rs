//! Linearized multi-head self-attention network.
//!
//! Each layer maps `X` (`d_x × N`, one input vector per column) to
//!
//! ```text
//! Y = Σ_h W_O^h · W_V^h · X · Xᵀ · (W_K^h)ᵀ · W_Q^h · X
//! ```
//!
//! with no softmax, activation or normalization. A depth-`L` network is the
//! `L`-fold composition and, without residual connections, is a homogeneous
//! polynomial of degree `3^L` in the entries of `X`.
//!
//! The forward pass is generic over the scalar field ([`Field`]) so the same
//! code evaluates the real network and the complex-weight assignments used by
//! the rank lab. Transposes are plain transposes, never conjugate.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, ExecMode};

/// Scalar field the network can be evaluated over.
pub trait Field: nalgebra::ComplexField<RealField = f64> + Copy {}

impl Field for f64 {}
impl Field for Complex64 {}

pub type Matrix<T> = DMatrix<T>;

/// Largest depth for which `C(L) = (3^L - 1)/2` is materialized.
pub const MAX_MATERIALIZED_DEPTH: u32 = 40;

/// Largest depth accepted by [`structural_form_forward`].
pub const MAX_STRUCTURAL_DEPTH: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("depth {depth} exceeds the supported maximum {max}")]
    DepthTooLarge { depth: u32, max: u32 },
}

impl ModelError {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::ShapeMismatch(_) => "ShapeMismatch",
            ModelError::InvalidConfig(_) => "InvalidConfig",
            ModelError::DepthTooLarge { .. } => "DepthTooLarge",
        }
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Architecture hyperparameters `(L, d_x, H, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct NetworkConfig {
    depth: u32,
    width: usize,
    heads: usize,
    seq_len: usize,
}

#[derive(Serialize, Deserialize)]
struct RawConfig {
    depth: u32,
    width: usize,
    heads: usize,
    seq_len: usize,
}

impl TryFrom<RawConfig> for NetworkConfig {
    type Error = ModelError;
    fn try_from(r: RawConfig) -> Result<Self> {
        NetworkConfig::new(r.depth, r.width, r.heads, r.seq_len)
    }
}

impl From<NetworkConfig> for RawConfig {
    fn from(c: NetworkConfig) -> Self {
        RawConfig {
            depth: c.depth,
            width: c.width,
            heads: c.heads,
            seq_len: c.seq_len,
        }
    }
}

impl NetworkConfig {
    pub fn new(depth: u32, width: usize, heads: usize, seq_len: usize) -> Result<Self> {
        if depth == 0 || width == 0 || heads == 0 || seq_len == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "depth, width, heads and seq_len must be positive (got L={depth}, d_x={width}, H={heads}, N={seq_len})"
            )));
        }
        if !width.is_multiple_of(heads) {
            return Err(ModelError::InvalidConfig(format!(
                "heads ({heads}) must divide width ({width})"
            )));
        }
        Ok(Self {
            depth,
            width,
            heads,
            seq_len,
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Per-head attention dimension `d_a = d_x / H`.
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Number of mixed input copies `C(L) = (3^L - 1)/2`, exact for `L ≤ 40`.
    pub fn mixed_copies(&self) -> Result<u128> {
        mixed_copies(self.depth)
    }
}

/// `C(L) = (3^L - 1)/2` in exact integer arithmetic.
pub fn mixed_copies(depth: u32) -> Result<u128> {
    if depth > MAX_MATERIALIZED_DEPTH {
        return Err(ModelError::DepthTooLarge {
            depth,
            max: MAX_MATERIALIZED_DEPTH,
        });
    }
    Ok((3u128.pow(depth) - 1) / 2)
}

/// Non-embedding parameter count `12 · L · d_x²`.
pub fn count_nonembedding_params(depth: u64, width: u64) -> u128 {
    12 * depth as u128 * (width as u128) * (width as u128)
}

/// Key, query, value (`d_a × d_x`) and output (`d_x × d_a`) maps of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights<T: Field> {
    pub key: Matrix<T>,
    pub query: Matrix<T>,
    pub value: Matrix<T>,
    pub output: Matrix<T>,
}

impl<T: Field> HeadWeights<T> {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let (da, dx) = (cfg.head_dim(), cfg.width());
        Self {
            key: Matrix::zeros(da, dx),
            query: Matrix::zeros(da, dx),
            value: Matrix::zeros(da, dx),
            output: Matrix::zeros(dx, da),
        }
    }

    fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        let (da, dx) = (cfg.head_dim(), cfg.width());
        for (name, m, rows, cols) in [
            ("W_K", &self.key, da, dx),
            ("W_Q", &self.query, da, dx),
            ("W_V", &self.value, da, dx),
            ("W_O", &self.output, dx, da),
        ] {
            if m.shape() != (rows, cols) {
                return Err(ModelError::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(())
    }
}

/// Weights of one layer: exactly `H` heads.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T: Field> {
    pub heads: Vec<HeadWeights<T>>,
}

impl<T: Field> LayerWeights<T> {
    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.heads.len() != cfg.heads() {
            return Err(ModelError::ShapeMismatch(format!(
                "layer has {} heads, expected {}",
                self.heads.len(),
                cfg.heads()
            )));
        }
        self.heads.iter().try_for_each(|h| h.check(cfg))
    }
}

/// All `4·L·H` weight matrices of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta<T: Field> {
    pub layers: Vec<LayerWeights<T>>,
}

impl<T: Field> Theta<T> {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let layers = (0..cfg.depth())
            .map(|_| LayerWeights {
                heads: (0..cfg.heads()).map(|_| HeadWeights::zeros(cfg)).collect(),
            })
            .collect();
        Self { layers }
    }

    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.layers.len() != cfg.depth() as usize {
            return Err(ModelError::ShapeMismatch(format!(
                "theta has {} layers, expected {}",
                self.layers.len(),
                cfg.depth()
            )));
        }
        self.layers.iter().try_for_each(|l| l.check(cfg))
    }

    pub fn matrix_count(&self) -> usize {
        self.layers.iter().map(|l| 4 * l.heads.len()).sum()
    }

    pub fn map<U: Field>(&self, f: impl Fn(T) -> U + Copy) -> Theta<U> {
        Theta {
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadWeights {
                            key: h.key.map(f),
                            query: h.query.map(f),
                            value: h.value.map(f),
                            output: h.output.map(f),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl Theta<f64> {
    /// I.i.d. uniform weights on `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Self {
        let (da, dx) = (cfg.head_dim(), cfg.width());
        let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..=1.0));
        let layers = (0..cfg.depth())
            .map(|_| LayerWeights {
                heads: (0..cfg.heads())
                    .map(|_| HeadWeights {
                        key: draw(da, dx),
                        query: draw(da, dx),
                        value: draw(da, dx),
                        output: draw(dx, da),
                    })
                    .collect(),
            })
            .collect();
        Self { layers }
    }

    pub fn seeded(cfg: &NetworkConfig, seed: u64) -> Self {
        Self::random(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn to_complex(&self) -> Theta<Complex64> {
        self.map(|x| Complex64::new(x, 0.0))
    }
}

/// Uniform `[-1, 1]` input matrix of shape `d_x × N`.
pub fn random_input<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Matrix<f64> {
    Matrix::from_fn(cfg.width(), cfg.seq_len(), |_, _| rng.random_range(-1.0..=1.0))
}

fn check_input<T: Field>(x: &Matrix<T>, cfg: &NetworkConfig) -> Result<()> {
    if x.shape() != (cfg.width(), cfg.seq_len()) {
        return Err(ModelError::ShapeMismatch(format!(
            "input is {}x{}, expected {}x{}",
            x.nrows(),
            x.ncols(),
            cfg.width(),
            cfg.seq_len()
        )));
    }
    Ok(())
}

fn layer_unchecked<T: Field>(x: &Matrix<T>, layer: &LayerWeights<T>) -> Matrix<T> {
    let mut y = Matrix::zeros(x.nrows(), x.ncols());
    for head in &layer.heads {
        let keys = &head.key * x;
        let queries = &head.query * x;
        let values = &head.value * x;
        // scores[(j, i)] = <W_K x^j, W_Q x^i>
        let scores = keys.transpose() * queries;
        y += &head.output * (values * scores);
    }
    y
}

/// One self-attention layer.
pub fn sa_layer_forward<T: Field>(
    x: &Matrix<T>,
    layer: &LayerWeights<T>,
    cfg: &NetworkConfig,
) -> Result<Matrix<T>> {
    check_input(x, cfg)?;
    layer.check(cfg)?;
    Ok(layer_unchecked(x, layer))
}

/// Composition of all layers; with `with_residual` each layer adds its input.
pub fn network_forward<T: Field>(
    x: &Matrix<T>,
    theta: &Theta<T>,
    cfg: &NetworkConfig,
    with_residual: bool,
) -> Result<Matrix<T>> {
    check_input(x, cfg)?;
    theta.check(cfg)?;
    Ok(theta.layers.iter().fold(x.clone(), |acc, layer| {
        let y = layer_unchecked(&acc, layer);
        if with_residual {
            y + acc
        } else {
            y
        }
    }))
}

/// One summand of the expanded form `Bᵀ · M⁽¹⁾ ⋯ M⁽ᶜ⁾ · A · X` where
/// `M⁽ᶜ⁾ = A⁽ᶜ⁾ X Xᵀ (B⁽ᶜ⁾)ᵀ`.
#[derive(Debug, Clone)]
struct Term<T: Field> {
    /// `Bᵀ`, `d_x × d_a`.
    left: Matrix<T>,
    /// `(A⁽ᶜ⁾, B⁽ᶜ⁾)`, each `d_a × d_x`.
    factors: Vec<(Matrix<T>, Matrix<T>)>,
    /// `A`, `d_a × d_x`.
    right: Matrix<T>,
}

impl<T: Field> Term<T> {
    /// Induction step: one head of the next layer applied to `(Y₁, Y₂, Y₃)`
    /// expanded as `t1, t2, t3`.
    fn compose(head: &HeadWeights<T>, t1: &Self, t2: &Self, t3: &Self) -> Self {
        let c = t1.factors.len();
        let mut factors = Vec::with_capacity(3 * c + 1);
        factors.extend(t1.factors.iter().cloned());
        factors.push((t1.right.clone(), t2.right.clone()));
        // (M⁽ᶜ⁾)ᵀ = B X Xᵀ Aᵀ for c = C..2
        factors.extend(t2.factors[1..].iter().rev().map(|(a, b)| (b.clone(), a.clone())));
        // (M⁽¹⁾)ᵀ · G with G = t2.leftᵀ W_Kᵀ W_Q t3.left absorbed into the right factor
        let g = t2.left.transpose() * head.key.transpose() * &head.query * &t3.left;
        let (a1, b1) = &t2.factors[0];
        factors.push((b1.clone(), g.transpose() * a1));
        factors.extend(t3.factors.iter().cloned());
        Self {
            left: &head.output * &head.value * &t1.left,
            factors,
            right: t3.right.clone(),
        }
    }

    fn evaluate(&self, x: &Matrix<T>, gram: &Matrix<T>) -> Matrix<T> {
        let mut acc = self.left.clone();
        for (a, b) in &self.factors {
            acc *= a * gram * b.transpose();
        }
        acc * (&self.right * x)
    }
}

/// The expanded sum-over-head-tuples representation of a network of depth
/// at most [`MAX_STRUCTURAL_DEPTH`].
///
/// Levels below the top are materialized; the `H · T³` top-level summands are
/// composed on the fly during evaluation.
#[derive(Debug, Clone)]
pub struct StructuralExpansion<T: Field> {
    cfg: NetworkConfig,
    lower: Vec<Term<T>>,
    top: LayerWeights<T>,
}

impl<T: Field> StructuralExpansion<T> {
    pub fn new(theta: &Theta<T>, cfg: &NetworkConfig) -> Result<Self> {
        if cfg.depth() > MAX_STRUCTURAL_DEPTH {
            return Err(ModelError::DepthTooLarge {
                depth: cfg.depth(),
                max: MAX_STRUCTURAL_DEPTH,
            });
        }
        theta.check(cfg)?;
        let mut lower: Vec<Term<T>> = Vec::new();
        let depth = theta.layers.len();
        for layer in &theta.layers[..depth - 1] {
            lower = if lower.is_empty() {
                layer
                    .heads
                    .iter()
                    .map(|h| Term {
                        left: h.output.clone(),
                        factors: vec![(h.value.clone(), h.key.clone())],
                        right: h.query.clone(),
                    })
                    .collect()
            } else {
                let mut next = Vec::with_capacity(layer.heads.len() * lower.len().pow(3));
                for h in &layer.heads {
                    for t1 in &lower {
                        for t2 in &lower {
                            for t3 in &lower {
                                next.push(Term::compose(h, t1, t2, t3));
                            }
                        }
                    }
                }
                next
            };
        }
        Ok(Self {
            cfg: *cfg,
            lower,
            top: theta.layers[depth - 1].clone(),
        })
    }

    /// Number of `M` factors per summand, `C(L)`.
    pub fn m_factor_count(&self) -> usize {
        if self.lower.is_empty() {
            1
        } else {
            3 * self.lower[0].factors.len() + 1
        }
    }

    /// Number of summands, `H^{C(L)}`.
    pub fn term_count(&self) -> usize {
        let h = self.top.heads.len();
        if self.lower.is_empty() {
            h
        } else {
            h * self.lower.len().pow(3)
        }
    }

    fn top_term(&self, index: usize) -> Term<T> {
        let head = &self.top.heads;
        if self.lower.is_empty() {
            let h = &head[index];
            return Term {
                left: h.output.clone(),
                factors: vec![(h.value.clone(), h.key.clone())],
                right: h.query.clone(),
            };
        }
        let t = self.lower.len();
        let (h, rest) = (index / (t * t * t), index % (t * t * t));
        let (i1, i2, i3) = (rest / (t * t), (rest / t) % t, rest % t);
        Term::compose(&head[h], &self.lower[i1], &self.lower[i2], &self.lower[i3])
    }

    pub fn evaluate(&self, x: &Matrix<T>, mode: ExecMode) -> Result<Matrix<T>> {
        check_input(x, &self.cfg)?;
        let gram = x * x.transpose();
        let n = self.term_count();
        // One chunk per (head, t1) pair keeps the summation order fixed.
        let chunk = if self.lower.is_empty() {
            1
        } else {
            self.lower.len().pow(2)
        };
        let partials = exec::map_range(n / chunk, mode, |c| {
            (c * chunk..(c + 1) * chunk).fold(Matrix::zeros(x.nrows(), x.ncols()), |acc, i| {
                acc + self.top_term(i).evaluate(x, &gram)
            })
        });
        Ok(partials
            .into_iter()
            .fold(Matrix::zeros(x.nrows(), x.ncols()), |acc, p| acc + p))
    }
}

/// Evaluates the network through its fully expanded product form.
pub fn structural_form_forward<T: Field>(
    x: &Matrix<T>,
    theta: &Theta<T>,
    cfg: &NetworkConfig,
) -> Result<Matrix<T>> {
    structural_form_forward_with(x, theta, cfg, ExecMode::default())
}

pub fn structural_form_forward_with<T: Field>(
    x: &Matrix<T>,
    theta: &Theta<T>,
    cfg: &NetworkConfig,
    mode: ExecMode,
) -> Result<Matrix<T>> {
    check_input(x, cfg)?;
    StructuralExpansion::new(theta, cfg)?.evaluate(x, mode)
}

/// JSON document holding a real network and its input.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkDocument {
    pub config: NetworkConfig,
    pub layers: Vec<Vec<HeadDocument>>,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HeadDocument {
    #[serde(rename = "WK")]
    pub key: Vec<Vec<f64>>,
    #[serde(rename = "WQ")]
    pub query: Vec<Vec<f64>>,
    #[serde(rename = "WV")]
    pub value: Vec<Vec<f64>>,
    #[serde(rename = "WO")]
    pub output: Vec<Vec<f64>>,
}

/// Row-major nested arrays.
pub fn matrix_to_rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::ShapeMismatch("ragged nested array".into()));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl NetworkDocument {
    pub fn new(cfg: NetworkConfig, theta: &Theta<f64>, x: &Matrix<f64>) -> Result<Self> {
        theta.check(&cfg)?;
        check_input(x, &cfg)?;
        Ok(Self {
            config: cfg,
            layers: theta
                .layers
                .iter()
                .map(|l| {
                    l.heads
                        .iter()
                        .map(|h| HeadDocument {
                            key: matrix_to_rows(&h.key),
                            query: matrix_to_rows(&h.query),
                            value: matrix_to_rows(&h.value),
                            output: matrix_to_rows(&h.output),
                        })
                        .collect()
                })
                .collect(),
            x: matrix_to_rows(x),
        })
    }

    /// Decodes and validates the weights and input against `config`.
    pub fn decode(&self) -> Result<(NetworkConfig, Theta<f64>, Matrix<f64>)> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(LayerWeights {
                    heads: l
                        .iter()
                        .map(|h| {
                            Ok(HeadWeights {
                                key: rows_to_matrix(&h.key)?,
                                query: rows_to_matrix(&h.query)?,
                                value: rows_to_matrix(&h.value)?,
                                output: rows_to_matrix(&h.output)?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let theta = Theta { layers };
        theta.check(&self.config)?;
        let x = rows_to_matrix(&self.x)?;
        check_input(&x, &self.config)?;
        Ok((self.config, theta, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_cfg(depth: u32, n: usize) -> (NetworkConfig, Theta<f64>) {
        let cfg = NetworkConfig::new(depth, 1, 1, n).unwrap();
        let theta = Theta::zeros(&cfg).map(|_: f64| 1.0);
        (cfg, theta)
    }

    /// Direct evaluation of the per-position layer sum.
    fn naive_layer(x: &Matrix<f64>, layer: &LayerWeights<f64>) -> Matrix<f64> {
        let (dx, n) = x.shape();
        let mut y = Matrix::zeros(dx, n);
        for h in &layer.heads {
            let da = h.key.nrows();
            for i in 0..n {
                for j in 0..n {
                    let mut score = 0.0;
                    for r in 0..da {
                        let mut q = 0.0;
                        let mut k = 0.0;
                        for c in 0..dx {
                            q += h.query[(r, c)] * x[(c, i)];
                            k += h.key[(r, c)] * x[(c, j)];
                        }
                        score += q * k;
                    }
                    for p in 0..dx {
                        let mut ov = 0.0;
                        for r in 0..da {
                            let mut v = 0.0;
                            for c in 0..dx {
                                v += h.value[(r, c)] * x[(c, j)];
                            }
                            ov += h.output[(p, r)] * v;
                        }
                        y[(p, i)] += score * ov;
                    }
                }
            }
        }
        y
    }

    fn rel_err(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::new(2, 6, 4, 3).is_err());
        assert!(NetworkConfig::new(0, 6, 2, 3).is_err());
        let cfg = NetworkConfig::new(3, 6, 2, 3).unwrap();
        assert_eq!(cfg.head_dim(), 3);
        assert_eq!(cfg.mixed_copies().unwrap(), 13);
        assert_eq!(mixed_copies(40).unwrap(), (3u128.pow(40) - 1) / 2);
        assert!(matches!(mixed_copies(41), Err(ModelError::DepthTooLarge { .. })));
    }

    #[test]
    fn scalar_layer_example() {
        let (cfg, theta) = ones_cfg(1, 2);
        let x = Matrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = sa_layer_forward(&x, &theta.layers[0], &cfg).unwrap();
        assert_eq!(y, Matrix::from_row_slice(1, 2, &[5.0, 10.0]));
        assert_eq!(naive_layer(&x, &theta.layers[0]), y);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let cfg = NetworkConfig::new(2, 4, 2, 3).unwrap();
        let theta = Theta::seeded(&cfg, 1);
        let y = network_forward(&Matrix::zeros(4, 3), &theta, &cfg, false).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layer_matches_naive_loops() {
        let cfg = NetworkConfig::new(1, 2, 2, 3).unwrap();
        for seed in 0..5 {
            let theta = Theta::seeded(&cfg, seed);
            let x = random_input(&cfg, &mut ChaCha8Rng::seed_from_u64(100 + seed));
            let fast = sa_layer_forward(&x, &theta.layers[0], &cfg).unwrap();
            assert!(rel_err(&fast, &naive_layer(&x, &theta.layers[0])) < 1e-12);
        }
    }

    #[test]
    fn two_layer_scalar_recursion() {
        let (cfg, theta) = ones_cfg(2, 1);
        let x = Matrix::from_element(1, 1, 2.0);
        let y = network_forward(&x, &theta, &cfg, false).unwrap();
        assert_eq!(y[(0, 0)], 512.0);
    }

    #[test]
    fn residual_adds_layer_input() {
        let (cfg, theta) = ones_cfg(1, 1);
        let x = Matrix::from_element(1, 1, 2.0);
        let y = network_forward(&x, &theta, &cfg, true).unwrap();
        assert_eq!(y[(0, 0)], 10.0);
    }

    #[test]
    fn single_layer_network_is_the_layer() {
        let cfg = NetworkConfig::new(1, 4, 2, 3).unwrap();
        let theta = Theta::seeded(&cfg, 7);
        let x = random_input(&cfg, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(
            network_forward(&x, &theta, &cfg, false).unwrap(),
            sa_layer_forward(&x, &theta.layers[0], &cfg).unwrap()
        );
    }

    #[test]
    fn shape_errors() {
        let cfg = NetworkConfig::new(2, 4, 2, 3).unwrap();
        let theta = Theta::seeded(&cfg, 1);
        let bad_x = Matrix::zeros(4, 2);
        assert!(matches!(
            network_forward(&bad_x, &theta, &cfg, false),
            Err(ModelError::ShapeMismatch(_))
        ));
        let mut short = theta.clone();
        short.layers.pop();
        assert!(network_forward(&Matrix::zeros(4, 3), &short, &cfg, false).is_err());
        let mut bad_head = theta.clone();
        bad_head.layers[0].heads[1].output = Matrix::zeros(4, 3);
        assert!(sa_layer_forward(&Matrix::zeros(4, 3), &bad_head.layers[0], &cfg).is_err());
    }

    #[test]
    fn structural_form_base_case() {
        let cfg = NetworkConfig::new(1, 4, 2, 3).unwrap();
        let theta = Theta::seeded(&cfg, 3);
        let x = random_input(&cfg, &mut ChaCha8Rng::seed_from_u64(4));
        let a = structural_form_forward(&x, &theta, &cfg).unwrap();
        let b = sa_layer_forward(&x, &theta.layers[0], &cfg).unwrap();
        assert!(rel_err(&a, &b) < 1e-12);
    }

    #[test]
    fn structural_form_counts() {
        let cfg = NetworkConfig::new(2, 2, 1, 2).unwrap();
        let exp = StructuralExpansion::new(&Theta::seeded(&cfg, 0), &cfg).unwrap();
        assert_eq!(exp.m_factor_count(), 4);
        assert_eq!(exp.term_count(), 1);
        let cfg = NetworkConfig::new(3, 4, 2, 2).unwrap();
        let exp = StructuralExpansion::new(&Theta::seeded(&cfg, 0), &cfg).unwrap();
        assert_eq!(exp.m_factor_count(), 13);
        assert_eq!(exp.term_count(), 1 << 13);
    }

    #[test]
    fn structural_form_rejects_depth_four() {
        let cfg = NetworkConfig::new(4, 2, 1, 2).unwrap();
        let theta = Theta::seeded(&cfg, 0);
        assert!(matches!(
            structural_form_forward(&Matrix::zeros(2, 2), &theta, &cfg),
            Err(ModelError::DepthTooLarge { depth: 4, max: 3 })
        ));
    }

    #[test]
    fn structural_form_matches_recursion_depth_two() {
        let cfg = NetworkConfig::new(2, 2, 1, 2).unwrap();
        let theta = Theta::seeded(&cfg, 11);
        let x = random_input(&cfg, &mut ChaCha8Rng::seed_from_u64(12));
        let a = structural_form_forward(&x, &theta, &cfg).unwrap();
        let b = network_forward(&x, &theta, &cfg, false).unwrap();
        assert!(rel_err(&a, &b) < 1e-10);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_nonembedding_params(96, 12288), 173_946_175_488);
        assert_eq!(count_nonembedding_params(1, 1), 12);
        assert_eq!(count_nonembedding_params(12, 768), 84_934_656);
        assert_eq!(
            count_nonembedding_params(10_000, 1_000_000),
            120_000_000_000_000_000
        );
    }

    #[test]
    fn output_linear_in_single_head_output_map() {
        let cfg = NetworkConfig::new(1, 4, 2, 3).unwrap();
        let theta = Theta::seeded(&cfg, 21);
        let x = random_input(&cfg, &mut ChaCha8Rng::seed_from_u64(22));
        let head_only = |t: &Theta<f64>, h: usize| {
            let layer = LayerWeights {
                heads: vec![t.layers[0].heads[h].clone()],
            };
            layer_unchecked(&x, &layer)
        };
        let base = head_only(&theta, 1);
        let mut scaled = theta.clone();
        scaled.layers[0].heads[1].output *= 2.5;
        let after = head_only(&scaled, 1);
        assert!(rel_err(&after, &(base * 2.5)) < 1e-15);
        let other = head_only(&scaled, 0);
        assert_eq!(other, head_only(&theta, 0));
    }

    #[test]
    fn document_round_trip() {
        let cfg = NetworkConfig::new(2, 4, 2, 3).unwrap();
        let theta = Theta::seeded(&cfg, 5);
        let x = random_input(&cfg, &mut ChaCha8Rng::seed_from_u64(6));
        let doc = NetworkDocument::new(cfg, &theta, &x).unwrap();
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"WK\"") && text.contains("\"X\""));
        let back: NetworkDocument = serde_json::from_str(&text).unwrap();
        let (c2, t2, x2) = back.decode().unwrap();
        assert_eq!((c2, t2, x2), (cfg, theta, x));
    }

    #[test]
    fn document_rejects_bad_config() {
        let text = r#"{"config":{"depth":1,"width":3,"heads":2,"seq_len":1},"layers":[],"X":[]}"#;
        assert!(serde_json::from_str::<NetworkDocument>(text).is_err());
    }
}
