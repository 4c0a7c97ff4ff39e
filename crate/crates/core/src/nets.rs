//! Generator and discriminator networks for the 2D mixture task.
//!
//! Networks own [`ParamId`]s into a shared [`ParamStore`] and build their
//! forward pass on a [`Graph`]. Weight matrices are stored `in x out`, so a
//! layer computes `x W + b` on row-major batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Graph, Matrix, ParamGroup, ParamId, ParamStore, Var, LEAKY_RELU_SLOPE};
use crate::mog::{Rng, DATA_DIM, LATENT_DIM};
use crate::scalar::Scalar;

/// Width of the generator's class embedding.
pub const EMBED_DIM: usize = 4;
/// Hidden width shared by both networks; also the feature dimension `D`.
pub const HIDDEN_DIM: usize = 50;
pub const HIDDEN_LAYERS: usize = 3;
/// Std of the normal init for readout layers.
const READOUT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// Ends with a linear map to `output_dim`. Without it the last hidden
    /// activation is the output and `output_dim` must equal `hidden_dim`.
    pub linear_readout: bool,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::contract("mlp dimensions must be positive"));
        }
        if self.hidden_layers == 0 {
            return Err(Error::contract("mlp needs at least one hidden layer"));
        }
        if !self.linear_readout && self.output_dim != self.hidden_dim {
            return Err(Error::contract(format!(
                "mlp without readout outputs {} features, not {}",
                self.hidden_dim, self.output_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

impl Layer {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        (fan_in, fan_out): (usize, usize),
        std: f64,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, rng.normal_matrix(fan_in, fan_out, std));
        let bias = store.add(format!("{name}.bias"), group, Matrix::zeros(1, fan_out));
        Self { weight, bias }
    }

    fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let xw = g.matmul(x, g.param(self.weight))?;
        g.add(xw, g.param(self.bias))
    }
}

/// Fully connected stack. Hidden layers are He-normal with zero biases;
/// the optional readout is normal(0, 0.02).
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    hidden: Vec<Layer>,
    readout: Option<Layer>,
}

impl Mlp {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        spec: MlpSpec,
        rng: &mut Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let mut hidden = Vec::with_capacity(spec.hidden_layers);
        let mut fan_in = spec.input_dim;
        for k in 0..spec.hidden_layers {
            let std = (2.0 / fan_in as f64).sqrt();
            hidden.push(Layer::new(store, &format!("{name}.{k}"), group, (fan_in, spec.hidden_dim), std, rng));
            fan_in = spec.hidden_dim;
        }
        let readout = spec.linear_readout.then(|| {
            Layer::new(store, &format!("{name}.out"), group, (fan_in, spec.output_dim), READOUT_STD, rng)
        });
        Ok(Self { spec, hidden, readout })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let mut a = x;
        for layer in &self.hidden {
            let pre = layer.forward(g, a)?;
            a = match self.spec.activation {
                Activation::Relu => g.relu(pre),
                Activation::LeakyRelu => g.leaky_relu(pre, T::of(LEAKY_RELU_SLOPE)),
            };
        }
        match &self.readout {
            Some(layer) => layer.forward(g, a),
            None => Ok(a),
        }
    }

    /// Readout weight and bias, if present.
    pub fn readout_params(&self) -> Option<(ParamId, ParamId)> {
        self.readout.map(|l| (l.weight, l.bias))
    }
}

fn check_labels(y: &[usize], classes: usize) -> Result<()> {
    match y.iter().find(|&&c| c >= classes) {
        Some(&bad) => Err(Error::Index {
            what: "class id",
            index: bad,
            bound: classes,
        }),
        None => Ok(()),
    }
}

/// `x = g(z, y)`: latent code concatenated with a learned class embedding,
/// then three ReLU layers and a linear map to the plane.
#[derive(Clone, Debug)]
pub struct Generator {
    classes: usize,
    embedding: ParamId,
    mlp: Mlp,
}

impl Generator {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, classes: usize, rng: &mut Rng) -> Result<Self> {
        if classes == 0 {
            return Err(Error::contract("generator needs at least one class"));
        }
        let embedding = store.add("generator.embedding", ParamGroup::Generator, rng.normal_matrix(classes, EMBED_DIM, 1.0));
        let spec = MlpSpec {
            input_dim: LATENT_DIM + EMBED_DIM,
            hidden_dim: HIDDEN_DIM,
            hidden_layers: HIDDEN_LAYERS,
            output_dim: DATA_DIM,
            activation: Activation::Relu,
            linear_readout: true,
        };
        let mlp = Mlp::new(store, "generator.mlp", ParamGroup::Generator, spec, rng)?;
        Ok(Self { classes, embedding, mlp })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// `z` is `batch x 10`; returns `batch x 2`.
    pub fn generate<T: Scalar>(&self, g: &Graph<'_, T>, z: Var, y: &[usize]) -> Result<Var> {
        check_labels(y, self.classes)?;
        let rows = g.value(z).rows();
        if rows != y.len() {
            return Err(Error::Dimension {
                op: "generate",
                lhs: g.value(z).shape(),
                rhs: (y.len(), 1),
            });
        }
        let e = g.gather_rows(g.param(self.embedding), y)?;
        let input = g.concat_cols(&[z, e])?;
        self.mlp.forward(g, input)
    }
}

/// Feature extractor `h: R^2 -> R^50` with leaky-ReLU activations.
#[derive(Clone, Debug)]
pub struct FeatureNet {
    mlp: Mlp,
}

impl FeatureNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        let spec = MlpSpec {
            input_dim: DATA_DIM,
            hidden_dim: HIDDEN_DIM,
            hidden_layers: HIDDEN_LAYERS,
            output_dim: HIDDEN_DIM,
            activation: Activation::LeakyRelu,
            linear_readout: false,
        };
        Ok(Self {
            mlp: Mlp::new(store, "features", ParamGroup::Features, spec, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        HIDDEN_DIM
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        self.mlp.forward(g, x)
    }
}

/// Discriminator head with a unit naturalness direction `omega`, one unit
/// alignment direction per class and a scalar bias. Directions are stored
/// raw and normalized on every forward pass.
#[derive(Clone, Debug)]
pub struct SonaHead {
    classes: usize,
    omega: ParamId,
    omega_y: ParamId,
    bias: ParamId,
}

/// A [`SonaHead`] bound to one graph.
#[derive(Clone, Copy, Debug)]
pub struct SonaVars {
    /// `1 x D`, unit norm.
    pub omega: Var,
    /// `N x D`, unit rows.
    pub omega_y: Var,
    /// `1 x 1`.
    pub bias: Var,
    pub(crate) classes: usize,
}

impl SonaHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, classes: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::contract("head needs at least one class and one feature"));
        }
        Ok(Self {
            classes,
            omega: store.add("head.omega", ParamGroup::Direction, rng.normal_matrix(1, dim, 1.0)),
            omega_y: store.add("head.omega_y", ParamGroup::ClassDirections, rng.normal_matrix(classes, dim, 1.0)),
            bias: store.add("head.bias", ParamGroup::Features, Matrix::zeros(1, 1)),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn omega_id(&self) -> ParamId {
        self.omega
    }

    pub fn omega_y_id(&self) -> ParamId {
        self.omega_y
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    /// Normalizes the raw directions on `g`. Fails on a raw direction
    /// with norm below `1e-12`.
    pub fn bind<T: Scalar>(&self, g: &Graph<'_, T>) -> Result<SonaVars> {
        Ok(SonaVars {
            omega: g.normalize_rows(g.param(self.omega))?,
            omega_y: g.normalize_rows(g.param(self.omega_y))?,
            bias: g.param(self.bias),
            classes: self.classes,
        })
    }
}

impl SonaVars {
    /// Same values with every gradient blocked.
    pub fn stopped<T: Scalar>(&self, g: &Graph<'_, T>) -> Self {
        Self {
            omega: g.stop_gradient(self.omega),
            omega_y: g.stop_gradient(self.omega_y),
            bias: g.stop_gradient(self.bias),
            classes: self.classes,
        }
    }

    /// `<omega, h>` per row, `batch x 1`.
    pub fn project<T: Scalar>(&self, g: &Graph<'_, T>, h: Var) -> Result<Var> {
        g.matmul(h, g.transpose(self.omega))
    }

    /// `h - <omega, h> omega`.
    pub fn residual<T: Scalar>(&self, g: &Graph<'_, T>, h: Var) -> Result<Var> {
        let p = self.project(g, h)?;
        let along = g.matmul(p, self.omega)?;
        g.sub(h, along)
    }

    /// `f_N = <omega, h> + b`.
    pub fn naturalness<T: Scalar>(&self, g: &Graph<'_, T>, h: Var) -> Result<Var> {
        let p = self.project(g, h)?;
        g.add(p, self.bias)
    }

    /// `f_A = <omega_y, h - <omega, h> omega>`.
    pub fn alignment<T: Scalar>(&self, g: &Graph<'_, T>, h: Var, y: &[usize]) -> Result<Var> {
        check_labels(y, self.classes)?;
        let r = self.residual(g, h)?;
        let dirs = g.gather_rows(self.omega_y, y)?;
        g.row_dot(dirs, r)
    }
}

/// Scores `(f_N, f_A)` of a batch, each `batch x 1`.
pub fn sona_forward<T: Scalar>(
    g: &Graph<'_, T>,
    head: &SonaHead,
    feat: &FeatureNet,
    x: Var,
    y: &[usize],
) -> Result<(Var, Var)> {
    let vars = head.bind(g)?;
    let h = feat.forward(g, x)?;
    Ok((vars.naturalness(g, h)?, vars.alignment(g, h, y)?))
}

/// Projection-discriminator head `<w_y + w, h> + b` with unconstrained
/// vectors.
#[derive(Clone, Debug)]
pub struct PdganHead {
    classes: usize,
    w: ParamId,
    w_y: ParamId,
    bias: ParamId,
}

impl PdganHead {
    /// `w` and `w_y` start at normal(0, 0.02), like a readout layer.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, classes: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::contract("head needs at least one class and one feature"));
        }
        Ok(Self {
            classes,
            w: store.add("head.w", ParamGroup::Direction, rng.normal_matrix(1, dim, READOUT_STD)),
            w_y: store.add("head.w_y", ParamGroup::ClassDirections, rng.normal_matrix(classes, dim, READOUT_STD)),
            bias: store.add("head.bias", ParamGroup::Features, Matrix::zeros(1, 1)),
        })
    }

    pub fn w_id(&self) -> ParamId {
        self.w
    }

    pub fn w_y_id(&self) -> ParamId {
        self.w_y
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    /// Scores of features `h` (`batch x D`) under labels `y`.
    pub fn score<T: Scalar>(&self, g: &Graph<'_, T>, h: Var, y: &[usize]) -> Result<Var> {
        check_labels(y, self.classes)?;
        let wy = g.gather_rows(g.param(self.w_y), y)?;
        let dirs = g.add(wy, g.param(self.w))?;
        let s = g.row_dot(dirs, h)?;
        g.add(s, g.param(self.bias))
    }
}

pub fn pdgan_forward<T: Scalar>(
    g: &Graph<'_, T>,
    head: &PdganHead,
    feat: &FeatureNet,
    x: Var,
    y: &[usize],
) -> Result<Var> {
    let h = feat.forward(g, x)?;
    head.score(g, h, y)
}
