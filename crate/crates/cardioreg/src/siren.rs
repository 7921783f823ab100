//! Sinusoidal coordinate network for displacement fields.
//!
//! The model maps a normalized coordinate x to a displacement u(x); the
//! deformation is Phi(x) = x + u(x). Hidden layers apply sin(omega (W x + b)),
//! the output layer is affine and zero-initialized so a fresh model is the
//! identity map. Besides reverse-mode parameter gradients the module
//! propagates the three coordinate tangents forward through every layer,
//! giving the spatial Jacobian of Phi, and supports reverse-mode through
//! that tangent computation (the mixed second-order path needed by
//! determinant penalties).

use crate::linalg::{matmul, Scalar};
use crate::{Error, Result};
use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// One affine layer; `weights` is (out, in), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weights: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirenModel<F: Scalar> {
    omega: F,
    hidden: Vec<Dense<F>>,
    output: Dense<F>,
}

/// Cached activations (and, once the Jacobian has been computed, tangent
/// trajectories) from one forward call. Opaque to callers.
pub struct BatchTape<F: Scalar> {
    /// acts[0] is the input batch, acts[l+1] the output of hidden layer l.
    acts: Vec<Array2<F>>,
    /// cos(omega z) per hidden layer.
    cos: Vec<Array2<F>>,
    tangents: Option<TangentTape<F>>,
}

struct TangentTape<F> {
    /// t[l]: tangent entering layer l, shape (3N, in_dim); the three
    /// coordinate directions are stacked in row blocks of N.
    t: Vec<Array2<F>>,
    /// m[l] = t[l] * W_l^T, the pre-modulation tangent of hidden layer l.
    m: Vec<Array2<F>>,
}

impl<F: Scalar> BatchTape<F> {
    pub fn batch_len(&self) -> usize {
        self.acts[0].nrows()
    }
}

/// Parameter gradients with the same shapes as the model.
#[derive(Debug, Clone)]
pub struct Gradients<F: Scalar> {
    pub hidden: Vec<Dense<F>>,
    pub output: Dense<F>,
}

impl<F: Scalar> Gradients<F> {
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for d in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.extend(d.weights.iter().copied());
            out.extend(d.bias.iter().copied());
        }
        out
    }
}

impl<F: Scalar> SirenModel<F> {
    /// Fresh model: first-layer weights U(-1/3, 1/3) (fan-in 3), hidden
    /// weights U(+-sqrt(6/width)/omega), biases U(+-1/sqrt(fan_in)), and a
    /// zero output layer so the initial deformation is the identity.
    /// Deterministic given the seed.
    pub fn init(seed: u64, hidden_layers: usize, width: usize, omega: f64) -> Result<Self> {
        if hidden_layers < 1 || width < 1 {
            return Err(Error::InvalidArgument(format!(
                "need hidden_layers >= 1 and width >= 1, got {hidden_layers}, {width}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hidden = Vec::with_capacity(hidden_layers);
        for l in 0..hidden_layers {
            let in_dim = if l == 0 { 3 } else { width };
            let w_bound = if l == 0 { 1.0 / 3.0 } else { (6.0 / width as f64).sqrt() / omega };
            let b_bound = 1.0 / (in_dim as f64).sqrt();
            let mut layer = Dense::zeros(width, in_dim);
            for w in layer.weights.iter_mut() {
                *w = F::from_f64(rng.gen_range(-w_bound..w_bound));
            }
            for b in layer.bias.iter_mut() {
                *b = F::from_f64(rng.gen_range(-b_bound..b_bound));
            }
            hidden.push(layer);
        }
        let output = Dense::zeros(3, width);
        Ok(Self { omega: F::from_f64(omega), hidden, output })
    }

    /// Assemble a model from explicit layers (used by tests and loading).
    pub fn from_parts(omega: f64, hidden: Vec<Dense<F>>, output: Dense<F>) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidArgument("need at least one hidden layer".into()));
        }
        if hidden[0].weights.ncols() != 3 {
            return Err(Error::ShapeMismatch("first layer input dim must be 3".into()));
        }
        for pair in hidden.windows(2) {
            if pair[1].weights.ncols() != pair[0].weights.nrows() {
                return Err(Error::ShapeMismatch("hidden layer dims do not chain".into()));
            }
        }
        if output.weights.nrows() != 3 || output.weights.ncols() != hidden.last().unwrap().weights.nrows() {
            return Err(Error::ShapeMismatch("output layer must be 3 x last hidden width".into()));
        }
        for d in hidden.iter().chain(std::iter::once(&output)) {
            if d.bias.len() != d.weights.nrows() {
                return Err(Error::ShapeMismatch("bias length must equal layer output dim".into()));
            }
        }
        Ok(Self { omega: F::from_f64(omega), hidden, output })
    }

    pub fn omega(&self) -> f64 {
        self.omega.as_f64()
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden.len()
    }

    pub fn width(&self) -> usize {
        self.hidden[0].weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.hidden.iter().map(|d| d.param_count()).sum::<usize>() + self.output.param_count()
    }

    /// Parameters flattened in layer order, weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for d in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.extend(d.weights.iter().copied());
            out.extend(d.bias.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[F]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for d in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            for w in d.weights.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in d.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn params_f64(&self) -> Vec<f64> {
        self.flat_params().iter().map(|p| p.as_f64()).collect()
    }

    pub fn convert<G: Scalar>(&self) -> SirenModel<G> {
        let conv = |d: &Dense<F>| Dense {
            weights: d.weights.mapv(|x| G::from_f64(x.as_f64())),
            bias: d.bias.mapv(|x| G::from_f64(x.as_f64())),
        };
        SirenModel {
            omega: G::from_f64(self.omega.as_f64()),
            hidden: self.hidden.iter().map(conv).collect(),
            output: conv(&self.output),
        }
    }

    /// Displacements u(x) for a batch of points (N x 3), plus the tape
    /// needed for Jacobians and the reverse pass.
    pub fn forward(&self, xs: &Array2<F>) -> (Array2<F>, BatchTape<F>) {
        assert_eq!(xs.ncols(), 3, "points must be N x 3");
        let omega = self.omega;
        let mut acts: Vec<Array2<F>> = Vec::with_capacity(self.hidden.len() + 1);
        let mut cos: Vec<Array2<F>> = Vec::with_capacity(self.hidden.len());
        acts.push(xs.clone());
        for layer in &self.hidden {
            let mut z = matmul(false, true, &acts.last().unwrap().view(), &layer.weights.view());
            z += &layer.bias;
            let c = z.mapv(|v| (omega * v).cos());
            let s = z.mapv(|v| (omega * v).sin());
            cos.push(c);
            acts.push(s);
        }
        let mut u = matmul(false, true, &acts.last().unwrap().view(), &self.output.weights.view());
        u += &self.output.bias;
        (u, BatchTape { acts, cos, tangents: None })
    }

    /// Per-point Jacobian of Phi(x) = x + u(x): entry [i][d] is
    /// dPhi_i / dx_d. Propagates the three unit tangents forward through
    /// every layer and records their trajectories on the tape for the
    /// mixed reverse pass.
    pub fn spatial_jacobian(&self, tape: &mut BatchTape<F>) -> Vec<[[F; 3]; 3]> {
        let n = tape.batch_len();
        let omega = self.omega;
        if tape.tangents.is_none() {
            let mut t0 = Array2::zeros((3 * n, 3));
            for d in 0..3 {
                t0.slice_mut(s![d * n..(d + 1) * n, d]).fill(F::one());
            }
            let mut t_chain = vec![t0];
            let mut m_chain = Vec::with_capacity(self.hidden.len());
            for (l, layer) in self.hidden.iter().enumerate() {
                let m = matmul(false, true, &t_chain[l].view(), &layer.weights.view());
                let mut t_next = Array2::zeros(m.raw_dim());
                for d in 0..3 {
                    let rows = s![d * n..(d + 1) * n, ..];
                    Zip::from(&mut t_next.slice_mut(rows))
                        .and(&m.slice(rows))
                        .and(&tape.cos[l])
                        .for_each(|t, &mv, &cv| *t = omega * cv * mv);
                }
                m_chain.push(m);
                t_chain.push(t_next);
            }
            tape.tangents = Some(TangentTape { t: t_chain, m: m_chain });
        }
        let tt = tape.tangents.as_ref().unwrap();
        let du = matmul(false, true, &tt.t[self.hidden.len()].view(), &self.output.weights.view());
        let mut jac = vec![[[F::zero(); 3]; 3]; n];
        for p in 0..n {
            for i in 0..3 {
                for d in 0..3 {
                    let delta = if i == d { F::one() } else { F::zero() };
                    jac[p][i][d] = delta + du[[d * n + p, i]];
                }
            }
        }
        jac
    }

    /// Parameter gradients accumulated over the batch, through both the
    /// activation path (`dl_du`) and, when given, the tangent path
    /// (`dl_dj`, cotangents of the spatial Jacobian).
    pub fn backward(
        &self,
        tape: &BatchTape<F>,
        dl_du: &Array2<F>,
        dl_dj: Option<&[[[F; 3]; 3]]>,
    ) -> Result<Gradients<F>> {
        let n = tape.batch_len();
        let layers = self.hidden.len();
        if dl_du.nrows() != n || dl_du.ncols() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "dl_du must be {n} x 3, got {} x {}",
                dl_du.nrows(),
                dl_du.ncols()
            )));
        }
        if let Some(dj) = dl_dj {
            if dj.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "dl_dj must have {n} entries, got {}",
                    dj.len()
                )));
            }
            if tape.tangents.is_none() {
                return Err(Error::InvalidArgument(
                    "Jacobian cotangents given but the tape has no tangent trajectories; \
                     call spatial_jacobian first"
                        .into(),
                ));
            }
        }
        let omega = self.omega;
        let tt = tape.tangents.as_ref();

        // output layer
        let a_last = &tape.acts[layers];
        let mut gw_out = matmul(true, false, &dl_du.view(), &a_last.view());
        let gb_out = dl_du.sum_axis(Axis(0));
        let mut a_bar = matmul(false, false, &dl_du.view(), &self.output.weights.view());
        let mut t_bar: Option<Array2<F>> = None;
        if let Some(dj) = dl_dj {
            let tt = tt.unwrap();
            let mut uj_bar = Array2::zeros((3 * n, 3));
            for p in 0..n {
                for i in 0..3 {
                    for d in 0..3 {
                        uj_bar[[d * n + p, i]] = dj[p][i][d];
                    }
                }
            }
            gw_out += &matmul(true, false, &uj_bar.view(), &tt.t[layers].view());
            t_bar = Some(matmul(false, false, &uj_bar.view(), &self.output.weights.view()));
        }

        let mut hidden_grads: Vec<Dense<F>> = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            let cos_l = &tape.cos[l];
            let sin_l = &tape.acts[l + 1];
            let a_in = &tape.acts[l];

            let mut z_bar = Array2::zeros(cos_l.raw_dim());
            Zip::from(&mut z_bar).and(&a_bar).and(cos_l).for_each(|z, &ab, &c| *z = ab * omega * c);

            let mut m_bar: Option<Array2<F>> = None;
            if let Some(tb) = &t_bar {
                let tt = tt.unwrap();
                let m_l = &tt.m[l];
                let mut mb = Array2::zeros(m_l.raw_dim());
                let om2 = omega * omega;
                for d in 0..3 {
                    let rows = s![d * n..(d + 1) * n, ..];
                    Zip::from(&mut mb.slice_mut(rows))
                        .and(&tb.slice(rows))
                        .and(cos_l)
                        .for_each(|m, &t, &c| *m = omega * c * t);
                    // dT/dZ through the cosine modulation: -omega^2 sin(omega z) * m
                    Zip::from(&mut z_bar)
                        .and(&tb.slice(rows))
                        .and(&m_l.slice(rows))
                        .and(sin_l)
                        .for_each(|z, &t, &m, &sv| *z = *z - om2 * sv * t * m);
                }
                m_bar = Some(mb);
            }

            let mut gw = matmul(true, false, &z_bar.view(), &a_in.view());
            if let (Some(mb), Some(tt)) = (&m_bar, tt) {
                gw += &matmul(true, false, &mb.view(), &tt.t[l].view());
            }
            let gb = z_bar.sum_axis(Axis(0));
            hidden_grads.push(Dense { weights: gw, bias: gb });

            if l > 0 {
                a_bar = matmul(false, false, &z_bar.view(), &self.hidden[l].weights.view());
                if let Some(mb) = &m_bar {
                    t_bar = Some(matmul(false, false, &mb.view(), &self.hidden[l].weights.view()));
                }
            }
        }
        hidden_grads.reverse();
        Ok(Gradients { hidden: hidden_grads, output: Dense { weights: gw_out, bias: gb_out } })
    }
}

/// Bias-corrected Adam over a flattened parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub step: u64,
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    first_moment: Vec<F>,
    second_moment: Vec<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            step: 0,
            learning_rate: F::from_f64(learning_rate),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            epsilon: F::from_f64(1e-8),
            first_moment: vec![F::zero(); param_count],
            second_moment: vec![F::zero(); param_count],
        }
    }

    pub fn apply(&mut self, params: &mut [F], grads: &[F]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { epoch: None });
        }
        self.step += 1;
        let t = self.step as i32;
        let one = F::one();
        let bc1 = one - self.beta1.powi(t);
        let bc2 = one - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (one - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (one - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] = params[i] - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
