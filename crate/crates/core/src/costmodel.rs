//! The learnable cost `c(x, u) = ‖A y(x) + b‖² + w_u ‖u‖²`, where `y` is a
//! rectifier MLP over a selected subset of the state.
//!
//! Parameter gradients are computed by reverse-mode accumulation over a
//! whole trajectory at once (timesteps are matrix columns). State
//! derivatives for the LQR backward pass use a Gauss-Newton Hessian, which
//! is PSD by construction.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polopt::StepCost;
use crate::trajmath::{CostExpansion, Trajectory};

/// Fully connected layer `W h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: DMatrix::zeros(out, inp),
            bias: DVector::zeros(out),
        }
    }

    fn apply(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weight * h;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostNetwork {
    /// Rectified hidden layers.
    pub hidden: Vec<Dense>,
    /// Affine map from the last hidden layer to the features `y`.
    pub features: Dense,
    pub head_a: DMatrix<f64>,
    pub head_b: DVector<f64>,
    /// Fixed torque weight `w_u`; not a learnable parameter.
    pub torque_weight: f64,
    /// State components fed to the network.
    pub input_selector: Vec<usize>,
    pub state_dim: usize,
}

/// Activations of one batched forward pass.
struct Forward {
    /// `inputs` then one entry per hidden layer.
    acts: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    features: DMatrix<f64>,
    residual: DMatrix<f64>,
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

impl CostNetwork {
    /// Network whose features are a lossless encoding of the input:
    /// the first layer stacks `[I; -I]`, later hidden layers are identities,
    /// and `A (W_y h) = relu(s) - relu(-s) = s` on the first `d_in` rows.
    /// The initial cost is therefore `‖s‖² + w_u ‖u‖²`.
    pub fn init_identity(
        state_dim: usize,
        input_selector: Vec<usize>,
        hidden_widths: &[usize],
        feature_dim: usize,
        torque_weight: f64,
    ) -> Result<Self> {
        let d_in = input_selector.len();
        Self::check_selector(state_dim, &input_selector)?;
        let first = *hidden_widths
            .first()
            .ok_or_else(|| Error::InvalidArgument("identity init needs at least one hidden layer".into()))?;
        if first != 2 * d_in {
            return Err(Error::InvalidArgument(format!(
                "identity init needs first hidden width 2·d_in = {}, got {first}",
                2 * d_in
            )));
        }
        if hidden_widths.iter().any(|&w| w != first) {
            return Err(Error::InvalidArgument(format!(
                "identity init needs equal hidden widths, got {hidden_widths:?}"
            )));
        }
        if feature_dim < d_in {
            return Err(Error::InvalidArgument(format!(
                "identity init needs feature dim ≥ d_in = {d_in}, got {feature_dim}"
            )));
        }
        let mut layers = Vec::with_capacity(hidden_widths.len());
        let mut l1 = Dense::zeros(first, d_in);
        for i in 0..d_in {
            l1.weight[(i, i)] = 1.0;
            l1.weight[(d_in + i, i)] = -1.0;
        }
        layers.push(l1);
        for _ in 1..hidden_widths.len() {
            layers.push(Dense {
                weight: DMatrix::identity(first, first),
                bias: DVector::zeros(first),
            });
        }
        let mut features = Dense::zeros(feature_dim, first);
        for i in 0..d_in {
            features.weight[(i, i)] = 1.0;
            features.weight[(i, d_in + i)] = -1.0;
        }
        Ok(Self {
            hidden: layers,
            features,
            head_a: DMatrix::identity(feature_dim, feature_dim),
            head_b: DVector::zeros(feature_dim),
            torque_weight,
            input_selector,
            state_dim,
        })
    }

    /// Identity-initialized core of width `2 d_in` embedded in wider layers.
    /// Extra hidden units get random incoming weights and no outgoing
    /// weights; extra feature rows get weights of scale `jitter` so they are
    /// not stuck at a stationary point. With `jitter = 0` the initial cost is
    /// exactly `‖s‖² + w_u ‖u‖²`.
    pub fn init_identity_padded<R: rand::Rng + ?Sized>(
        state_dim: usize,
        input_selector: Vec<usize>,
        hidden_widths: &[usize],
        feature_dim: usize,
        torque_weight: f64,
        jitter: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let d_in = input_selector.len();
        let core = 2 * d_in;
        if hidden_widths.is_empty() || hidden_widths.iter().any(|&w| w < core) {
            return Err(Error::InvalidArgument(format!(
                "padded identity init needs hidden widths ≥ 2·d_in = {core}, got {hidden_widths:?}"
            )));
        }
        let mut net = Self::init_identity(
            state_dim,
            input_selector,
            &vec![core; hidden_widths.len()],
            feature_dim,
            torque_weight,
        )?;
        let mut fan_in = d_in;
        let mut prev_core = d_in;
        for (layer, &w) in net.hidden.iter_mut().zip(hidden_widths) {
            let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive variance");
            let mut weight = DMatrix::from_fn(w, fan_in, |_, _| n.sample(rng));
            weight.view_mut((0, 0), (core, fan_in)).fill(0.0);
            weight.view_mut((0, 0), (core, prev_core)).copy_from(&layer.weight);
            *layer = Dense {
                weight,
                bias: DVector::zeros(w),
            };
            fan_in = w;
            prev_core = core;
        }
        let mut features = Dense::zeros(feature_dim, fan_in);
        features.weight.view_mut((0, 0), (feature_dim, core)).copy_from(&net.features.weight);
        if jitter > 0.0 {
            let n = Normal::new(0.0, jitter / (fan_in as f64).sqrt()).expect("positive scale");
            for r in d_in..feature_dim {
                for c in 0..fan_in {
                    features.weight[(r, c)] = n.sample(rng);
                }
            }
        }
        net.features = features;
        Ok(net)
    }

    /// He-initialized hidden layers, `1/fan_in` feature map and identity head.
    pub fn random<R: rand::Rng + ?Sized>(
        state_dim: usize,
        input_selector: Vec<usize>,
        hidden_widths: &[usize],
        feature_dim: usize,
        torque_weight: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_selector(state_dim, &input_selector)?;
        let mut fan_in = input_selector.len();
        let gaussian = |rows: usize, cols: usize, var: f64, rng: &mut R| {
            let n = Normal::new(0.0, var.sqrt()).expect("positive variance");
            DMatrix::from_fn(rows, cols, |_, _| n.sample(rng))
        };
        let mut hidden = Vec::with_capacity(hidden_widths.len());
        for &w in hidden_widths {
            hidden.push(Dense {
                weight: gaussian(w, fan_in, 2.0 / fan_in as f64, rng),
                bias: DVector::zeros(w),
            });
            fan_in = w;
        }
        let features = Dense {
            weight: gaussian(feature_dim, fan_in, 1.0 / fan_in as f64, rng),
            bias: DVector::zeros(feature_dim),
        };
        Ok(Self {
            hidden,
            features,
            head_a: DMatrix::identity(feature_dim, feature_dim),
            head_b: DVector::zeros(feature_dim),
            torque_weight,
            input_selector,
            state_dim,
        })
    }

    fn check_selector(state_dim: usize, selector: &[usize]) -> Result<()> {
        if selector.is_empty() || selector.iter().any(|&i| i >= state_dim) {
            return Err(Error::InvalidArgument(format!(
                "input selector {selector:?} invalid for state dim {state_dim}"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_selector.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.weight.nrows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.weight.nrows()).collect()
    }

    /// Parameter blocks in canonical order; vectors are single columns.
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.hidden {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out.push(self.features.weight.as_slice());
        out.push(self.features.bias.as_slice());
        out.push(self.head_a.as_slice());
        out.push(self.head_b.as_slice());
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.hidden {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.features.weight.as_mut_slice());
        out.push(self.features.bias.as_mut_slice());
        out.push(self.head_a.as_mut_slice());
        out.push(self.head_b.as_mut_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Flat parameter vector (column-major blocks, canonical order).
    pub fn params(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.num_params(),
            self.param_slices().into_iter().flat_map(|s| s.iter().copied()),
        )
    }

    pub fn set_params(&mut self, params: &DVector<f64>) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        for block in self.param_slices_mut() {
            let n = block.len();
            block.copy_from_slice(&params.as_slice()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn select(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.input_dim(), self.input_selector.iter().map(|&i| x[i]))
    }

    fn forward_batch(&self, states: &[DVector<f64>]) -> Forward {
        let inputs = DMatrix::from_fn(self.input_dim(), states.len(), |r, c| {
            states[c][self.input_selector[r]]
        });
        let mut acts = vec![inputs];
        let mut pre = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let z = layer.apply(acts.last().expect("inputs present"));
            acts.push(relu(&z));
            pre.push(z);
        }
        let features = self.features.apply(acts.last().expect("inputs present"));
        let mut residual = &self.head_a * &features;
        for mut col in residual.column_iter_mut() {
            col += &self.head_b;
        }
        Forward {
            acts,
            pre,
            features,
            residual,
        }
    }

    /// Network features `y(x)`.
    pub fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        self.forward_batch(std::slice::from_ref(x)).features.column(0).into_owned()
    }

    /// State part `‖A y(x) + b‖²` of the cost, for each state.
    pub fn state_costs(&self, states: &[DVector<f64>]) -> Vec<f64> {
        self.forward_batch(states)
            .residual
            .column_iter()
            .map(|c| c.norm_squared())
            .collect()
    }

    pub fn cost_forward(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.state_costs(std::slice::from_ref(x))[0] + self.torque_weight * u.norm_squared()
    }

    /// Per-step costs `c(x_t, u_t)` along a trajectory.
    pub fn step_costs(&self, traj: &Trajectory) -> Vec<f64> {
        self.state_costs(traj.states())
            .into_iter()
            .zip(traj.actions())
            .map(|(c, u)| c + self.torque_weight * u.norm_squared())
            .collect()
    }

    /// `c(τ) = Σ_t c(x_t, u_t)`.
    pub fn cost_traj(&self, traj: &Trajectory) -> f64 {
        self.step_costs(traj).iter().sum()
    }

    /// `Σ_t upstream_t · ∂‖A y(x_t) + b‖²/∂θ` as a flat parameter vector.
    pub fn state_cost_vjp(&self, states: &[DVector<f64>], upstream: &[f64]) -> DVector<f64> {
        assert_eq!(states.len(), upstream.len(), "one upstream weight per state");
        let fwd = self.forward_batch(states);
        let mut d_res = fwd.residual.clone();
        for (mut col, &g) in d_res.column_iter_mut().zip(upstream) {
            col *= 2.0 * g;
        }
        let grad_a = &d_res * fwd.features.transpose();
        let grad_b = d_res.column_sum();
        let d_feat = self.head_a.transpose() * &d_res;
        let last = fwd.acts.last().expect("inputs present");
        let grad_fw = &d_feat * last.transpose();
        let grad_fb = d_feat.column_sum();
        let mut d_act = self.features.weight.transpose() * &d_feat;
        let mut hidden_grads = Vec::with_capacity(self.hidden.len());
        for (i, layer) in self.hidden.iter().enumerate().rev() {
            let d_pre = d_act.zip_map(&fwd.pre[i], |g, z| if z > 0.0 { g } else { 0.0 });
            hidden_grads.push((&d_pre * fwd.acts[i].transpose(), d_pre.column_sum()));
            if i > 0 {
                d_act = layer.weight.transpose() * &d_pre;
            }
        }
        hidden_grads.reverse();
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in &hidden_grads {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out.extend_from_slice(grad_fw.as_slice());
        out.extend_from_slice(grad_fb.as_slice());
        out.extend_from_slice(grad_a.as_slice());
        out.extend_from_slice(grad_b.as_slice());
        DVector::from_vec(out)
    }

    /// `scale · dc(τ)/dθ`. The torque term carries no parameters.
    pub fn cost_param_gradient(&self, traj: &Trajectory, scale: f64) -> DVector<f64> {
        self.state_cost_vjp(traj.states(), &vec![scale; traj.horizon()])
    }

    /// Feature Jacobian `∂y/∂s` with respect to the selected inputs.
    fn feature_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let s = self.select(x);
        let mut h = s;
        let mut jac = DMatrix::identity(self.input_dim(), self.input_dim());
        for layer in &self.hidden {
            let z = &layer.weight * &h + &layer.bias;
            let mut lj = &layer.weight * jac;
            for (r, &zr) in z.iter().enumerate() {
                if zr <= 0.0 {
                    lj.row_mut(r).fill(0.0);
                }
            }
            jac = lj;
            h = z.map(|v| v.max(0.0));
        }
        let y = &self.features.weight * &h + &self.features.bias;
        (y, &self.features.weight * jac)
    }

    /// Exact gradient and Gauss-Newton Hessian of the per-step cost:
    /// `C_xx ≈ 2 J_yᵀ AᵀA J_y`, `C_uu = 2 w_u I`, `C_ux = 0`.
    pub fn quad_expansion(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostExpansion {
        let (dx, du) = (self.state_dim, u.len());
        let (y, jy) = self.feature_jacobian(x);
        let r = &self.head_a * &y + &self.head_b;
        let aj = &self.head_a * &jy;
        let gs = aj.transpose() * &r * 2.0;
        let hs = aj.transpose() * &aj * 2.0;
        let mut cx = DVector::zeros(dx);
        let mut cxx = DMatrix::zeros(dx, dx);
        for (a, &ia) in self.input_selector.iter().enumerate() {
            cx[ia] += gs[a];
            for (b, &ib) in self.input_selector.iter().enumerate() {
                cxx[(ia, ib)] += hs[(a, b)];
            }
        }
        CostExpansion {
            x: x.clone(),
            u: u.clone(),
            c: r.norm_squared() + self.torque_weight * u.norm_squared(),
            cx,
            cu: u * (2.0 * self.torque_weight),
            cxx,
            cuu: DMatrix::identity(du, du) * (2.0 * self.torque_weight),
            cux: DMatrix::zeros(du, dx),
        }
    }

    /// Local-constant-rate penalty on the state costs of `traj`, with its
    /// parameter gradient.
    pub fn reg_lcr(&self, traj: &Trajectory) -> Result<(f64, DVector<f64>)> {
        let costs = self.state_costs(traj.states());
        let (value, dcosts) = lcr_penalty(&costs)?;
        Ok((value, self.state_cost_vjp(traj.states(), &dcosts)))
    }

    /// Monotonic-decrease hinge penalty on the state costs of `traj`, with
    /// its parameter gradient.
    pub fn reg_mono(&self, traj: &Trajectory, margin: f64) -> (f64, DVector<f64>) {
        let costs = self.state_costs(traj.states());
        let (value, dcosts) = mono_penalty(&costs, margin);
        (value, self.state_cost_vjp(traj.states(), &dcosts))
    }
}

impl StepCost for CostNetwork {
    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.cost_forward(x, u)
    }

    fn expand(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostExpansion {
        self.quad_expansion(x, u)
    }

    fn expand_along(&self, states: &[DVector<f64>], actions: &[DVector<f64>]) -> Vec<CostExpansion> {
        states.iter().zip(actions).map(|(x, u)| self.quad_expansion(x, u)).collect()
    }
}

/// `Σ_t [(c_{t+1} - c_t) - (c_t - c_{t-1})]²` and its derivative per cost.
pub fn lcr_penalty(costs: &[f64]) -> Result<(f64, Vec<f64>)> {
    if costs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "lcr penalty needs at least 3 timesteps, got {}",
            costs.len()
        )));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; costs.len()];
    for t in 1..costs.len() - 1 {
        let s = costs[t + 1] - 2.0 * costs[t] + costs[t - 1];
        value += s * s;
        grad[t + 1] += 2.0 * s;
        grad[t] -= 4.0 * s;
        grad[t - 1] += 2.0 * s;
    }
    Ok((value, grad))
}

/// `Σ_t max(0, c_t - c_{t-1} - margin)²` and its derivative per cost.
pub fn mono_penalty(costs: &[f64], margin: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; costs.len()];
    for t in 1..costs.len() {
        let h = (costs[t] - costs[t - 1] - margin).max(0.0);
        value += h * h;
        grad[t] += 2.0 * h;
        grad[t - 1] -= 2.0 * h;
    }
    (value, grad)
}

const CHECKPOINT_FORMAT: &str = "gcl-cost-network";
const CHECKPOINT_VERSION: u32 = 1;

/// Named array with its shape; `data` is row-major.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned checkpoint: a manifest plus the named parameter arrays.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CostCheckpoint {
    pub format: String,
    pub version: u32,
    pub state_dim: usize,
    pub input_selector: Vec<usize>,
    pub hidden_widths: Vec<usize>,
    pub feature_dim: usize,
    pub head_rows: usize,
    pub torque_weight: f64,
    pub num_params: usize,
    pub arrays: Vec<NamedArray>,
}

impl CostNetwork {
    pub fn to_checkpoint(&self) -> CostCheckpoint {
        let matrix = |name: String, m: &DMatrix<f64>| NamedArray {
            name,
            shape: vec![m.nrows(), m.ncols()],
            data: m.transpose().as_slice().to_vec(),
        };
        let vector = |name: String, v: &DVector<f64>| NamedArray {
            name,
            shape: vec![v.len()],
            data: v.as_slice().to_vec(),
        };
        let mut arrays = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            arrays.push(matrix(format!("hidden.{i}.weight"), &l.weight));
            arrays.push(vector(format!("hidden.{i}.bias"), &l.bias));
        }
        arrays.push(matrix("features.weight".into(), &self.features.weight));
        arrays.push(vector("features.bias".into(), &self.features.bias));
        arrays.push(matrix("head.a".into(), &self.head_a));
        arrays.push(vector("head.b".into(), &self.head_b));
        CostCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            state_dim: self.state_dim,
            input_selector: self.input_selector.clone(),
            hidden_widths: self.hidden_widths(),
            feature_dim: self.feature_dim(),
            head_rows: self.head_a.nrows(),
            torque_weight: self.torque_weight,
            num_params: self.num_params(),
            arrays,
        }
    }

    pub fn from_checkpoint(ckpt: &CostCheckpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported cost checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let find = |name: &str| {
            ckpt.arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Parse(format!("checkpoint is missing array `{name}`")))
        };
        let matrix = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let a = find(name)?;
            if a.shape != [rows, cols] || a.data.len() != rows * cols {
                return Err(Error::Parse(format!("array `{name}` has shape {:?}, expected [{rows}, {cols}]", a.shape)));
            }
            Ok(DMatrix::from_row_slice(rows, cols, &a.data))
        };
        let vector = |name: &str, len: usize| -> Result<DVector<f64>> {
            let a = find(name)?;
            if a.shape != [len] || a.data.len() != len {
                return Err(Error::Parse(format!("array `{name}` has shape {:?}, expected [{len}]", a.shape)));
            }
            Ok(DVector::from_column_slice(&a.data))
        };
        Self::check_selector(ckpt.state_dim, &ckpt.input_selector)?;
        let mut fan_in = ckpt.input_selector.len();
        let mut hidden = Vec::new();
        for (i, &w) in ckpt.hidden_widths.iter().enumerate() {
            hidden.push(Dense {
                weight: matrix(&format!("hidden.{i}.weight"), w, fan_in)?,
                bias: vector(&format!("hidden.{i}.bias"), w)?,
            });
            fan_in = w;
        }
        let net = Self {
            hidden,
            features: Dense {
                weight: matrix("features.weight", ckpt.feature_dim, fan_in)?,
                bias: vector("features.bias", ckpt.feature_dim)?,
            },
            head_a: matrix("head.a", ckpt.head_rows, ckpt.feature_dim)?,
            head_b: vector("head.b", ckpt.head_rows)?,
            torque_weight: ckpt.torque_weight,
            input_selector: ckpt.input_selector.clone(),
            state_dim: ckpt.state_dim,
        };
        if net.num_params() != ckpt.num_params {
            return Err(Error::Parse(format!(
                "checkpoint declares {} parameters, arrays hold {}",
                ckpt.num_params,
                net.num_params()
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: CostCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_checkpoint(&ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::rng::substream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn small_net(seed: u64) -> CostNetwork {
        let mut rng = substream(seed, "init");
        let mut net = CostNetwork::random(4, vec![0, 1, 2, 3], &[8, 6], 5, 0.01, &mut rng).unwrap();
        let p = net.params() + linalg::standard_normal(net.num_params(), &mut rng) * 0.3;
        net.set_params(&p).unwrap();
        net
    }

    fn random_traj(horizon: usize, seed: u64) -> Trajectory {
        let mut rng = substream(seed, "traj");
        Trajectory::new(
            (0..horizon).map(|_| linalg::standard_normal(4, &mut rng)).collect(),
            (0..horizon).map(|_| linalg::standard_normal(2, &mut rng)).collect(),
        )
        .unwrap()
    }

    fn check_fd(net: &CostNetwork, f: impl Fn(&CostNetwork) -> f64, grad: &DVector<f64>) {
        let p0 = net.params();
        let h = 1e-6;
        let mut probe = net.clone();
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            probe.set_params(&p).unwrap();
            let up = f(&probe);
            p[i] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let down = f(&probe);
            let fd = (up - down) / (2.0 * h);
            let err = (grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1e-4);
            assert!(err < 1e-4, "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn zero_head_leaves_torque_term() {
        let mut net = small_net(0);
        net.head_a.fill(0.0);
        net.head_b.fill(0.0);
        let x = DVector::from_element(4, 0.7);
        let u = DVector::from_vec(vec![1.0, -2.0]);
        assert_relative_eq!(net.cost_forward(&x, &u), 0.05, epsilon = 1e-15);
        assert_eq!(net.cost_forward(&x, &DVector::zeros(2)), 0.0);
    }

    #[test]
    fn identity_init_by_hand() {
        let net = CostNetwork::init_identity(2, vec![0, 1], &[4], 2, 0.0).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(net.cost_forward(&x, &DVector::zeros(2)), 1.0);
        assert_eq!(net.features(&x), x);
    }

    #[test]
    fn identity_init_recovers_squared_norm() {
        let wu = 0.05;
        let net = CostNetwork::init_identity(6, vec![0, 2, 4], &[6, 6, 6], 4, wu).unwrap();
        let mut rng = substream(1, "x");
        for _ in 0..200 {
            let x = linalg::standard_normal(6, &mut rng) * 3.0;
            let u = linalg::standard_normal(2, &mut rng);
            let s2 = x[0] * x[0] + x[2] * x[2] + x[4] * x[4];
            assert_relative_eq!(net.cost_forward(&x, &u), s2 + wu * u.norm_squared(), epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_features_are_injective() {
        let net = CostNetwork::init_identity(4, vec![0, 1, 2, 3], &[8, 8], 6, 0.0).unwrap();
        let mut rng = substream(2, "x");
        for _ in 0..1000 {
            let a = linalg::standard_normal(4, &mut rng);
            let b = linalg::standard_normal(4, &mut rng);
            assert_ne!(net.features(&a), net.features(&b));
            assert_eq!(net.features(&a), net.features(&a.clone()));
        }
    }

    #[test]
    fn identity_init_rejects_bad_widths() {
        assert!(CostNetwork::init_identity(4, vec![0, 1, 2, 3], &[6], 4, 0.0).is_err());
        assert!(CostNetwork::init_identity(4, vec![0, 1, 2, 3], &[8, 10], 4, 0.0).is_err());
        assert!(CostNetwork::init_identity(4, vec![0, 1, 2, 3], &[], 4, 0.0).is_err());
        assert!(CostNetwork::init_identity(4, vec![0, 1, 2, 3], &[8], 3, 0.0).is_err());
        assert!(CostNetwork::init_identity(4, vec![0, 9], &[4], 3, 0.0).is_err());
    }

    #[test]
    fn padded_identity_without_jitter_is_exact() {
        let mut rng = substream(3, "init");
        let net = CostNetwork::init_identity_padded(8, vec![4, 5, 6, 7], &[40, 40], 20, 0.1, 0.0, &mut rng).unwrap();
        assert_eq!(net.hidden_widths(), vec![40, 40]);
        let x = linalg::standard_normal(8, &mut rng);
        let u = DVector::from_vec(vec![0.5, 0.5]);
        let s2: f64 = (4..8).map(|i| x[i] * x[i]).sum();
        assert_relative_eq!(net.cost_forward(&x, &u), s2 + 0.05, epsilon = 1e-12);
    }

    #[test]
    fn gauss_newton_is_exact_for_affine_features() {
        let mut net = CostNetwork::init_identity(2, vec![0, 1], &[4], 2, 0.01).unwrap();
        net.head_a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        // with positive inputs only the +x half of the encoding is active
        let e = net.quad_expansion(&DVector::from_vec(vec![0.4, 1.3]), &DVector::from_vec(vec![1.0, 0.0]));
        assert_relative_eq!(e.cxx, net.head_a.transpose() * &net.head_a * 2.0, epsilon = 1e-12);
        assert_eq!(e.cuu, DMatrix::identity(2, 2) * 0.02);
        assert_eq!(e.cux, DMatrix::zeros(2, 2));
    }

    #[test]
    fn expansion_gradient_matches_finite_differences() {
        let mut rng = substream(5, "x");
        for seed in 0..5 {
            let net = small_net(seed);
            let x = linalg::standard_normal(4, &mut rng);
            let u = linalg::standard_normal(2, &mut rng);
            let e = net.quad_expansion(&x, &u);
            assert_relative_eq!(e.c, net.cost_forward(&x, &u), epsilon = 1e-12);
            let h = 1e-6;
            for i in 0..4 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let fd = (net.cost_forward(&xp, &u) - net.cost_forward(&xm, &u)) / (2.0 * h);
                assert!((e.cx[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3));
            }
            for i in 0..2 {
                let (mut up, mut um) = (u.clone(), u.clone());
                up[i] += h;
                um[i] -= h;
                let fd = (net.cost_forward(&x, &up) - net.cost_forward(&x, &um)) / (2.0 * h);
                assert!((e.cu[i] - fd).abs() <= 1e-5 * fd.abs().max(1e-3));
            }
            assert!(linalg::min_eigenvalue(&e.cxx) >= -1e-10);
            assert_relative_eq!(e.cxx, e.cxx.transpose());
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let net = small_net(7);
        assert!(net.num_params() <= 1000);
        let traj = random_traj(10, 7);
        let g = net.cost_param_gradient(&traj, 0.37);
        check_fd(&net, |n| 0.37 * n.cost_traj(&traj), &g);
        let (_, g_lcr) = net.reg_lcr(&traj).unwrap();
        check_fd(&net, |n| n.reg_lcr(&traj).unwrap().0, &g_lcr);
        let (_, g_mono) = net.reg_mono(&traj, 0.1);
        check_fd(&net, |n| n.reg_mono(&traj, 0.1).0, &g_mono);
    }

    #[test]
    fn zero_scale_and_torque_have_no_parameter_gradient() {
        let net = small_net(8);
        let traj = random_traj(10, 8);
        assert!(net.cost_param_gradient(&traj, 0.0).iter().all(|&v| v == 0.0));
        let still = Trajectory::new(traj.states().to_vec(), vec![DVector::zeros(2); 10]).unwrap();
        assert_eq!(net.cost_param_gradient(&traj, 1.0), net.cost_param_gradient(&still, 1.0));
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(lcr_penalty(&[3.0, 1.0, 2.0]).unwrap().0, 9.0);
        assert_eq!(lcr_penalty(&[2.0; 6]).unwrap().0, 0.0);
        assert_eq!(lcr_penalty(&[0.0, 1.0, 2.0, 3.0]).unwrap().0, 0.0);
        assert!(lcr_penalty(&[1.0, 2.0]).is_err());
        assert_eq!(mono_penalty(&[5.0, 3.0, 10.0], 1.0).0, 36.0);
        assert_eq!(mono_penalty(&[10.0, 8.0, 5.0, 1.0], 1.0).0, 0.0);
        assert_eq!(mono_penalty(&[1.0, 2.0], 1.0).0, 0.0);
        assert!(net_with_short_traj_errors());
    }

    fn net_with_short_traj_errors() -> bool {
        small_net(0).reg_lcr(&random_traj(2, 0)).is_err()
    }

    #[test]
    fn rectangular_head() {
        let mut net = small_net(9);
        net.head_a = DMatrix::from_element(3, 5, 0.2);
        net.head_b = DVector::from_element(3, -0.1);
        let traj = random_traj(10, 9);
        let g = net.cost_param_gradient(&traj, 1.0);
        assert_eq!(g.len(), net.num_params());
        check_fd(&net, |n| n.cost_traj(&traj), &g);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = small_net(10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cost.json");
        net.save(&path).unwrap();
        assert_eq!(CostNetwork::load(&path).unwrap(), net);
        let mut ckpt = net.to_checkpoint();
        ckpt.num_params += 1;
        assert!(CostNetwork::from_checkpoint(&ckpt).is_err());
        let mut ckpt = net.to_checkpoint();
        ckpt.arrays.pop();
        assert!(CostNetwork::from_checkpoint(&ckpt).is_err());
        let mut ckpt = net.to_checkpoint();
        ckpt.version = 99;
        assert!(CostNetwork::from_checkpoint(&ckpt).is_err());
    }

    #[test]
    fn cost_is_nonnegative() {
        let net = small_net(11);
        let mut rng = substream(11, "x");
        for _ in 0..10_000 {
            let x = linalg::standard_normal(4, &mut rng) * 5.0;
            let u = linalg::standard_normal(2, &mut rng) * 5.0;
            assert!(net.cost_forward(&x, &u) >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn penalties_ignore_constant_shifts(
            costs in prop::collection::vec(-50.0f64..50.0, 3..20),
            shift in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
            let a = lcr_penalty(&costs).unwrap().0;
            let b = lcr_penalty(&shifted).unwrap().0;
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
            let a = mono_penalty(&costs, 1.0).0;
            let b = mono_penalty(&shifted, 1.0).0;
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a.abs()));
        }
    }
}
