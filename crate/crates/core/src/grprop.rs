//! Graph reward propagation.
//!
//! The boolean precondition circuit is replaced by a smooth surrogate: AND
//! nodes become a scaled sigmoid of the (signed) literal sum and OR nodes a
//! scaled tanh of the AND outputs. The policy scores each subtask by the
//! gradient of `Ũ = rᵀ(x + ẽ)/2` with respect to the completion vector.
//!
//! Two propagation modes are available. [`Propagation::OneHop`] feeds the
//! completion vector straight into every AND node, so each `ẽ_i` only sees
//! its direct precondition literals. [`Propagation::Recursive`] feeds a soft
//! completion `z_k = x_k + (1 - x_k)·carry·ẽ_k` upward layer by layer, which
//! lets reward flow back through several layers of incomplete subtasks.
//! With `carry = 0` both modes coincide.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Domain, SubtaskGraph, SubtaskId, SubtaskSet, TaskState};
use crate::scalar::{sigmoid, Scalar};

/// Hyperparameters of the smoothed gates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothParams<T> {
    pub alpha_or: T,
    pub beta_or: T,
    pub alpha_and: T,
    pub beta_and: T,
}

impl<T: Scalar> SmoothParams<T> {
    pub fn new(alpha_or: T, beta_or: T, alpha_and: T, beta_and: T) -> Result<Self> {
        let p = SmoothParams { alpha_or, beta_or, alpha_and, beta_and };
        if [alpha_or, beta_or, alpha_and, beta_and].iter().all(|&v| v > T::zero() && v.is_finite()) {
            Ok(p)
        } else {
            Err(Error::Config("smoothing parameters must be strictly positive".into()))
        }
    }

    /// `α_a = 1/σ(0.25)`, so a single satisfied literal maps near one.
    pub fn default_alpha_and() -> T {
        T::one() / sigmoid(T::lit(0.25))
    }

    pub fn playground() -> Self {
        SmoothParams {
            alpha_or: T::one(),
            beta_or: T::lit(1.5),
            alpha_and: Self::default_alpha_and(),
            beta_and: T::lit(0.5),
        }
    }

    pub fn mining() -> Self {
        SmoothParams {
            alpha_or: T::one(),
            beta_or: T::lit(2.0),
            alpha_and: Self::default_alpha_and(),
            beta_and: T::lit(0.6),
        }
    }

    pub fn for_domain(d: Domain) -> Self {
        match d {
            Domain::Playground => Self::playground(),
            Domain::Mining => Self::mining(),
        }
    }

    /// `h_and(a) = α_a σ(a / β_a)`.
    #[inline]
    pub fn h_and(&self, a: T) -> T {
        self.alpha_and * sigmoid(a / self.beta_and)
    }

    #[inline]
    pub fn h_and_prime(&self, a: T) -> T {
        let s = sigmoid(a / self.beta_and);
        self.alpha_and * s * (T::one() - s) / self.beta_and
    }

    /// `h_or(s) = α_o tanh(s / β_o)`.
    #[inline]
    pub fn h_or(&self, s: T) -> T {
        self.alpha_or * (s / self.beta_or).tanh()
    }

    #[inline]
    pub fn h_or_prime(&self, s: T) -> T {
        let t = (s / self.beta_or).tanh();
        self.alpha_or * (T::one() - t * t) / self.beta_or
    }
}

/// Smoothed AND over already-signed literal values.
pub fn smoothed_and<T: Scalar>(inputs: &[T], p: &SmoothParams<T>) -> Result<T> {
    if inputs.is_empty() {
        return Err(Error::Data("smoothed AND of no inputs".into()));
    }
    let n = T::from_usize(inputs.len()).expect("count fits scalar");
    Ok(p.h_and(inputs.iter().copied().sum::<T>() - n + T::half()))
}

/// Smoothed OR over AND outputs.
pub fn smoothed_or<T: Scalar>(inputs: &[T], p: &SmoothParams<T>) -> Result<T> {
    if inputs.is_empty() {
        return Err(Error::Data("smoothed OR of no inputs".into()));
    }
    Ok(p.h_or(inputs.iter().copied().sum()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Propagation<T> {
    OneHop,
    Recursive { carry: T },
}

impl<T: Scalar> Propagation<T> {
    fn carry(self) -> T {
        match self {
            Propagation::OneHop => T::zero(),
            Propagation::Recursive { carry } => carry,
        }
    }
}

/// Full configuration of the scorer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrpropConfig<T> {
    pub smooth: SmoothParams<T>,
    pub propagation: Propagation<T>,
}

impl<T: Scalar> GrpropConfig<T> {
    pub fn one_hop(smooth: SmoothParams<T>) -> Self {
        GrpropConfig { smooth, propagation: Propagation::OneHop }
    }

    pub fn recursive(smooth: SmoothParams<T>, carry: T) -> Self {
        GrpropConfig { smooth, propagation: Propagation::Recursive { carry } }
    }

    /// Default configuration for a domain: full recursive propagation, so
    /// every ancestor of a rewarding subtask receives gradient.
    pub fn for_domain(d: Domain) -> Self {
        Self::recursive(SmoothParams::for_domain(d), T::one())
    }
}

/// Forward values of the smoothed circuit at one completion point.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedForward<T> {
    /// Completion point the circuit was evaluated at.
    pub x: Vec<T>,
    /// Soft completion fed into AND nodes (equals `x` for one-hop).
    pub z: Vec<T>,
    /// Pre-activation of each AND node: `Σ x̂ - |children| + 0.5`.
    pub and_arg: Vec<T>,
    pub y_and: Vec<T>,
    /// Pre-activation of each subtask's OR node (zero for leaves).
    pub or_arg: Vec<T>,
    pub e_tilde: Vec<T>,
    carry: T,
}

/// Everything the policy needs at one completion point.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedEval<T> {
    pub e_tilde: Vec<T>,
    pub y_and: Vec<T>,
    /// Row-major `N × N`: `jacobian[i * N + k] = ∂ẽ_i/∂x_k`.
    pub jacobian: Vec<T>,
    pub utility: T,
    pub scores: Vec<T>,
}

impl<T: Scalar> SmoothedEval<T> {
    pub fn d_e_dx(&self, i: SubtaskId, k: SubtaskId) -> T {
        let n = self.e_tilde.len();
        self.jacobian[i * n + k]
    }
}

/// Evaluates `ẽ` and `ỹ_AND` at a real completion point in `[0, 1]^N`.
pub fn smoothed_eligibility<T: Scalar>(
    graph: &SubtaskGraph<T>,
    completion: &[T],
    cfg: &GrpropConfig<T>,
) -> Result<SmoothedForward<T>> {
    let n = graph.n_subtasks();
    if completion.len() != n {
        return Err(Error::Structure(format!(
            "completion has length {}, expected {n}",
            completion.len()
        )));
    }
    Ok(forward(graph, completion, cfg))
}

fn forward<T: Scalar>(graph: &SubtaskGraph<T>, x: &[T], cfg: &GrpropConfig<T>) -> SmoothedForward<T> {
    let n = graph.n_subtasks();
    let p = &cfg.smooth;
    let carry = cfg.propagation.carry();
    let n_and = graph.and_nodes().len();
    let mut z = x.to_vec();
    let mut and_arg = vec![T::zero(); n_and];
    let mut y_and = vec![T::zero(); n_and];
    let mut and_done = vec![false; n_and];
    let mut or_arg = vec![T::zero(); n];
    let mut e_tilde = vec![T::one(); n];

    for &i in graph.topological_order() {
        let ors = graph.or_children(i);
        if ors.is_empty() {
            continue;
        }
        let mut s = T::zero();
        for &j in ors {
            if !and_done[j] {
                let node = &graph.and_nodes()[j];
                let mut acc = T::zero();
                for c in &node.children {
                    acc = acc + if c.negated { T::one() - z[c.subtask] } else { z[c.subtask] };
                }
                let a = acc - T::from_usize(node.children.len()).expect("count") + T::half();
                and_arg[j] = a;
                y_and[j] = p.h_and(a);
                and_done[j] = true;
            }
            s = s + y_and[j];
        }
        or_arg[i] = s;
        e_tilde[i] = p.h_or(s);
        if carry != T::zero() {
            z[i] = x[i] + (T::one() - x[i]) * carry * e_tilde[i];
        }
    }
    SmoothedForward { x: x.to_vec(), z, and_arg, y_and, or_arg, e_tilde, carry }
}

/// Reverse-mode vector-Jacobian product: returns `Σ_i w_i ∂ẽ_i/∂x`.
pub fn vjp<T: Scalar>(
    graph: &SubtaskGraph<T>,
    fwd: &SmoothedForward<T>,
    p: &SmoothParams<T>,
    weights: &[T],
) -> Vec<T> {
    let n = graph.n_subtasks();
    let mut adj_z = vec![T::zero(); n];
    for &i in graph.topological_order().iter().rev() {
        let ors = graph.or_children(i);
        if ors.is_empty() {
            continue;
        }
        let mut adj_e = weights[i];
        if fwd.carry != T::zero() {
            adj_e = adj_e + adj_z[i] * (T::one() - fwd.x[i]) * fwd.carry;
        }
        if adj_e == T::zero() {
            continue;
        }
        let ds = adj_e * p.h_or_prime(fwd.or_arg[i]);
        for &j in ors {
            let da = ds * p.h_and_prime(fwd.and_arg[j]);
            for c in &graph.and_nodes()[j].children {
                if c.negated {
                    adj_z[c.subtask] = adj_z[c.subtask] - da;
                } else {
                    adj_z[c.subtask] = adj_z[c.subtask] + da;
                }
            }
        }
    }
    // dz_k/dx_k: 1 for leaves and in one-hop mode, 1 - carry·ẽ_k otherwise.
    (0..n)
        .map(|k| {
            if graph.is_leaf(k) || fwd.carry == T::zero() {
                adj_z[k]
            } else {
                adj_z[k] * (T::one() - fwd.carry * fwd.e_tilde[k])
            }
        })
        .collect()
}

/// Closed-form one-hop Jacobian:
/// `∂ẽ_i/∂x_k = h_or'(·) Σ_{j ∋ k} h_and'(·)(2w^{j,k} - 1)`.
pub fn one_hop_jacobian<T: Scalar>(graph: &SubtaskGraph<T>, x: &[T], p: &SmoothParams<T>) -> Vec<T> {
    let n = graph.n_subtasks();
    let mut jac = vec![T::zero(); n * n];
    for i in 0..n {
        let ors = graph.or_children(i);
        if ors.is_empty() {
            continue;
        }
        let mut s = T::zero();
        let mut args = Vec::with_capacity(ors.len());
        for &j in ors {
            let node = &graph.and_nodes()[j];
            let sum: T = node
                .children
                .iter()
                .map(|c| if c.negated { T::one() - x[c.subtask] } else { x[c.subtask] })
                .sum();
            let a = sum - T::from_usize(node.children.len()).expect("count") + T::half();
            s = s + p.h_and(a);
            args.push(a);
        }
        let dor = p.h_or_prime(s);
        for (&j, &a) in ors.iter().zip(&args) {
            let dand = p.h_and_prime(a);
            for c in &graph.and_nodes()[j].children {
                let w = if c.negated { -T::one() } else { T::one() };
                jac[i * n + c.subtask] = jac[i * n + c.subtask] + dor * dand * w;
            }
        }
    }
    jac
}

/// Full evaluation including the Jacobian.
pub fn evaluate<T: Scalar>(graph: &SubtaskGraph<T>, x: &[T], cfg: &GrpropConfig<T>) -> Result<SmoothedEval<T>> {
    let fwd = smoothed_eligibility(graph, x, cfg)?;
    let n = graph.n_subtasks();
    let r = graph.rewards();
    let jacobian = match cfg.propagation {
        Propagation::OneHop => one_hop_jacobian(graph, x, &cfg.smooth),
        Propagation::Recursive { .. } => {
            let mut jac = vec![T::zero(); n * n];
            let mut w = vec![T::zero(); n];
            for i in 0..n {
                w[i] = T::one();
                let row = vjp(graph, &fwd, &cfg.smooth, &w);
                jac[i * n..(i + 1) * n].copy_from_slice(&row);
                w[i] = T::zero();
            }
            jac
        }
    };
    let half = T::half();
    let scores: Vec<T> = (0..n)
        .map(|k| half * r[k] + half * (0..n).map(|i| r[i] * jacobian[i * n + k]).sum::<T>())
        .collect();
    Ok(SmoothedEval {
        utility: smoothed_utility(&r, x, &fwd.e_tilde),
        e_tilde: fwd.e_tilde,
        y_and: fwd.y_and,
        jacobian,
        scores,
    })
}

/// `Ũ = rᵀ(x + ẽ)/2`.
pub fn smoothed_utility<T: Scalar>(r: &[T], x: &[T], e_tilde: &[T]) -> T {
    T::half() * r.iter().zip(x).zip(e_tilde).map(|((&r, &x), &e)| r * (x + e)).sum::<T>()
}

/// `∇ₓŨ` at a real completion point, without materialising the Jacobian.
pub fn scores_at<T: Scalar>(graph: &SubtaskGraph<T>, x: &[T], cfg: &GrpropConfig<T>) -> Vec<T> {
    let fwd = forward(graph, x, cfg);
    let r = graph.rewards();
    let back = vjp(graph, &fwd, &cfg.smooth, &r);
    r.iter().zip(back).map(|(&r, b)| T::half() * (r + b)).collect()
}

/// Scores at the (binary) completion vector of `state`.
pub fn grprop_scores<T: Scalar>(graph: &SubtaskGraph<T>, state: &TaskState, cfg: &GrpropConfig<T>) -> Vec<T> {
    let x: Vec<T> = (0..graph.n_subtasks())
        .map(|i| if state.completion.contains(i) { T::one() } else { T::zero() })
        .collect();
    scores_at(graph, &x, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SelectMode {
    /// Highest score, lowest id on ties.
    Argmax,
    /// Softmax sampling at the given temperature.
    Sample { temperature: f64 },
}

/// Highest-scoring member of `allowed`; ties go to the lowest id.
pub fn argmax_in<T: Scalar>(scores: &[T], allowed: SubtaskSet) -> Option<SubtaskId> {
    let mut best: Option<(SubtaskId, T)> = None;
    for i in allowed.iter() {
        match best {
            Some((_, b)) if scores[i] <= b => {}
            _ => best = Some((i, scores[i])),
        }
    }
    best.map(|(i, _)| i)
}

/// Softmax probabilities over `allowed` (zero elsewhere).
pub fn softmax_in<T: Scalar>(scores: &[T], allowed: SubtaskSet, temperature: f64) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    let Some(max) = allowed.iter().map(|i| scores[i].as_f64()).reduce(f64::max) else {
        return out;
    };
    let mut total = 0.0;
    for i in allowed.iter() {
        let w = ((scores[i].as_f64() - max) / temperature).exp();
        out[i] = w;
        total += w;
    }
    for v in &mut out {
        *v /= total;
    }
    out
}

fn sample_index(probs: &[f64], allowed: SubtaskSet, rng: &mut impl Rng) -> Option<SubtaskId> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for i in allowed.iter() {
        acc += probs[i];
        last = Some(i);
        if u < acc {
            return Some(i);
        }
    }
    last
}

/// GRProp action: scores masked to currently eligible subtasks. `None`
/// when nothing is eligible.
pub fn grprop_policy<T: Scalar>(
    graph: &SubtaskGraph<T>,
    state: &TaskState,
    cfg: &GrpropConfig<T>,
    mode: SelectMode,
    rng: &mut impl Rng,
) -> Option<SubtaskId> {
    let eligible = state.eligibility;
    match eligible.len() {
        0 => None,
        1 => eligible.first(),
        _ => {
            let scores = grprop_scores(graph, state, cfg);
            match mode {
                SelectMode::Argmax => argmax_in(&scores, eligible),
                SelectMode::Sample { temperature } => {
                    let probs = softmax_in(&scores, eligible, temperature);
                    sample_index(&probs, eligible, rng)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AndNode, Literal, SubtaskSpec};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(id: usize, layer: usize, reward: f64) -> SubtaskSpec<f64> {
        SubtaskSpec { id, label: format!("{id}"), layer, reward }
    }

    #[test]
    fn alpha_and_value() {
        let a = SmoothParams::<f64>::default_alpha_and();
        assert!((a - 1.778_800_8).abs() < 1e-6, "{a}");
    }

    #[test]
    fn gate_examples() {
        let pg = SmoothParams::<f64>::playground();
        // α_a σ(1) with α_a = 1/σ(0.25)
        let y = smoothed_and(&[1.0], &pg).unwrap();
        assert!((y - 1.300_407_572).abs() < 1e-9, "{y}");
        let e = smoothed_or(&[y], &pg).unwrap();
        assert!((e - 0.699_815_259).abs() < 1e-9, "{e}");
        let mn = SmoothParams::<f64>::mining();
        let y = smoothed_and(&[1.0, 1.0], &mn).unwrap();
        assert!((y - 1.239_929_600).abs() < 1e-9, "{y}");
        assert_eq!(smoothed_or(&[0.0, 0.0], &pg).unwrap(), 0.0);
        assert!(smoothed_and::<f64>(&[], &pg).is_err());
        assert!(smoothed_or::<f64>(&[], &pg).is_err());
    }

    #[test]
    fn and_of_zeros_decreases_with_arity() {
        let p = SmoothParams::<f64>::playground();
        let vals: Vec<f64> = (1..6).map(|n| smoothed_and(&vec![0.0; n], &p).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn or_is_bounded() {
        let p = SmoothParams::<f64>::playground();
        for v in [-100.0, -3.0, 0.5, 7.0, 1e6] {
            let o = smoothed_or(&[v], &p).unwrap();
            assert!(o >= -p.alpha_or && o <= p.alpha_or);
        }
    }

    #[test]
    fn rejects_nonpositive_params() {
        assert!(SmoothParams::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(SmoothParams::new(1.0, 1.0, -1.0, 1.0).is_err());
        assert!(SmoothParams::new(1.0, 1.5, 1.7, 0.5).is_ok());
    }

    #[test]
    fn negated_edge_lowers_parent() {
        let g = SubtaskGraph::new(
            vec![spec(0, 0, 0.1), spec(1, 1, 1.0)],
            vec![AndNode { id: 0, children: vec![Literal::neg(0)] }],
            vec![vec![], vec![0]],
            (1, 1),
        )
        .unwrap();
        let cfg = GrpropConfig::one_hop(SmoothParams::playground());
        let a = smoothed_eligibility(&g, &[0.0, 0.0], &cfg).unwrap().e_tilde[1];
        let b = smoothed_eligibility(&g, &[1.0, 0.0], &cfg).unwrap().e_tilde[1];
        assert!(b < a);
    }

    #[test]
    fn all_leaves_score_half_reward() {
        let g = SubtaskGraph::new(
            vec![spec(0, 0, 0.3), spec(1, 0, 0.9), spec(2, 0, 0.5)],
            vec![],
            vec![vec![], vec![], vec![]],
            (1, 1),
        )
        .unwrap();
        for cfg in [
            GrpropConfig::one_hop(SmoothParams::playground()),
            GrpropConfig::recursive(SmoothParams::playground(), 1.0),
        ] {
            let s = grprop_scores(&g, &TaskState::initial(&g, 5), &cfg);
            assert_eq!(s, vec![0.15, 0.45, 0.25]);
        }
    }

    #[test]
    fn policy_masking_and_ties() {
        let g = SubtaskGraph::new(
            vec![spec(0, 0, 0.5), spec(1, 0, 0.5), spec(2, 1, 1.0)],
            vec![AndNode { id: 0, children: vec![Literal::pos(0), Literal::pos(1)] }],
            vec![vec![], vec![], vec![0]],
            (1, 1),
        )
        .unwrap();
        let cfg = GrpropConfig::one_hop(SmoothParams::playground());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s0 = TaskState::initial(&g, 5);
        assert_eq!(grprop_policy(&g, &s0, &cfg, SelectMode::Argmax, &mut rng), Some(0));
        let s1 = TaskState::from_completion(&g, SubtaskSet::from_iter([0]), 5);
        assert_eq!(grprop_policy(&g, &s1, &cfg, SelectMode::Argmax, &mut rng), Some(1));
        let done = TaskState::from_completion(&g, SubtaskSet::from_iter([0, 1, 2]), 5);
        assert_eq!(grprop_policy(&g, &done, &cfg, SelectMode::Argmax, &mut rng), None);
    }

    #[test]
    fn softmax_shift_invariant() {
        let s = [0.1f64, 0.7, -0.4, 0.3];
        let shifted: Vec<f64> = s.iter().map(|v| v + 12.5).collect();
        let allowed = SubtaskSet::from_iter([0, 1, 3]);
        let a = softmax_in(&s, allowed, 1.0);
        let b = softmax_in(&shifted, allowed, 1.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a[2], 0.0);
        assert_eq!(argmax_in(&s, allowed), argmax_in(&shifted, allowed));
    }
}
