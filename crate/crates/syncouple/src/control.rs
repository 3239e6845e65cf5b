//! Distributed controller assembly and evaluation.
//!
//! A controller couples each agent to its neighbors through one gain matrix
//! per companion coordinate (the proportional/derivative part) and, when
//! disturbance rejection is wanted, through additional gain matrices on
//! iterated integrals of the first coordinate. The matrices come from a
//! coupling collection; the scalar gain comes from the energy argument's
//! lower bound. Plants that are not in companion form are handled through a
//! state transform, either the closed-form linear one or user-supplied maps.

use crate::collection::{CollectionError, SpectralCollection};
use crate::lyapunov::{gain_lower_bound, LyapunovError};
use crate::matrixcore::{DenseMatrix, MatrixError, SymMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Version tag for serialized controller documents.
pub const CONTROLLER_SCHEMA_VERSION: &str = "1";

/// Input-scale magnitudes at or below this are treated as a singularity.
pub const DECOUPLING_TOL: f64 = 1e-12;

/// Condition numbers of the controllability matrix above this are treated as
/// rank deficiency.
const CONTROLLABILITY_COND_LIMIT: f64 = 1e14;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("integral augmentation mismatch: {0}")]
    InvalidAugmentation(String),
    #[error("pair is not controllable (controllability matrix condition {condition:.3e})")]
    NotControllable { condition: f64 },
    #[error("input scale {value:.3e} vanishes at state {state:?}")]
    SingularDecoupling { state: Vec<f64>, value: f64 },
    #[error("agent index {agent} out of range for {agents} agents")]
    InvalidAgent { agent: usize, agents: usize },
    #[error("dimension mismatch: {0}")]
    InvalidDimensions(String),
    #[error("invalid controller document: {0}")]
    InvalidDocument(String),
    #[error(transparent)]
    Collection(#[from] CollectionError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, ControlError>;

/// Coordinate change between the plant's native state and the companion
/// state the controller operates in. `forward` maps native to companion;
/// `input_scale` is the factor turning the companion-coordinates control
/// into the physical input (constantly 1 in the linear case, the reciprocal
/// decoupling term in the feedback-linearized case). `matrix` is set when
/// the map is linear, which is also the only form that serializes.
#[derive(Clone)]
pub struct StateTransform {
    pub forward: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    pub input_scale: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub matrix: Option<DenseMatrix>,
    /// Weak-Lipschitz constant of the transformed drift.
    pub lipschitz_w: f64,
}

impl fmt::Debug for StateTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateTransform")
            .field("matrix", &self.matrix)
            .field("lipschitz_w", &self.lipschitz_w)
            .finish_non_exhaustive()
    }
}

impl StateTransform {
    /// Linear transform z = T·x with unit input scale.
    pub fn from_matrix(t: DenseMatrix, lipschitz_w: f64) -> Self {
        let tm = t.clone();
        StateTransform {
            forward: Arc::new(move |x| tm.matvec(x)),
            input_scale: Arc::new(|_| 1.0),
            matrix: Some(t),
            lipschitz_w,
        }
    }

    /// Identity transform for plants already in companion form.
    pub fn identity(order: usize) -> Self {
        StateTransform::from_matrix(DenseMatrix::identity(order), 0.0)
    }
}

/// User-supplied transform for feedback-linearizable plants. The caller
/// asserts the geometric conditions that make the companion coordinates
/// exist; nothing here can check them. `input_scale` evaluations are guarded
/// at control time: magnitudes at or below 1e-12 raise
/// [`ControlError::SingularDecoupling`].
pub fn wrap_nonlinear(
    forward: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    input_scale: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    w: f64,
) -> StateTransform {
    assert!(w >= 0.0 && w.is_finite(), "weak-Lipschitz constant must be nonnegative");
    StateTransform {
        forward: Arc::new(forward),
        input_scale: Arc::new(input_scale),
        matrix: None,
        lipschitz_w: w,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Pd,
    Pid,
}

/// A fully assembled distributed controller: coupling matrices per companion
/// coordinate (`l_pd`), coupling matrices per integral depth (`l_i`, deepest
/// integral first coupled via the lowest-index matrix), the scalar gain, and
/// an optional state transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ControllerDoc", into = "ControllerDoc")]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    /// Plant order n.
    pub order: usize,
    /// Integral degree h (0 for pure PD).
    pub integral_degree: usize,
    /// L_PD,1..L_PD,n.
    pub l_pd: Vec<SymMatrix>,
    /// L_I,1..L_I,h; L_I,m couples the m-times-iterated integrals.
    pub l_i: Vec<SymMatrix>,
    /// Scalar gain.
    pub l: f64,
    pub transform: Option<StateTransform>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformDoc {
    matrix: Option<DenseMatrix>,
    lipschitz_w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerDoc {
    schema_version: String,
    kind: ControllerKind,
    order: usize,
    integral_degree: usize,
    l: f64,
    l_pd: Vec<SymMatrix>,
    l_i: Vec<SymMatrix>,
    transform: Option<TransformDoc>,
}

impl From<ControllerSpec> for ControllerDoc {
    fn from(s: ControllerSpec) -> Self {
        ControllerDoc {
            schema_version: CONTROLLER_SCHEMA_VERSION.to_string(),
            kind: s.kind,
            order: s.order,
            integral_degree: s.integral_degree,
            l: s.l,
            l_pd: s.l_pd,
            l_i: s.l_i,
            transform: s.transform.map(|t| TransformDoc {
                matrix: t.matrix,
                lipschitz_w: t.lipschitz_w,
            }),
        }
    }
}

impl TryFrom<ControllerDoc> for ControllerSpec {
    type Error = ControlError;
    fn try_from(doc: ControllerDoc) -> Result<Self> {
        if doc.schema_version != CONTROLLER_SCHEMA_VERSION {
            return Err(ControlError::InvalidDocument(format!(
                "unsupported schema_version {:?}",
                doc.schema_version
            )));
        }
        let transform = match doc.transform {
            None => None,
            Some(TransformDoc {
                matrix: Some(t),
                lipschitz_w,
            }) => {
                if t.rows() != doc.order || t.cols() != doc.order {
                    return Err(ControlError::InvalidDocument(format!(
                        "transform matrix is {}x{}, plant order is {}",
                        t.rows(),
                        t.cols(),
                        doc.order
                    )));
                }
                Some(StateTransform::from_matrix(t, lipschitz_w))
            }
            Some(TransformDoc { matrix: None, .. }) => {
                return Err(ControlError::InvalidDocument(
                    "transform without a matrix cannot be reconstructed; \
                     nonlinear transform maps do not serialize"
                        .into(),
                ));
            }
        };
        let spec = ControllerSpec {
            kind: doc.kind,
            order: doc.order,
            integral_degree: doc.integral_degree,
            l_pd: doc.l_pd,
            l_i: doc.l_i,
            l: doc.l,
            transform,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl ControllerSpec {
    /// Number of agents the gain matrices couple.
    pub fn agents(&self) -> usize {
        self.l_pd.first().map(|m| m.dim()).unwrap_or(0)
    }

    /// A do-nothing controller (zero coupling matrices, unit gain) for
    /// uncoupled baseline runs.
    pub fn uncoupled(agents: usize, order: usize) -> Self {
        ControllerSpec {
            kind: ControllerKind::Pd,
            order,
            integral_degree: 0,
            l_pd: vec![SymMatrix::zeros(agents); order],
            l_i: Vec::new(),
            l: 1.0,
            transform: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 || self.l_pd.len() != self.order {
            return Err(ControlError::InvalidDimensions(format!(
                "expected {} coupling matrices, got {}",
                self.order,
                self.l_pd.len()
            )));
        }
        if self.l_i.len() != self.integral_degree {
            return Err(ControlError::InvalidDimensions(format!(
                "expected {} integral coupling matrices, got {}",
                self.integral_degree,
                self.l_i.len()
            )));
        }
        let agents = self.agents();
        if agents == 0 {
            return Err(ControlError::InvalidDimensions(
                "coupling matrices are empty".into(),
            ));
        }
        for m in self.l_pd.iter().chain(self.l_i.iter()) {
            if m.dim() != agents {
                return Err(ControlError::InvalidDimensions(format!(
                    "coupling matrices disagree on agent count ({} vs {agents})",
                    m.dim()
                )));
            }
        }
        if !(self.l > 0.0) || !self.l.is_finite() {
            return Err(ControlError::InvalidDimensions(format!(
                "scalar gain must be positive and finite, got {}",
                self.l
            )));
        }
        Ok(())
    }
}

/// Proportional-derivative controller straight from a collection: one
/// coupling matrix per companion coordinate, scalar gain from the energy
/// bound for weak-Lipschitz constant `w`.
pub fn assemble_pd(c: &SpectralCollection, w: f64) -> Result<ControllerSpec> {
    let l = gain_lower_bound(c, w)?;
    Ok(ControllerSpec {
        kind: ControllerKind::Pd,
        order: c.order(),
        integral_degree: 0,
        l_pd: c.matrices().to_vec(),
        l_i: Vec::new(),
        l,
        transform: None,
    })
}

/// Controller with iterated-integral action of degree `h` on the first
/// companion coordinate, assembled from a collection of order n + h. The
/// lowest-index matrices couple the deepest integrals: L_I,m = L_{h−m+1}
/// and L_PD,k = L_{k+h}. With h = 0 this is exactly [`assemble_pd`].
pub fn assemble_pid(
    c: &SpectralCollection,
    order: usize,
    h: usize,
    w: f64,
) -> Result<ControllerSpec> {
    if c.order() != order + h {
        return Err(ControlError::InvalidAugmentation(format!(
            "collection order {} cannot split into plant order {order} plus integral degree {h}",
            c.order()
        )));
    }
    if h == 0 {
        return assemble_pd(c, w);
    }
    let l = gain_lower_bound(c, w)?;
    let l_i: Vec<SymMatrix> = (1..=h).map(|m| c.matrix(h - m + 1).clone()).collect();
    let l_pd: Vec<SymMatrix> = (1..=order).map(|k| c.matrix(k + h).clone()).collect();
    Ok(ControllerSpec {
        kind: ControllerKind::Pid,
        order,
        integral_degree: h,
        l_pd,
        l_i,
        l,
        transform: None,
    })
}

fn frobenius(m: &DenseMatrix) -> f64 {
    let mut s = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            s += m.get(i, j) * m.get(i, j);
        }
    }
    s.sqrt()
}

/// Closed-form transform to companion coordinates for a controllable linear
/// pair (A, b): the last row of T is e_nᵀC⁻¹ with C the controllability
/// matrix, and the remaining rows are its images under A. The transformed
/// drift is the companion last row aᵀz, so the weak-Lipschitz constant is
/// ‖a‖.
pub fn linear_canonical_transform(a: &DenseMatrix, b: &[f64]) -> Result<StateTransform> {
    let n = a.rows();
    if n == 0 || a.cols() != n || b.len() != n {
        return Err(ControlError::InvalidDimensions(format!(
            "need square A and matching b, got {}x{} and length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let mut ctrb = DenseMatrix::zeros(n, n);
    let mut col = b.to_vec();
    ctrb.set_column(0, &col);
    for j in 1..n {
        col = a.matvec(&col);
        ctrb.set_column(j, &col);
    }
    let cinv = ctrb
        .inverse()
        .map_err(|_| ControlError::NotControllable {
            condition: f64::INFINITY,
        })?;
    let condition = frobenius(&ctrb) * frobenius(&cinv);
    if !condition.is_finite() || condition > CONTROLLABILITY_COND_LIMIT {
        return Err(ControlError::NotControllable { condition });
    }

    let mut t = DenseMatrix::zeros(n, n);
    let mut row: Vec<f64> = (0..n).map(|j| cinv.get(n - 1, j)).collect();
    for r in 0..n {
        for (j, &v) in row.iter().enumerate() {
            t.set(r, j, v);
        }
        if r + 1 < n {
            // next row is row·A
            let mut next = vec![0.0; n];
            for (j, slot) in next.iter_mut().enumerate() {
                *slot = (0..n).map(|i| row[i] * a.get(i, j)).sum();
            }
            row = next;
        }
    }

    let tinv = t.inverse().map_err(|_| ControlError::NotControllable { condition })?;
    let companion = t.mul(a).mul(&tinv);
    let w = (0..n)
        .map(|j| companion.get(n - 1, j).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(StateTransform::from_matrix(t, w))
}

/// The companion-coordinates control for one agent: gain times the sum of
/// neighbor differences, per coordinate and per integral depth. Neighbor
/// weights are read off the coupling matrices' off-diagonals, so only rows
/// with nonzero entries in the agent's row contribute. When a transform is
/// present the differences are taken in transformed coordinates and the
/// input-scale singularity guard fires on the agent's native state.
pub fn evaluate_control(
    spec: &ControllerSpec,
    states: &[Vec<f64>],
    integral_states: &[Vec<f64>],
    agent: usize,
) -> Result<f64> {
    let agents = spec.agents();
    if states.len() != agents {
        return Err(ControlError::InvalidDimensions(format!(
            "expected {agents} state rows, got {}",
            states.len()
        )));
    }
    if agent >= agents {
        return Err(ControlError::InvalidAgent { agent, agents });
    }
    let h = spec.integral_degree;
    if h > 0 && integral_states.len() != agents {
        return Err(ControlError::InvalidDimensions(format!(
            "expected {agents} integral-state rows, got {}",
            integral_states.len()
        )));
    }
    for row in states {
        if row.len() != spec.order {
            return Err(ControlError::InvalidDimensions(format!(
                "state rows must have length {}, got {}",
                spec.order,
                row.len()
            )));
        }
    }
    if h > 0 {
        for row in integral_states {
            if row.len() != h {
                return Err(ControlError::InvalidDimensions(format!(
                    "integral-state rows must have length {h}, got {}",
                    row.len()
                )));
            }
        }
    }

    let transformed: Vec<Vec<f64>>;
    let z: &[Vec<f64>] = match &spec.transform {
        Some(tr) => {
            transformed = states.iter().map(|x| (tr.forward)(x)).collect();
            for row in &transformed {
                if row.len() != spec.order {
                    return Err(ControlError::InvalidDimensions(format!(
                        "transform produced length {}, expected {}",
                        row.len(),
                        spec.order
                    )));
                }
            }
            &transformed
        }
        None => states,
    };

    let mut total = 0.0;
    for (k, lk) in spec.l_pd.iter().enumerate() {
        for j in 0..agents {
            if j == agent {
                continue;
            }
            let weight = -lk.get(agent, j);
            if weight != 0.0 {
                total += weight * (z[j][k] - z[agent][k]);
            }
        }
    }
    for (m, lm) in spec.l_i.iter().enumerate() {
        for j in 0..agents {
            if j == agent {
                continue;
            }
            let weight = -lm.get(agent, j);
            if weight != 0.0 {
                total += weight * (integral_states[j][m] - integral_states[agent][m]);
            }
        }
    }
    let u = spec.l * total;

    if let Some(tr) = &spec.transform {
        let scale = (tr.input_scale)(&states[agent]);
        if !(scale.abs() > DECOUPLING_TOL) {
            return Err(ControlError::SingularDecoupling {
                state: states[agent].clone(),
                value: scale,
            });
        }
    }
    Ok(u)
}

/// Sampled LOWER bound on the weak-Lipschitz constant of a drift over a box:
/// the max over random state pairs of (x_n−y_n)(f(x)−f(y))/‖x−y‖². The true
/// constant is at least this large; it is never a certified upper bound, so
/// callers add their own headroom.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub lower_bound: f64,
    pub pairs: usize,
}

pub fn estimate_weak_lipschitz(
    drift: &dyn Fn(f64, &[f64]) -> f64,
    order: usize,
    lo: &[f64],
    hi: &[f64],
    pairs: usize,
    seed: u64,
) -> LipschitzEstimate {
    assert_eq!(lo.len(), order, "box bounds must match the order");
    assert_eq!(hi.len(), order, "box bounds must match the order");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..order)
            .map(|k| {
                if hi[k] > lo[k] {
                    rng.random_range(lo[k]..hi[k])
                } else {
                    lo[k]
                }
            })
            .collect()
    };
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let x = sample(&mut rng);
        let y = sample(&mut rng);
        let dist2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 < 1e-20 {
            continue;
        }
        let ratio = (x[order - 1] - y[order - 1]) * (drift(0.0, &x) - drift(0.0, &y)) / dist2;
        best = best.max(ratio);
    }
    LipschitzEstimate {
        lower_bound: best,
        pairs,
    }
}
