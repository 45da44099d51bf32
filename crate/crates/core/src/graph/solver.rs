//! Levenberg–Marquardt over the factor graph.
//!
//! Normal equations are assembled block-wise and factored with a sparse
//! Cholesky, either over the full system with a fill-reducing ordering or
//! after eliminating landmarks by Schur complement. A dense solver over the
//! full system is kept as a reference.

use std::collections::{BTreeMap, HashMap};

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SMatrix, Vector3};
use serde::Serialize;

use super::factors::linearize;
use super::{FactorGraph, FactorKind, GraphError, Values, VariableKey};

/// Lower bound on the diagonal used for damping, so that directions with no
/// information still receive some.
const MIN_DIAGONAL: f64 = 1e-6;
/// Rows of a navigation state or extrinsic that a landmark can couple to.
const POSE_ROWS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolver {
    /// Full system; the ordering is left to the factorization. Best when
    /// landmarks are seen from many states.
    Sparse,
    SparseSchur,
    DenseReference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_lambda: f64,
    pub relative_cost_tolerance: f64,
    pub step_tolerance: f64,
    pub linear_solver: LinearSolver,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 3.0,
            max_lambda: 1e16,
            relative_cost_tolerance: 1e-8,
            step_tolerance: 1e-10,
            linear_solver: LinearSolver::Sparse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TerminationReason {
    RelativeCostChange,
    StepNorm,
    MaxIterations,
    LambdaLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    /// Cost after this iteration (unchanged when the step was rejected).
    pub cost: f64,
    /// Damping used for this iteration's step.
    pub lambda: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub termination: TerminationReason,
    /// Factors skipped at the final estimate because their residual could
    /// not be evaluated.
    pub invalid_factors: usize,
    pub values: Values,
}

/// Layout of the optimized variables.
struct Ordering {
    /// Non-frozen navigation states and extrinsics.
    reduced: Vec<VariableKey>,
    offsets: Vec<usize>,
    reduced_dim: usize,
    landmarks: Vec<VariableKey>,
    reduced_index: HashMap<VariableKey, usize>,
    landmark_index: HashMap<VariableKey, usize>,
}

impl Ordering {
    fn new(graph: &FactorGraph) -> Self {
        let mut reduced = Vec::new();
        let mut landmarks = Vec::new();
        let v = &graph.values;
        let keys = v
            .navs
            .keys()
            .map(|i| VariableKey::Nav(*i))
            .chain(v.extrinsics.keys().map(|c| VariableKey::Extrinsic(*c)))
            .chain(v.landmarks.keys().map(|i| VariableKey::Landmark(*i)));
        for key in keys.filter(|k| !graph.is_frozen(k)) {
            match key {
                VariableKey::Landmark(_) => landmarks.push(key),
                _ => reduced.push(key),
            }
        }
        let mut offsets = Vec::with_capacity(reduced.len());
        let mut dim = 0;
        for k in &reduced {
            offsets.push(dim);
            dim += k.dim();
        }
        Self {
            reduced_index: reduced.iter().enumerate().map(|(i, k)| (*k, i)).collect(),
            landmark_index: landmarks.iter().enumerate().map(|(i, k)| (*k, i)).collect(),
            reduced,
            offsets,
            reduced_dim: dim,
            landmarks,
        }
    }

    fn total_dim(&self) -> usize {
        self.reduced_dim + 3 * self.landmarks.len()
    }
}

enum Slot {
    Reduced(usize),
    Landmark(usize),
}

/// Undamped normal equations `H δ = b` with `b = −Jᵀr`, stored by block.
struct NormalEquations {
    diag: Vec<DMatrix<f64>>,
    /// Reduced-reduced blocks `H[a, b]` with `a < b`.
    off: BTreeMap<(usize, usize), DMatrix<f64>>,
    b_r: DVector<f64>,
    h_ll: Vec<Matrix3<f64>>,
    b_l: Vec<Vector3<f64>>,
    /// Per landmark: reduced variable → pose rows of `H[a, l]`.
    h_rl: Vec<BTreeMap<usize, SMatrix<f64, POSE_ROWS, 3>>>,
}

impl NormalEquations {
    fn assemble(ord: &Ordering, graph: &FactorGraph, values: &Values) -> (Self, usize) {
        let mut ne = Self {
            diag: ord.reduced.iter().map(|k| DMatrix::zeros(k.dim(), k.dim())).collect(),
            off: BTreeMap::new(),
            b_r: DVector::zeros(ord.reduced_dim),
            h_ll: vec![Matrix3::zeros(); ord.landmarks.len()],
            b_l: vec![Vector3::zeros(); ord.landmarks.len()],
            h_rl: vec![BTreeMap::new(); ord.landmarks.len()],
        };
        let mut invalid = 0;
        for f in &graph.factors {
            let lin = match linearize(f, values) {
                Ok(l) => l,
                Err(e) => {
                    invalid += 1;
                    debug!("skipping {} factor: {e}", f.kind.name());
                    continue;
                }
            };
            let active: Vec<(Slot, &DMatrix<f64>)> = f
                .keys
                .iter()
                .zip(&lin.jacobians)
                .filter_map(|(k, j)| {
                    if let Some(i) = ord.reduced_index.get(k) {
                        Some((Slot::Reduced(*i), j))
                    } else {
                        ord.landmark_index.get(k).map(|i| (Slot::Landmark(*i), j))
                    }
                })
                .collect();
            for (x, (sx, jx)) in active.iter().enumerate() {
                let g = -(jx.transpose() * &lin.residual);
                match sx {
                    Slot::Reduced(a) => {
                        let off = ord.offsets[*a];
                        let mut seg = ne.b_r.rows_mut(off, g.len());
                        seg += &g;
                    }
                    Slot::Landmark(l) => ne.b_l[*l] += Vector3::from_column_slice(g.as_slice()),
                }
                for (sy, jy) in &active[x..] {
                    let h = jx.transpose() * *jy;
                    match (sx, sy) {
                        (Slot::Reduced(a), Slot::Reduced(b)) if a == b => ne.diag[*a] += &h,
                        (Slot::Reduced(a), Slot::Reduced(b)) => {
                            let (lo, hi, blk) = if a < b { (*a, *b, h) } else { (*b, *a, h.transpose()) };
                            ne.off
                                .entry((lo, hi))
                                .and_modify(|m| *m += &blk)
                                .or_insert(blk);
                        }
                        (Slot::Landmark(l), Slot::Landmark(m)) => {
                            debug_assert_eq!(l, m);
                            ne.h_ll[*l] += Matrix3::from_column_slice(h.as_slice());
                        }
                        (Slot::Reduced(a), Slot::Landmark(l)) => ne.add_rl(*a, *l, &h),
                        (Slot::Landmark(l), Slot::Reduced(a)) => ne.add_rl(*a, *l, &h.transpose()),
                    }
                }
            }
        }
        (ne, invalid)
    }

    fn add_rl(&mut self, a: usize, l: usize, h: &DMatrix<f64>) {
        debug_assert!(h.rows(POSE_ROWS, h.nrows() - POSE_ROWS).iter().all(|x| *x == 0.0));
        let blk = SMatrix::<f64, POSE_ROWS, 3>::from_fn(|i, j| h[(i, j)]);
        *self.h_rl[l].entry(a).or_insert_with(SMatrix::zeros) += blk;
    }

    fn damped_diag(&self, a: usize, lambda: f64) -> DMatrix<f64> {
        let mut d = self.diag[a].clone();
        for i in 0..d.nrows() {
            d[(i, i)] += lambda * d[(i, i)].max(MIN_DIAGONAL);
        }
        d
    }

    fn damped_landmark(&self, l: usize, lambda: f64) -> Matrix3<f64> {
        let mut d = self.h_ll[l];
        for i in 0..3 {
            d[(i, i)] += lambda * d[(i, i)].max(MIN_DIAGONAL);
        }
        d
    }

    /// Landmark updates from the reduced step.
    fn back_substitute(&self, ord: &Ordering, inv: &[Matrix3<f64>], dr: &DVector<f64>) -> DVector<f64> {
        let mut dl = DVector::zeros(3 * ord.landmarks.len());
        for (l, coupling) in self.h_rl.iter().enumerate() {
            let mut rhs = self.b_l[l];
            for (a, h) in coupling {
                let seg = dr.rows(ord.offsets[*a], POSE_ROWS);
                rhs -= h.transpose() * seg;
            }
            dl.fixed_rows_mut::<3>(3 * l).copy_from(&(inv[l] * rhs));
        }
        dl
    }


    /// Lower-triangle triplets of the reduced-reduced blocks.
    fn reduced_triplets(&self, ord: &Ordering, lambda: f64) -> Vec<Triplet<usize, usize, f64>> {
        let mut triplets = Vec::new();
        for a in 0..ord.reduced.len() {
            let d = self.damped_diag(a, lambda);
            let o = ord.offsets[a];
            for c in 0..d.ncols() {
                for r in c..d.nrows() {
                    if d[(r, c)] != 0.0 {
                        triplets.push(Triplet::new(o + r, o + c, d[(r, c)]));
                    }
                }
            }
        }
        for ((a, b), m) in &self.off {
            let (oa, ob) = (ord.offsets[*a], ord.offsets[*b]);
            // lower triangle: rows of b, columns of a
            for r in 0..m.ncols() {
                for c in 0..m.nrows() {
                    if m[(c, r)] != 0.0 {
                        triplets.push(Triplet::new(ob + r, oa + c, m[(c, r)]));
                    }
                }
            }
        }
        triplets
    }

    fn solve_sparse(&self, ord: &Ordering, lambda: f64) -> Result<DVector<f64>, String> {
        let nr = ord.reduced_dim;
        let n = ord.total_dim();
        let mut triplets = self.reduced_triplets(ord, lambda);
        let mut b = DVector::<f64>::zeros(n);
        b.rows_mut(0, nr).copy_from(&self.b_r);
        for l in 0..ord.landmarks.len() {
            let o = nr + 3 * l;
            let d = self.damped_landmark(l, lambda);
            for c in 0..3 {
                for r in c..3 {
                    triplets.push(Triplet::new(o + r, o + c, d[(r, c)]));
                }
            }
            b.rows_mut(o, 3).copy_from(&self.b_l[l]);
            for (a, m) in &self.h_rl[l] {
                let oa = ord.offsets[*a];
                for r in 0..3 {
                    for c in 0..POSE_ROWS {
                        if m[(c, r)] != 0.0 {
                            triplets.push(Triplet::new(o + r, oa + c, m[(c, r)]));
                        }
                    }
                }
            }
        }
        if n == 0 {
            return Ok(b);
        }
        factor_and_solve(n, &triplets, &b)
    }

    fn solve_schur(&self, ord: &Ordering, lambda: f64) -> Result<DVector<f64>, String> {
        let mut inv = Vec::with_capacity(ord.landmarks.len());
        for l in 0..ord.landmarks.len() {
            let chol = self
                .damped_landmark(l, lambda)
                .cholesky()
                .ok_or_else(|| format!("landmark block {:?} not positive definite", ord.landmarks[l]))?;
            inv.push(chol.inverse());
        }

        let mut g = self.b_r.clone();
        let mut fill: HashMap<(usize, usize), Matrix6<f64>> = HashMap::new();
        for (l, coupling) in self.h_rl.iter().enumerate() {
            let entries: Vec<(usize, SMatrix<f64, POSE_ROWS, 3>)> = coupling
                .iter()
                .map(|(a, h)| (*a, h * inv[l]))
                .collect();
            for (x, (a, ta)) in entries.iter().enumerate() {
                let mut seg = g.rows_mut(ord.offsets[*a], POSE_ROWS);
                seg -= ta * self.b_l[l];
                for (b, _) in &entries[x..] {
                    let hb = &coupling[b];
                    let blk = ta * hb.transpose();
                    *fill.entry((*a, *b)).or_insert_with(Matrix6::zeros) += blk;
                }
            }
        }

        let mut triplets = self.reduced_triplets(ord, lambda);
        let mut fill_keys: Vec<&(usize, usize)> = fill.keys().collect();
        fill_keys.sort_unstable();
        for key in fill_keys {
            let (a, b) = *key;
            let m = &fill[key];
            let (oa, ob) = (ord.offsets[a], ord.offsets[b]);
            for r in 0..POSE_ROWS {
                let c_end = if a == b { r + 1 } else { POSE_ROWS };
                for c in 0..c_end {
                    if m[(c, r)] != 0.0 {
                        triplets.push(Triplet::new(ob + r, oa + c, -m[(c, r)]));
                    }
                }
            }
        }

        let n = ord.reduced_dim;
        let dr = if n == 0 {
            DVector::zeros(0)
        } else {
            factor_and_solve(n, &triplets, &g)?
        };
        let dl = self.back_substitute(ord, &inv, &dr);
        Ok(concat(&dr, &dl))
    }

    fn solve_dense(&self, ord: &Ordering, lambda: f64) -> Result<DVector<f64>, String> {
        let nr = ord.reduced_dim;
        let n = ord.total_dim();
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for a in 0..ord.reduced.len() {
            let d = self.damped_diag(a, lambda);
            let o = ord.offsets[a];
            h.view_mut((o, o), d.shape()).copy_from(&d);
        }
        for ((a, bb), m) in &self.off {
            let (oa, ob) = (ord.offsets[*a], ord.offsets[*bb]);
            h.view_mut((oa, ob), m.shape()).copy_from(m);
            h.view_mut((ob, oa), (m.ncols(), m.nrows())).copy_from(&m.transpose());
        }
        b.rows_mut(0, nr).copy_from(&self.b_r);
        for l in 0..ord.landmarks.len() {
            let o = nr + 3 * l;
            h.view_mut((o, o), (3, 3)).copy_from(&self.damped_landmark(l, lambda));
            b.rows_mut(o, 3).copy_from(&self.b_l[l]);
            for (a, m) in &self.h_rl[l] {
                let oa = ord.offsets[*a];
                h.view_mut((oa, o), (POSE_ROWS, 3)).copy_from(m);
                h.view_mut((o, oa), (3, POSE_ROWS)).copy_from(&m.transpose());
            }
        }
        let chol = h
            .cholesky()
            .ok_or_else(|| "full system not positive definite".to_string())?;
        Ok(chol.solve(&b))
    }
}

fn factor_and_solve(
    n: usize,
    lower: &[Triplet<usize, usize, f64>],
    b: &DVector<f64>,
) -> Result<DVector<f64>, String> {
    let s = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, lower)
        .map_err(|e| format!("sparse assembly failed: {e:?}"))?;
    let llt = s
        .sp_cholesky(Side::Lower)
        .map_err(|e| format!("system not positive definite: {e:?}"))?;
    let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    llt.solve_in_place(rhs.as_mut());
    Ok(DVector::from_fn(n, |i, _| rhs[(i, 0)]))
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn apply_step(ord: &Ordering, values: &Values, delta: &DVector<f64>) -> Values {
    let mut out = values.clone();
    for (i, k) in ord.reduced.iter().enumerate() {
        let o = ord.offsets[i];
        out.retract(k, &delta.as_slice()[o..o + k.dim()]);
    }
    for (l, k) in ord.landmarks.iter().enumerate() {
        let o = ord.reduced_dim + 3 * l;
        out.retract(k, &delta.as_slice()[o..o + 3]);
    }
    out
}

fn check_preconditions(graph: &FactorGraph) -> Result<(), GraphError> {
    let anchored = graph
        .frozen
        .iter()
        .any(|k| matches!(k, VariableKey::Nav(_)))
        || graph.factors.iter().any(|f| {
            matches!(f.kind, FactorKind::PriorPose(_) | FactorKind::PriorNavState(_))
                && matches!(f.keys[0], VariableKey::Nav(_))
        });
    if !anchored {
        return Err(GraphError::GaugeUnfixed);
    }
    let mut observations: BTreeMap<usize, usize> = BTreeMap::new();
    for f in &graph.factors {
        for k in &f.keys {
            if let VariableKey::Landmark(i) = k {
                *observations.entry(*i).or_insert(0) += 1;
            }
        }
    }
    for i in graph.values.landmarks.keys() {
        let key = VariableKey::Landmark(*i);
        let n = observations.get(i).copied().unwrap_or(0);
        if !graph.is_frozen(&key) && n < 2 {
            return Err(GraphError::RankDeficient(format!(
                "landmark {i} has {n} observation(s)"
            )));
        }
    }
    Ok(())
}

/// Runs Levenberg–Marquardt from the graph's current values. The graph is
/// left untouched; the refined estimates are returned in the report.
pub fn solve(graph: &FactorGraph, options: &SolveOptions) -> Result<SolveReport, GraphError> {
    check_preconditions(graph)?;
    faer::set_global_parallelism(faer::Par::Seq);
    let ord = Ordering::new(graph);
    let mut values = graph.values.clone();
    let (mut cost, mut invalid) = graph.cost_at(&values);
    if !cost.is_finite() {
        return Err(GraphError::DivergedNaN);
    }
    let initial_cost = cost;
    let mut lambda = options.initial_lambda;
    let mut history = Vec::new();
    let mut termination = TerminationReason::MaxIterations;
    let mut system: Option<NormalEquations> = None;

    for _ in 0..options.max_iterations {
        if system.is_none() {
            let (ne, skipped) = NormalEquations::assemble(&ord, graph, &values);
            if skipped > 0 {
                warn!("{skipped} factor(s) skipped this iteration (invalid residual)");
            }
            system = Some(ne);
        }
        let ne = system.as_ref().expect("assembled");
        let delta = loop {
            let attempt = match options.linear_solver {
                LinearSolver::Sparse => ne.solve_sparse(&ord, lambda),
                LinearSolver::SparseSchur => ne.solve_schur(&ord, lambda),
                LinearSolver::DenseReference => ne.solve_dense(&ord, lambda),
            };
            match attempt {
                Ok(d) => break d,
                Err(msg) => {
                    lambda *= options.lambda_up;
                    if lambda > options.max_lambda {
                        return Err(GraphError::RankDeficient(msg));
                    }
                    debug!("{msg}; raising lambda to {lambda:e}");
                }
            }
        };
        let step_norm = delta.norm();
        if !step_norm.is_finite() {
            return Err(GraphError::DivergedNaN);
        }
        if step_norm < options.step_tolerance {
            history.push(IterationRecord { cost, lambda, step_norm, accepted: false });
            termination = TerminationReason::StepNorm;
            break;
        }
        let candidate = apply_step(&ord, &values, &delta);
        let (new_cost, new_invalid) = graph.cost_at(&candidate);
        if new_cost.is_finite() && new_cost < cost && new_invalid <= invalid {
            let relative = (cost - new_cost) / cost;
            history.push(IterationRecord { cost: new_cost, lambda, step_norm, accepted: true });
            values = candidate;
            cost = new_cost;
            invalid = new_invalid;
            lambda /= options.lambda_down;
            system = None;
            if relative < options.relative_cost_tolerance {
                termination = TerminationReason::RelativeCostChange;
                break;
            }
        } else {
            history.push(IterationRecord { cost, lambda, step_norm, accepted: false });
            lambda *= options.lambda_up;
            if lambda > options.max_lambda {
                termination = TerminationReason::LambdaLimit;
                break;
            }
        }
    }
    if values.navs.values().any(|s| !s.is_finite()) {
        return Err(GraphError::DivergedNaN);
    }
    Ok(SolveReport {
        initial_cost,
        final_cost: cost,
        iterations: history.len(),
        history,
        termination,
        invalid_factors: invalid,
        values,
    })
}

/// One damped Gauss–Newton step at the graph's current values, for
/// comparing linear solvers. The step is laid out as the non-frozen
/// navigation states and extrinsics in key order, then the landmarks.
pub fn damped_step(
    graph: &FactorGraph,
    lambda: f64,
    linear_solver: LinearSolver,
) -> Result<DVector<f64>, GraphError> {
    let ord = Ordering::new(graph);
    let (ne, _) = NormalEquations::assemble(&ord, graph, &graph.values);
    match linear_solver {
        LinearSolver::Sparse => ne.solve_sparse(&ord, lambda),
        LinearSolver::SparseSchur => ne.solve_schur(&ord, lambda),
        LinearSolver::DenseReference => ne.solve_dense(&ord, lambda),
    }
    .map_err(GraphError::RankDeficient)
}
