//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! The LPs solved here are tiny (a few dozen rows), so a full tableau is
//! kept. Variables may carry any combination of finite lower/upper bounds;
//! they are mapped to nonnegative columns by shifting, mirroring or
//! splitting before the tableau is built.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::dot;

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const OPTIMALITY_TOL: f64 = 1e-9;
/// Tolerance on the returned point's constraint residuals (scaled by the
/// row magnitude when that exceeds one).
pub const POINT_TOL: f64 = 1e-8;
const PIVOT_TOL: f64 = 1e-9;
const NOISE_TOL: f64 = 1e-12;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl Relation {
    /// Signed violation of `lhs rel rhs`; positive means violated.
    pub fn violation(self, lhs: f64, rhs: f64) -> f64 {
        match self {
            Relation::Le => lhs - rhs,
            Relation::Ge => rhs - lhs,
            Relation::Eq => (lhs - rhs).abs(),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VarBounds {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl VarBounds {
    pub const FREE: VarBounds = VarBounds { lower: None, upper: None };
    pub const NONNEGATIVE: VarBounds = VarBounds { lower: Some(0.0), upper: None };

    pub fn between(lower: f64, upper: f64) -> Self {
        Self { lower: Some(lower), upper: Some(upper) }
    }

    fn finite_lower(&self) -> Option<f64> {
        self.lower.filter(|v| v.is_finite())
    }

    fn finite_upper(&self) -> Option<f64> {
        self.upper.filter(|v| v.is_finite())
    }
}

/// `max objective . x` subject to the constraints and per-variable bounds.
/// Variables are free unless bounded explicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub bounds: Vec<VarBounds>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            bounds: vec![VarBounds::FREE; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn maximize(mut self, objective: Vec<f64>) -> Self {
        self.objective = objective;
        self
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    pub fn bound(&mut self, var: usize, bounds: VarBounds) {
        self.bounds[var] = bounds;
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(LpError::Malformed(format!(
                "{} bounds for {n} variables",
                self.bounds.len()
            )));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(LpError::Malformed(format!(
                    "constraint {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if c.coeffs.iter().any(|v| !v.is_finite()) || !c.rhs.is_finite() {
                return Err(LpError::Malformed(format!("constraint {i} has a non-finite entry")));
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::Malformed("objective has a non-finite entry".into()));
        }
        for (j, b) in self.bounds.iter().enumerate() {
            if b.lower.is_some_and(f64::is_nan) || b.upper.is_some_and(f64::is_nan) {
                return Err(LpError::Malformed(format!("variable {j} has a NaN bound")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: f64, point: Vec<f64> },
    /// The objective grows without bound along `ray` (in original variables).
    Unbounded { ray: Vec<f64> },
    Infeasible,
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("pivot limit of {0} reached")]
    PivotLimit(usize),
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = lower + z`
    Shift { col: usize, lower: f64 },
    /// `x = upper - z`
    Mirror { col: usize, upper: f64 },
    /// `x = z_pos - z_neg`
    Split { pos: usize, neg: usize },
}

struct Tableau {
    width: usize,
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    /// Reduced costs followed by the negated objective value.
    obj: Vec<f64>,
    first_artificial: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) -> Result<(), LpError> {
        self.pivots += 1;
        if self.pivots > MAX_PIVOTS {
            return Err(LpError::PivotLimit(MAX_PIVOTS));
        }
        let piv = self.rows[r][c];
        for v in &mut self.rows[r] {
            *v /= piv;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[c] = 0.0;
                let rhs = &mut row[self.width];
                if *rhs < 0.0 && *rhs > -NOISE_TOL {
                    *rhs = 0.0;
                }
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
        Ok(())
    }

    /// Runs Bland-rule iterations on the current objective row. Returns the
    /// entering column when the problem is unbounded along it.
    fn iterate(&mut self, allow: usize) -> Result<Option<usize>, LpError> {
        loop {
            let Some(c) = (0..allow).find(|&j| self.obj[j] > OPTIMALITY_TOL) else {
                return Ok(None);
            };
            let mut leave: Option<(usize, f64)> = None;
            let mut max_entry = 0.0f64;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                max_entry = max_entry.max(a);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if (ratio < br && !tie) || (tie && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match leave {
                Some((r, _)) => self.pivot(r, c)?,
                None if max_entry > NOISE_TOL => {
                    return Err(LpError::NumericalBreakdown(format!(
                        "column {c} has only tiny positive entries (max {max_entry:e})"
                    )))
                }
                None => return Ok(Some(c)),
            }
        }
    }
}

/// Solves `lp` with the two-phase method.
pub fn lp_solve(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    lp.validate()?;
    let n = lp.num_vars();

    // Map original variables onto nonnegative columns.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut box_rows: Vec<(usize, f64)> = Vec::new();
    for b in &lp.bounds {
        match (b.finite_lower(), b.finite_upper()) {
            (Some(l), up) => {
                maps.push(VarMap::Shift { col: ncols, lower: l });
                if let Some(u) = up {
                    box_rows.push((ncols, u - l));
                }
                ncols += 1;
            }
            (None, Some(u)) => {
                maps.push(VarMap::Mirror { col: ncols, upper: u });
                ncols += 1;
            }
            (None, None) => {
                maps.push(VarMap::Split { pos: ncols, neg: ncols + 1 });
                ncols += 2;
            }
        }
    }
    let nstruct = ncols;

    // Rows over structural columns, rhs made nonnegative.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for c in &lp.constraints {
        let mut coeffs = vec![0.0; nstruct];
        let mut rhs = c.rhs;
        for (j, &a) in c.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, lower } => {
                    coeffs[col] += a;
                    rhs -= a * lower;
                }
                VarMap::Mirror { col, upper } => {
                    coeffs[col] -= a;
                    rhs -= a * upper;
                }
                VarMap::Split { pos, neg } => {
                    coeffs[pos] += a;
                    coeffs[neg] -= a;
                }
            }
        }
        rows.push((coeffs, c.relation, rhs));
    }
    for &(col, width) in &box_rows {
        let mut coeffs = vec![0.0; nstruct];
        coeffs[col] = 1.0;
        rows.push((coeffs, Relation::Le, width));
    }
    for row in &mut rows {
        if row.2 < 0.0 {
            row.0.iter_mut().for_each(|v| *v = -*v);
            row.2 = -row.2;
            row.1 = match row.1 {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let nslack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let nart = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let first_artificial = nstruct + nslack;
    let width = first_artificial + nart;

    let mut tableau = Tableau {
        width,
        rows: Vec::with_capacity(rows.len()),
        basis: Vec::with_capacity(rows.len()),
        obj: vec![0.0; width + 1],
        first_artificial,
        pivots: 0,
    };
    let (mut next_slack, mut next_art) = (nstruct, first_artificial);
    for (coeffs, rel, rhs) in &rows {
        let mut row = vec![0.0; width + 1];
        row[..nstruct].copy_from_slice(coeffs);
        row[width] = *rhs;
        match rel {
            Relation::Le => {
                row[next_slack] = 1.0;
                tableau.basis.push(next_slack);
                next_slack += 1;
            }
            Relation::Ge => {
                row[next_slack] = -1.0;
                next_slack += 1;
                row[next_art] = 1.0;
                tableau.basis.push(next_art);
                next_art += 1;
            }
            Relation::Eq => {
                row[next_art] = 1.0;
                tableau.basis.push(next_art);
                next_art += 1;
            }
        }
        tableau.rows.push(row);
    }

    // Phase 1: maximize -(sum of artificials).
    if nart > 0 {
        for i in 0..tableau.rows.len() {
            if tableau.basis[i] >= first_artificial {
                for j in 0..=width {
                    if j < first_artificial || j == width {
                        tableau.obj[j] += tableau.rows[i][j];
                    }
                }
            }
        }
        tableau.iterate(first_artificial)?;
        let infeasibility = tableau.obj[width];
        let scale = 1.0 + rows.iter().fold(0.0f64, |m, r| m.max(r.2.abs()));
        if infeasibility > FEASIBILITY_TOL * scale {
            return Ok(LpOutcome::Infeasible);
        }
        drive_out_artificials(&mut tableau)?;
    }

    // Phase 2 objective over structural columns.
    let mut cost = vec![0.0; width];
    let mut constant = 0.0;
    for (j, &c) in lp.objective.iter().enumerate() {
        match maps[j] {
            VarMap::Shift { col, lower } => {
                cost[col] += c;
                constant += c * lower;
            }
            VarMap::Mirror { col, upper } => {
                cost[col] -= c;
                constant += c * upper;
            }
            VarMap::Split { pos, neg } => {
                cost[pos] += c;
                cost[neg] -= c;
            }
        }
    }
    tableau.obj = vec![0.0; width + 1];
    tableau.obj[..first_artificial].copy_from_slice(&cost[..first_artificial]);
    for i in 0..tableau.rows.len() {
        let cb = cost[tableau.basis[i]];
        if cb != 0.0 {
            for j in 0..first_artificial {
                tableau.obj[j] -= cb * tableau.rows[i][j];
            }
            tableau.obj[width] -= cb * tableau.rows[i][width];
        }
    }
    for &b in &tableau.basis {
        tableau.obj[b] = 0.0;
    }

    if let Some(c) = tableau.iterate(first_artificial)? {
        let mut dz = vec![0.0; width];
        dz[c] = 1.0;
        for (i, &b) in tableau.basis.iter().enumerate() {
            dz[b] = -tableau.rows[i][c];
        }
        let ray = maps
            .iter()
            .map(|m| match *m {
                VarMap::Shift { col, .. } => dz[col],
                VarMap::Mirror { col, .. } => -dz[col],
                VarMap::Split { pos, neg } => dz[pos] - dz[neg],
            })
            .collect();
        return Ok(LpOutcome::Unbounded { ray });
    }

    let mut z = vec![0.0; width];
    for (i, &b) in tableau.basis.iter().enumerate() {
        z[b] = tableau.rhs(i).max(0.0);
    }
    let point: Vec<f64> = maps
        .iter()
        .map(|m| match *m {
            VarMap::Shift { col, lower } => lower + z[col],
            VarMap::Mirror { col, upper } => upper - z[col],
            VarMap::Split { pos, neg } => z[pos] - z[neg],
        })
        .collect();
    verify_point(lp, &point)?;
    let value = dot(&lp.objective, &point);
    debug_assert!((value - (-tableau.obj[width] + constant)).abs() <= 1e-6 * (1.0 + value.abs()));
    Ok(LpOutcome::Optimal { value, point })
}

/// Pivots basic artificials (all at zero after phase 1) out of the basis;
/// rows where that is impossible are redundant and dropped.
fn drive_out_artificials(t: &mut Tableau) -> Result<(), LpError> {
    let mut i = 0;
    while i < t.rows.len() {
        if t.basis[i] < t.first_artificial {
            i += 1;
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..t.first_artificial {
            let a = t.rows[i][j].abs();
            if a > PIVOT_TOL && best.is_none_or(|(_, b)| a > b) {
                best = Some((j, a));
            }
        }
        match best {
            Some((j, _)) => {
                t.pivot(i, j)?;
                i += 1;
            }
            None => {
                t.rows.remove(i);
                t.basis.remove(i);
            }
        }
    }
    Ok(())
}

fn verify_point(lp: &LinearProgram, x: &[f64]) -> Result<(), LpError> {
    for (i, c) in lp.constraints.iter().enumerate() {
        let lhs = dot(&c.coeffs, x);
        let scale = c.coeffs.iter().zip(x).fold(c.rhs.abs(), |s, (a, v)| s + (a * v).abs());
        let tol = POINT_TOL * scale.max(1.0);
        let viol = c.relation.violation(lhs, c.rhs);
        if viol > tol {
            return Err(LpError::NumericalBreakdown(format!(
                "returned point violates constraint {i} by {viol:e}"
            )));
        }
    }
    for (j, b) in lp.bounds.iter().enumerate() {
        let tol = POINT_TOL * x[j].abs().max(1.0);
        if b.lower.is_some_and(|l| x[j] < l - tol) || b.upper.is_some_and(|u| x[j] > u + tol) {
            return Err(LpError::NumericalBreakdown(format!(
                "returned point violates the bounds of variable {j}"
            )));
        }
    }
    Ok(())
}
