//! Dense linear programming for the stage games: a self-contained
//! two-phase simplex with Bland's rule (deterministic, anti-cycling),
//! the stage-game primal/dual solves, and the exact terminal-stage
//! zero-sum game.
//!
//! Problems here are small (tens of rows and columns), so the kernel
//! favors exact bookkeeping over sparse cleverness.

use std::collections::BTreeMap;
use std::ops::Range;

use thiserror::Error;

use crate::model::{Player, PosgModel, PrivateHistory, PROB_EPS};
use crate::occupancy::{DecisionRule, OccupancyState};

const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    NonNegative,
    Free,
}

/// max c.x subject to row constraints; variables are non-negative or free.
#[derive(Clone, Debug, Default)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub kinds: Vec<VarKind>,
    pub rows: Vec<(Vec<f64>, Cmp, f64)>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, kind: VarKind, objective: f64) -> usize {
        self.objective.push(objective);
        self.kinds.push(kind);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, cmp: Cmp, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.objective.len());
        self.rows.push((coeffs, cmp, rhs));
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    /// One multiplier per constraint row, with the usual max-LP sign
    /// conventions (>= 0 for Le rows, <= 0 for Ge rows, free for Eq).
    pub dual: Vec<f64>,
}

/// Two-phase dense simplex with Bland's rule; lowest-index pivots make
/// the result deterministic for a fixed input.
pub fn lp_solve(p: &LpProblem) -> Result<LpSolution, LpError> {
    let n_struct_vars = p.objective.len();
    // expand free variables into positive/negative parts
    let mut col_of: Vec<(usize, Option<usize>)> = Vec::with_capacity(n_struct_vars);
    let mut cost: Vec<f64> = Vec::new();
    for (j, kind) in p.kinds.iter().enumerate() {
        match kind {
            VarKind::NonNegative => {
                col_of.push((cost.len(), None));
                cost.push(p.objective[j]);
            }
            VarKind::Free => {
                col_of.push((cost.len(), Some(cost.len() + 1)));
                cost.push(p.objective[j]);
                cost.push(-p.objective[j]);
            }
        }
    }
    let n_structural = cost.len();
    let m = p.rows.len();

    // expanded rows, normalized to rhs >= 0
    let mut rows: Vec<(Vec<f64>, Cmp, f64)> = Vec::with_capacity(m);
    let mut row_sign = vec![1.0; m];
    for (i, (coeffs, cmp, rhs)) in p.rows.iter().enumerate() {
        let mut expanded = vec![0.0; n_structural];
        for (j, &(pos, neg)) in col_of.iter().enumerate() {
            expanded[pos] += coeffs[j];
            if let Some(neg) = neg {
                expanded[neg] -= coeffs[j];
            }
        }
        let (mut expanded, mut cmp, mut rhs) = (expanded, *cmp, *rhs);
        if rhs < 0.0 {
            for v in &mut expanded {
                *v = -*v;
            }
            rhs = -rhs;
            cmp = match cmp {
                Cmp::Le => Cmp::Ge,
                Cmp::Ge => Cmp::Le,
                Cmp::Eq => Cmp::Eq,
            };
            row_sign[i] = -1.0;
        }
        rows.push((expanded, cmp, rhs));
    }

    // logical columns: slack / surplus, then artificials
    let mut n_total = n_structural;
    let mut slack_col: Vec<Option<usize>> = vec![None; m];
    for (i, (_, cmp, _)) in rows.iter().enumerate() {
        match cmp {
            Cmp::Le | Cmp::Ge => {
                slack_col[i] = Some(n_total);
                n_total += 1;
            }
            Cmp::Eq => {}
        }
    }
    let artificial_start = n_total;
    let mut artificial_col: Vec<Option<usize>> = vec![None; m];
    for (i, (_, cmp, _)) in rows.iter().enumerate() {
        if !matches!(cmp, Cmp::Le) {
            artificial_col[i] = Some(n_total);
            n_total += 1;
        }
    }

    let mut a = vec![0.0; m * n_total];
    let mut b = vec![0.0; m];
    let mut basis = vec![0usize; m];
    let mut identity_col = vec![0usize; m];
    for (i, (coeffs, cmp, rhs)) in rows.iter().enumerate() {
        a[i * n_total..i * n_total + n_structural].copy_from_slice(coeffs);
        b[i] = *rhs;
        if let Some(s) = slack_col[i] {
            a[i * n_total + s] = if matches!(cmp, Cmp::Le) { 1.0 } else { -1.0 };
        }
        match artificial_col[i] {
            Some(art) => {
                a[i * n_total + art] = 1.0;
                basis[i] = art;
                identity_col[i] = art;
            }
            None => {
                let s = slack_col[i].expect("Le row has a slack");
                basis[i] = s;
                identity_col[i] = s;
            }
        }
    }

    let mut tab = Tableau {
        m,
        n: n_total,
        a,
        b,
        basis,
        artificial_start,
    };

    if artificial_start < n_total {
        let mut phase1 = vec![0.0; n_total];
        for c in phase1.iter_mut().skip(artificial_start) {
            *c = -1.0;
        }
        tab.optimize(&phase1, false)?;
        let infeasibility: f64 = tab
            .basis
            .iter()
            .zip(tab.b.iter())
            .filter(|(&bv, _)| bv >= artificial_start)
            .map(|(_, &val)| val)
            .sum();
        if infeasibility > 1e-7 {
            return Err(LpError::Infeasible);
        }
        tab.drive_out_artificials();
    }

    let mut phase2 = vec![0.0; n_total];
    phase2[..n_structural].copy_from_slice(&cost);
    tab.optimize(&phase2, true)?;

    let mut x_expanded = vec![0.0; n_total];
    for (i, &bv) in tab.basis.iter().enumerate() {
        x_expanded[bv] = tab.b[i];
    }
    let x: Vec<f64> = col_of
        .iter()
        .map(|&(pos, neg)| x_expanded[pos] - neg.map_or(0.0, |c| x_expanded[c]))
        .collect();
    let value: f64 = x
        .iter()
        .zip(p.objective.iter())
        .map(|(xi, ci)| xi * ci)
        .sum();

    // duals from the simplex multipliers over the initial identity columns
    let mut dual = vec![0.0; m];
    for (i, d) in dual.iter_mut().enumerate() {
        let mut y = 0.0;
        for k in 0..m {
            let cb = phase2[tab.basis[k]];
            if cb != 0.0 {
                y += cb * tab.a[k * tab.n + identity_col[i]];
            }
        }
        *d = row_sign[i] * y;
    }

    Ok(LpSolution { value, x, dual })
}

struct Tableau {
    m: usize,
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    basis: Vec<usize>,
    artificial_start: usize,
}

impl Tableau {
    fn optimize(&mut self, cost: &[f64], bar_artificials: bool) -> Result<(), LpError> {
        loop {
            let mut reduced = cost.to_vec();
            for (i, &bv) in self.basis.iter().enumerate() {
                let cb = cost[bv];
                if cb != 0.0 {
                    for j in 0..self.n {
                        reduced[j] -= cb * self.a[i * self.n + j];
                    }
                }
            }
            // Bland: lowest-index improving column
            let mut entering = None;
            for j in 0..self.n {
                if bar_artificials && j >= self.artificial_start {
                    break;
                }
                if self.basis.contains(&j) {
                    continue;
                }
                if reduced[j] > EPS {
                    entering = Some(j);
                    break;
                }
            }
            let entering = match entering {
                Some(j) => j,
                None => return Ok(()),
            };
            // ratio test, ties by lowest basis index (Bland)
            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let coeff = self.a[i * self.n + entering];
                if coeff > EPS {
                    let ratio = self.b[i] / coeff;
                    let better = match leaving {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - EPS
                                || (ratio < lr + EPS && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leaving = Some((i, ratio));
                    }
                }
            }
            let (pivot_row, _) = leaving.ok_or(LpError::Unbounded)?;
            self.pivot(pivot_row, entering);
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let n = self.n;
        let pivot = self.a[row * n + col];
        for j in 0..n {
            self.a[row * n + j] /= pivot;
        }
        self.b[row] /= pivot;
        for i in 0..self.m {
            if i == row {
                continue;
            }
            let factor = self.a[i * n + col];
            if factor.abs() <= EPS * EPS {
                continue;
            }
            for j in 0..n {
                self.a[i * n + j] -= factor * self.a[row * n + j];
            }
            self.b[i] -= factor * self.b[row];
        }
        self.basis[row] = col;
    }

    fn drive_out_artificials(&mut self) {
        for i in 0..self.m {
            if self.basis[i] < self.artificial_start {
                continue;
            }
            let pivot_col = (0..self.artificial_start)
                .find(|&j| self.a[i * self.n + j].abs() > EPS && !self.basis.contains(&j));
            if let Some(j) = pivot_col {
                self.pivot(i, j);
            }
        }
    }
}

/// A stage-game payoff matrix: rows are the optimizing player's
/// (history, action) pairs over the supported histories, columns are
/// stored opponent continuation tuples.
#[derive(Clone, Debug)]
pub struct StageMatrix {
    /// Supported histories in canonical order with their contiguous row
    /// ranges; each range spans the full action set.
    pub history_spans: Vec<(PrivateHistory, Range<usize>)>,
    pub num_rows: usize,
    pub num_cols: usize,
    data: Vec<f64>,
}

impl StageMatrix {
    pub fn new(history_spans: Vec<(PrivateHistory, Range<usize>)>, num_cols: usize) -> Self {
        let num_rows = history_spans.last().map_or(0, |(_, r)| r.end);
        StageMatrix {
            history_spans,
            num_rows,
            num_cols,
            data: vec![0.0; num_rows * num_cols],
        }
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.num_cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.num_cols + col] = value;
    }

    pub fn negated(&self) -> StageMatrix {
        StageMatrix {
            history_spans: self.history_spans.clone(),
            num_rows: self.num_rows,
            num_cols: self.num_cols,
            data: self.data.iter().map(|v| -v).collect(),
        }
    }

    /// row . delta for a fixed (history, action) row.
    pub fn row_dot(&self, row: usize, delta: &[f64]) -> f64 {
        let base = row * self.num_cols;
        delta
            .iter()
            .enumerate()
            .map(|(c, d)| d * self.data[base + c])
            .sum()
    }

    /// CSV dump (row history, action, column, entry) for debugging.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("history,action,column,entry\n");
        for (h, span) in &self.history_spans {
            for (offset, row) in span.clone().enumerate() {
                for c in 0..self.num_cols {
                    out.push_str(&format!("{:?},{},{},{}\n", h.0, offset, c, self.entry(row, c)));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct StageRuleSolution {
    pub rows: BTreeMap<PrivateHistory, Vec<f64>>,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct StageMixSolution {
    pub delta: Vec<f64>,
    pub value: f64,
}

/// max_{beta} min_{w} beta^T M_(., w) over per-history action simplexes.
pub fn stage_primal_max(m: &StageMatrix) -> Result<StageRuleSolution, LpError> {
    let mut lp = LpProblem::new();
    for _ in 0..m.num_rows {
        lp.add_var(VarKind::NonNegative, 0.0);
    }
    let v = lp.add_var(VarKind::Free, 1.0);
    for col in 0..m.num_cols {
        let mut coeffs = vec![0.0; m.num_rows + 1];
        for row in 0..m.num_rows {
            coeffs[row] = m.entry(row, col);
        }
        coeffs[v] = -1.0;
        lp.add_row(coeffs, Cmp::Ge, 0.0);
    }
    for (_, span) in &m.history_spans {
        let mut coeffs = vec![0.0; m.num_rows + 1];
        for row in span.clone() {
            coeffs[row] = 1.0;
        }
        lp.add_row(coeffs, Cmp::Eq, 1.0);
    }
    let sol = lp_solve(&lp)?;
    let mut rows = BTreeMap::new();
    for (h, span) in &m.history_spans {
        let mut row: Vec<f64> = sol.x[span.clone()].iter().map(|&p| p.max(0.0)).collect();
        let total: f64 = row.iter().sum();
        for p in &mut row {
            *p /= total;
        }
        rows.insert(h.clone(), row);
    }
    Ok(StageRuleSolution {
        rows,
        value: sol.x[v],
    })
}

/// min_{delta} sum_theta max_a [M delta]_(theta, a) over the column
/// simplex: the dual of [`stage_primal_max`].
pub fn stage_dual_min(m: &StageMatrix) -> Result<StageMixSolution, LpError> {
    let mut lp = LpProblem::new();
    for _ in 0..m.num_cols {
        lp.add_var(VarKind::NonNegative, 0.0);
    }
    let y_start = m.num_cols;
    for _ in 0..m.history_spans.len() {
        lp.add_var(VarKind::Free, -1.0); // minimize sum of y
    }
    for (hist_idx, (_, span)) in m.history_spans.iter().enumerate() {
        for row in span.clone() {
            let mut coeffs = vec![0.0; m.num_cols + m.history_spans.len()];
            for col in 0..m.num_cols {
                coeffs[col] = -m.entry(row, col);
            }
            coeffs[y_start + hist_idx] = 1.0;
            lp.add_row(coeffs, Cmp::Ge, 0.0);
        }
    }
    let mut simplex = vec![0.0; m.num_cols + m.history_spans.len()];
    for c in simplex.iter_mut().take(m.num_cols) {
        *c = 1.0;
    }
    lp.add_row(simplex, Cmp::Eq, 1.0);
    let sol = lp_solve(&lp)?;
    let mut delta: Vec<f64> = sol.x[..m.num_cols].iter().map(|&p| p.max(0.0)).collect();
    let total: f64 = delta.iter().sum();
    for p in &mut delta {
        *p /= total;
    }
    Ok(StageMixSolution {
        delta,
        value: -sol.value,
    })
}

/// The exact one-shot zero-sum Bayesian game max_{beta1} min_{beta2}
/// r(sigma, beta1, beta2), solved as a pair of LPs over per-history
/// simplexes. Returns equilibrium rules over the supported histories
/// and the game value.
pub fn solve_terminal_game(
    model: &PosgModel,
    sigma: &OccupancyState,
) -> Result<(DecisionRule, DecisionRule, f64), LpError> {
    let mc1 = sigma.decompose(Player::One);
    let mc2 = sigma.decompose(Player::Two);
    let hists1: Vec<PrivateHistory> = mc1
        .marginal
        .iter()
        .filter(|(_, &p)| p > PROB_EPS)
        .map(|(h, _)| h.clone())
        .collect();
    let hists2: Vec<PrivateHistory> = mc2
        .marginal
        .iter()
        .filter(|(_, &p)| p > PROB_EPS)
        .map(|(h, _)| h.clone())
        .collect();
    let index1: BTreeMap<&PrivateHistory, usize> =
        hists1.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let index2: BTreeMap<&PrivateHistory, usize> =
        hists2.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let (na1, na2) = (
        model.num_actions(Player::One),
        model.num_actions(Player::Two),
    );
    // G[(i1, a1)][(i2, a2)] = sigma(h) sum_s b(s|h) r(s, a1, a2)
    let mut payoff = vec![0.0; hists1.len() * na1 * hists2.len() * na2];
    let cols = hists2.len() * na2;
    for (h, e) in sigma.iter() {
        let i1 = index1[&h.h1];
        let i2 = index2[&h.h2];
        for a1 in 0..na1 {
            for a2 in 0..na2 {
                let r = model.expected_state_reward(&e.belief, a1, a2);
                payoff[(i1 * na1 + a1) * cols + (i2 * na2 + a2)] += e.prob * r;
            }
        }
    }

    // maximizer LP: max sum_j y2_j  s.t.  y2_j <= G^T beta1 columnwise
    let mut lp1 = LpProblem::new();
    for _ in 0..hists1.len() * na1 {
        lp1.add_var(VarKind::NonNegative, 0.0);
    }
    let y_start = hists1.len() * na1;
    for _ in 0..hists2.len() {
        lp1.add_var(VarKind::Free, 1.0);
    }
    let n_vars1 = y_start + hists2.len();
    for i2 in 0..hists2.len() {
        for a2 in 0..na2 {
            let mut coeffs = vec![0.0; n_vars1];
            for r in 0..hists1.len() * na1 {
                coeffs[r] = payoff[r * cols + (i2 * na2 + a2)];
            }
            coeffs[y_start + i2] = -1.0;
            lp1.add_row(coeffs, Cmp::Ge, 0.0);
        }
    }
    for i1 in 0..hists1.len() {
        let mut coeffs = vec![0.0; n_vars1];
        for a1 in 0..na1 {
            coeffs[i1 * na1 + a1] = 1.0;
        }
        lp1.add_row(coeffs, Cmp::Eq, 1.0);
    }
    let sol1 = lp_solve(&lp1)?;

    // minimizer LP: min sum_i y1_i  s.t.  y1_i >= G beta2 rowwise
    let mut lp2 = LpProblem::new();
    for _ in 0..hists2.len() * na2 {
        lp2.add_var(VarKind::NonNegative, 0.0);
    }
    let y1_start = hists2.len() * na2;
    for _ in 0..hists1.len() {
        lp2.add_var(VarKind::Free, -1.0);
    }
    let n_vars2 = y1_start + hists1.len();
    for i1 in 0..hists1.len() {
        for a1 in 0..na1 {
            let mut coeffs = vec![0.0; n_vars2];
            for c in 0..cols {
                coeffs[c] = -payoff[(i1 * na1 + a1) * cols + c];
            }
            coeffs[y1_start + i1] = 1.0;
            lp2.add_row(coeffs, Cmp::Ge, 0.0);
        }
    }
    for i2 in 0..hists2.len() {
        let mut coeffs = vec![0.0; n_vars2];
        for a2 in 0..na2 {
            coeffs[i2 * na2 + a2] = 1.0;
        }
        lp2.add_row(coeffs, Cmp::Eq, 1.0);
    }
    let sol2 = lp_solve(&lp2)?;
    debug_assert!(
        (sol1.value + sol2.value).abs() <= 1e-6,
        "terminal game duality gap: {} vs {}",
        sol1.value,
        -sol2.value
    );

    let extract = |x: &[f64], hists: &[PrivateHistory], na: usize, player: Player| {
        let mut rows = BTreeMap::new();
        for (i, h) in hists.iter().enumerate() {
            let mut row: Vec<f64> = (0..na).map(|a| x[i * na + a].max(0.0)).collect();
            let total: f64 = row.iter().sum();
            for p in &mut row {
                *p /= total;
            }
            rows.insert(h.clone(), row);
        }
        DecisionRule::new(player, rows)
    };
    let rule1 = extract(&sol1.x[..y_start], &hists1, na1, Player::One);
    let rule2 = extract(&sol2.x[..y1_start], &hists2, na2, Player::Two);
    Ok((rule1, rule2, sol1.value))
}
