//! Occupancy-state algebra: marginal/conditional decomposition, the
//! deterministic transition, expected reward, and 1-norm distances.
//!
//! An occupancy state at depth tau is the distribution over joint
//! action-observation histories induced by a decision-rule profile
//! prefix. Entries cache the state belief of their history so the
//! transition is a single Bayes step per branch.

use std::collections::BTreeMap;

use serde_json::json;
use thiserror::Error;

use crate::model::{
    Belief, JointHistory, Player, PosgModel, PrivateHistory, PROB_EPS, SUM_TOL,
};

#[derive(Debug, Error)]
pub enum OccupancyError {
    #[error("missing decision-rule row for player {player:?} history {history:?}")]
    MissingRuleRow { player: Player, history: PrivateHistory },
    #[error("occupancy states live at different timesteps ({0} vs {1})")]
    TimestepMismatch(usize, usize),
}

#[derive(Clone, Debug)]
pub struct OccEntry {
    pub prob: f64,
    pub belief: Belief,
}

/// Distribution over joint histories with cached per-history beliefs
/// (a "full" occupancy state).
#[derive(Clone, Debug)]
pub struct OccupancyState {
    pub tau: usize,
    table: BTreeMap<JointHistory, OccEntry>,
}

impl OccupancyState {
    /// The time-0 occupancy: a point mass on the empty joint history.
    pub fn initial(model: &PosgModel) -> Self {
        let mut table = BTreeMap::new();
        table.insert(
            JointHistory::empty(),
            OccEntry {
                prob: 1.0,
                belief: Belief::new(model.initial_belief.clone()),
            },
        );
        OccupancyState { tau: 0, table }
    }

    /// Builds an occupancy state from explicit entries; zero-probability
    /// entries are dropped.
    pub fn from_entries(
        tau: usize,
        entries: impl IntoIterator<Item = (JointHistory, OccEntry)>,
    ) -> Self {
        let table = entries
            .into_iter()
            .filter(|(_, e)| e.prob > PROB_EPS)
            .collect();
        OccupancyState { tau, table }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&JointHistory, &OccEntry)> {
        self.table.iter()
    }

    pub fn get(&self, h: &JointHistory) -> Option<&OccEntry> {
        self.table.get(h)
    }

    pub fn prob(&self, h: &JointHistory) -> f64 {
        self.table.get(h).map_or(0.0, |e| e.prob)
    }

    pub fn total_mass(&self) -> f64 {
        self.table.values().map(|e| e.prob).sum()
    }

    /// sum over the union of supports of |sigma - sigma'|.
    pub fn distance_l1(&self, other: &OccupancyState) -> Result<f64, OccupancyError> {
        if self.tau != other.tau {
            return Err(OccupancyError::TimestepMismatch(self.tau, other.tau));
        }
        let mut d = 0.0;
        for (h, e) in &self.table {
            d += (e.prob - other.prob(h)).abs();
        }
        for (h, e) in &other.table {
            if !self.table.contains_key(h) {
                d += e.prob;
            }
        }
        Ok(d)
    }

    /// Splits sigma from `player`'s viewpoint into a marginal over own
    /// histories and a conditional over opponent histories.
    pub fn decompose(&self, player: Player) -> MarginalConditional {
        let mut marginal: BTreeMap<PrivateHistory, f64> = BTreeMap::new();
        let mut grouped: BTreeMap<PrivateHistory, Vec<(PrivateHistory, f64, Belief)>> =
            BTreeMap::new();
        for (h, e) in &self.table {
            let own = h.side(player).clone();
            let opp = h.side(player.opponent()).clone();
            *marginal.entry(own.clone()).or_insert(0.0) += e.prob;
            grouped
                .entry(own)
                .or_default()
                .push((opp, e.prob, e.belief.clone()));
        }
        let mut rows = BTreeMap::new();
        for (own, mut entries) in grouped {
            let mass = marginal[&own];
            if mass <= PROB_EPS {
                continue;
            }
            for (_, p, _) in &mut entries {
                *p /= mass;
            }
            rows.insert(own, CondRow { weight: mass, entries });
        }
        MarginalConditional {
            player,
            marginal,
            conditional: Conditional { player, rows },
        }
    }

    /// Debug dump: {"tau": t, "entries": [{"h1": [...], "h2": [...], "p": f}]}
    pub fn to_debug_json(&self) -> serde_json::Value {
        let entries: Vec<_> = self
            .table
            .iter()
            .map(|(h, e)| {
                json!({
                    "h1": h.h1.0,
                    "h2": h.h2.0,
                    "p": e.prob,
                })
            })
            .collect();
        json!({ "tau": self.tau, "entries": entries })
    }
}

/// A one-timestep behavioral decision rule for one player.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionRule {
    pub player: Player,
    rows: BTreeMap<PrivateHistory, Vec<f64>>,
}

impl DecisionRule {
    pub fn new(player: Player, rows: BTreeMap<PrivateHistory, Vec<f64>>) -> Self {
        for (h, row) in &rows {
            let sum: f64 = row.iter().sum();
            debug_assert!(
                (sum - 1.0).abs() <= SUM_TOL,
                "rule row for {h:?} sums to {sum}"
            );
        }
        DecisionRule { player, rows }
    }

    pub fn uniform_for<'a>(
        player: Player,
        num_actions: usize,
        histories: impl IntoIterator<Item = &'a PrivateHistory>,
    ) -> Self {
        let row = vec![1.0 / num_actions as f64; num_actions];
        let rows = histories
            .into_iter()
            .map(|h| (h.clone(), row.clone()))
            .collect();
        DecisionRule { player, rows }
    }

    pub fn row(&self, h: &PrivateHistory) -> Option<&[f64]> {
        self.rows.get(h).map(|r| r.as_slice())
    }

    /// Row lookup falling back to a uniform distribution; rows are not
    /// stored for improbable histories, where any distribution does.
    pub fn prob_or_uniform(&self, h: &PrivateHistory, action: usize, num_actions: usize) -> f64 {
        match self.rows.get(h) {
            Some(row) => row[action],
            None => 1.0 / num_actions as f64,
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = (&PrivateHistory, &[f64])> {
        self.rows.iter().map(|(h, r)| (h, r.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert_row(&mut self, h: PrivateHistory, row: Vec<f64>) {
        self.rows.insert(h, row);
    }
}

/// One row of a conditional: the opponent-history distribution attached
/// to one own history, with the joint beliefs of each pair. `weight`
/// keeps the row's pre-normalization mass.
#[derive(Clone, Debug)]
pub struct CondRow {
    pub weight: f64,
    pub entries: Vec<(PrivateHistory, f64, Belief)>,
}

impl CondRow {
    /// 1-norm distance between two rows over the union of supports.
    pub fn l1_distance(&self, other: &CondRow) -> f64 {
        let mut d = 0.0;
        let (mut i, mut j) = (0, 0);
        while i < self.entries.len() && j < other.entries.len() {
            match self.entries[i].0.cmp(&other.entries[j].0) {
                std::cmp::Ordering::Less => {
                    d += self.entries[i].1;
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    d += other.entries[j].1;
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    d += (self.entries[i].1 - other.entries[j].1).abs();
                    i += 1;
                    j += 1;
                }
            }
        }
        d += self.entries[i..].iter().map(|e| e.1).sum::<f64>();
        d += other.entries[j..].iter().map(|e| e.1).sum::<f64>();
        d
    }
}

/// Conditional term sigma^{c,i}: for each of `player`'s histories, a
/// distribution over opponent histories. Rows exist only for own
/// histories with positive marginal mass.
#[derive(Clone, Debug)]
pub struct Conditional {
    pub player: Player,
    rows: BTreeMap<PrivateHistory, CondRow>,
}

impl Conditional {
    pub fn row(&self, h: &PrivateHistory) -> Option<&CondRow> {
        self.rows.get(h)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&PrivateHistory, &CondRow)> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// The result of decomposing an occupancy state.
#[derive(Clone, Debug)]
pub struct MarginalConditional {
    pub player: Player,
    pub marginal: BTreeMap<PrivateHistory, f64>,
    pub conditional: Conditional,
}

impl MarginalConditional {
    pub fn marginal_of(&self, h: &PrivateHistory) -> f64 {
        self.marginal.get(h).copied().unwrap_or(0.0)
    }
}

fn rule_row<'a>(
    rule: &'a DecisionRule,
    h: &PrivateHistory,
    mass: f64,
) -> Result<Option<&'a [f64]>, OccupancyError> {
    match rule.row(h) {
        Some(row) => Ok(Some(row)),
        None if mass <= PROB_EPS => Ok(None),
        None => Err(OccupancyError::MissingRuleRow {
            player: rule.player,
            history: h.clone(),
        }),
    }
}

/// The deterministic occupancy transition T(sigma, beta1, beta2).
/// Zero-probability branches are dropped; child beliefs are one Bayes
/// step from the parent entry.
pub fn transition(
    model: &PosgModel,
    sigma: &OccupancyState,
    rule1: &DecisionRule,
    rule2: &DecisionRule,
) -> Result<OccupancyState, OccupancyError> {
    debug_assert_eq!(rule1.player, Player::One);
    debug_assert_eq!(rule2.player, Player::Two);
    let (nz1, nz2) = (
        model.num_observations(Player::One),
        model.num_observations(Player::Two),
    );
    let mut table = BTreeMap::new();
    for (h, e) in sigma.iter() {
        let row1 = match rule_row(rule1, &h.h1, e.prob)? {
            Some(r) => r,
            None => continue,
        };
        let row2 = match rule_row(rule2, &h.h2, e.prob)? {
            Some(r) => r,
            None => continue,
        };
        for (a1, &p1) in row1.iter().enumerate() {
            if p1 <= PROB_EPS {
                continue;
            }
            for (a2, &p2) in row2.iter().enumerate() {
                if p2 <= PROB_EPS {
                    continue;
                }
                let base = e.prob * p1 * p2;
                if base <= PROB_EPS {
                    continue;
                }
                for z1 in 0..nz1 {
                    for z2 in 0..nz2 {
                        if let Some((belief, w)) = model.belief_step(&e.belief, a1, a2, z1, z2) {
                            let prob = base * w;
                            if prob <= PROB_EPS {
                                continue;
                            }
                            let child = h.child(a1, z1, a2, z2);
                            table.insert(child, OccEntry { prob, belief });
                        }
                    }
                }
            }
        }
    }
    Ok(OccupancyState {
        tau: sigma.tau + 1,
        table,
    })
}

/// Expected instant reward r(sigma, beta1, beta2).
pub fn expected_reward(
    model: &PosgModel,
    sigma: &OccupancyState,
    rule1: &DecisionRule,
    rule2: &DecisionRule,
) -> Result<f64, OccupancyError> {
    let mut total = 0.0;
    for (h, e) in sigma.iter() {
        let row1 = match rule_row(rule1, &h.h1, e.prob)? {
            Some(r) => r,
            None => continue,
        };
        let row2 = match rule_row(rule2, &h.h2, e.prob)? {
            Some(r) => r,
            None => continue,
        };
        for (a1, &p1) in row1.iter().enumerate() {
            if p1 <= PROB_EPS {
                continue;
            }
            for (a2, &p2) in row2.iter().enumerate() {
                if p2 <= PROB_EPS {
                    continue;
                }
                total += e.prob * p1 * p2 * model.expected_state_reward(&e.belief, a1, a2);
            }
        }
    }
    Ok(total)
}

/// `player`'s marginal of T(sigma, beta1, beta2): a distribution over
/// next own histories (theta, a, z).
pub fn transition_marginal(
    model: &PosgModel,
    sigma: &OccupancyState,
    rule1: &DecisionRule,
    rule2: &DecisionRule,
    player: Player,
) -> Result<BTreeMap<PrivateHistory, f64>, OccupancyError> {
    let next = transition(model, sigma, rule1, rule2)?;
    let mut marginal = BTreeMap::new();
    for (h, e) in next.iter() {
        *marginal.entry(h.side(player).clone()).or_insert(0.0) += e.prob;
    }
    Ok(marginal)
}

/// `player`'s conditional of the transition. The signature takes only
/// the current conditional and the opponent's rule: the result is
/// independent of the player's own rule and marginal.
///
/// Rows are produced for every (theta, a, z) with positive forward
/// weight; each row's `weight` is Pr(z | theta, a, row) under the
/// opponent rule, before normalization.
pub fn transition_conditional(
    model: &PosgModel,
    conditional: &Conditional,
    opponent_rule: &DecisionRule,
) -> Conditional {
    let player = conditional.player;
    let opponent = player.opponent();
    debug_assert_eq!(opponent_rule.player, opponent);
    let num_own_actions = model.num_actions(player);
    let num_opp_actions = model.num_actions(opponent);
    let (nz_own, nz_opp) = (
        model.num_observations(player),
        model.num_observations(opponent),
    );
    let mut rows = BTreeMap::new();
    for (own, row) in conditional.rows() {
        for a in 0..num_own_actions {
            for z in 0..nz_own {
                let mut entries: Vec<(PrivateHistory, f64, Belief)> = Vec::new();
                let mut weight = 0.0;
                for (opp, p, belief) in &row.entries {
                    if *p <= PROB_EPS {
                        continue;
                    }
                    for a_opp in 0..num_opp_actions {
                        let q = opponent_rule.prob_or_uniform(opp, a_opp, num_opp_actions);
                        if q <= PROB_EPS {
                            continue;
                        }
                        for z_opp in 0..nz_opp {
                            let (a1, a2, z1, z2) = match player {
                                Player::One => (a, a_opp, z, z_opp),
                                Player::Two => (a_opp, a, z_opp, z),
                            };
                            if let Some((next_belief, w)) =
                                model.belief_step(belief, a1, a2, z1, z2)
                            {
                                let mass = p * q * w;
                                if mass <= PROB_EPS {
                                    continue;
                                }
                                entries.push((opp.child(a_opp, z_opp), mass, next_belief));
                                weight += mass;
                            }
                        }
                    }
                }
                if weight <= PROB_EPS {
                    continue;
                }
                for e in &mut entries {
                    e.1 /= weight;
                }
                entries.sort_by(|x, y| x.0.cmp(&y.0));
                rows.insert(own.child(a, z), CondRow { weight, entries });
            }
        }
    }
    Conditional { player, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pennies() -> PosgModel {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../models/matching_pennies.zsposg"
        ))
        .unwrap();
        PosgModel::parse(&text).unwrap()
    }

    fn singleton_rule(player: Player, h: &PrivateHistory, action: usize, n: usize) -> DecisionRule {
        let mut row = vec![0.0; n];
        row[action] = 1.0;
        let mut rows = BTreeMap::new();
        rows.insert(h.clone(), row);
        DecisionRule::new(player, rows)
    }

    fn mixed_rule(player: Player, h: &PrivateHistory, probs: Vec<f64>) -> DecisionRule {
        let mut rows = BTreeMap::new();
        rows.insert(h.clone(), probs);
        DecisionRule::new(player, rows)
    }

    #[test]
    fn point_mass_transition_follows_the_kernel() {
        let m = pennies();
        let sigma = OccupancyState::initial(&m);
        let root = PrivateHistory::empty();
        let r1 = singleton_rule(Player::One, &root, 0, 2); // a_h
        let r2 = singleton_rule(Player::Two, &root, 1, 2); // a_t
        let next = transition(&m, &sigma, &r1, &r2).unwrap();
        assert_eq!(next.tau, 1);
        assert_eq!(next.len(), 1);
        let (h, e) = next.iter().next().unwrap();
        assert_eq!(h.h1.0, vec![(0, 0)]);
        assert_eq!(h.h2.0, vec![(1, 0)]);
        assert!((e.prob - 1.0).abs() < 1e-12);
        assert!((e.belief.get(1) - 1.0).abs() < 1e-12); // s_h
    }

    #[test]
    fn pennies_marginal_matches_head_probability() {
        let m = pennies();
        let sigma = OccupancyState::initial(&m);
        let root = PrivateHistory::empty();
        let p1 = 0.3;
        let r1 = mixed_rule(Player::One, &root, vec![p1, 1.0 - p1]);
        let r2 = mixed_rule(Player::Two, &root, vec![0.5, 0.5]);
        let marg = transition_marginal(&m, &sigma, &r1, &r2, Player::One).unwrap();
        let head = PrivateHistory::empty().child(0, 0);
        let tail = PrivateHistory::empty().child(1, 0);
        assert!((marg[&head] - p1).abs() < 1e-12);
        assert!((marg[&tail] - (1.0 - p1)).abs() < 1e-12);
    }

    #[test]
    fn reward_of_constant_model_is_constant() {
        let text = "\
agents: 2
discount: 1.0
horizon: 2
states: only
actions:
x y
x y
observations:
o
o
start: 1.0
T: * * : * : only : o o : 1.0
R: * * : * : 2.5
";
        let m = PosgModel::parse(text).unwrap();
        let sigma = OccupancyState::initial(&m);
        let root = PrivateHistory::empty();
        let r1 = mixed_rule(Player::One, &root, vec![0.7, 0.3]);
        let r2 = mixed_rule(Player::Two, &root, vec![0.2, 0.8]);
        assert!((expected_reward(&m, &sigma, &r1, &r2).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn pennies_reward_at_time_zero_is_zero_for_all_rules() {
        let m = pennies();
        let sigma = OccupancyState::initial(&m);
        let root = PrivateHistory::empty();
        for p in [0.0, 0.25, 1.0] {
            let r1 = mixed_rule(Player::One, &root, vec![p, 1.0 - p]);
            let r2 = mixed_rule(Player::Two, &root, vec![1.0 - p, p]);
            assert!(expected_reward(&m, &sigma, &r1, &r2).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn decompose_reconstructs_the_joint() {
        let m = pennies();
        let sigma = OccupancyState::initial(&m);
        let root = PrivateHistory::empty();
        let r1 = mixed_rule(Player::One, &root, vec![0.6, 0.4]);
        let r2 = mixed_rule(Player::Two, &root, vec![0.1, 0.9]);
        let next = transition(&m, &sigma, &r1, &r2).unwrap();
        let mc = next.decompose(Player::One);
        let mut total = 0.0;
        for (own, row) in mc.conditional.rows() {
            let mass = mc.marginal_of(own);
            for (opp, p, _) in &row.entries {
                let joint = JointHistory::new(own.clone(), opp.clone());
                assert!((mass * p - next.prob(&joint)).abs() < 1e-12);
                total += mass * p;
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn product_occupancy_has_identical_conditional_rows() {
        let m = pennies();
        let sigma = OccupancyState::initial(&m);
        let root = PrivateHistory::empty();
        let r1 = mixed_rule(Player::One, &root, vec![0.6, 0.4]);
        let r2 = mixed_rule(Player::Two, &root, vec![0.1, 0.9]);
        // blind observations make the joint a product of marginals
        let next = transition(&m, &sigma, &r1, &r2).unwrap();
        let mc = next.decompose(Player::Two);
        let rows: Vec<&CondRow> = mc.conditional.rows().map(|(_, r)| r).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].entries.len(), rows[1].entries.len());
        for (a, b) in rows[0].entries.iter().zip(rows[1].entries.iter()) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_decomposition_is_degenerate() {
        let m = pennies();
        let sigma = OccupancyState::initial(&m);
        let mc = sigma.decompose(Player::One);
        assert_eq!(mc.marginal.len(), 1);
        let row = mc.conditional.row(&PrivateHistory::empty()).unwrap();
        assert_eq!(row.entries.len(), 1);
        assert!((row.entries[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l1_distance_edge_cases() {
        let m = pennies();
        let sigma = OccupancyState::initial(&m);
        assert_eq!(sigma.distance_l1(&sigma).unwrap(), 0.0);

        let root = PrivateHistory::empty();
        let heads = transition(
            &m,
            &sigma,
            &singleton_rule(Player::One, &root, 0, 2),
            &singleton_rule(Player::Two, &root, 0, 2),
        )
        .unwrap();
        let tails = transition(
            &m,
            &sigma,
            &singleton_rule(Player::One, &root, 1, 2),
            &singleton_rule(Player::Two, &root, 1, 2),
        )
        .unwrap();
        assert!((heads.distance_l1(&tails).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            sigma.distance_l1(&heads),
            Err(OccupancyError::TimestepMismatch(0, 1))
        ));
    }

    #[test]
    fn conditional_transition_ignores_own_rule_by_signature() {
        let m = pennies();
        let sigma = OccupancyState::initial(&m);
        let mc = sigma.decompose(Player::One);
        let root = PrivateHistory::empty();
        let r2 = mixed_rule(Player::Two, &root, vec![0.3, 0.7]);
        let next = transition_conditional(&m, &mc.conditional, &r2);
        // one row per (action, observation) of player 1
        assert_eq!(next.len(), 2);
        for (own, row) in next.rows() {
            assert_eq!(own.len(), 1);
            assert!((row.weight - 1.0).abs() < 1e-12);
            let sum: f64 = row.entries.iter().map(|e| e.1).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            // opponent branch probabilities follow the opponent rule
            for (opp, p, _) in &row.entries {
                let expected = if opp.0[0].0 == 0 { 0.3 } else { 0.7 };
                assert!((p - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn debug_json_shape() {
        let m = pennies();
        let sigma = OccupancyState::initial(&m);
        let v = sigma.to_debug_json();
        assert_eq!(v["tau"], 0);
        assert_eq!(v["entries"].as_array().unwrap().len(), 1);
    }
}
