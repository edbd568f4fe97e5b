//! zs-POSG model representation, text-format parsing, and exact belief
//! filtering over joint action-observation histories.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities below this are treated as exact zeros everywhere
/// (support tests, impossible histories). Prevents 1/eps blowups in
/// conditionals.
pub const PROB_EPS: f64 = 1e-12;

/// Tolerance for distribution-sum validation.
pub const SUM_TOL: f64 = 1e-9;

/// One of the two players.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub fn idx(self) -> usize {
        match self {
            Player::One => 0,
            Player::Two => 1,
        }
    }

    pub fn opponent(self) -> Player {
        match self {
            Player::One => Player::Two,
            Player::Two => Player::One,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{context}: probabilities sum to {sum}, expected 1")]
    ProbabilitySum { context: String, sum: f64 },
    #[error("{context}: probability {value} outside [0, 1]")]
    ProbabilityRange { context: String, value: f64 },
    #[error("{context}: index out of range")]
    IndexRange { context: String },
    #[error("horizon must be at least 1")]
    BadHorizon,
    #[error("discount must lie in [0, 1], got {0}")]
    BadDiscount(f64),
}

/// A two-player zero-sum partially observable stochastic game with
/// shared dynamics, a single scalar reward maximized by player 1 and
/// minimized by player 2, a finite horizon, and an initial state belief.
#[derive(Clone, Debug)]
pub struct PosgModel {
    pub states: Vec<String>,
    pub actions: [Vec<String>; 2],
    pub observations: [Vec<String>; 2],
    /// Flat table indexed by (s, a1, a2, s', z1, z2).
    dynamics: Vec<f64>,
    /// Flat table indexed by (s, a1, a2).
    reward: Vec<f64>,
    pub horizon: usize,
    pub discount: f64,
    pub initial_belief: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
}

impl PosgModel {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self, p: Player) -> usize {
        self.actions[p.idx()].len()
    }

    pub fn num_observations(&self, p: Player) -> usize {
        self.observations[p.idx()].len()
    }

    pub fn reward_span(&self) -> f64 {
        self.r_max - self.r_min
    }

    fn dyn_index(&self, s: usize, a1: usize, a2: usize, s2: usize, z1: usize, z2: usize) -> usize {
        let (ns, na2, nz1, nz2) = (
            self.states.len(),
            self.actions[1].len(),
            self.observations[0].len(),
            self.observations[1].len(),
        );
        ((((s * self.actions[0].len() + a1) * na2 + a2) * ns + s2) * nz1 + z1) * nz2 + z2
    }

    /// P(s', z1, z2 | s, a1, a2)
    pub fn dynamics(&self, s: usize, a1: usize, a2: usize, s2: usize, z1: usize, z2: usize) -> f64 {
        self.dynamics[self.dyn_index(s, a1, a2, s2, z1, z2)]
    }

    /// r(s, a1, a2), the reward player 1 maximizes.
    pub fn reward(&self, s: usize, a1: usize, a2: usize) -> f64 {
        self.reward[(s * self.actions[0].len() + a1) * self.actions[1].len() + a2]
    }

    /// Replaces the planning horizon (benchmark files are solved at
    /// several horizons).
    pub fn with_horizon(mut self, horizon: usize) -> Result<Self, ModelError> {
        if horizon == 0 {
            return Err(ModelError::BadHorizon);
        }
        self.horizon = horizon;
        Ok(self)
    }

    /// Builds and validates a model from raw tables.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        states: Vec<String>,
        actions: [Vec<String>; 2],
        observations: [Vec<String>; 2],
        dynamics: Vec<f64>,
        reward: Vec<f64>,
        horizon: usize,
        discount: f64,
        initial_belief: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let mut model = PosgModel {
            states,
            actions,
            observations,
            dynamics,
            reward,
            horizon,
            discount,
            initial_belief,
            r_min: 0.0,
            r_max: 0.0,
        };
        model.validate()?;
        model.r_min = model.reward.iter().cloned().fold(f64::INFINITY, f64::min);
        model.r_max = model
            .reward
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.horizon == 0 {
            return Err(ModelError::BadHorizon);
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(ModelError::BadDiscount(self.discount));
        }
        let ns = self.num_states();
        if self.initial_belief.len() != ns {
            return Err(ModelError::IndexRange {
                context: "initial belief".into(),
            });
        }
        for (s, &p) in self.initial_belief.iter().enumerate() {
            if !(0.0..=1.0 + SUM_TOL).contains(&p) {
                return Err(ModelError::ProbabilityRange {
                    context: format!("start[{s}]"),
                    value: p,
                });
            }
        }
        let b0_sum: f64 = self.initial_belief.iter().sum();
        if (b0_sum - 1.0).abs() > SUM_TOL {
            return Err(ModelError::ProbabilitySum {
                context: "start distribution".into(),
                sum: b0_sum,
            });
        }
        for s in 0..ns {
            for a1 in 0..self.num_actions(Player::One) {
                for a2 in 0..self.num_actions(Player::Two) {
                    let mut sum = 0.0;
                    for s2 in 0..ns {
                        for z1 in 0..self.num_observations(Player::One) {
                            for z2 in 0..self.num_observations(Player::Two) {
                                let p = self.dynamics(s, a1, a2, s2, z1, z2);
                                if !(0.0..=1.0 + SUM_TOL).contains(&p) {
                                    return Err(ModelError::ProbabilityRange {
                                        context: format!("T[{s}][{a1}][{a2}][{s2}][{z1}][{z2}]"),
                                        value: p,
                                    });
                                }
                                sum += p;
                            }
                        }
                    }
                    if (sum - 1.0).abs() > SUM_TOL {
                        return Err(ModelError::ProbabilitySum {
                            context: format!(
                                "T rows for state {} actions ({}, {})",
                                self.states[s],
                                self.actions[0][a1],
                                self.actions[1][a2]
                            ),
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Parses the `.zsposg` text format.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        Parser::new(text).run()
    }

    /// Expected reward of an action pair under a state belief:
    /// sum_s b(s) r(s, a1, a2).
    pub fn expected_state_reward(&self, belief: &Belief, a1: usize, a2: usize) -> f64 {
        belief
            .probs()
            .iter()
            .enumerate()
            .map(|(s, &p)| p * self.reward(s, a1, a2))
            .sum()
    }

    /// Pr(z1, z2 | b, a1, a2): the filter normalizer for one step.
    pub fn observation_weight(&self, belief: &Belief, a1: usize, a2: usize, z1: usize, z2: usize) -> f64 {
        let ns = self.num_states();
        let mut w = 0.0;
        for (s, &bs) in belief.probs().iter().enumerate() {
            if bs <= PROB_EPS {
                continue;
            }
            for s2 in 0..ns {
                w += bs * self.dynamics(s, a1, a2, s2, z1, z2);
            }
        }
        w
    }

    /// One Bayes step of the joint filter. Returns the next belief and
    /// the step weight Pr(z1, z2 | b, a1, a2), or `None` when the
    /// observation pair is impossible.
    pub fn belief_step(
        &self,
        belief: &Belief,
        a1: usize,
        a2: usize,
        z1: usize,
        z2: usize,
    ) -> Option<(Belief, f64)> {
        let ns = self.num_states();
        let mut next = vec![0.0; ns];
        for (s, &bs) in belief.probs().iter().enumerate() {
            if bs <= PROB_EPS {
                continue;
            }
            for (s2, slot) in next.iter_mut().enumerate() {
                *slot += bs * self.dynamics(s, a1, a2, s2, z1, z2);
            }
        }
        let w: f64 = next.iter().sum();
        if w <= PROB_EPS {
            return None;
        }
        for v in &mut next {
            *v /= w;
        }
        Some((Belief::new(next), w))
    }

    /// HMM filtering along a joint history: returns b(.|h) and the
    /// reach probability Pr(observations | actions, b0). Impossible
    /// histories yield a zeroed (unnormalized) belief and reach 0.
    pub fn belief_for_history(&self, h: &JointHistory) -> (Belief, f64) {
        let mut belief = Belief::new(self.initial_belief.clone());
        let mut reach = 1.0;
        for t in 0..h.len() {
            let (a1, z1) = h.h1.0[t];
            let (a2, z2) = h.h2.0[t];
            match self.belief_step(&belief, a1, a2, z1, z2) {
                Some((b, w)) => {
                    belief = b;
                    reach *= w;
                }
                None => {
                    return (Belief::new(vec![0.0; self.num_states()]), 0.0);
                }
            }
        }
        (belief, reach)
    }
}

/// One player's action-observation history.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PrivateHistory(pub Vec<(usize, usize)>);

impl PrivateHistory {
    pub fn empty() -> Self {
        PrivateHistory(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, action: usize, observation: usize) -> Self {
        let mut steps = self.0.clone();
        steps.push((action, observation));
        PrivateHistory(steps)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(PrivateHistory(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn last(&self) -> Option<(usize, usize)> {
        self.0.last().copied()
    }
}

/// A pair of equal-length private histories.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JointHistory {
    pub h1: PrivateHistory,
    pub h2: PrivateHistory,
}

impl JointHistory {
    pub fn empty() -> Self {
        JointHistory::default()
    }

    pub fn new(h1: PrivateHistory, h2: PrivateHistory) -> Self {
        assert_eq!(h1.len(), h2.len(), "joint history sides must have equal length");
        JointHistory { h1, h2 }
    }

    pub fn len(&self) -> usize {
        self.h1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h1.is_empty()
    }

    pub fn side(&self, p: Player) -> &PrivateHistory {
        match p {
            Player::One => &self.h1,
            Player::Two => &self.h2,
        }
    }

    pub fn child(&self, a1: usize, z1: usize, a2: usize, z2: usize) -> Self {
        JointHistory {
            h1: self.h1.child(a1, z1),
            h2: self.h2.child(a2, z2),
        }
    }
}

/// A distribution over states conditioned on a joint history.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Self {
        Belief(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, s: usize) -> f64 {
        self.0[s]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.sum() - 1.0).abs() <= SUM_TOL
    }
}

struct Parser<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

#[derive(Default)]
struct RawModel {
    discount: Option<f64>,
    horizon: Option<usize>,
    states: Option<Vec<String>>,
    actions: Option<[Vec<String>; 2]>,
    observations: Option<[Vec<String>; 2]>,
    start: Option<Vec<f64>>,
    t_lines: Vec<(usize, Vec<String>)>,
    r_lines: Vec<(usize, Vec<String>)>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                let stripped = match l.find('#') {
                    Some(idx) => &l[..idx],
                    None => l,
                };
                (i + 1, stripped.trim())
            })
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Parser { lines, pos: 0 }
    }

    fn err(line: usize, msg: impl Into<String>) -> ModelError {
        ModelError::Syntax {
            line,
            msg: msg.into(),
        }
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        let item = self.lines.get(self.pos).copied();
        if item.is_some() {
            self.pos += 1;
        }
        item
    }

    fn expect_names(&mut self, what: &str, after_line: usize) -> Result<Vec<String>, ModelError> {
        match self.next_line() {
            Some((_, l)) => Ok(l.split_whitespace().map(|s| s.to_string()).collect()),
            None => Err(Self::err(after_line, format!("expected {what} line"))),
        }
    }

    fn run(mut self) -> Result<PosgModel, ModelError> {
        let mut raw = RawModel::default();
        while let Some((line, text)) = self.next_line() {
            let (key, rest) = match text.split_once(':') {
                Some((k, r)) => (k.trim(), r.trim()),
                None => return Err(Self::err(line, "expected `key: value`")),
            };
            match key {
                "agents" => {
                    let n: usize = rest
                        .parse()
                        .map_err(|_| Self::err(line, "invalid agent count"))?;
                    if n != 2 {
                        return Err(Self::err(line, "exactly 2 agents are supported"));
                    }
                }
                "discount" => {
                    raw.discount =
                        Some(rest.parse().map_err(|_| Self::err(line, "invalid discount"))?);
                }
                "horizon" => {
                    raw.horizon =
                        Some(rest.parse().map_err(|_| Self::err(line, "invalid horizon"))?);
                }
                "states" => {
                    raw.states = Some(rest.split_whitespace().map(|s| s.to_string()).collect());
                }
                "actions" => {
                    let a1 = self.expect_names("player 1 actions", line)?;
                    let a2 = self.expect_names("player 2 actions", line)?;
                    raw.actions = Some([a1, a2]);
                }
                "observations" => {
                    let z1 = self.expect_names("player 1 observations", line)?;
                    let z2 = self.expect_names("player 2 observations", line)?;
                    raw.observations = Some([z1, z2]);
                }
                "start" => {
                    let mut probs = Vec::new();
                    for tok in rest.split_whitespace() {
                        probs.push(
                            tok.parse()
                                .map_err(|_| Self::err(line, "invalid start probability"))?,
                        );
                    }
                    raw.start = Some(probs);
                }
                "T" => {
                    raw.t_lines
                        .push((line, rest.split(':').map(|s| s.trim().to_string()).collect()));
                }
                "R" => {
                    raw.r_lines
                        .push((line, rest.split(':').map(|s| s.trim().to_string()).collect()));
                }
                other => {
                    return Err(Self::err(line, format!("unknown key `{other}`")));
                }
            }
        }
        Self::assemble(raw)
    }

    fn assemble(raw: RawModel) -> Result<PosgModel, ModelError> {
        let states = raw
            .states
            .ok_or_else(|| Self::err(0, "missing `states:` line"))?;
        let actions = raw
            .actions
            .ok_or_else(|| Self::err(0, "missing `actions:` block"))?;
        let observations = raw
            .observations
            .ok_or_else(|| Self::err(0, "missing `observations:` block"))?;
        let start = raw
            .start
            .ok_or_else(|| Self::err(0, "missing `start:` line"))?;
        let horizon = raw.horizon.ok_or_else(|| Self::err(0, "missing `horizon:` line"))?;
        let discount = raw
            .discount
            .ok_or_else(|| Self::err(0, "missing `discount:` line"))?;

        if start.len() != states.len() {
            return Err(Self::err(0, "start distribution length mismatch"));
        }

        let ns = states.len();
        let (na1, na2) = (actions[0].len(), actions[1].len());
        let (nz1, nz2) = (observations[0].len(), observations[1].len());
        let mut dynamics = vec![0.0; ns * na1 * na2 * ns * nz1 * nz2];
        let mut reward = vec![0.0; ns * na1 * na2];

        let lookup = |names: &[String], token: &str, line: usize, what: &str| -> Result<Vec<usize>, ModelError> {
            if token == "*" {
                return Ok((0..names.len()).collect());
            }
            match names.iter().position(|n| n == token) {
                Some(i) => Ok(vec![i]),
                None => Err(Self::err(line, format!("unknown {what} `{token}`"))),
            }
        };

        for (line, fields) in &raw.t_lines {
            // a1 a2 : s : s' : z1 z2 : prob
            if fields.len() != 5 {
                return Err(Self::err(*line, "T line needs `a1 a2 : s : s' : z1 z2 : prob`"));
            }
            let acts: Vec<&str> = fields[0].split_whitespace().collect();
            if acts.len() != 2 {
                return Err(Self::err(*line, "T line needs two actions"));
            }
            let obs: Vec<&str> = fields[3].split_whitespace().collect();
            if obs.len() != 2 {
                return Err(Self::err(*line, "T line needs two observations"));
            }
            let a1s = lookup(&actions[0], acts[0], *line, "player 1 action")?;
            let a2s = lookup(&actions[1], acts[1], *line, "player 2 action")?;
            let ss = lookup(&states, &fields[1], *line, "state")?;
            let s2s = lookup(&states, &fields[2], *line, "state")?;
            let z1s = lookup(&observations[0], obs[0], *line, "player 1 observation")?;
            let z2s = lookup(&observations[1], obs[1], *line, "player 2 observation")?;
            let prob: f64 = fields[4]
                .parse()
                .map_err(|_| Self::err(*line, "invalid probability"))?;
            for &s in &ss {
                for &a1 in &a1s {
                    for &a2 in &a2s {
                        for &s2 in &s2s {
                            for &z1 in &z1s {
                                for &z2 in &z2s {
                                    let idx = ((((s * na1 + a1) * na2 + a2) * ns + s2) * nz1 + z1)
                                        * nz2
                                        + z2;
                                    dynamics[idx] = prob;
                                }
                            }
                        }
                    }
                }
            }
        }

        for (line, fields) in &raw.r_lines {
            // a1 a2 : s : value
            if fields.len() != 3 {
                return Err(Self::err(*line, "R line needs `a1 a2 : s : value`"));
            }
            let acts: Vec<&str> = fields[0].split_whitespace().collect();
            if acts.len() != 2 {
                return Err(Self::err(*line, "R line needs two actions"));
            }
            let a1s = lookup(&actions[0], acts[0], *line, "player 1 action")?;
            let a2s = lookup(&actions[1], acts[1], *line, "player 2 action")?;
            let ss = lookup(&states, &fields[1], *line, "state")?;
            let value: f64 = fields[2]
                .parse()
                .map_err(|_| Self::err(*line, "invalid reward value"))?;
            for &s in &ss {
                for &a1 in &a1s {
                    for &a2 in &a2s {
                        reward[(s * na1 + a1) * na2 + a2] = value;
                    }
                }
            }
        }

        PosgModel::from_parts(
            states,
            actions,
            observations,
            dynamics,
            reward,
            horizon,
            discount,
            start,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIVIAL: &str = "\
agents: 2
discount: 1.0
horizon: 1
states: only
actions:
go
go
observations:
none
none
start: 1.0
T: * * : * : only : none none : 1.0
";

    fn pennies() -> PosgModel {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../models/matching_pennies.zsposg"
        ))
        .unwrap();
        PosgModel::parse(&text).unwrap()
    }

    #[test]
    fn parses_degenerate_model() {
        let m = PosgModel::parse(TRIVIAL).unwrap();
        assert_eq!(m.num_states(), 1);
        assert_eq!(m.r_min, 0.0);
        assert_eq!(m.r_max, 0.0);
    }

    #[test]
    fn parses_matching_pennies() {
        let m = pennies();
        assert_eq!(m.num_states(), 3);
        assert_eq!(m.num_actions(Player::One), 2);
        assert_eq!(m.num_observations(Player::Two), 1);
        assert_eq!(m.horizon, 2);
        assert_eq!(m.discount, 1.0);
        assert_eq!(m.r_min, -1.0);
        assert_eq!(m.r_max, 1.0);
    }

    #[test]
    fn rejects_bad_probability_sums() {
        let text = TRIVIAL.replace("T: * * : * : only : none none : 1.0", "T: * * : * : only : none none : 0.9");
        match PosgModel::parse(&text) {
            Err(ModelError::ProbabilitySum { sum, .. }) => assert!((sum - 0.9).abs() < 1e-12),
            other => panic!("expected probability-sum error, got {other:?}"),
        }
    }

    #[test]
    fn reports_syntax_errors_with_line_numbers() {
        let text = "agents: 2\nnot a real line without colon separators at all\n";
        match PosgModel::parse(text) {
            Err(ModelError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn empty_history_is_initial_belief() {
        let m = pennies();
        let (b, reach) = m.belief_for_history(&JointHistory::empty());
        assert_eq!(b.probs(), m.initial_belief.as_slice());
        assert_eq!(reach, 1.0);
    }

    #[test]
    fn pennies_head_branch_concentrates_on_head_state() {
        let m = pennies();
        // action a_h is index 0, the blind observation is index 0
        let h = JointHistory::empty().child(0, 0, 1, 0);
        let (b, reach) = m.belief_for_history(&h);
        // state order in the file: s_i s_h s_t
        assert!((b.get(1) - 1.0).abs() < 1e-12);
        assert!((reach - 1.0).abs() < 1e-12);
    }

    #[test]
    fn impossible_history_has_zero_reach() {
        // Deterministic observation model: z index must equal the next state.
        let text = "\
agents: 2
discount: 1.0
horizon: 2
states: a b
actions:
u
u
observations:
za zb
z
start: 1.0 0.0
T: * * : * : a : za z : 1.0
";
        let m = PosgModel::parse(text).unwrap();
        let h = JointHistory::empty().child(0, 1, 0, 0); // observed zb, but chain stays in `a`
        let (b, reach) = m.belief_for_history(&h);
        assert_eq!(reach, 0.0);
        assert!(!b.is_normalized());
    }

    #[test]
    fn expected_state_reward_reads_the_table() {
        let m = pennies();
        let b0 = Belief::new(m.initial_belief.clone());
        // reward is 0 in the initial state for every action pair
        for a1 in 0..2 {
            for a2 in 0..2 {
                assert_eq!(m.expected_state_reward(&b0, a1, a2), 0.0);
            }
        }
        // point mass on the head state: player 2 guessing head costs player 1
        let head = Belief::new(vec![0.0, 1.0, 0.0]);
        assert_eq!(m.expected_state_reward(&head, 0, 0), -1.0);
        assert_eq!(m.expected_state_reward(&head, 0, 1), 1.0);
    }

    #[test]
    fn constant_reward_model_is_constant() {
        let text = TRIVIAL.replace("T: * * :", "R: * * : * : 4.25\nT: * * :");
        let m = PosgModel::parse(&text).unwrap();
        let b = Belief::new(vec![1.0]);
        assert_eq!(m.expected_state_reward(&b, 0, 0), 4.25);
        assert_eq!(m.r_min, 4.25);
        assert_eq!(m.r_max, 4.25);
    }
}
