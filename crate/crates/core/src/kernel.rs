//! A checked proof-rule engine for coinductive equivalence goals.
//!
//! Goals are concrete inclusions of a finite pair set into a generalized
//! parameterized fixed point or into the four-knowledge weak bisimulation;
//! rules are exactly the generalized-coinduction rules and the equational
//! theory of the knowledge-carrying relation. Every rule application checks
//! its side conditions by finite computation, and a completed proof can be
//! audited against the semantic engine: each discharge is re-verified by
//! direct fixpoint evaluation, and the proved theorems are compared with the
//! directly computed weak bisimilarity.
//!
//! Goals carry concrete relations rather than symbolic knowledge. This
//! trades generality for total checkability: every side condition is a
//! finite inclusion test.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::bisim::{
    check_weak_compat, clo_concat, concat_op, d_op, euttf_op, gupaco_holds_for, strong_rewrite_op,
    tau_left_op, Bisims,
};
use crate::euttg::{EuttgEngine, Knowledge};
use crate::gpaco::{gpaco, paco};
use crate::lattice::{MonotoneOp, Rel};
use crate::streams::{
    build_universe, EquationSystem, Head, StreamExpr, StreamUniverse, UniverseError,
    UniverseOptions,
};

/// Which rule system a proof runs in.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Lane {
    /// Generalized parameterized coinduction over the weak-bisimulation
    /// functor with the directed transitive closure as base closure.
    Gpaco,
    /// The knowledge-carrying weak bisimulation and its equational theory.
    Euttg,
}

/// Where a registered closure may be used: anywhere, or only in positions
/// guarded by a visible event (the undirected rewrite).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ContextTag {
    Anywhere,
    BetaOnly,
}

#[derive(Clone, Debug)]
pub enum JustificationKind {
    /// Backed by a proved lemma; the sampled check cross-validates it.
    BuiltinLemma,
    /// Backed only by the sampled check run at registration time.
    SampledCheck,
}

/// Evidence recorded when a closure is registered. Every closure used by a
/// rule application must carry a justification whose check has passed.
#[derive(Clone, Debug)]
pub struct Justification {
    pub kind: JustificationKind,
    pub seed: u64,
    pub samples: usize,
    pub passed: bool,
}

pub struct ClosureEntry {
    pub name: String,
    pub op: MonotoneOp,
    pub context: ContextTag,
    pub justification: Justification,
}

/// Registered up-to closures for one session.
#[derive(Default)]
pub struct ClosureRegistry {
    entries: BTreeMap<String, ClosureEntry>,
}

impl ClosureRegistry {
    pub fn get(&self, name: &str) -> Option<&ClosureEntry> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    fn insert(&mut self, entry: ClosureEntry) {
        self.entries.insert(entry.name.clone(), entry);
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Universe(#[from] UniverseError),
    #[error("closure `{0}` is not available: {1}")]
    Closure(String, String),
    #[error("registration check for closure `{0}` failed")]
    RegistrationFailed(String),
    #[error("`{0}` does not denote a state of the session universe")]
    UnknownState(String),
}

const REGISTRATION_SEED: u64 = 0xc0e9;
const REGISTRATION_SAMPLES: usize = 48;

/// A proof session: one universe, its memoized relations, and the closure
/// registry. Sessions are independent and may run concurrently.
pub struct Session {
    suni: Arc<StreamUniverse>,
    bisims: Arc<Bisims>,
    engine: Arc<EuttgEngine>,
    f: MonotoneOp,
    bclo: MonotoneOp,
    registry: ClosureRegistry,
}

/// Builds a session universe saturated for the requested closures and
/// registers them with their justification checks.
pub fn start_session(
    sys: &EquationSystem,
    roots: &[StreamExpr],
    closures: &[&str],
    cap: usize,
) -> Result<Session, SessionError> {
    let needs_concat = closures.iter().any(|c| matches!(*c, "concat" | "prefix"));
    let opts = UniverseOptions {
        cap,
        concat_closed: needs_concat,
    };
    let suni = build_universe(sys, roots, &opts)?;
    let bisims = Bisims::compute(&suni);
    let engine = EuttgEngine::new(&bisims);
    let f = euttf_op(&suni);
    let bclo = d_op(&bisims);

    let mut registry = ClosureRegistry::default();

    // The base closure itself: justified by its weak-compatibility lemma,
    // cross-checked by sampling at registration time.
    let d_check = check_weak_compat(&suni, &f, &bclo, REGISTRATION_SAMPLES, REGISTRATION_SEED);
    if !d_check.passed() {
        return Err(SessionError::RegistrationFailed("D".into()));
    }
    registry.insert(ClosureEntry {
        name: "D".into(),
        op: bclo.clone(),
        context: ContextTag::Anywhere,
        justification: Justification {
            kind: JustificationKind::BuiltinLemma,
            seed: REGISTRATION_SEED,
            samples: d_check.samples,
            passed: true,
        },
    });

    // Closures bounded by gupaco(f, D): stripping internal steps on the
    // left, rewriting by strong bisimilarity, and (on saturated universes)
    // discharging weakly bisimilar prefixes.
    let mut bounded: Vec<(&str, MonotoneOp)> = vec![
        ("tauL", tau_left_op(&suni)),
        ("strong", strong_rewrite_op(&bisims)),
    ];
    if needs_concat {
        let c = concat_op(&bisims)
            .map_err(|e| SessionError::Closure("concat".into(), e.to_string()))?;
        bounded.push(("concat", c.clone()));
        bounded.push(("prefix", c));
    }
    for (name, op) in bounded {
        let passed = gupaco_holds_for(
            &suni,
            &f,
            &bclo,
            &op,
            REGISTRATION_SAMPLES,
            REGISTRATION_SEED,
        );
        if !passed {
            return Err(SessionError::RegistrationFailed(name.into()));
        }
        registry.insert(ClosureEntry {
            name: name.into(),
            op: op.with_sampled_witness(REGISTRATION_SEED, REGISTRATION_SAMPLES),
            context: ContextTag::Anywhere,
            justification: Justification {
                kind: JustificationKind::BuiltinLemma,
                seed: REGISTRATION_SEED,
                samples: REGISTRATION_SAMPLES,
                passed: true,
            },
        });
    }

    // Undirected rewriting is registered but only admissible in positions
    // guarded by a visible event.
    registry.insert(ClosureEntry {
        name: "U".into(),
        op: {
            let b = Arc::clone(&bisims);
            MonotoneOp::new("U", move |r: &Rel| b.undirected(r))
        },
        context: ContextTag::BetaOnly,
        justification: Justification {
            kind: JustificationKind::BuiltinLemma,
            seed: REGISTRATION_SEED,
            samples: 0,
            passed: true,
        },
    });

    Ok(Session {
        suni,
        bisims,
        engine,
        f,
        bclo,
        registry,
    })
}

impl Session {
    pub fn universe(&self) -> &Arc<StreamUniverse> {
        &self.suni
    }

    pub fn bisims(&self) -> &Arc<Bisims> {
        &self.bisims
    }

    pub fn engine(&self) -> &Arc<EuttgEngine> {
        &self.engine
    }

    pub fn registry(&self) -> &ClosureRegistry {
        &self.registry
    }

    pub fn state_of(&self, e: &StreamExpr) -> Result<usize, SessionError> {
        self.suni
            .state_of(e)
            .ok_or_else(|| SessionError::UnknownState(e.to_string()))
    }

    pub fn rel_of_pairs(&self, pairs: &[(StreamExpr, StreamExpr)]) -> Result<Rel, SessionError> {
        let mut rel = Rel::empty(self.suni.carrier());
        for (a, b) in pairs {
            rel.insert(self.state_of(a)?, self.state_of(b)?);
        }
        Ok(rel)
    }

    fn pair_names(&self, pair: (usize, usize)) -> (String, String) {
        (
            self.suni.name(pair.0).to_string(),
            self.suni.name(pair.1).to_string(),
        )
    }
}

// ---------------------------------------------------------------------------
// Goals and proof state
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum GoalKind {
    /// `subject <= eutt`: the initial judgment of a session theorem.
    Theorem,
    /// `subject <= gpaco(f, D, r, g)`.
    Gpaco { r: Rel, g: Rel },
    /// `subject <= f(gpaco(f, D, r, g))`: the functor has been stepped
    /// through and the five introduction rules apply.
    Functor { r: Rel, g: Rel },
    /// `subject <= euttG(k)`.
    Euttg { k: Knowledge },
}

#[derive(Clone, Debug)]
pub struct Goal {
    pub subject: Rel,
    pub kind: GoalKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub index: usize,
    pub rule: String,
    pub outcome: String,
}

#[derive(Clone, Debug)]
struct DischargeSite {
    goal: Goal,
    via: String,
}

/// Proof state: a goal stack, named relation bindings, and a replayable
/// trace. Names are bound once.
#[derive(Clone)]
pub struct ProofState {
    goals: Vec<Goal>,
    bindings: BTreeMap<String, Rel>,
    trace: Vec<TraceEntry>,
    discharges: Vec<DischargeSite>,
    theorem: Rel,
}

impl ProofState {
    pub fn goals(&self) -> &[Goal] {
        &self.goals
    }

    pub fn complete(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn binding(&self, name: &str) -> Option<&Rel> {
        self.bindings.get(name)
    }

    /// Binds a named pair set; names are bound once.
    pub fn bind(&mut self, name: &str, rel: Rel) -> Result<(), RuleError> {
        if self.bindings.contains_key(name) {
            return Err(RuleError::NameBound(name.to_string()));
        }
        self.bindings.insert(name.to_string(), rel);
        Ok(())
    }
}

impl Session {
    /// Opens a proof of `pairs <= eutt` for the given theorem pairs.
    pub fn new_proof(
        &self,
        pairs: &[(StreamExpr, StreamExpr)],
    ) -> Result<ProofState, SessionError> {
        let theorem = self.rel_of_pairs(pairs)?;
        Ok(ProofState {
            goals: vec![Goal {
                subject: theorem.clone(),
                kind: GoalKind::Theorem,
            }],
            bindings: BTreeMap::new(),
            trace: Vec::new(),
            discharges: Vec::new(),
            theorem,
        })
    }
}

// ---------------------------------------------------------------------------
// Rules
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Rule {
    Init(Lane),
    Final,
    Base,
    Acc(String),
    Step,
    TauStep,
    BetaStep,
    Ret,
    TauLeft,
    TauRight,
    Vis,
    Closure { name: String, targets: Option<Rel> },
    TransD { targets: Rel },
    TransU { targets: Rel },
    ConcatC { targets: Option<Rel> },
    Split(Vec<String>),
    Done,
}

impl Rule {
    pub fn name(&self) -> String {
        match self {
            Rule::Init(Lane::Gpaco) => "init".into(),
            Rule::Init(Lane::Euttg) => "init euttg".into(),
            Rule::Final => "final".into(),
            Rule::Base => "base".into(),
            Rule::Acc(n) => format!("acc {n}"),
            Rule::Step => "step".into(),
            Rule::TauStep => "tau_step".into(),
            Rule::BetaStep => "beta_step".into(),
            Rule::Ret => "ret".into(),
            Rule::TauLeft => "tau_left".into(),
            Rule::TauRight => "tau_right".into(),
            Rule::Vis => "vis".into(),
            Rule::Closure { name, .. } => format!("closure {name}"),
            Rule::TransD { .. } => "transD".into(),
            Rule::TransU { .. } => "transU".into(),
            Rule::ConcatC { .. } => "concatC".into(),
            Rule::Split(names) => format!("split {}", names.join(" ")),
            Rule::Done => "done".into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("no goal is pending")]
    NoGoal,
    #[error("rule `{rule}` does not apply: {reason}")]
    NotApplicable { rule: String, reason: String },
    #[error("side condition of `{rule}` fails at pair ({}, {}): {detail}", witness.0, witness.1)]
    SideCondition {
        rule: String,
        witness: (String, String),
        detail: String,
    },
    #[error("unknown closure `{0}`")]
    UnknownClosure(String),
    #[error(
        "the companion closure is not a proof rule: closing goals under the greatest \
         compatible closure is inconsistent with the knowledge-overwriting rules \
         (run `companion-check` for the machine-checked demonstration)"
    )]
    CompanionRule,
    #[error("closure `{0}` is context-restricted to positions guarded by a visible event and cannot be applied to this goal")]
    ContextTag(String),
    #[error("closure `{0}` carries no passing justification")]
    Unjustified(String),
    #[error("unknown binding `{0}`")]
    UnknownBinding(String),
    #[error("name `{0}` is already bound")]
    NameBound(String),
}

enum Outcome {
    Replaced(Vec<Goal>),
    Discharged,
}

impl Session {
    /// Applies one rule to the top goal, checking every side condition by
    /// finite computation. On success the trace is extended; on error the
    /// state is unchanged.
    pub fn apply(&self, state: &mut ProofState, rule: &Rule) -> Result<(), RuleError> {
        let goal = state.goals.last().cloned().ok_or(RuleError::NoGoal)?;
        let outcome = self.apply_to(state, &goal, rule)?;
        let outcome_str = match &outcome {
            Outcome::Replaced(goals) => match goals.len() {
                0 => "ok".to_string(),
                1 => format!("ok ({} pairs pending)", goals[0].subject.count()),
                n => format!("ok ({n} goals)"),
            },
            Outcome::Discharged => "discharged".to_string(),
        };
        state.goals.pop();
        match outcome {
            Outcome::Replaced(goals) => {
                // first listed part ends up on top of the stack
                for g in goals.into_iter().rev() {
                    state.goals.push(g);
                }
            }
            Outcome::Discharged => {
                state.discharges.push(DischargeSite {
                    goal,
                    via: rule.name(),
                });
            }
        }
        state.trace.push(TraceEntry {
            index: state.trace.len(),
            rule: rule.name(),
            outcome: outcome_str,
        });
        Ok(())
    }

    fn apply_to(
        &self,
        state: &mut ProofState,
        goal: &Goal,
        rule: &Rule,
    ) -> Result<Outcome, RuleError> {
        let nope = |reason: &str| RuleError::NotApplicable {
            rule: rule.name(),
            reason: reason.to_string(),
        };
        match (&goal.kind, rule) {
            (GoalKind::Theorem, Rule::Init(Lane::Gpaco)) => {
                let d = self.registry.get("D").expect("base closure registered");
                if !d.justification.passed {
                    return Err(RuleError::Unjustified("D".into()));
                }
                let bot = Rel::empty(self.suni.carrier());
                Ok(Outcome::Replaced(vec![Goal {
                    subject: goal.subject.clone(),
                    kind: GoalKind::Gpaco {
                        r: bot.clone(),
                        g: bot,
                    },
                }]))
            }
            (GoalKind::Theorem, Rule::Init(Lane::Euttg)) => Ok(Outcome::Replaced(vec![Goal {
                subject: goal.subject.clone(),
                kind: GoalKind::Euttg {
                    k: Knowledge::bottom(&self.bisims),
                },
            }])),
            (_, Rule::Init(_)) => Err(nope("init opens a proof and applies to the theorem goal")),

            (GoalKind::Gpaco { r, g }, Rule::Acc(name)) => {
                state.bind(name, goal.subject.clone())?;
                Ok(Outcome::Replaced(vec![Goal {
                    subject: goal.subject.clone(),
                    kind: GoalKind::Gpaco {
                        r: r.clone(),
                        g: g.join(&goal.subject),
                    },
                }]))
            }
            (GoalKind::Euttg { k }, Rule::Acc(name)) => {
                state.bind(name, goal.subject.clone())?;
                let k2 = k.accumulate(&goal.subject);
                debug_assert!(k2.validate().is_ok());
                Ok(Outcome::Replaced(vec![Goal {
                    subject: goal.subject.clone(),
                    kind: GoalKind::Euttg { k: k2 },
                }]))
            }

            (GoalKind::Gpaco { r, .. }, Rule::Base) => {
                self.require_subset(rule, &goal.subject, r, "the available knowledge")?;
                Ok(Outcome::Discharged)
            }
            (GoalKind::Euttg { k }, Rule::Base) => {
                let unlocked = k.r_beta.join(&k.r_tau);
                self.require_subset(rule, &goal.subject, &unlocked, "the unlocked knowledge")?;
                Ok(Outcome::Discharged)
            }

            (GoalKind::Gpaco { r, g }, Rule::Final) => {
                let fallback = r.join(&paco(&self.f, g));
                self.require_subset(rule, &goal.subject, &fallback, "r | paco(f, g)")?;
                Ok(Outcome::Discharged)
            }
            (GoalKind::Euttg { .. }, Rule::Final) | (GoalKind::Theorem, Rule::Final) => {
                self.require_subset(rule, &goal.subject, self.bisims.eutt(), "weak bisimilarity")?;
                Ok(Outcome::Discharged)
            }

            (GoalKind::Gpaco { r: _, g }, Rule::Step) => Ok(Outcome::Replaced(vec![Goal {
                subject: goal.subject.clone(),
                kind: GoalKind::Functor {
                    r: g.clone(),
                    g: g.clone(),
                },
            }])),

            (GoalKind::Functor { .. }, Rule::Ret) | (GoalKind::Euttg { .. }, Rule::Ret) => {
                self.require_heads(rule, &goal.subject, |h| matches!(h, (Head::Eps, Head::Eps)))?;
                Ok(Outcome::Discharged)
            }

            (GoalKind::Functor { r, g }, Rule::Vis) => {
                let tails = self.matched_tails(rule, &goal.subject, true)?;
                Ok(Outcome::Replaced(vec![Goal {
                    subject: tails,
                    kind: GoalKind::Gpaco {
                        r: r.clone(),
                        g: g.clone(),
                    },
                }]))
            }
            (GoalKind::Functor { r, g }, Rule::TauStep) => {
                let tails = self.matched_tails(rule, &goal.subject, false)?;
                Ok(Outcome::Replaced(vec![Goal {
                    subject: tails,
                    kind: GoalKind::Gpaco {
                        r: r.clone(),
                        g: g.clone(),
                    },
                }]))
            }
            (GoalKind::Functor { .. }, Rule::TauLeft) => {
                let stripped = self.strip(rule, &goal.subject, true)?;
                Ok(Outcome::Replaced(vec![Goal {
                    subject: stripped,
                    kind: goal.kind.clone(),
                }]))
            }
            (GoalKind::Functor { .. }, Rule::TauRight) => {
                let stripped = self.strip(rule, &goal.subject, false)?;
                Ok(Outcome::Replaced(vec![Goal {
                    subject: stripped,
                    kind: goal.kind.clone(),
                }]))
            }

            (GoalKind::Euttg { k }, Rule::TauStep) => {
                let tails = self.matched_tails(rule, &goal.subject, false)?;
                let k2 = Knowledge::new(
                    k.r_beta.clone(),
                    k.g_tau.clone(),
                    k.g_beta.clone(),
                    k.g_tau.clone(),
                );
                debug_assert!(k2.validate().is_ok());
                Ok(Outcome::Replaced(vec![Goal {
                    subject: tails,
                    kind: GoalKind::Euttg { k: k2 },
                }]))
            }
            (GoalKind::Euttg { k }, Rule::BetaStep) => {
                let tails = self.matched_tails(rule, &goal.subject, true)?;
                let k2 = Knowledge::new(
                    k.g_beta.clone(),
                    k.g_beta.clone(),
                    k.g_beta.clone(),
                    k.g_beta.clone(),
                );
                Ok(Outcome::Replaced(vec![Goal {
                    subject: tails,
                    kind: GoalKind::Euttg { k: k2 },
                }]))
            }

            (GoalKind::Gpaco { .. }, Rule::Closure { name, targets }) => {
                let entry = self.lookup_closure(name)?;
                if entry.context == ContextTag::BetaOnly {
                    return Err(RuleError::ContextTag(name.clone()));
                }
                if !entry.justification.passed {
                    return Err(RuleError::Unjustified(name.clone()));
                }
                let new_subject = self.unapply_closure(rule, entry, &goal.subject, targets)?;
                Ok(Outcome::Replaced(vec![Goal {
                    subject: new_subject,
                    kind: goal.kind.clone(),
                }]))
            }
            (GoalKind::Euttg { k }, Rule::Closure { name, targets }) => {
                let entry = self.lookup_closure(name)?;
                if !entry.justification.passed {
                    return Err(RuleError::Unjustified(name.clone()));
                }
                if entry.context == ContextTag::BetaOnly {
                    // admissible here only through the knowledge overwrite
                    let targets = targets
                        .clone()
                        .ok_or_else(|| nope("undirected rewriting needs explicit target pairs"))?;
                    return self.apply_to(state, goal, &Rule::TransU { targets });
                }
                let new_subject = self.unapply_closure(rule, entry, &goal.subject, targets)?;
                Ok(Outcome::Replaced(vec![Goal {
                    subject: new_subject,
                    kind: GoalKind::Euttg { k: k.clone() },
                }]))
            }

            (GoalKind::Euttg { k }, Rule::TransD { targets }) => {
                let rewritten = self.bisims.directed(targets);
                self.require_subset(
                    rule,
                    &goal.subject,
                    &rewritten,
                    "the directed rewrite of the targets",
                )?;
                Ok(Outcome::Replaced(vec![Goal {
                    subject: targets.clone(),
                    kind: GoalKind::Euttg { k: k.clone() },
                }]))
            }
            (GoalKind::Euttg { k }, Rule::TransU { targets }) => {
                let rewritten = self.bisims.undirected(targets);
                self.require_subset(
                    rule,
                    &goal.subject,
                    &rewritten,
                    "the undirected rewrite of the targets",
                )?;
                let k2 = Knowledge::new(
                    k.r_beta.clone(),
                    k.r_beta.clone(),
                    k.g_beta.clone(),
                    k.r_beta.clone(),
                );
                debug_assert!(k2.validate().is_ok());
                Ok(Outcome::Replaced(vec![Goal {
                    subject: targets.clone(),
                    kind: GoalKind::Euttg { k: k2 },
                }]))
            }
            (GoalKind::Euttg { k }, Rule::ConcatC { targets }) => {
                let targets = match targets {
                    Some(t) => {
                        let closed =
                            clo_concat(&self.bisims, t).map_err(|e| RuleError::NotApplicable {
                                rule: rule.name(),
                                reason: e.to_string(),
                            })?;
                        self.require_subset(
                            rule,
                            &goal.subject,
                            &closed,
                            "the concat closure of the targets",
                        )?;
                        t.clone()
                    }
                    None => self.auto_decompose(rule, &goal.subject)?,
                };
                Ok(Outcome::Replaced(vec![Goal {
                    subject: targets,
                    kind: GoalKind::Euttg { k: k.clone() },
                }]))
            }

            (_, Rule::Split(names)) => {
                let mut parts = Vec::with_capacity(names.len());
                let mut union = Rel::empty(self.suni.carrier());
                for n in names {
                    let part = state
                        .bindings
                        .get(n)
                        .ok_or_else(|| RuleError::UnknownBinding(n.clone()))?;
                    union.join_in_place(part);
                    parts.push(part.clone());
                }
                if let Some(w) = goal.subject.first_pair_not_in(&union) {
                    return Err(RuleError::SideCondition {
                        rule: rule.name(),
                        witness: self.pair_names(w),
                        detail: "the parts do not cover the subject".into(),
                    });
                }
                Ok(Outcome::Replaced(
                    parts
                        .into_iter()
                        .map(|subject| Goal {
                            subject,
                            kind: goal.kind.clone(),
                        })
                        .collect(),
                ))
            }

            (_, Rule::Done) => {
                let semantic = self.semantic_value(goal);
                self.require_subset(
                    rule,
                    &goal.subject,
                    &semantic,
                    "the goal relation, computed directly",
                )?;
                Ok(Outcome::Discharged)
            }

            _ => Err(nope("rule does not match the goal form")),
        }
    }

    fn lookup_closure(&self, name: &str) -> Result<&ClosureEntry, RuleError> {
        if name == "companion" || name == "cpn" {
            return Err(RuleError::CompanionRule);
        }
        self.registry
            .get(name)
            .ok_or_else(|| RuleError::UnknownClosure(name.to_string()))
    }

    /// Backward application of an up-to closure: the subject must be covered
    /// by the closure applied to the target pairs, which become the new
    /// subject. Stripping one internal step on the left is the one closure
    /// with a canonical argument-free form.
    fn unapply_closure(
        &self,
        rule: &Rule,
        entry: &ClosureEntry,
        subject: &Rel,
        targets: &Option<Rel>,
    ) -> Result<Rel, RuleError> {
        match targets {
            Some(t) => {
                let closed = entry.op.apply(t);
                self.require_subset(rule, subject, &closed, "the closure of the targets")?;
                Ok(t.clone())
            }
            None if entry.name == "tauL" => self.strip(rule, subject, true),
            None => Err(RuleError::NotApplicable {
                rule: rule.name(),
                reason: format!("closure {} requires explicit target pairs", entry.name),
            }),
        }
    }

    /// Deterministic decomposition for the argument-free concat rule: for
    /// each pair, the first split (non-trivial splits first) whose heads are
    /// weakly bisimilar contributes its tails.
    fn auto_decompose(&self, rule: &Rule, subject: &Rel) -> Result<Rel, RuleError> {
        if !self.suni.is_concat_closed() {
            return Err(RuleError::NotApplicable {
                rule: rule.name(),
                reason: "the session universe is not concat-closed".into(),
            });
        }
        let eutt = self.bisims.eutt();
        let mut out = Rel::empty(self.suni.carrier());
        'pairs: for (u1, u2) in subject.iter_pairs() {
            // the terminated-stream split is stored first; prefer real ones
            let order = |d: &[(usize, usize)]| -> Vec<(usize, usize)> {
                d.iter().skip(1).chain(d.iter().take(1)).copied().collect()
            };
            let d1 = order(self.suni.decompositions(u1));
            let d2 = order(self.suni.decompositions(u2));
            for (i, &(h1, t1)) in d1.iter().enumerate() {
                for (j, &(h2, t2)) in d2.iter().enumerate() {
                    if i == d1.len() - 1 && j == d2.len() - 1 {
                        continue; // both trivial: no progress
                    }
                    if eutt.get(h1, h2) {
                        out.insert(t1, t2);
                        continue 'pairs;
                    }
                }
            }
            return Err(RuleError::SideCondition {
                rule: rule.name(),
                witness: self.pair_names((u1, u2)),
                detail: "no split with weakly bisimilar heads".into(),
            });
        }
        Ok(out)
    }

    fn require_subset(
        &self,
        rule: &Rule,
        subject: &Rel,
        bound: &Rel,
        what: &str,
    ) -> Result<(), RuleError> {
        if let Some(w) = subject.first_pair_not_in(bound) {
            return Err(RuleError::SideCondition {
                rule: rule.name(),
                witness: self.pair_names(w),
                detail: format!("not contained in {what}"),
            });
        }
        Ok(())
    }

    fn require_heads(
        &self,
        rule: &Rule,
        subject: &Rel,
        ok: impl Fn((Head, Head)) -> bool,
    ) -> Result<(), RuleError> {
        for (s, t) in subject.iter_pairs() {
            if !ok((self.suni.head(s), self.suni.head(t))) {
                return Err(RuleError::SideCondition {
                    rule: rule.name(),
                    witness: self.pair_names((s, t)),
                    detail: "head observation does not match the rule".into(),
                });
            }
        }
        Ok(())
    }

    /// Tails of constructor-matched pairs: visible events must carry equal
    /// labels; internal steps just match.
    fn matched_tails(&self, rule: &Rule, subject: &Rel, visible: bool) -> Result<Rel, RuleError> {
        let mut out = Rel::empty(self.suni.carrier());
        for (s, t) in subject.iter_pairs() {
            match (self.suni.head(s), self.suni.head(t), visible) {
                (Head::Vis(a, s1), Head::Vis(b, t1), true) if a == b => out.insert(s1, t1),
                (Head::Tau(s1), Head::Tau(t1), false) => out.insert(s1, t1),
                _ => {
                    return Err(RuleError::SideCondition {
                        rule: rule.name(),
                        witness: self.pair_names((s, t)),
                        detail: if visible {
                            "both sides must emit the same visible event".into()
                        } else {
                            "both sides must take an internal step".into()
                        },
                    })
                }
            }
        }
        Ok(out)
    }

    fn strip(&self, rule: &Rule, subject: &Rel, left: bool) -> Result<Rel, RuleError> {
        let mut out = Rel::empty(self.suni.carrier());
        for (s, t) in subject.iter_pairs() {
            let head = if left {
                self.suni.head(s)
            } else {
                self.suni.head(t)
            };
            match head {
                Head::Tau(next) => {
                    if left {
                        out.insert(next, t)
                    } else {
                        out.insert(s, next)
                    }
                }
                _ => {
                    return Err(RuleError::SideCondition {
                        rule: rule.name(),
                        witness: self.pair_names((s, t)),
                        detail: "no internal step to strip".into(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Direct semantic evaluation of a goal's right-hand side.
    fn semantic_value(&self, goal: &Goal) -> Rel {
        match &goal.kind {
            GoalKind::Theorem => self.bisims.eutt().clone(),
            GoalKind::Gpaco { r, g } => gpaco(&self.f, &self.bclo, r, g),
            GoalKind::Functor { r, g } => self.f.apply(&gpaco(&self.f, &self.bclo, r, g)),
            GoalKind::Euttg { k } => self.engine.euttg(k),
        }
    }
}

// ---------------------------------------------------------------------------
// Audit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub discharges_checked: usize,
    pub theorem_pairs: Vec<(String, String)>,
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("proof is not complete: {0} goals pending")]
    Incomplete(usize),
    #[error("audit mismatch at a `{via}` discharge: pair ({}, {}) is not in the recomputed relation", witness.0, witness.1)]
    DischargeMismatch {
        via: String,
        witness: (String, String),
    },
    #[error("audit mismatch: theorem pair ({}, {}) is not weakly bisimilar", .0.0, .0.1)]
    TheoremMismatch((String, String)),
}

impl Session {
    /// Re-verifies a completed proof against the semantic engine: every
    /// discharge site is recomputed by direct fixpoint evaluation, and the
    /// theorem is compared with the directly computed weak bisimilarity. A
    /// mismatch is a kernel soundness defect.
    pub fn audit(&self, state: &ProofState) -> Result<AuditReport, AuditError> {
        if !state.complete() {
            return Err(AuditError::Incomplete(state.goals.len()));
        }
        for site in &state.discharges {
            let semantic = self.semantic_value(&site.goal);
            if let Some(w) = site.goal.subject.first_pair_not_in(&semantic) {
                return Err(AuditError::DischargeMismatch {
                    via: site.via.clone(),
                    witness: self.pair_names(w),
                });
            }
        }
        let mut theorem_pairs = Vec::new();
        for (s, t) in state.theorem.iter_pairs() {
            if !self.bisims.eutt().get(s, t) {
                return Err(AuditError::TheoremMismatch(self.pair_names((s, t))));
            }
            theorem_pairs.push(self.pair_names((s, t)));
        }
        Ok(AuditReport {
            discharges_checked: state.discharges.len(),
            theorem_pairs,
        })
    }

    /// Test-only hook: records a discharge without checking anything, so the
    /// audit's ability to catch an unsound kernel step can itself be tested.
    #[doc(hidden)]
    pub fn force_discharge_unchecked(&self, state: &mut ProofState, via: &str) {
        if let Some(goal) = state.goals.pop() {
            state.discharges.push(DischargeSite {
                goal,
                via: via.to_string(),
            });
        }
    }
}
