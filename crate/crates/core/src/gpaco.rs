//! Parameterized coinduction and its generalization with a base closure.
//!
//! `paco f r = gfp (y -> f(r | y))` carries the knowledge `r` accumulated
//! during a proof. The generalized form tracks *available* knowledge `r` and
//! *guarded* knowledge `g` separately and bakes an upper bound for up-to
//! closures into the construction:
//!
//! ```text
//! gpaco f bclo r g = bclo*( r | paco (f . bclo*) (r | g) )
//! gupaco f bclo g  = gpaco f bclo g g
//! ```
//!
//! On a finite lattice every one of these values is computed exactly, so the
//! proof rules they satisfy can be machine-verified on sampled instances;
//! see [`verify_gpaco_laws`].

use std::collections::HashSet;
use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lattice::{closure_star, gfp, sample_rels, star_op, MonotoneOp, Rel, Universe};

/// Parameterized greatest fixed point: `gfp (y -> f(r | y))`.
pub fn paco(f: &MonotoneOp, r: &Rel) -> Rel {
    let uni = Arc::clone(r.universe());
    let f = f.clone();
    let r = r.clone();
    let op = MonotoneOp::new(format!("paco-step[{}]", f.name()), move |y: &Rel| {
        f.apply(&r.join(y))
    });
    gfp(&uni, &op)
}

/// Generalized parameterized greatest fixed point with base closure.
pub fn gpaco(f: &MonotoneOp, bclo: &MonotoneOp, r: &Rel, g: &Rel) -> Rel {
    let guarded = f.compose(&star_op(bclo));
    let inner = paco(&guarded, &r.join(g));
    closure_star(bclo, &r.join(&inner))
}

/// `gupaco f bclo g = gpaco f bclo g g`.
pub fn gupaco(f: &MonotoneOp, bclo: &MonotoneOp, g: &Rel) -> Rel {
    gpaco(f, bclo, g, g)
}

/// First sampled counterexample to weak compatibility of `bclo` for `f`,
/// i.e. to `bclo . f <= f . gupaco f bclo`.
pub(crate) fn weak_compat_counterexample(
    f: &MonotoneOp,
    bclo: &MonotoneOp,
    xs: &[Rel],
) -> Option<(Rel, (usize, usize))> {
    for x in xs {
        let lhs = bclo.apply(&f.apply(x));
        let rhs = f.apply(&gupaco(f, bclo, x));
        if let Some(pair) = lhs.first_pair_not_in(&rhs) {
            return Some((x.clone(), pair));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Companion via the tower construction
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("companion tower budget of {budget} elements exceeded")]
pub struct TowerBudgetExceeded {
    pub budget: usize,
}

pub const DEFAULT_TOWER_BUDGET: usize = 10_000;

/// The saturated tower of `f`: the least family of relations containing top
/// and closed under `f`-application and binary meet. The companion of `f`
/// maps `x` to the least tower element above `x`.
pub struct Tower {
    uni: Arc<Universe>,
    elements: Vec<Rel>,
}

impl Tower {
    pub fn size(&self) -> usize {
        self.elements.len()
    }

    /// Least tower element above `x` (the meet of all elements above `x`;
    /// top is always above, so the meet is never empty).
    pub fn least_above(&self, x: &Rel) -> Rel {
        let mut acc = Rel::full(&self.uni);
        for e in &self.elements {
            if x.leq(e) {
                acc = acc.meet(e);
            }
        }
        acc
    }

    /// The companion as a monotone operator, for use as a base closure.
    pub fn as_op(self: &Arc<Self>) -> MonotoneOp {
        let tower = Arc::clone(self);
        MonotoneOp::new("cpn", move |x: &Rel| tower.least_above(x))
    }
}

/// Saturates the tower of `f` with deduplication, stopping with an error if
/// the budget is exceeded (no partial answer is returned).
pub fn companion_tower(
    uni: &Arc<Universe>,
    f: &MonotoneOp,
    budget: usize,
) -> Result<Tower, TowerBudgetExceeded> {
    let mut elements = vec![Rel::full(uni)];
    let mut seen: HashSet<Rel> = elements.iter().cloned().collect();
    let mut i = 0;
    while i < elements.len() {
        let current = elements[i].clone();
        let mut candidates = vec![f.apply(&current)];
        for other in elements.iter().take(i) {
            candidates.push(current.meet(other));
        }
        for c in candidates {
            if seen.insert(c.clone()) {
                if elements.len() >= budget {
                    return Err(TowerBudgetExceeded { budget });
                }
                elements.push(c);
            }
        }
        i += 1;
    }
    Ok(Tower {
        uni: Arc::clone(uni),
        elements,
    })
}

/// Companion of `f` applied to `x`, computed through the tower oracle.
pub fn companion(
    uni: &Arc<Universe>,
    f: &MonotoneOp,
    x: &Rel,
    budget: usize,
) -> Result<Rel, TowerBudgetExceeded> {
    Ok(companion_tower(uni, f, budget)?.least_above(x))
}

/// Outcome of the optional check that instantiating the base closure with
/// the companion collapses the construction to
/// `cpn(r | f(cpn(r | g)))`. Budget exhaustion is reported distinctly from
/// inequality.
#[derive(Debug)]
pub enum CompanionEquationOutcome {
    Holds { samples: usize, tower_size: usize },
    Fails { witness_r: Rel, witness_g: Rel },
    BudgetExceeded(TowerBudgetExceeded),
}

pub fn check_companion_gpaco_equation(
    uni: &Arc<Universe>,
    f: &MonotoneOp,
    budget: usize,
    samples: usize,
    seed: u64,
) -> CompanionEquationOutcome {
    let tower = match companion_tower(uni, f, budget) {
        Ok(t) => Arc::new(t),
        Err(e) => return CompanionEquationOutcome::BudgetExceeded(e),
    };
    let cpn = tower.as_op();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rels = sample_rels(uni, samples, &mut rng);
    let mut checked = 0;
    for r in &rels {
        for g in rels.iter().rev() {
            let lhs = gpaco(f, &cpn, r, g);
            let rhs = cpn.apply(&r.join(&f.apply(&cpn.apply(&r.join(g)))));
            if lhs != rhs {
                return CompanionEquationOutcome::Fails {
                    witness_r: r.clone(),
                    witness_g: g.clone(),
                };
            }
            checked += 1;
            if checked >= samples {
                return CompanionEquationOutcome::Holds {
                    samples: checked,
                    tower_size: tower.size(),
                };
            }
        }
    }
    CompanionEquationOutcome::Holds {
        samples: checked,
        tower_size: tower.size(),
    }
}

// ---------------------------------------------------------------------------
// Law verification fuzzer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LawStatus {
    Pass,
    Fail {
        witness: String,
    },
    /// The law's premise was refuted (on registration samples or on
    /// escalation), so its conclusion is not claimed.
    Skipped {
        reason: String,
    },
}

#[derive(Debug, Clone)]
pub struct LawOutcome {
    pub law: String,
    pub status: LawStatus,
    /// Number of sampled instances this law was evaluated on.
    pub instances: usize,
}

#[derive(Debug, Clone, Default)]
pub struct LawReport {
    pub outcomes: Vec<LawOutcome>,
    /// Total sampled (f, bclo, r, g, x) instances evaluated across laws.
    pub instances: usize,
}

impl LawReport {
    pub fn failures(&self) -> Vec<&LawOutcome> {
        self.outcomes
            .iter()
            .filter(|o| matches!(o.status, LawStatus::Fail { .. }))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    fn push(&mut self, law: &str, status: LawStatus, instances: usize) {
        self.instances += instances;
        self.outcomes.push(LawOutcome {
            law: law.to_string(),
            status,
            instances,
        });
    }
}

/// A registered up-to closure the fuzzer may feed to the Closure rule.
pub struct RegisteredClo {
    pub name: String,
    pub op: MonotoneOp,
}

pub struct LawConfig {
    pub f: MonotoneOp,
    pub bclo: MonotoneOp,
    /// Base closures proved weakly compatible hold unconditionally: an Init
    /// failure is then a hard error instead of a gated skip.
    pub bclo_certified_weakly_compatible: bool,
    pub closures: Vec<RegisteredClo>,
    pub rel_samples: usize,
    pub seed: u64,
}

fn names(uni: &Universe, pair: (usize, usize)) -> String {
    format!("({}, {})", uni.name(pair.0), uni.name(pair.1))
}

/// Verifies the parameterized-coinduction rule set on sampled relations:
/// the paco laws (Init, Unfold, Acc in both directions) and the generalized
/// rules (Base, Final, Step, Acc both directions, Closure*, Closure for each
/// registered closure, and Init gated on weak compatibility).
pub fn verify_gpaco_laws(uni: &Arc<Universe>, cfg: &LawConfig) -> LawReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rels = sample_rels(uni, cfg.rel_samples.max(4), &mut rng);
    let f = &cfg.f;
    let bclo = &cfg.bclo;
    let mut report = LawReport::default();

    let gfp_f = gfp(uni, f);

    // paco Init
    let status = if paco(f, &Rel::empty(uni)) == gfp_f {
        LawStatus::Pass
    } else {
        LawStatus::Fail {
            witness: "paco(f, bottom) differs from gfp(f)".into(),
        }
    };
    report.push("paco-init", status, 1);

    // paco Unfold on sampled knowledge
    let mut status = LawStatus::Pass;
    for r in &rels {
        let p = paco(f, r);
        if p != f.apply(&r.join(&p)) {
            status = LawStatus::Fail {
                witness: format!("unfold breaks at r = {r:?}"),
            };
            break;
        }
    }
    report.push("paco-unfold", status, rels.len());

    // paco Acc, both directions, on refined witnesses
    let mut status = LawStatus::Pass;
    for (y0, r) in rels.iter().zip(rels.iter().rev()) {
        // backward: y <= paco(f, r) implies y <= paco(f, r | y)
        let y = y0.meet(&paco(f, r));
        if !y.leq(&paco(f, &r.join(&y))) {
            status = LawStatus::Fail {
                witness: format!("acc <= direction at r = {r:?}"),
            };
            break;
        }
        // forward: refine y0 to a witness of y <= paco(f, r | y)
        let mut y = y0.clone();
        loop {
            let next = y.meet(&paco(f, &r.join(&y)));
            if next == y {
                break;
            }
            y = next;
        }
        if !y.leq(&paco(f, r)) {
            status = LawStatus::Fail {
                witness: format!("acc => direction at r = {r:?}, y = {y:?}"),
            };
            break;
        }
    }
    report.push("paco-acc", status, rels.len());

    let pairs: Vec<(&Rel, &Rel)> = rels.iter().zip(rels.iter().rev()).collect();

    // Base
    let mut status = LawStatus::Pass;
    for (r, g) in &pairs {
        let gp = gpaco(f, bclo, r, g);
        if let Some(w) = r.first_pair_not_in(&gp) {
            status = LawStatus::Fail {
                witness: names(uni, w),
            };
            break;
        }
    }
    report.push("gpaco-base", status, pairs.len());

    // Final
    let mut status = LawStatus::Pass;
    for (r, g) in &pairs {
        let lhs = r.join(&paco(f, g));
        if let Some(w) = lhs.first_pair_not_in(&gpaco(f, bclo, r, g)) {
            status = LawStatus::Fail {
                witness: names(uni, w),
            };
            break;
        }
    }
    report.push("gpaco-final", status, pairs.len());

    // Step
    let mut status = LawStatus::Pass;
    for (r, g) in &pairs {
        let lhs = f.apply(&gpaco(f, bclo, g, g));
        if let Some(w) = lhs.first_pair_not_in(&gpaco(f, bclo, r, g)) {
            status = LawStatus::Fail {
                witness: names(uni, w),
            };
            break;
        }
    }
    report.push("gpaco-step", status, pairs.len());

    // Acc, both directions
    let mut status = LawStatus::Pass;
    for ((r, g), x0) in pairs.iter().zip(rels.iter()) {
        let x = x0.meet(&gpaco(f, bclo, r, g));
        if !x.leq(&gpaco(f, bclo, r, &g.join(&x))) {
            status = LawStatus::Fail {
                witness: format!("acc <= direction at r = {r:?}"),
            };
            break;
        }
        let mut x = x0.clone();
        loop {
            let next = x.meet(&gpaco(f, bclo, r, &g.join(&x)));
            if next == x {
                break;
            }
            x = next;
        }
        if !x.leq(&gpaco(f, bclo, r, g)) {
            status = LawStatus::Fail {
                witness: format!("acc => direction at r = {r:?}, x = {x:?}"),
            };
            break;
        }
    }
    report.push("gpaco-acc", status, pairs.len());

    // Closure* (the base closure itself is always admissible)
    let mut status = LawStatus::Pass;
    for (r, g) in &pairs {
        let gp = gpaco(f, bclo, r, g);
        if let Some(w) = bclo.apply(&gp).first_pair_not_in(&gp) {
            status = LawStatus::Fail {
                witness: names(uni, w),
            };
            break;
        }
    }
    report.push("gpaco-closure-star", status, pairs.len());

    // Closure for each registered closure, gated on the sampled premise
    // clo <= gupaco f bclo
    for clo in &cfg.closures {
        let law = format!("gpaco-closure({})", clo.name);
        let premise_violated = |xs: &[Rel]| -> Option<Rel> {
            xs.iter()
                .find(|x| !clo.op.apply(x).leq(&gupaco(f, bclo, x)))
                .cloned()
        };
        if let Some(x) = premise_violated(&rels) {
            report.push(
                &law,
                LawStatus::Skipped {
                    reason: format!("premise clo <= gupaco refuted at x = {x:?}"),
                },
                rels.len(),
            );
            continue;
        }
        let mut status = LawStatus::Pass;
        for (r, g) in &pairs {
            let gp = gpaco(f, bclo, r, g);
            if let Some(w) = clo.op.apply(&gp).first_pair_not_in(&gp) {
                // The conclusion can only fail if the premise is false; the
                // sampling above just missed it. Escalate the premise search
                // before declaring a soundness failure.
                let mut esc_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
                let escalated = sample_rels(uni, rels.len() * 10, &mut esc_rng);
                if let Some(x) = premise_violated(&escalated) {
                    status = LawStatus::Skipped {
                        reason: format!("premise clo <= gupaco refuted on escalation at x = {x:?}"),
                    };
                } else {
                    status = LawStatus::Fail {
                        witness: names(uni, w),
                    };
                }
                break;
            }
        }
        report.push(&law, status, pairs.len());
    }

    // Init, gated on weak compatibility of the base closure
    let init_status = check_init_law(uni, f, bclo, &gfp_f, &rels, cfg);
    report.push("gpaco-init", init_status, rels.len());

    report
}

fn check_init_law(
    uni: &Arc<Universe>,
    f: &MonotoneOp,
    bclo: &MonotoneOp,
    gfp_f: &Rel,
    rels: &[Rel],
    cfg: &LawConfig,
) -> LawStatus {
    if !cfg.bclo_certified_weakly_compatible {
        if let Some((x, pair)) = weak_compat_counterexample(f, bclo, rels) {
            return LawStatus::Skipped {
                reason: format!(
                    "bclo not weakly compatible: {} escapes at x = {x:?}",
                    names(uni, pair)
                ),
            };
        }
    }
    let bot = Rel::empty(uni);
    let lhs = gpaco(f, bclo, &bot, &bot);
    if &lhs == gfp_f {
        return LawStatus::Pass;
    }
    let witness = lhs
        .first_pair_not_in(gfp_f)
        .or_else(|| gfp_f.first_pair_not_in(&lhs))
        .map(|w| names(uni, w))
        .unwrap_or_default();
    if cfg.bclo_certified_weakly_compatible {
        return LawStatus::Fail { witness };
    }
    // Init can only fail when the base closure is not weakly compatible;
    // search harder for the compatibility counterexample before reporting a
    // soundness failure. On tiny universes the search is exhaustive.
    let n = uni.size();
    let escalated: Vec<Rel> = if n * n <= 9 {
        let cells: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..n).map(move |t| (s, t))).collect();
        (0..(1u32 << cells.len()))
            .map(|mask| {
                let mut r = Rel::empty(uni);
                for (i, &(s, t)) in cells.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        r.insert(s, t);
                    }
                }
                r
            })
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1217);
        sample_rels(uni, rels.len() * 10, &mut rng)
    };
    if let Some((x, pair)) = weak_compat_counterexample(f, bclo, &escalated) {
        LawStatus::Skipped {
            reason: format!(
                "bclo not weakly compatible (found on escalation): {} escapes at x = {x:?}",
                names(uni, pair)
            ),
        }
    } else {
        LawStatus::Fail { witness }
    }
}

// ---------------------------------------------------------------------------
// Random operator generation for the fuzzer
// ---------------------------------------------------------------------------

pub mod opgen {
    //! Random monotone operators built from combinators over constants, the
    //! identity, bisimulation functors, pointwise join and meet, composition
    //! and pair relabelings. Join-preserving generators alone would never
    //! exercise meets, so meet nodes are included.

    use super::*;
    use crate::bisim::{bisimf_op, BisimFlags};
    use crate::streams::StreamUniverse;
    use rand::seq::SliceRandom;
    use rand::Rng;

    /// Relabels both components of every pair through a state permutation.
    pub fn relabel_op(perm: Vec<usize>) -> MonotoneOp {
        MonotoneOp::new("relabel", move |x: &Rel| {
            let mut out = Rel::empty(x.universe());
            for (s, t) in x.iter_pairs() {
                out.insert(perm[s], perm[t]);
            }
            out
        })
    }

    pub fn random_functor(
        suni: &Arc<StreamUniverse>,
        depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> MonotoneOp {
        let uni = suni.carrier();
        if depth == 0 {
            return match rng.gen_range(0..5) {
                0 => MonotoneOp::identity(),
                1 => MonotoneOp::constant("const", Rel::sample(uni, 0.3, rng)),
                2 => {
                    let mut perm: Vec<usize> = (0..uni.size()).collect();
                    perm.shuffle(rng);
                    relabel_op(perm)
                }
                _ => random_bisimf(suni, rng),
            };
        }
        match rng.gen_range(0..6) {
            0 => {
                let a = random_functor(suni, depth - 1, rng);
                let b = random_functor(suni, depth - 1, rng);
                MonotoneOp::join_of(&a, &b)
            }
            1 => {
                let a = random_functor(suni, depth - 1, rng);
                let b = random_functor(suni, depth - 1, rng);
                MonotoneOp::meet_of(&a, &b)
            }
            2 => {
                let a = random_functor(suni, depth - 1, rng);
                let b = random_functor(suni, depth - 1, rng);
                a.compose(&b)
            }
            _ => random_functor(suni, 0, rng),
        }
    }

    pub fn random_bisimf(suni: &Arc<StreamUniverse>, rng: &mut ChaCha8Rng) -> MonotoneOp {
        let flags = BisimFlags {
            left: rng.gen_bool(0.5),
            right: rng.gen_bool(0.5),
        };
        bisimf_op(suni, flags, &MonotoneOp::identity())
    }
}
