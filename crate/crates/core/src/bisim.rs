//! The bisimulation functor family over streams and the derived relations.
//!
//! `bisimf` relates two states in five ways: matching terminated streams,
//! matching internal steps and co-recursing, matching identical visible
//! events and co-recursing through the `clo_beta` closure, or stripping an
//! internal step on the left or right and *recursing*. The asymmetric rules
//! are an inner smallest fixed point: iterating them co-recursively would
//! relate the silently diverging stream to everything.
//!
//! Derived relations (all greatest fixed points with identity `clo_beta`):
//! strong bisimilarity (both stripping rules off), equivalence up to
//! internal steps (both on), and the one-sided over-approximation. The
//! module also provides the transitive closures up to bisimilarity, the
//! concat closure, and the weak-compatibility sampler that certifies base
//! closures.

use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gpaco::{paco, weak_compat_counterexample};
use crate::lattice::{sample_rels, MonotoneOp, Rel};
use crate::streams::{Head, StreamUniverse};

/// Enables the left/right internal-step stripping rules.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct BisimFlags {
    pub left: bool,
    pub right: bool,
}

impl BisimFlags {
    /// Strong bisimulation: constructors match one-to-one.
    pub const STRONG: BisimFlags = BisimFlags {
        left: false,
        right: false,
    };
    /// Over-approximation: the left stream may contain more internal steps.
    pub const OVER: BisimFlags = BisimFlags {
        left: true,
        right: false,
    };
    /// Equivalence up to internal steps (weak bisimulation).
    pub const EUTT: BisimFlags = BisimFlags {
        left: true,
        right: true,
    };

    fn index(self) -> usize {
        (self.left as usize) << 1 | self.right as usize
    }

    const ALL: [BisimFlags; 4] = [
        BisimFlags {
            left: false,
            right: false,
        },
        BisimFlags {
            left: false,
            right: true,
        },
        BisimFlags {
            left: true,
            right: false,
        },
        BisimFlags {
            left: true,
            right: true,
        },
    ];
}

/// One application of the bisimulation functor.
pub fn bisimf(
    suni: &Arc<StreamUniverse>,
    flags: BisimFlags,
    clo_beta: &MonotoneOp,
    x: &Rel,
) -> Rel {
    let uni = suni.carrier();
    let n = uni.size();
    let cb = clo_beta.apply(x);
    let mut z = Rel::empty(uni);
    for s in 0..n {
        for t in 0..n {
            let related = match (suni.head(s), suni.head(t)) {
                (Head::Eps, Head::Eps) => true,
                (Head::Tau(s1), Head::Tau(t1)) => x.get(s1, t1),
                (Head::Vis(a, s1), Head::Vis(b, t1)) => a == b && cb.get(s1, t1),
                _ => false,
            };
            if related {
                z.insert(s, t);
            }
        }
    }
    // inner smallest fixed point for the stripping rules (4) and (5)
    if flags.left || flags.right {
        loop {
            let mut changed = false;
            for s in 0..n {
                for t in 0..n {
                    if z.get(s, t) {
                        continue;
                    }
                    let add = (flags.left && matches!(suni.head(s), Head::Tau(s1) if z.get(s1, t)))
                        || (flags.right && matches!(suni.head(t), Head::Tau(t1) if z.get(s, t1)));
                    if add {
                        z.insert(s, t);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }
    z
}

/// The functor as a monotone operator.
pub fn bisimf_op(
    suni: &Arc<StreamUniverse>,
    flags: BisimFlags,
    clo_beta: &MonotoneOp,
) -> MonotoneOp {
    let suni = Arc::clone(suni);
    let clo_beta = clo_beta.clone();
    let name = format!(
        "bisimF[{}{},{}]",
        if flags.left { "L" } else { "-" },
        if flags.right { "R" } else { "-" },
        clo_beta.name()
    );
    MonotoneOp::new(name, move |x: &Rel| bisimf(&suni, flags, &clo_beta, x))
}

/// The weak-bisimulation functor with identity closure.
pub fn euttf_op(suni: &Arc<StreamUniverse>) -> MonotoneOp {
    bisimf_op(suni, BisimFlags::EUTT, &MonotoneOp::identity())
}

/// The four bisimilarity relations of a universe, computed once and shared.
pub struct Bisims {
    suni: Arc<StreamUniverse>,
    rels: [Rel; 4],
}

impl Bisims {
    pub fn compute(suni: &Arc<StreamUniverse>) -> Arc<Bisims> {
        let bottom = Rel::empty(suni.carrier());
        let rels = BisimFlags::ALL
            .map(|flags| paco(&bisimf_op(suni, flags, &MonotoneOp::identity()), &bottom));
        Arc::new(Bisims {
            suni: Arc::clone(suni),
            rels,
        })
    }

    pub fn universe(&self) -> &Arc<StreamUniverse> {
        &self.suni
    }

    pub fn get(&self, flags: BisimFlags) -> &Rel {
        &self.rels[flags.index()]
    }

    pub fn strong(&self) -> &Rel {
        self.get(BisimFlags::STRONG)
    }

    pub fn over(&self) -> &Rel {
        self.get(BisimFlags::OVER)
    }

    pub fn eutt(&self) -> &Rel {
        self.get(BisimFlags::EUTT)
    }

    /// Transitive closure up to bisimilarity: relates `(s1, s2)` whenever
    /// `s1 bisim[l] s1'`, `(s1', s2') in r` and `s2 bisim[l'] s2'` for some
    /// intermediate states. The second bisimulation is deliberately oriented
    /// with `s2` on the left; for the directed instance this fixes which
    /// side may gain internal steps.
    pub fn trans_clo(&self, first: BisimFlags, second: BisimFlags, r: &Rel) -> Rel {
        self.get(first)
            .compose(r)
            .compose(&self.get(second).transpose())
    }

    /// Undirected transitive closure: arbitrary rewriting up to weak
    /// bisimilarity on both sides. Unsound as a general up-to principle.
    pub fn undirected(&self, r: &Rel) -> Rel {
        self.trans_clo(BisimFlags::EUTT, BisimFlags::EUTT, r)
    }

    /// Directed transitive closure: substituted streams may not contain
    /// more internal steps, so no guard can be introduced.
    pub fn directed(&self, r: &Rel) -> Rel {
        self.trans_clo(BisimFlags::OVER, BisimFlags::OVER, r)
    }

    /// Rewriting up to strong bisimilarity on both sides.
    pub fn strong_rewrite(&self, r: &Rel) -> Rel {
        self.trans_clo(BisimFlags::STRONG, BisimFlags::STRONG, r)
    }
}

pub fn u_op(bisims: &Arc<Bisims>) -> MonotoneOp {
    let b = Arc::clone(bisims);
    MonotoneOp::new("U", move |r: &Rel| b.undirected(r))
}

pub fn d_op(bisims: &Arc<Bisims>) -> MonotoneOp {
    let b = Arc::clone(bisims);
    MonotoneOp::new("D", move |r: &Rel| b.directed(r))
}

pub fn strong_rewrite_op(bisims: &Arc<Bisims>) -> MonotoneOp {
    let b = Arc::clone(bisims);
    MonotoneOp::new("strong", move |r: &Rel| b.strong_rewrite(r))
}

/// Closure stripping any finite number of internal steps on the left:
/// contains `(s, t)` whenever `s` reaches some `s0` through internal steps
/// and `(s0, t)` is in the argument.
pub fn clo_tau_left(suni: &Arc<StreamUniverse>, r: &Rel) -> Rel {
    let n = suni.size();
    let mut out = r.clone();
    loop {
        let mut changed = false;
        for s in 0..n {
            if let Head::Tau(s1) = suni.head(s) {
                for t in 0..n {
                    if !out.get(s, t) && out.get(s1, t) {
                        out.insert(s, t);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

pub fn tau_left_op(suni: &Arc<StreamUniverse>) -> MonotoneOp {
    let suni = Arc::clone(suni);
    MonotoneOp::new("tauL", move |r: &Rel| clo_tau_left(&suni, r))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClosureError {
    #[error(
        "universe is not closed under concatenation; rebuild it with the concat closure registered"
    )]
    UniverseNotConcatClosed,
}

/// Concat closure: relates `h1 ++ t1` and `h2 ++ t2` whenever the heads are
/// weakly bisimilar and the tails are in the argument relation. The up-to
/// prefix closure coincides with it (both demand weakly bisimilar heads) and
/// is implemented by this one function.
///
/// Requires a concat-closed universe so that every split of a state is
/// available; a pair referring to a state outside the universe is an error,
/// never a silent narrowing.
pub fn clo_concat(bisims: &Arc<Bisims>, r: &Rel) -> Result<Rel, ClosureError> {
    let suni = bisims.universe();
    if !suni.is_concat_closed() {
        return Err(ClosureError::UniverseNotConcatClosed);
    }
    let eutt = bisims.eutt();
    let n = suni.size();
    let mut out = Rel::empty(suni.carrier());
    for u1 in 0..n {
        for &(h1, t1) in suni.decompositions(u1) {
            for u2 in 0..n {
                if out.get(u1, u2) {
                    continue;
                }
                for &(h2, t2) in suni.decompositions(u2) {
                    if eutt.get(h1, h2) && r.get(t1, t2) {
                        out.insert(u1, u2);
                        break;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The concat closure as an operator; constructing it already requires the
/// concat-closed universe.
pub fn concat_op(bisims: &Arc<Bisims>) -> Result<MonotoneOp, ClosureError> {
    if !bisims.universe().is_concat_closed() {
        return Err(ClosureError::UniverseNotConcatClosed);
    }
    let b = Arc::clone(bisims);
    Ok(MonotoneOp::new("concat", move |r: &Rel| {
        clo_concat(&b, r).expect("universe checked at construction")
    }))
}

/// Up-to prefix coincides with the concat closure: both demand weakly
/// bisimilar heads.
pub fn clo_prefix(bisims: &Arc<Bisims>, r: &Rel) -> Result<Rel, ClosureError> {
    clo_concat(bisims, r)
}

pub fn clo_strong(bisims: &Arc<Bisims>, r: &Rel) -> Rel {
    bisims.strong_rewrite(r)
}

// ---------------------------------------------------------------------------
// Weak compatibility
// ---------------------------------------------------------------------------

/// Sampled check that a closure is bounded by `gupaco f bclo`, the premise
/// of the generic closure rule. Used when registering closures.
pub fn gupaco_holds_for(
    suni: &Arc<StreamUniverse>,
    f: &MonotoneOp,
    bclo: &MonotoneOp,
    clo: &MonotoneOp,
    samples: usize,
    seed: u64,
) -> bool {
    let uni = suni.carrier();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_rels(uni, samples, &mut rng)
        .iter()
        .all(|x| clo.apply(x).leq(&crate::gpaco::gupaco(f, bclo, x)))
}

#[derive(Debug, Clone)]
pub struct WeakCompatWitness {
    /// The sampled relation on which compatibility breaks.
    pub x: Rel,
    pub pair: (usize, usize),
    pub pair_names: (String, String),
}

#[derive(Debug, Clone)]
pub struct WeakCompatReport {
    pub f_name: String,
    pub bclo_name: String,
    pub samples: usize,
    pub counterexample: Option<WeakCompatWitness>,
}

impl WeakCompatReport {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Samples relations (bottom, top, all singletons on small universes, then
/// random densities) and checks `bclo(f(x)) <= f(gupaco(f, bclo, x))`,
/// reporting the first counterexample.
pub fn check_weak_compat(
    suni: &Arc<StreamUniverse>,
    f: &MonotoneOp,
    bclo: &MonotoneOp,
    samples: usize,
    seed: u64,
) -> WeakCompatReport {
    let uni = suni.carrier();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = sample_rels(uni, samples, &mut rng);
    let counterexample =
        weak_compat_counterexample(f, bclo, &xs).map(|(x, pair)| WeakCompatWitness {
            x,
            pair,
            pair_names: (suni.name(pair.0).to_string(), suni.name(pair.1).to_string()),
        });
    WeakCompatReport {
        f_name: f.name().to_string(),
        bclo_name: bclo.name().to_string(),
        samples: xs.len(),
        counterexample,
    }
}
