//! Kernel soundness is tested, not assumed: random rule application with
//! backtracking searches for accepting scripts on random universes, and
//! every accepted proof must both audit cleanly and prove a pair that the
//! semantic engine confirms. Pairs that are not weakly bisimilar must never
//! be accepted.
//!
//! The search deliberately excludes the semantic fallback rules (`final`,
//! `done`), so every accepted proof is built from the structural rules
//! alone.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coeq::bisim::Bisims;
use coeq::kernel::{start_session, Lane, ProofState, Rule, Session};
use coeq::streams::{random_system, StreamExpr, SysGenConfig};

/// Depth-first search over rule applications. Returns an accepted state if
/// any rule sequence within the budget completes the proof.
fn search(
    session: &Session,
    state: &ProofState,
    depth: usize,
    nodes: &mut usize,
) -> Option<ProofState> {
    if state.complete() {
        return Some(state.clone());
    }
    if depth == 0 || *nodes > 4000 {
        return None;
    }
    *nodes += 1;
    let fresh = format!("H{}", state.trace().len());
    let candidates: Vec<Rule> = vec![
        Rule::Base,
        Rule::Ret,
        Rule::Vis,
        Rule::TauStep,
        Rule::Init(Lane::Gpaco),
        Rule::Init(Lane::Euttg),
        Rule::BetaStep,
        Rule::Closure {
            name: "tauL".into(),
            targets: None,
        },
        Rule::TauLeft,
        Rule::TauRight,
        Rule::Step,
        Rule::Acc(fresh),
    ];
    for rule in candidates {
        // accumulating twice in a row never helps; cap the trace instead of
        // special-casing, the depth bound already prunes runaway branches
        let mut next = state.clone();
        if session.apply(&mut next, &rule).is_ok() {
            if let Some(done) = search(session, &next, depth - 1, nodes) {
                return Some(done);
            }
        }
    }
    None
}

#[test]
fn accepted_random_scripts_always_prove_true_theorems() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x50d4);
    let cfg = SysGenConfig {
        max_vars: 3,
        max_labels: 2,
        allow_concat: false,
        max_states: 5,
    };
    let mut accepted = 0usize;
    let mut rejected_false = 0usize;
    let mut round = 0usize;
    while accepted < 100 {
        round += 1;
        assert!(
            round < 3000,
            "search kept failing; only {accepted} accepted"
        );
        let (sys, suni) = random_system(&cfg, &mut rng);
        let bisims = Bisims::compute(&suni);
        let roots: Vec<StreamExpr> = (0..suni.size()).map(|s| suni.expr(s).clone()).collect();
        let session = match start_session(&sys, &roots, &[], 4096) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let n = suni.size();
        let s = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        let truly_bisimilar = bisims.eutt().get(s, t);
        let pair = (suni.expr(s).clone(), suni.expr(t).clone());
        let state = session.new_proof(&[pair]).unwrap();
        let mut nodes = 0usize;
        match search(&session, &state, 12, &mut nodes) {
            Some(done) => {
                assert!(
                    truly_bisimilar,
                    "kernel accepted a proof of a false theorem: ({}, {})",
                    suni.name(s),
                    suni.name(t)
                );
                let audit = session.audit(&done).expect("accepted proofs audit cleanly");
                assert!(audit.theorem_pairs.len() == 1);
                accepted += 1;
            }
            None => {
                if !truly_bisimilar {
                    rejected_false += 1;
                }
            }
        }
    }
    assert!(accepted >= 100);
    assert!(
        rejected_false > 10,
        "the corpus should include genuinely false goals (got {rejected_false})"
    );
    println!(
        "kernel soundness: {accepted} random proofs accepted and audited, {rejected_false} false goals never accepted"
    );
}
