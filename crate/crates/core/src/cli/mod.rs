//! Command-line entry points.
//!
//! Commands: `check` (run a proof script through the kernel and audit it),
//! `bisim` (membership queries against the computed relations),
//! `laws-fuzz` (verify the proof-rule laws on generated universes),
//! `companion-check` (the machine-checked inconsistency report), and
//! `demo` (replay the built-in derivation corpus).
//!
//! Exit codes: 0 success, 1 proof rejected or property failed, 2 parse
//! error, 3 resource cap exceeded, 4 internal audit mismatch.
//!
//! With `--format machine` the output is one record per line
//! (`key=value` pairs); with a fixed `--seed` it is byte-identical across
//! runs.

pub mod script;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bisim::{d_op, strong_rewrite_op, tau_left_op, u_op, BisimFlags, Bisims};
use crate::euttg::{companion_inconsistency_report, EuttgEngine, RuleVariant};
use crate::gpaco::{opgen, verify_gpaco_laws, LawConfig, LawStatus, RegisteredClo};
use crate::kernel::{start_session, ProofState, Rule, RuleError, Session, SessionError};
use crate::lattice::{MonotoneOp, DEFAULT_UNIVERSE_CAP};
use crate::streams::{
    build_universe, parse_system, random_system, EquationSystem, StreamExpr, SysGenConfig,
    UniverseError, UniverseOptions,
};

use script::{parse_script, Script, ScriptRule, SetRef};

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_AUDIT: i32 = 4;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Machine,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RelKind {
    Strong,
    Over,
    Eutt,
}

#[derive(Parser)]
#[command(
    name = "coeq",
    about = "Coinductive equivalence engine for rational streams with internal steps",
    version
)]
struct Cli {
    /// Output format: prose or one machine-readable record per line.
    #[arg(long, global = true, value_enum, default_value = "human")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a proof script against a stream system, then audit the proof.
    Check {
        system: PathBuf,
        proof: PathBuf,
        /// Cap on the number of universe states.
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Print relation membership for state pairs.
    Bisim {
        system: PathBuf,
        #[arg(long, value_enum)]
        rel: RelKind,
        /// A pair `left,right`; repeatable.
        #[arg(long = "pairs", required = true)]
        pairs: Vec<String>,
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Verify the proof-rule laws on generated universes and the built-in
    /// corpus, with a fixed seed.
    LawsFuzz {
        /// Minimum number of sampled law instances.
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        /// State bound for generated universes.
        #[arg(long, default_value_t = 6)]
        max_states: usize,
        /// Knowledge samples per corpus universe for the equational theory.
        #[arg(long, default_value_t = 100)]
        euttg_samples: usize,
    },
    /// Reproduce the report showing the greatest compatible closure cannot
    /// be a base closure.
    CompanionCheck {
        #[arg(long, default_value_t = crate::gpaco::DEFAULT_TOWER_BUDGET)]
        tower_budget: usize,
    },
    /// Replay a built-in derivation: fig2, fig5, fig9, fig10 or sec53.
    Demo { name: String },
}

struct Out {
    format: Format,
}

impl Out {
    fn record(&self, machine: String, human: String) {
        match self.format {
            Format::Machine => println!("{machine}"),
            Format::Human => println!("{human}"),
        }
    }

    fn both(&self, line: &str) {
        println!("{line}");
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    let out = Out { format: cli.format };
    match cli.command {
        Command::Check { system, proof, cap } => {
            let sys_text = match std::fs::read_to_string(&system) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", system.display());
                    return EXIT_PARSE;
                }
            };
            let prf_text = match std::fs::read_to_string(&proof) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", proof.display());
                    return EXIT_PARSE;
                }
            };
            check_command(&out, &sys_text, &prf_text, cap)
        }
        Command::Bisim {
            system,
            rel,
            pairs,
            cap,
        } => {
            let sys_text = match std::fs::read_to_string(&system) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", system.display());
                    return EXIT_PARSE;
                }
            };
            bisim_command(&out, &sys_text, rel, &pairs, cap)
        }
        Command::LawsFuzz {
            samples,
            seed,
            max_states,
            euttg_samples,
        } => laws_fuzz_command(&out, samples, seed, max_states, euttg_samples),
        Command::CompanionCheck { tower_budget } => companion_check_command(&out, tower_budget),
        Command::Demo { name } => demo_command(&out, &name),
    }
}

fn universe_cap(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("COEQ_UNIVERSE_CAP")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(DEFAULT_UNIVERSE_CAP)
}

// ---------------------------------------------------------------------------
// check / demo
// ---------------------------------------------------------------------------

const DEMOS: &[(&str, &str, &str)] = &[
    (
        "fig2",
        include_str!("../../corpus/fig1.strm"),
        include_str!("../../corpus/fig2.prf"),
    ),
    (
        "fig5",
        include_str!("../../corpus/fig1.strm"),
        include_str!("../../corpus/fig5.prf"),
    ),
    (
        "fig9",
        include_str!("../../corpus/fig4.strm"),
        include_str!("../../corpus/fig9.prf"),
    ),
    (
        "fig10",
        include_str!("../../corpus/fig10.strm"),
        include_str!("../../corpus/fig10.prf"),
    ),
    (
        "sec53",
        include_str!("../../corpus/sec53.strm"),
        include_str!("../../corpus/sec53.prf"),
    ),
];

fn demo_command(out: &Out, name: &str) -> i32 {
    match DEMOS.iter().find(|(n, _, _)| *n == name) {
        Some((n, sys, prf)) => {
            out.record(format!("demo={n}"), format!("replaying demo `{n}`"));
            check_command(out, sys, prf, None)
        }
        None => {
            eprintln!(
                "error: unknown demo `{name}` (available: {})",
                DEMOS
                    .iter()
                    .map(|(n, _, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            EXIT_PARSE
        }
    }
}

fn check_command(out: &Out, sys_text: &str, prf_text: &str, cap: Option<usize>) -> i32 {
    let sys = match parse_system(sys_text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: system: {e}");
            return EXIT_PARSE;
        }
    };
    let script = match parse_script(prf_text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: script: {e}");
            return EXIT_PARSE;
        }
    };
    match run_script(out, &sys, &script, universe_cap(cap)) {
        ScriptOutcome::Accepted => EXIT_OK,
        ScriptOutcome::Rejected => EXIT_REJECTED,
        ScriptOutcome::ParseOrInput => EXIT_PARSE,
        ScriptOutcome::Resource => EXIT_RESOURCE,
        ScriptOutcome::AuditMismatch => EXIT_AUDIT,
    }
}

enum ScriptOutcome {
    Accepted,
    Rejected,
    ParseOrInput,
    Resource,
    AuditMismatch,
}

/// Builds the session for a script (universe roots are every mentioned
/// expression), binds the named sets, applies each step, and audits.
fn run_script(out: &Out, sys: &EquationSystem, script: &Script, cap: usize) -> ScriptOutcome {
    let mut roots: Vec<StreamExpr> = sys.variables().map(StreamExpr::var).collect();
    roots.extend(script.mentioned_exprs());
    let closures: Vec<&str> = if script.needs_concat_closure() {
        vec!["concat"]
    } else {
        vec![]
    };
    let session = match start_session(sys, &roots, &closures, cap) {
        Ok(s) => s,
        Err(SessionError::Universe(UniverseError::UniverseExplosion { cap })) => {
            eprintln!("error: universe exceeds the cap of {cap} states");
            return ScriptOutcome::Resource;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ScriptOutcome::ParseOrInput;
        }
    };
    out.record(
        format!("universe_states={}", session.universe().size()),
        format!("session universe has {} states", session.universe().size()),
    );

    let mut state = match session.new_proof(&script.theorems) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ScriptOutcome::ParseOrInput;
        }
    };
    for (name, pairs) in &script.lets {
        let rel = match session.rel_of_pairs(pairs) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: let {name}: {e}");
                return ScriptOutcome::ParseOrInput;
            }
        };
        if let Err(e) = state.bind(name, rel) {
            eprintln!("error: let {name}: {e}");
            return ScriptOutcome::ParseOrInput;
        }
    }

    for (idx, step) in script.steps.iter().enumerate() {
        let rule = match resolve_rule(&session, &state, &step.rule) {
            Ok(r) => r,
            Err(msg) => {
                eprintln!("error: line {}: {msg}", step.line);
                return ScriptOutcome::ParseOrInput;
            }
        };
        match session.apply(&mut state, &rule) {
            Ok(()) => {
                let last = state.trace().last().expect("trace extended");
                out.record(
                    format!(
                        "step={idx} rule={} result=ok",
                        rule.name().replace(' ', "_")
                    ),
                    format!("  step {idx}: {} -> {}", rule.name(), last.outcome),
                );
            }
            Err(e) => {
                let (witness, reason) = describe_rule_error(&e);
                out.record(
                    format!(
                        "step={idx} rule={} result=rejected{witness} reason={reason}",
                        rule.name().replace(' ', "_")
                    ),
                    format!("  step {idx}: {} REJECTED: {e}", rule.name()),
                );
                out.record("result=rejected".into(), "proof rejected".into());
                return ScriptOutcome::Rejected;
            }
        }
    }

    if !state.complete() {
        out.record(
            format!("result=incomplete pending={}", state.goals().len()),
            format!(
                "proof incomplete: {} goals pending at qed",
                state.goals().len()
            ),
        );
        return ScriptOutcome::Rejected;
    }

    match session.audit(&state) {
        Ok(report) => {
            out.record(
                format!("audit=pass discharges={}", report.discharges_checked),
                format!(
                    "audit pass: {} discharges re-verified semantically",
                    report.discharges_checked
                ),
            );
            for (a, b) in &report.theorem_pairs {
                out.record(
                    format!("theorem=({a},{b}) confirmed=true"),
                    format!("theorem confirmed: {a} is weakly bisimilar to {b}"),
                );
            }
            out.record("result=accepted".into(), "proof accepted".into());
            ScriptOutcome::Accepted
        }
        Err(e) => {
            eprintln!("error: AUDIT MISMATCH (kernel soundness defect): {e}");
            ScriptOutcome::AuditMismatch
        }
    }
}

fn describe_rule_error(e: &RuleError) -> (String, String) {
    match e {
        RuleError::SideCondition { witness, .. } => (
            format!(" witness=({},{})", witness.0, witness.1),
            "side-condition".into(),
        ),
        RuleError::ContextTag(_) => (String::new(), "context-tag-violation".into()),
        RuleError::CompanionRule => (String::new(), "companion-rule".into()),
        RuleError::UnknownClosure(_) => (String::new(), "unknown-closure".into()),
        _ => (String::new(), "not-applicable".into()),
    }
}

fn resolve_rule(session: &Session, state: &ProofState, rule: &ScriptRule) -> Result<Rule, String> {
    let resolve_set = |set: &SetRef| -> Result<crate::lattice::Rel, String> {
        match set {
            SetRef::Name(n) => state
                .binding(n)
                .cloned()
                .ok_or_else(|| format!("unknown set `{n}`")),
            SetRef::Literal(pairs) => session.rel_of_pairs(pairs).map_err(|e| e.to_string()),
        }
    };
    Ok(match rule {
        ScriptRule::Init(lane) => Rule::Init(*lane),
        ScriptRule::Final => Rule::Final,
        ScriptRule::Base => Rule::Base,
        ScriptRule::Acc(n) => Rule::Acc(n.clone()),
        ScriptRule::Step => Rule::Step,
        ScriptRule::TauStep => Rule::TauStep,
        ScriptRule::BetaStep => Rule::BetaStep,
        ScriptRule::Ret => Rule::Ret,
        ScriptRule::TauLeft => Rule::TauLeft,
        ScriptRule::TauRight => Rule::TauRight,
        ScriptRule::Vis => Rule::Vis,
        ScriptRule::Closure { name, with } => Rule::Closure {
            name: name.clone(),
            targets: with.as_ref().map(&resolve_set).transpose()?,
        },
        ScriptRule::TransD { with } => Rule::TransD {
            targets: resolve_set(with)?,
        },
        ScriptRule::TransU { with } => Rule::TransU {
            targets: resolve_set(with)?,
        },
        ScriptRule::ConcatC { with } => Rule::ConcatC {
            targets: with.as_ref().map(&resolve_set).transpose()?,
        },
        ScriptRule::Split(names) => Rule::Split(names.clone()),
        ScriptRule::Done => Rule::Done,
    })
}

// ---------------------------------------------------------------------------
// bisim
// ---------------------------------------------------------------------------

fn bisim_command(
    out: &Out,
    sys_text: &str,
    rel: RelKind,
    pairs: &[String],
    cap: Option<usize>,
) -> i32 {
    let sys = match parse_system(sys_text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: system: {e}");
            return EXIT_PARSE;
        }
    };
    let mut parsed_pairs = Vec::new();
    for raw in pairs {
        let Some((a, b)) = raw.split_once(',') else {
            eprintln!("error: pair `{raw}` is not of the form left,right");
            return EXIT_PARSE;
        };
        let parse_one = |text: &str| -> Result<StreamExpr, String> {
            let mut tz = crate::streams::Tokenizer::new(text);
            crate::streams::parse_expr(&mut tz).map_err(|e| e.to_string())
        };
        match (parse_one(a.trim()), parse_one(b.trim())) {
            (Ok(a), Ok(b)) => parsed_pairs.push((a, b)),
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("error: pair `{raw}`: {e}");
                return EXIT_PARSE;
            }
        }
    }
    let mut roots: Vec<StreamExpr> = sys.variables().map(StreamExpr::var).collect();
    for (a, b) in &parsed_pairs {
        roots.push(a.clone());
        roots.push(b.clone());
    }
    let opts = UniverseOptions {
        cap: universe_cap(cap),
        concat_closed: false,
    };
    let suni = match build_universe(&sys, &roots, &opts) {
        Ok(u) => u,
        Err(UniverseError::UniverseExplosion { cap }) => {
            eprintln!("error: universe exceeds the cap of {cap} states");
            return EXIT_RESOURCE;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_PARSE;
        }
    };
    let bisims = Bisims::compute(&suni);
    let flags = match rel {
        RelKind::Strong => BisimFlags::STRONG,
        RelKind::Over => BisimFlags::OVER,
        RelKind::Eutt => BisimFlags::EUTT,
    };
    let relation = bisims.get(flags);
    let rel_name = match rel {
        RelKind::Strong => "strong",
        RelKind::Over => "over",
        RelKind::Eutt => "eutt",
    };
    for (a, b) in &parsed_pairs {
        let sa = suni.state_of(a).expect("interned as root");
        let sb = suni.state_of(b).expect("interned as root");
        let member = relation.get(sa, sb);
        out.record(
            format!("pair=({a},{b}) rel={rel_name} member={member}"),
            format!("{member}"),
        );
    }
    EXIT_OK
}

// ---------------------------------------------------------------------------
// laws-fuzz
// ---------------------------------------------------------------------------

fn laws_fuzz_command(
    out: &Out,
    samples: usize,
    seed: u64,
    max_states: usize,
    euttg_samples: usize,
) -> i32 {
    let mut failures = 0usize;
    let mut skipped = 0usize;
    let mut instances = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SysGenConfig {
        max_vars: 4,
        max_labels: 3,
        allow_concat: true,
        max_states,
    };

    let mut round = 0u64;
    while instances < samples {
        let (_, suni) = random_system(&cfg, &mut rng);
        let bisims = Bisims::compute(&suni);
        let uni = suni.carrier();

        // tag each functor with whether it is the weak-bisimulation functor,
        // the one combination the directed closure is certified for
        let mut functors: Vec<(MonotoneOp, bool)> = Vec::new();
        for flags in [
            BisimFlags::STRONG,
            BisimFlags::OVER,
            BisimFlags {
                left: false,
                right: true,
            },
            BisimFlags::EUTT,
        ] {
            functors.push((
                crate::bisim::bisimf_op(&suni, flags, &MonotoneOp::identity()),
                flags == BisimFlags::EUTT,
            ));
        }
        functors.push((opgen::random_functor(&suni, 2, &mut rng), false));

        let bclos: Vec<(&str, MonotoneOp)> = vec![
            ("id", MonotoneOp::identity()),
            ("D", d_op(&bisims)),
            ("tauL", tau_left_op(&suni)),
            ("strong", strong_rewrite_op(&bisims)),
            ("U", u_op(&bisims)),
            ("random", opgen::random_functor(&suni, 1, &mut rng)),
        ];

        for (f, is_eutt) in &functors {
            for (bclo_kind, bclo) in &bclos {
                // the identity is weakly compatible for every monotone
                // functor; the directed closure is certified for the
                // weak-bisimulation functor only
                let certified = *bclo_kind == "id" || (*bclo_kind == "D" && *is_eutt);
                let law_cfg = LawConfig {
                    f: f.clone(),
                    bclo: bclo.clone(),
                    bclo_certified_weakly_compatible: certified,
                    closures: vec![
                        RegisteredClo {
                            name: "tauL".into(),
                            op: tau_left_op(&suni),
                        },
                        RegisteredClo {
                            name: "strong".into(),
                            op: strong_rewrite_op(&bisims),
                        },
                    ],
                    rel_samples: 6,
                    seed: seed ^ round,
                };
                let report = verify_gpaco_laws(uni, &law_cfg);
                instances += report.instances;
                for o in &report.outcomes {
                    match &o.status {
                        LawStatus::Pass => {}
                        LawStatus::Skipped { .. } => skipped += 1,
                        LawStatus::Fail { witness } => {
                            failures += 1;
                            out.record(
                                format!(
                                    "law={} f={} bclo={} result=fail witness={}",
                                    o.law,
                                    f.name(),
                                    bclo.name(),
                                    witness
                                ),
                                format!(
                                    "FAIL {} with f = {}, bclo = {}: {}",
                                    o.law,
                                    f.name(),
                                    bclo.name(),
                                    witness
                                ),
                            );
                        }
                    }
                }
                round += 1;
            }
        }
    }
    out.record(
        format!("gpaco_instances={instances} failures={failures} gated_skips={skipped}"),
        format!(
            "generalized-coinduction laws: {instances} sampled instances, {failures} failures, {skipped} gated skips"
        ),
    );

    // equational theory on one generated universe (the concat rule needs a
    // saturated universe and is skipped there) and on the corpus universes
    {
        let (_, suni) = random_system(&cfg, &mut rng);
        let engine = EuttgEngine::new(&Bisims::compute(&suni));
        let report = crate::euttg::verify_euttg_rules(
            &engine,
            euttg_samples.min(40),
            seed,
            RuleVariant::Standard,
        );
        if !report.passed() {
            failures += 1;
        }
        out.record(
            format!(
                "euttg_universe=generated knowledge_samples={} result={}",
                report.knowledge_samples,
                if report.passed() { "pass" } else { "fail" }
            ),
            format!(
                "equational theory on a generated universe: {} knowledge samples, {}",
                report.knowledge_samples,
                if report.passed() {
                    "all rules pass"
                } else {
                    "FAILURES"
                }
            ),
        );
    }
    for (name, sys_text, concat) in [
        ("fig1", include_str!("../../corpus/fig1.strm"), true),
        ("fig4", include_str!("../../corpus/fig4.strm"), true),
    ] {
        let sys = parse_system(sys_text).expect("corpus parses");
        let roots: Vec<StreamExpr> = sys.variables().map(StreamExpr::var).collect();
        let opts = UniverseOptions {
            cap: DEFAULT_UNIVERSE_CAP,
            concat_closed: concat,
        };
        let suni = build_universe(&sys, &roots, &opts).expect("corpus universes are rational");
        let engine = EuttgEngine::new(&Bisims::compute(&suni));
        let report =
            crate::euttg::verify_euttg_rules(&engine, euttg_samples, seed, RuleVariant::Standard);
        for o in &report.outcomes {
            if o.failures > 0 {
                failures += 1;
                out.record(
                    format!(
                        "euttg_rule={} universe={name} result=fail witness={}",
                        o.rule,
                        o.first_witness.clone().unwrap_or_default()
                    ),
                    format!(
                        "FAIL rule {} on {name}: {}",
                        o.rule,
                        o.first_witness.clone().unwrap_or_default()
                    ),
                );
            }
        }
        out.record(
            format!(
                "euttg_universe={name} knowledge_samples={} result={}",
                report.knowledge_samples,
                if report.passed() { "pass" } else { "fail" }
            ),
            format!(
                "equational theory on {name}: {} knowledge samples, {}",
                report.knowledge_samples,
                if report.passed() {
                    "all rules pass"
                } else {
                    "FAILURES"
                }
            ),
        );
    }

    // harness self-test: the deliberately broken rule must be caught
    let appendix = crate::euttg::appendix_universe();
    let engine = EuttgEngine::new(&Bisims::compute(&appendix));
    let mutated = crate::euttg::verify_euttg_rules(&engine, 60, seed, RuleVariant::MutatedTransU);
    let caught = mutated
        .outcomes
        .iter()
        .any(|o| o.rule == "transU" && o.failures > 0);
    if !caught {
        failures += 1;
    }
    out.record(
        format!(
            "mutation_selftest={}",
            if caught { "caught" } else { "MISSED" }
        ),
        format!(
            "mutation self-test (broken undirected rewrite): {}",
            if caught {
                "caught as expected"
            } else {
                "MISSED"
            }
        ),
    );

    if failures == 0 {
        out.both("laws-fuzz: all checks passed");
        EXIT_OK
    } else {
        out.both("laws-fuzz: FAILURES detected");
        EXIT_REJECTED
    }
}

// ---------------------------------------------------------------------------
// companion-check
// ---------------------------------------------------------------------------

fn companion_check_command(out: &Out, tower_budget: usize) -> i32 {
    let report = match companion_inconsistency_report(tower_budget) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RESOURCE;
        }
    };
    let mut all = report.passed();
    for c in &report.subchecks {
        out.record(
            format!(
                "subcheck={} result={} detail={}",
                c.name.replace(' ', "_"),
                if c.passed { "pass" } else { "fail" },
                c.detail.replace(' ', "_")
            ),
            format!(
                "  [{}] {}{}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                if c.detail.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", c.detail)
                }
            ),
        );
    }

    // the kernel refuses a companion-closure rule outright
    let sys = parse_system(include_str!("../../corpus/sec53.strm")).expect("corpus parses");
    let roots: Vec<StreamExpr> = sys.variables().map(StreamExpr::var).collect();
    let session = start_session(&sys, &roots, &[], DEFAULT_UNIVERSE_CAP).expect("session");
    let mut state = session
        .new_proof(&[(StreamExpr::var("a"), StreamExpr::var("b"))])
        .expect("proof");
    session
        .apply(&mut state, &Rule::Init(crate::kernel::Lane::Gpaco))
        .expect("init");
    let refused = matches!(
        session.apply(
            &mut state,
            &Rule::Closure {
                name: "companion".into(),
                targets: None,
            },
        ),
        Err(RuleError::CompanionRule)
    );
    all = all && refused;
    out.record(
        format!(
            "subcheck=kernel_rejects_companion_rule result={}",
            if refused { "pass" } else { "fail" }
        ),
        format!(
            "  [{}] kernel rejects a companion-closure rule with a dedicated error",
            if refused { "ok" } else { "FAIL" }
        ),
    );

    if all {
        out.both("companion-check: confirmed");
        EXIT_OK
    } else {
        out.both("companion-check: FAILED");
        EXIT_REJECTED
    }
}
