//! Acceptance suite. One PASS/FAIL line per criterion; exits nonzero on any
//! failure. Every query goes through the batch front end so that yes-verdicts
//! can be re-verified from their certificates at the end.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use qcompat::algebra::{algebra_tensor, FdAlgebra};
use qcompat::channel::{
    complementary_channel, compose, povm_from_commutative_channel, qc_channel, random_channel, Channel, Povm,
};
use qcompat::cli::schema::{
    channel_to_json, experiment_to_json, povm_to_json, CompatRoute, ObjectJson, OptionsJson, ProblemFile, Query,
    SCHEMA_VERSION,
};
use qcompat::cli::{run_problem, verify_report, Overrides, Report, ReportVerdict};
use qcompat::compat::{left_embedding, right_embedding};
use qcompat::dilation::{commutant_conjugate, minimal_stinespring, naimark_dilation};
use qcompat::experiments::{associated_channel, random_experiment, StatExperiment};
use qcompat::numerics::psd_rank;
use qcompat::order::Verdict;
use qcompat::povmtools::{
    luders_channel, maximal_refinement, noisy_observable, random_povm, random_povm_with_ranks, sharp,
    tetrahedral_sic, trine,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CERT_TOL: f64 = 1e-6;
const REFINE_TOL: f64 = 1e-7;
const DILATION_TOL: f64 = 1e-9;
const NO_CLONING_GAP: f64 = 0.05;
const THRESHOLD_WINDOW: f64 = 0.02;
const COMPAT_BUDGET_S: f64 = 600.0;
const JM_BUDGET_S: f64 = 30.0;

enum Obj {
    C(Channel),
    P(Povm),
    E(StatExperiment),
}

/// Runs queries through the front end and keeps the yes-reports.
#[derive(Default)]
struct Harness {
    yes_reports: Vec<(String, String, String)>,
}

impl Harness {
    fn run(&mut self, tag: &str, objects: Vec<(&str, Obj)>, query: Query) -> Report {
        let objects: BTreeMap<String, ObjectJson> = objects
            .into_iter()
            .map(|(n, o)| {
                let j = match o {
                    Obj::C(c) => ObjectJson::Channel(channel_to_json(&c)),
                    Obj::P(p) => ObjectJson::Povm(povm_to_json(&p)),
                    Obj::E(e) => ObjectJson::Experiment(experiment_to_json(&e)),
                };
                (n.to_string(), j)
            })
            .collect();
        let problem = ProblemFile {
            version: SCHEMA_VERSION.into(),
            objects,
            query,
            options: OptionsJson::default(),
        };
        let text = serde_json::to_string(&problem).expect("problem serializes");
        let report = run_problem(&text, &Overrides::default()).unwrap_or_else(|e| panic!("{tag}: {e}"));
        if report.verdict == ReportVerdict::Yes {
            self.yes_reports.push((tag.to_string(), text, report.to_json()));
        }
        report
    }
}

struct Line {
    ok: bool,
    detail: String,
}

fn line(ok: bool, detail: impl Into<String>) -> Line {
    Line {
        ok,
        detail: detail.into(),
    }
}

fn route(r: &Report, key: &str) -> Verdict {
    r.routes.get(key).copied().unwrap_or(Verdict::Undecided)
}

fn residual(r: &Report, key: &str) -> f64 {
    r.residuals.get(key).copied().unwrap_or(f64::INFINITY)
}

fn max_residual(r: &Report, prefix: &str) -> f64 {
    r.residuals
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(_, &v)| v)
        .fold(0.0, f64::max)
}

const DOMAINS: [&[usize]; 4] = [&[2], &[1, 1], &[3], &[2, 1]];

fn criterion_1(h: &mut Harness) -> Line {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let (mut decided, mut disagree, mut yes) = (0, Vec::new(), 0);
    for k in 0..50 {
        let d = if rng.random_bool(0.5) { 2 } else { 3 };
        let cod = FdAlgebra::full(d);
        let a = FdAlgebra::new(DOMAINS[rng.random_range(0..4)].to_vec()).unwrap();
        let b = FdAlgebra::new(DOMAINS[rng.random_range(0..4)].to_vec()).unwrap();
        let la = random_channel(&a, &cod, rng.random());
        let lb = random_channel(&b, &cod, rng.random());
        let r = h.run(
            &format!("c1/{k}"),
            vec![("L", Obj::C(la)), ("G", Obj::C(lb))],
            Query::Compat {
                left: "L".into(),
                right: "G".into(),
                route: CompatRoute::Both,
            },
        );
        let (x, y) = (route(&r, "direct"), route(&r, "conjugate"));
        if x.is_decided() && y.is_decided() {
            decided += 1;
            if x != y {
                disagree.push(k);
            }
            if x == Verdict::Yes {
                yes += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    line(
        disagree.is_empty() && decided >= 45 && secs < COMPAT_BUDGET_S,
        format!("compat routes: {decided}/50 decided ({yes} yes), disagreements {disagree:?}, {secs:.1} s"),
    )
}

fn random_domain(rng: &mut ChaCha8Rng) -> FdAlgebra {
    FdAlgebra::new(DOMAINS[rng.random_range(0..4)].to_vec()).unwrap()
}

fn criterion_2(h: &mut Harness) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..25 {
        let d = rng.random_range(2..=3);
        let lam = random_channel(&random_domain(&mut rng), &FdAlgebra::full(d), rng.random());
        let cc = commutant_conjugate(&commutant_conjugate(&lam).unwrap()).unwrap();
        let r = h.run(
            &format!("c2/{k}"),
            vec![("L", Obj::C(lam)), ("LCC", Obj::C(cc))],
            Query::Equiv {
                left: "L".into(),
                right: "LCC".into(),
            },
        );
        let res = max_residual(&r, "forward").max(max_residual(&r, "backward"));
        worst = worst.max(res);
        if r.verdict != ReportVerdict::Yes || res > CERT_TOL {
            bad.push(k);
        }
    }
    line(bad.is_empty(), format!("double conjugate equivalence: failures {bad:?}, worst witness residual {worst:.2e}"))
}

fn criterion_3(h: &mut Harness) -> Line {
    let id = Channel::identity(&FdAlgebra::full(2));
    let r = h.run(
        "c3",
        vec![("I", Obj::C(id.clone())), ("J", Obj::C(id))],
        Query::Compat {
            left: "I".into(),
            right: "J".into(),
            route: CompatRoute::Conjugate,
        },
    );
    let gap = r.gaps.get("conjugate").copied().unwrap_or(0.0);
    line(
        r.verdict == ReportVerdict::No && gap >= NO_CLONING_GAP,
        format!("identity vs identity: {:?}, gap {gap:.3}", r.verdict),
    )
}

fn jm(h: &mut Harness, eta: f64) -> (ReportVerdict, f64) {
    let start = Instant::now();
    let x = noisy_observable([1.0, 0.0, 0.0], eta).unwrap();
    let z = noisy_observable([0.0, 0.0, 1.0], eta).unwrap();
    let r = h.run(
        &format!("c4/{eta:.4}"),
        vec![("X", Obj::P(x)), ("Z", Obj::P(z))],
        Query::JointlyMeasurable {
            left: "X".into(),
            right: "Z".into(),
        },
    );
    (r.verdict, start.elapsed().as_secs_f64())
}

fn criterion_4(h: &mut Harness) -> Line {
    let (v5, t5) = jm(h, 0.5);
    let (v9, t9) = jm(h, 0.9);
    let (mut lo, mut hi) = (0.5, 0.9);
    let mut undecided = false;
    while hi - lo > THRESHOLD_WINDOW {
        let mid = 0.5 * (lo + hi);
        match jm(h, mid).0 {
            ReportVerdict::Yes => lo = mid,
            ReportVerdict::No => hi = mid,
            _ => {
                undecided = true;
                break;
            }
        }
    }
    let target = std::f64::consts::FRAC_1_SQRT_2;
    let brackets = lo <= target && target <= hi && (0.5 * (lo + hi) - target).abs() <= THRESHOLD_WINDOW;
    line(
        !undecided
            && brackets
            && v5 == ReportVerdict::Yes
            && v9 == ReportVerdict::No
            && t5 < JM_BUDGET_S
            && t9 < JM_BUDGET_S,
        format!("threshold bracket [{lo:.4}, {hi:.4}] around {target:.5}; eta=0.5 {v5:?} ({t5:.2} s), eta=0.9 {v9:?} ({t9:.2} s)"),
    )
}

/// Marginals of a random channel on `C^k ⊗ A`: compatible by construction.
fn planted_pair(k: usize, a: &FdAlgebra, seed: u64) -> (Povm, Channel) {
    let phi = random_channel(&algebra_tensor(&FdAlgebra::commutative(k), a), &FdAlgebra::full(2), seed);
    let qc = compose(&phi, &left_embedding(&FdAlgebra::commutative(k), a)).unwrap();
    let lam = compose(&phi, &right_embedding(&FdAlgebra::commutative(k), a)).unwrap();
    (povm_from_commutative_channel(&qc).unwrap(), lam)
}

fn povm_channel(h: &mut Harness, tag: &str, m: Povm, lam: Channel) -> Report {
    h.run(
        tag,
        vec![("M", Obj::P(m)), ("L", Obj::C(lam))],
        Query::PovmChannel {
            povm: "M".into(),
            channel: "L".into(),
        },
    )
}

fn criterion_5(h: &mut Harness) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(5005);
    let (mut decided, mut disagree, mut yes) = (0, Vec::new(), 0);
    for k in 0..30 {
        let outcomes = rng.random_range(2..=3);
        let a = random_domain(&mut rng);
        let (m, lam) = if k % 2 == 0 {
            planted_pair(outcomes, &a, rng.random())
        } else {
            (random_povm(2, outcomes, &mut rng), random_channel(&a, &FdAlgebra::full(2), rng.random()))
        };
        let r = povm_channel(h, &format!("c5/{k}"), m, lam);
        let (x, y) = (route(&r, "instrument"), route(&r, "conjugate"));
        if x.is_decided() && y.is_decided() {
            decided += 1;
            yes += (x == Verdict::Yes) as usize;
            if x != y {
                disagree.push(k);
            }
        }
    }
    let s = sharp(2);
    let lud = povm_channel(h, "c5/luders", s.clone(), luders_channel(&s).unwrap());
    let lud_res = max_residual(&lud, "instrument");
    let id = povm_channel(h, "c5/identity", s, Channel::identity(&FdAlgebra::full(2)));
    line(
        disagree.is_empty()
            && lud.verdict == ReportVerdict::Yes
            && lud_res <= CERT_TOL
            && id.verdict == ReportVerdict::No,
        format!(
            "povm-channel routes: {decided}/30 decided ({yes} yes), disagreements {disagree:?}; Lüders {:?} (residual {lud_res:.2e}); sharp+identity {:?}",
            lud.verdict, id.verdict
        ),
    )
}

fn criterion_6(h: &mut Harness) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(6006);
    let mut bad = Vec::new();
    for k in 0..20 {
        let d = rng.random_range(2..=3);
        let outcomes = rng.random_range(2..=4);
        let m = random_povm(d, outcomes, &mut rng);
        let q = qc_channel(&m);
        let r = h.run(
            &format!("c6/{k}"),
            vec![("Q", Obj::C(q.clone())), ("R", Obj::C(q))],
            Query::Compat {
                left: "Q".into(),
                right: "R".into(),
                route: CompatRoute::Direct,
            },
        );
        if r.verdict != ReportVerdict::Yes {
            bad.push(k);
        }
    }
    line(bad.is_empty(), format!("QC self-compatibility: failures {bad:?}"))
}

fn criterion_7(h: &mut Harness) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    let (mut disagree, mut undecided, mut maximal) = (Vec::new(), 0, 0);
    for k in 0..30 {
        let d = rng.random_range(2..=3);
        let m = match k % 3 {
            0 => random_povm_with_ranks(d, &vec![1; d + rng.random_range(0..=2)], &mut rng).unwrap(),
            1 => {
                let mut ranks = vec![1; d];
                ranks[0] = 2;
                random_povm_with_ranks(d, &ranks, &mut rng).unwrap()
            }
            _ => random_povm(d, rng.random_range(2..=4), &mut rng),
        };
        let r = h.run(&format!("c7/{k}"), vec![("M", Obj::P(m))], Query::Maximal { povm: "M".into() });
        let (a, b) = (route(&r, "rank"), route(&r, "conjugate"));
        maximal += (a == Verdict::Yes) as usize;
        if !b.is_decided() {
            undecided += 1;
        } else if a != b {
            disagree.push(k);
        }
    }
    for (name, p) in [("trine", trine()), ("sic", tetrahedral_sic()), ("sharp", sharp(3))] {
        let r = h.run(&format!("c7/{name}"), vec![("M", Obj::P(p))], Query::Maximal { povm: "M".into() });
        if route(&r, "conjugate") != Verdict::Yes || r.verdict != ReportVerdict::Yes {
            disagree.push(100);
        }
    }
    line(
        disagree.is_empty() && undecided == 0,
        format!("maximality routes: {maximal}/30 maximal, {undecided} undecided, disagreements {disagree:?}"),
    )
}

fn criterion_8(h: &mut Harness) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(8008);
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let d = rng.random_range(2..=3);
        let m = random_povm(d, rng.random_range(1..=4), &mut rng);
        let refined = maximal_refinement(&m).unwrap().povm;
        let ranks_ok = refined.effects().iter().all(|e| psd_rank(e, 1e-9).unwrap() == 1);
        let r = h.run(
            &format!("c8/{k}"),
            vec![("M", Obj::P(m)), ("R", Obj::P(refined))],
            Query::Preorder {
                left: "M".into(),
                right: "R".into(),
            },
        );
        let res = residual(&r, "witness.reconstruction").max(residual(&r, "witness.stochastic"));
        worst = worst.max(res);
        if !ranks_ok || r.verdict != ReportVerdict::Yes || res > REFINE_TOL {
            bad.push(k);
        }
    }
    line(bad.is_empty(), format!("maximal refinement dominates: failures {bad:?}, worst residual {worst:.2e}"))
}

fn criterion_9(h: &mut Harness) -> Line {
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9009);
    let mut povms = vec![("trine", trine()), ("sic", tetrahedral_sic()), ("sharp3", sharp(3))];
    povms.push(("random", random_povm(3, 4, &mut rng)));
    for (name, p) in povms {
        let n = naimark_dilation(&p).unwrap();
        let expected: usize = p.effects().iter().map(|e| psd_rank(e, 1e-9).unwrap()).sum();
        let e = n.isometry_error().max(n.reconstruction_error()).max(n.projection_error());
        worst = worst.max(e);
        if e > DILATION_TOL || n.total_dim() != expected || !n.is_minimal() || (name == "trine" && n.total_dim() != 3) {
            bad.push(name.to_string());
        }
        h.run(&format!("c9/{name}"), vec![("M", Obj::P(p))], Query::Dilate { object: "M".into() });
    }
    let channels = vec![
        ("depolarizing", Channel::depolarizing(2, 0.5)),
        ("identity", Channel::identity(&FdAlgebra::full(3))),
        ("qc-trine", qc_channel(&trine())),
        ("random", random_channel(&FdAlgebra::new(vec![2, 1]).unwrap(), &FdAlgebra::full(3), 91)),
    ];
    for (name, c) in channels {
        let st = minimal_stinespring(&c).unwrap();
        let ranks = c.choi_ranks().unwrap();
        let expected: usize = c.domain().blocks().iter().zip(&ranks).map(|(n, r)| n * r).sum();
        let e = st.isometry_error().max(st.reconstruction_error().unwrap());
        worst = worst.max(e);
        if e > DILATION_TOL
            || st.total_dim != expected
            || !st.is_minimal().unwrap()
            || (name == "depolarizing" && st.total_dim != 8)
        {
            bad.push(name.to_string());
        }
        h.run(&format!("c9/{name}"), vec![("L", Obj::C(c))], Query::Dilate { object: "L".into() });
    }
    line(bad.is_empty(), format!("dilation invariants: failures {bad:?}, worst error {worst:.2e}"))
}

fn criterion_10(h: &mut Harness) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut bad = Vec::new();
    for k in 0..15 {
        let n = rng.random_range(2..=3);
        let d = rng.random_range(2..=3);
        let lam = random_channel(&FdAlgebra::full(n), &FdAlgebra::full(d), rng.random());
        let conj = commutant_conjugate(&lam).unwrap();
        let comp = complementary_channel(&lam).unwrap();
        let r = h.run(
            &format!("c10/{k}"),
            vec![("A", Obj::C(conj)), ("B", Obj::C(comp))],
            Query::Equiv {
                left: "A".into(),
                right: "B".into(),
            },
        );
        if r.verdict != ReportVerdict::Yes {
            bad.push(k);
        }
    }
    line(bad.is_empty(), format!("conjugate vs complementary: failures {bad:?}"))
}

fn criterion_11(h: &mut Harness) -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let (mut disagree, mut undecided, mut yes) = (Vec::new(), 0, 0);
    for k in 0..25 {
        let theta = rng.random_range(2..=3);
        let alg_f = random_domain(&mut rng);
        let f = random_experiment(&alg_f, theta, &mut rng);
        let e = if k % 2 == 0 {
            let alg_e = random_domain(&mut rng);
            f.pull_back(&random_channel(&alg_e, &alg_f, rng.random())).unwrap()
        } else {
            random_experiment(&random_domain(&mut rng), theta, &mut rng)
        };
        let (ce, cf) = (associated_channel(&e).unwrap(), associated_channel(&f).unwrap());
        let a = h.run(
            &format!("c11/{k}/experiments"),
            vec![("E", Obj::E(e)), ("F", Obj::E(f))],
            Query::Preorder {
                left: "E".into(),
                right: "F".into(),
            },
        );
        let b = h.run(
            &format!("c11/{k}/channels"),
            vec![("E", Obj::C(ce)), ("F", Obj::C(cf))],
            Query::Preorder {
                left: "E".into(),
                right: "F".into(),
            },
        );
        if a.verdict == ReportVerdict::Undecided || b.verdict == ReportVerdict::Undecided {
            undecided += 1;
        } else if a.verdict != b.verdict {
            disagree.push(k);
        }
        yes += (a.verdict == ReportVerdict::Yes) as usize;
    }
    line(
        disagree.is_empty() && undecided == 0,
        format!("experiments vs associated channels: {yes}/25 yes, {undecided} undecided, disagreements {disagree:?}"),
    )
}

fn criterion_12(h: &Harness) -> Line {
    let mut bad = Vec::new();
    for (tag, problem, report) in &h.yes_reports {
        match verify_report(problem, report) {
            Ok(o) if o.passed() => {}
            Ok(o) => bad.push(format!("{tag}: {:?} {:?}", o.violations(), o.failures)),
            Err(e) => bad.push(format!("{tag}: {e}")),
        }
    }
    line(
        bad.is_empty(),
        format!("{} yes-reports re-verified without a solver, failures {bad:?}", h.yes_reports.len()),
    )
}

fn main() -> ExitCode {
    let mut h = Harness::default();
    let criteria: Vec<(usize, fn(&mut Harness) -> Line)> = vec![
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
    ];
    let mut failed = 0;
    for (k, f) in criteria {
        let start = Instant::now();
        let l = f(&mut h);
        println!(
            "{} criterion {k:>2}: {} [{:.1} s]",
            if l.ok { "PASS" } else { "FAIL" },
            l.detail,
            start.elapsed().as_secs_f64()
        );
        failed += (!l.ok) as usize;
    }
    let l = criterion_12(&h);
    println!("{} criterion 12: {}", if l.ok { "PASS" } else { "FAIL" }, l.detail);
    failed += (!l.ok) as usize;
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
