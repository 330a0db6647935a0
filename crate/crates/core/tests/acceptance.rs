//! Acceptance suite. Runs every criterion in sequence, prints one
//! `[PASS]`/`[FAIL]` line per criterion and exits non-zero if any failed.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::time::{Duration, Instant};

use hqtp_core::genbench::{self, GenSpec, SPARSITY_TAU};
use hqtp_core::solver::DESCENT_SLACK;
use hqtp_core::oracle::{linear_oracle, oracle_solve, DEFAULT_GRID_POINTS};
use hqtp_core::{
    dual_sweep, solve_hqtp, solve_qtp, validate_problem, CostKind, CostModel, DualState, MemoryMode,
    Problem, Solution, SolverOptions,
};
use ndarray::Array2;

use common::{max_abs_diff, random_problem, rel_gap, SMALL_SHAPES};

// Per-thread byte accounting: live bytes and the high-water mark since the
// last reset.
struct CountingAlloc;

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
}

fn track(delta: isize) {
    let _ = LIVE.try_with(|live| {
        let now = live.get() + delta;
        live.set(now);
        let _ = PEAK.try_with(|peak| peak.set(peak.get().max(now)));
    });
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        track(layout.size() as isize);
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        track(-(layout.size() as isize));
        System.dealloc(ptr, layout)
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        track(layout.size() as isize);
        System.alloc_zeroed(layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        track(new_size as isize - layout.size() as isize);
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

/// Peak bytes allocated above the starting level while `f` runs.
fn peak_extra<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let base = LIVE.with(Cell::get);
    PEAK.with(|p| p.set(base));
    let out = f();
    let peak = PEAK.with(Cell::get);
    (out, (peak - base).max(0) as usize)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const MODEL_CORPUS: usize = 50;

fn corpus_size(k: usize) -> usize {
    4 + k * 28 / (MODEL_CORPUS - 1)
}

fn corpus_beta2(kind: CostKind) -> f64 {
    match kind {
        CostKind::L0Approx => genbench::L0_BETA2,
        _ => genbench::L1_BETA2,
    }
}

fn descent_options() -> SolverOptions {
    SolverOptions {
        quadratic_fast_path: false,
        ..SolverOptions::default()
    }
}

/// 50 instances per model, sizes 4x4 through 32x32.
fn model_corpus() -> Vec<(CostKind, Problem)> {
    let mut out = Vec::new();
    for kind in [CostKind::L1Approx, CostKind::L0Approx, CostKind::Sqt, CostKind::QtAffine] {
        for k in 0..MODEL_CORPUS {
            let size = corpus_size(k);
            out.push((kind, random_problem(kind, size, size, 1000 + k as u64, corpus_beta2(kind))));
        }
    }
    out
}

fn descent(corpus: &[(CostKind, Problem)], runs: &mut Vec<(Problem, Solution)>) -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let opts = descent_options();
    for (idx, (kind, problem)) in corpus.iter().enumerate() {
        match solve_hqtp(problem, &opts) {
            Ok(sol) => {
                let f0 = sol.trace.records.first().map_or(0.0, |r| r.objective);
                let slack = DESCENT_SLACK * f0.max(1.0);
                let objectives: Vec<f64> = sol.trace.objectives().collect();
                if objectives.windows(2).any(|w| w[1] > w[0] + slack) {
                    failures.push(format!("{kind} #{idx}: objective rose"));
                }
                runs.push((problem.clone(), sol));
            }
            Err(e) => failures.push(format!("{kind} #{idx}: {e}")),
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} traces, {} failures, {:.2} s (limit 30 s){}",
            corpus.len(),
            failures.len(),
            elapsed.as_secs_f64(),
            first(&failures)
        ),
    )
}

fn first(failures: &[String]) -> String {
    failures.first().map_or(String::new(), |f| format!("; first: {f}"))
}

fn feasibility(runs: &[(Problem, Solution)]) -> Outcome {
    let mut checked = 0;
    let mut failures = Vec::new();
    for (idx, (problem, sol)) in runs.iter().enumerate() {
        if !sol.converged {
            continue;
        }
        checked += 1;
        let scale = problem.max_entry();
        let min_x = sol.x.iter().cloned().fold(f64::INFINITY, f64::min);
        let k = sol.kkt;
        if k.row > 1e-7 * scale || k.col > 1e-7 * scale {
            failures.push(format!("run {idx}: marginals {:.3e}/{:.3e}", k.row, k.col));
        }
        let b = problem.cost().linear();
        let max_s = sol
            .x
            .indexed_iter()
            .fold(0.0_f64, |acc, ((i, j), _)| acc.max(sol.duals.slack(i, j, b)));
        let max_x = sol.x.iter().cloned().fold(0.0, f64::max);
        if k.complementarity > 1e-6 * max_x.max(1.0) * max_s.max(1.0) {
            failures.push(format!("run {idx}: complementarity {:.3e}", k.complementarity));
        }
        if min_x < -1e-9 {
            failures.push(format!("run {idx}: min x {min_x:.3e}"));
        }
    }
    outcome(
        failures.is_empty() && checked > 0,
        format!(
            "{checked} converged runs of {}, {} violations{}",
            runs.len(),
            failures.len(),
            first(&failures)
        ),
    )
}

const SMALL_CORPUS: usize = 100;

fn small_problem(kind: CostKind, k: usize, beta2: f64) -> Problem {
    let (m, n) = SMALL_SHAPES[k % SMALL_SHAPES.len()];
    random_problem(kind, m, n, 5000 + k as u64, beta2)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for kind in [CostKind::Sqt, CostKind::QtAffine] {
        for k in 0..SMALL_CORPUS {
            let problem = small_problem(kind, k, 0.0);
            let run = solve_hqtp(&problem, &SolverOptions::default())
                .and_then(|sol| Ok((sol, oracle_solve(&problem, DEFAULT_GRID_POINTS)?)));
            match run {
                Ok((sol, oracle)) => {
                    let gap = rel_gap(sol.objective, oracle.objective_star);
                    worst = worst.max(gap);
                    if gap > 1e-4 {
                        failures.push(format!("{kind} #{k}: gap {gap:.3e}"));
                    }
                }
                Err(e) => failures.push(format!("{kind} #{k}: {e}")),
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(10),
        format!(
            "{} instances, worst relative gap {worst:.2e} (limit 1e-4), {:.2} s (limit 10 s){}",
            2 * SMALL_CORPUS,
            elapsed.as_secs_f64(),
            first(&failures)
        ),
    )
}

fn linear_limit() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for k in 0..SMALL_CORPUS {
        let problem = small_problem(CostKind::L1Approx, k, 1e-6);
        let run = solve_hqtp(&problem, &SolverOptions::default())
            .and_then(|sol| Ok((sol, linear_oracle(&problem)?)));
        match run {
            Ok((sol, lp)) => {
                let gap = rel_gap(sol.objective, lp.objective_star);
                worst = worst.max(gap);
                if gap > 1e-2 {
                    failures.push(format!("#{k}: gap {gap:.3e}"));
                }
            }
            Err(e) => failures.push(format!("#{k}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{SMALL_CORPUS} instances at beta2 = 1e-6, worst relative gap {worst:.2e} (limit 1e-2){}",
            first(&failures)
        ),
    )
}

fn quadratic_reduction() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for k in 0..MODEL_CORPUS {
        let size = corpus_size(k);
        let problem = random_problem(CostKind::Sqt, size, size, 9000 + k as u64, 0.0);
        let run = solve_hqtp(&problem, &descent_options())
            .and_then(|h| Ok((h, solve_qtp(&problem, &SolverOptions::default())?)));
        match run {
            Ok((h, q)) => {
                let max_x = q.x.iter().cloned().fold(0.0, f64::max);
                let rel = max_abs_diff(&h.x, &q.x) / max_x;
                worst = worst.max(rel);
                if rel > 1e-8 {
                    failures.push(format!("#{k}: {rel:.3e}"));
                }
            }
            Err(e) => failures.push(format!("#{k}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{MODEL_CORPUS} instances, worst |dx|/max x {worst:.2e} (limit 1e-8){}",
            first(&failures)
        ),
    )
}

fn sparsity_ordering() -> Outcome {
    let start = Instant::now();
    let size = 32;
    let mut holds = 0;
    let mut errors = Vec::new();
    for seed in 0..20 {
        let (p, q) = genbench::generate_instance(&GenSpec::square(size, seed)).unwrap();
        let mut counts = Vec::new();
        for kind in [CostKind::Sqt, CostKind::L1Approx, CostKind::L0Approx] {
            let cost = genbench::distance_cost_model(size, size, kind, None).unwrap();
            let problem = validate_problem(p.clone(), q.clone(), cost).unwrap();
            match solve_hqtp(&problem, &SolverOptions::default()) {
                Ok(sol) => counts.push(genbench::sparsity(&sol.x, SPARSITY_TAU)),
                Err(e) => errors.push(format!("seed {seed} {kind}: {e}")),
            }
        }
        if let [sqt, l1, l0] = counts[..] {
            if l0 <= l1 && l1 <= sqt {
                holds += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        holds >= 18 && elapsed < Duration::from_secs(60),
        format!(
            "ordering l0 <= l1 <= sqt on {holds}/20 seeds (need 18), {:.2} s (limit 60 s){}",
            elapsed.as_secs_f64(),
            first(&errors)
        ),
    )
}

fn majorization() -> Outcome {
    let mut grid = vec![0.0];
    grid.extend((0..99).map(|k| 10f64.powf(-6.0 + 9.0 * k as f64 / 98.0)));
    let mut worst_bound: f64 = 0.0;
    let mut worst_touch: f64 = 0.0;
    let mut checked = 0;
    for (kind, beta2) in [
        (CostKind::L1Approx, 1e-6),
        (CostKind::L1Approx, 1e-3),
        (CostKind::L1Approx, 1.0),
        (CostKind::L0Approx, 1e-3),
        (CostKind::L0Approx, 1e-1),
        (CostKind::L0Approx, 10.0),
    ] {
        let c = Array2::from_shape_vec((1, 3), vec![0.3, 1.0, 7.5]).unwrap();
        let model = CostModel::new(kind, c, None, Some(beta2)).unwrap();
        for j in 0..3 {
            for &t0 in &grid {
                let q = model.majorizer(0, j, t0).unwrap();
                let f0 = model.cost_value(0, j, t0).unwrap();
                worst_touch = worst_touch.max((q.eval(t0) - f0).abs() / f0.abs().max(1.0));
                for &t in &grid {
                    let f = model.cost_value(0, j, t).unwrap();
                    worst_bound = worst_bound.max(f - q.eval(t));
                    checked += 1;
                }
            }
        }
    }
    outcome(
        worst_bound <= 1e-9 && worst_touch <= 1e-12,
        format!(
            "{checked} (t0, t) pairs, max f - Q {worst_bound:.2e} (limit 1e-9), max |Q(t0) - f(t0)| rel {worst_touch:.2e} (limit 1e-12)"
        ),
    )
}

fn memory_contract() -> Outcome {
    const F64: usize = std::mem::size_of::<f64>();
    let mut details = Vec::new();
    let mut pass = true;

    for (m, n) in [(16, 16), (64, 256), (256, 64), (512, 512)] {
        let omega_bar = Array2::from_elem((m, n), 0.5);
        let (p, q) = common::marginals(m, n, 7);
        let mut state = DualState::initial(m, n, MemoryMode::Lean);
        let (res, extra) = peak_extra(|| dual_sweep(&omega_bar, None, &p, &q, &mut state));
        let limit = 3 * (m + n) * F64 + 1024;
        let ok = res.is_ok() && extra <= limit;
        pass &= ok;
        if !ok || (m, n) == (512, 512) {
            details.push(format!("lean sweep {m}x{n}: {extra} B (limit {limit})"));
        }
    }

    let size = 512;
    let (p, q) = genbench::generate_instance(&GenSpec::square(size, 3)).unwrap();
    let cost = CostModel::sqt(genbench::distance_costs(size, size)).unwrap();
    let problem = validate_problem(p, q, cost).unwrap();
    let opts = SolverOptions {
        memory_mode: MemoryMode::Lean,
        ..SolverOptions::default()
    };
    let (res, extra) = peak_extra(|| solve_qtp(&problem, &opts));
    let matrix = size * size * F64;
    let limit = 2 * matrix + 16 * 2 * size * F64 + 64 * 1024;
    let ok = res.as_ref().is_ok_and(|s| s.converged) && extra <= limit;
    pass &= ok;
    details.push(format!(
        "lean SQT solve {size}x{size}: peak {extra} B = {:.3} matrices (limit {limit} B){}",
        extra as f64 / matrix as f64,
        res.err().map_or(String::new(), |e| format!(", error: {e}"))
    ));
    outcome(pass, details.join("; "))
}

fn main() {
    let corpus = model_corpus();
    let mut runs = Vec::new();
    let results = [
        ("AC1 monotone descent", descent(&corpus, &mut runs)),
        ("AC2 feasibility and KKT", feasibility(&runs)),
        ("AC3 convex oracle equivalence", oracle_equivalence()),
        ("AC4 linear-limit equivalence", linear_limit()),
        ("AC5 quadratic reduction", quadratic_reduction()),
        ("AC6 sparsity ordering", sparsity_ordering()),
        ("AC7 majorization", majorization()),
        ("AC8 memory contract", memory_contract()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
