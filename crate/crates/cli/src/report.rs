use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hetsplit::artifact::Artifact;
use hetsplit::planner::PlacementPlan;
use hetsplit::trace::Lane;

use crate::commands::{read_json, strategies_csv, BreakdownBody, RunBody, StrategiesBody, NORMALIZATION};

const REQUIRED: [&str; 4] = ["plan.json", "timeline.csv", "breakdown.json", "strategies.json"];

#[derive(Serialize)]
struct BreakdownCsvRow {
    lane: String,
    busy_pct: f64,
    idle_pct: f64,
}

#[derive(Debug, Deserialize)]
struct SweepCsvRow {
    budget_bytes: u64,
    budget_fraction: f64,
    feasible: bool,
    makespan: f64,
    per_token_latency: f64,
    tokens_per_sec: f64,
}

fn pct(x: f64) -> f64 {
    (x * 1e4).round() / 100.0 + 0.0
}

pub fn report(out: &Path) -> Result<()> {
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|f| !out.join(f).is_file()).collect();
    if !missing.is_empty() {
        bail!("missing artifacts in {}: {}", out.display(), missing.join(", "));
    }
    let plan: PlacementPlan = read_json(&out.join("plan.json"))?;
    let strategies: Artifact<StrategiesBody> = read_json(&out.join("strategies.json"))?;
    let breakdown: Artifact<BreakdownBody> = read_json(&out.join("breakdown.json"))?;
    let run: Option<Artifact<RunBody>> = match out.join("run_report.json") {
        p if p.is_file() => Some(read_json(&p)?),
        _ => None,
    };
    let sweep = read_sweep(&out.join("sweep.csv"))?;

    let prov = &strategies.provenance;
    let header = prov.csv_header();
    let mut md = String::new();
    writeln!(md, "# Offload report: {}\n", prov.model)?;
    writeln!(md, "- tool: {} {}", prov.tool, prov.version)?;
    writeln!(md, "- profile: `{}`", prov.profile_digest)?;
    if let Some(seed) = prov.seed {
        writeln!(md, "- seed: {seed}")?;
    }
    for (k, v) in &prov.settings {
        writeln!(md, "- {k}: {v}")?;
    }

    writeln!(md, "\n## Plan\n")?;
    writeln!(md, "| budget | reserved | staging | used | split modules | resident kinds |")?;
    writeln!(md, "|---:|---:|---:|---:|---:|---|")?;
    let kinds: Vec<String> = plan.promoted_kinds.iter().map(|k| format!("{k:?}")).collect();
    writeln!(
        md,
        "| {} | {} | {} | {} | {} | {} |",
        plan.budget,
        plan.reserved_bytes,
        plan.staging_bytes,
        plan.gpu_bytes_used,
        plan.split_modules().count(),
        if kinds.is_empty() { "none".to_string() } else { kinds.join(", ") }
    )?;

    writeln!(md, "\n## Strategies\n")?;
    writeln!(md, "Lane shares are {NORMALIZATION}.\n")?;
    writeln!(md, "| strategy | makespan (s) | vs hybrid | CPU % | PIN % | TRANS % | GPU % |")?;
    writeln!(md, "|---|---:|---:|---:|---:|---:|---:|")?;
    let hybrid = strategies
        .body
        .strategies
        .iter()
        .find(|r| r.strategy == hetsplit::simulator::StrategyKind::Hybrid)
        .map(|r| r.makespan);
    for r in &strategies.body.strategies {
        let f = |l: Lane| pct(r.breakdown.fractions.get(&l).copied().unwrap_or(0.0));
        let rel = hybrid.map(|h| format!("{:.3}x", r.makespan / h)).unwrap_or_default();
        writeln!(
            md,
            "| {} | {:.6} | {} | {:.2} | {:.2} | {:.2} | {:.2} |",
            r.strategy.name(),
            r.makespan,
            rel,
            f(Lane::Cpu),
            f(Lane::Pin),
            f(Lane::Trans),
            f(Lane::Gpu)
        )?;
    }

    let b = &breakdown.body;
    writeln!(md, "\n## Lane breakdown ({})\n", b.strategy.name())?;
    writeln!(md, "Window {:.6} s to {:.6} s.\n", b.breakdown.window.0, b.breakdown.window.1)?;
    writeln!(md, "| lane | busy % | idle % | idle intervals |")?;
    writeln!(md, "|---|---:|---:|---:|")?;
    let mut rows = Vec::new();
    for lane in Lane::ALL {
        let busy = pct(b.breakdown.fractions.get(&lane).copied().unwrap_or(0.0));
        let idle = ((100.0 - busy) * 100.0).round() / 100.0;
        let gaps = b.breakdown.idle.get(&lane).map_or(0, Vec::len);
        writeln!(md, "| {lane} | {busy:.2} | {idle:.2} | {gaps} |")?;
        rows.push(BreakdownCsvRow {
            lane: lane.to_string(),
            busy_pct: busy,
            idle_pct: idle,
        });
    }

    if let Some(run) = &run {
        let r = &run.body.report;
        writeln!(md, "\n## Engine run ({})\n", r.strategy.name())?;
        writeln!(md, "| makespan (s) | simulated (s) | ratio | prefill (s) | tok/s | checksum |")?;
        writeln!(md, "|---:|---:|---:|---:|---:|---|")?;
        writeln!(
            md,
            "| {:.4} | {:.4} | {:.3} | {:.4} | {:.2} | `{}` |",
            r.makespan,
            run.body.simulated_makespan,
            r.makespan / run.body.simulated_makespan,
            r.prefill_latency,
            r.tokens_per_sec,
            &r.checksum[..16.min(r.checksum.len())]
        )?;
    }

    if let Some(sweep) = &sweep {
        writeln!(md, "\n## Budget sweep\n")?;
        writeln!(md, "| budget (bytes) | share | makespan (s) | per token (s) | tok/s |")?;
        writeln!(md, "|---:|---:|---:|---:|---:|")?;
        for s in sweep {
            if s.feasible {
                writeln!(
                    md,
                    "| {} | {:.1}% | {:.6} | {:.6} | {:.2} |",
                    s.budget_bytes,
                    s.budget_fraction * 100.0,
                    s.makespan,
                    s.per_token_latency,
                    s.tokens_per_sec
                )?;
            } else {
                writeln!(md, "| {} | {:.1}% | infeasible | | |", s.budget_bytes, s.budget_fraction * 100.0)?;
            }
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let breakdown_csv = format!("{header}{}", String::from_utf8(w.into_inner()?)?);
    write(&out.join("breakdown.csv"), &breakdown_csv)?;
    write(&out.join("strategies.csv"), &strategies_csv(&header, &strategies.body.strategies)?)?;
    write(&out.join("report.md"), &md)?;
    println!("wrote {}", out.join("report.md").display());
    Ok(())
}

fn read_sweep(path: &Path) -> Result<Option<Vec<SweepCsvRow>>> {
    if !path.is_file() {
        return Ok(None);
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<SweepCsvRow>, _>>()?;
    Ok(Some(rows))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
