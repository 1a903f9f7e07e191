mod common;

use proptest::prelude::*;

use hetsplit::costmodel::{DeviceProfile, SolverConfig};
use hetsplit::model::{enumerate_modules, memory_breakdown, MemoryCategory, ModuleKind};
use hetsplit::pipeline::{self, Workload};
use hetsplit::planner::{self, Placement, PlacementPlan, PlanError};
use hetsplit::simulator::StrategyKind;

use common::*;

fn rate() -> impl Strategy<Value = f64> {
    (6.0f64..11.0).prop_map(|e| 10f64.powf(e))
}

fn profile() -> impl Strategy<Value = DeviceProfile> {
    (rate(), rate(), rate(), rate()).prop_map(|(c, g, t, p)| DeviceProfile::new(c, g * 10.0, t, p))
}

/// Profiles where a resident module runs faster on the GPU than its split counterpart.
fn gpu_bound_profile() -> impl Strategy<Value = DeviceProfile> {
    (rate(), rate(), rate(), 1.0f64..3.0).prop_map(|(c, t, p, e)| DeviceProfile::new(c, c.max(t).max(p) * 10f64.powf(e), t, p))
}

fn shape() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (2usize..6, 1usize..4, 2usize..12, 1usize..5).prop_map(|(layers, heads, per_head, mult)| (layers, heads * per_head, heads * per_head * mult, heads))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_fit_their_budget((layers, hidden, ffn, heads) in shape(), p in profile(), share in 0.0f64..1.6) {
        let spec = toy(layers, hidden, ffn, heads);
        let w = Workload::default();
        let c = curves(&spec, &p);
        let min = minimum_budget(&spec, &p, &c, &w);
        let budget = min + (share * spec.model_bytes() as f64) as u64;
        let plan = pipeline::build_plan(&spec, &p, &c, &SolverConfig::default(), budget, &w).unwrap();
        prop_assert!(plan.gpu_bytes_used <= budget);
        prop_assert_eq!(planner::validate_plan(&plan), vec![]);
        for d in &plan.decisions {
            prop_assert!(d.module.is_linear() || d.placement == Placement::GpuResident);
            prop_assert!((0.0..=1.0).contains(&d.alpha));
        }
        let back: PlacementPlan = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
        prop_assert_eq!(back, plan);
    }

    #[test]
    fn below_minimum_is_infeasible((layers, hidden, ffn, heads) in shape(), p in profile(), cut in 1u64..1000) {
        let spec = toy(layers, hidden, ffn, heads);
        let w = Workload::default();
        let c = curves(&spec, &p);
        let min = minimum_budget(&spec, &p, &c, &w);
        let r = pipeline::build_plan(&spec, &p, &c, &SolverConfig::default(), min.saturating_sub(cut), &w);
        let is_infeasible = matches!(r, Err(PlanError::InfeasibleBudget { minimum, .. }) if minimum == min);
        prop_assert!(is_infeasible);
    }

    #[test]
    fn promoting_more_kinds_never_slows_decode((layers, hidden, ffn, heads) in shape(), p in gpu_bound_profile(), a in 0.0f64..1.2, b in 0.0f64..1.2) {
        let spec = toy(layers, hidden, ffn, heads);
        let w = Workload::default();
        let c = curves(&spec, &p);
        let min = minimum_budget(&spec, &p, &c, &w);
        let total = spec.model_bytes() as f64;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let budgets = [min + (lo * total) as u64, min + (hi * total) as u64];
        let plans: Vec<PlacementPlan> = budgets
            .iter()
            .map(|&budget| pipeline::build_plan(&spec, &p, &c, &SolverConfig::default(), budget, &w).unwrap())
            .collect();
        // a lower-gain kind can fill a gap that a larger budget hands to a higher-gain kind
        prop_assume!(plans[0].promoted_kinds.iter().all(|k| plans[1].promoted_kinds.contains(k)));
        let rows = pipeline::sweep(&spec, &p, &c, &SolverConfig::default(), &budgets, &w, StrategyKind::Hybrid).unwrap();
        prop_assert!(rows[1].per_token_latency <= rows[0].per_token_latency * (1.0 + 1e-12));
    }
}

/// Greedy by gain is not monotone in the budget: here MlpFc1 does not fit at the
/// smaller budget, MlpFc2 takes the gap, and the larger budget swaps them.
#[test]
fn greedy_can_trade_a_promoted_kind_for_a_higher_gain_one() {
    let spec = toy(4, 9, 27, 1);
    let p = DeviceProfile::new(37002621.62578313, 837905894.0417423, 83790589.40417424, 2419313.805747346);
    let w = Workload::default();
    let c = curves(&spec, &p);
    let min = minimum_budget(&spec, &p, &c, &w);
    let total = spec.model_bytes() as f64;
    let budgets = [min + (0.463 * total) as u64, min + (0.653 * total) as u64];
    let plans: Vec<PlacementPlan> = budgets
        .iter()
        .map(|&budget| pipeline::build_plan(&spec, &p, &c, &SolverConfig::default(), budget, &w).unwrap())
        .collect();
    assert!(plans[0].promoted_kinds.contains(&ModuleKind::MlpFc2));
    assert!(!plans[0].promoted_kinds.contains(&ModuleKind::MlpFc1));
    assert!(plans[1].promoted_kinds.contains(&ModuleKind::MlpFc1));
    assert!(!plans[1].promoted_kinds.contains(&ModuleKind::MlpFc2));
    assert_eq!(plans[0].promoted_kinds.len(), plans[1].promoted_kinds.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_bytes_match_module_sum((layers, hidden, ffn, heads) in shape(), seq in 1usize..64) {
        let spec = toy(layers, hidden, ffn, heads);
        let r = memory_breakdown(&spec, 1, seq).unwrap();
        let sum: u64 = enumerate_modules(&spec).iter().filter(|m| m.is_linear()).map(|m| m.param_bytes).sum();
        prop_assert_eq!(r.linear_bytes, sum);
        let f: f64 = [MemoryCategory::Linear, MemoryCategory::Embedding, MemoryCategory::LayerNorm, MemoryCategory::Bias, MemoryCategory::KvCache]
            .iter()
            .map(|&c| r.fraction(c))
            .sum();
        prop_assert!((f - 1.0).abs() < 1e-12);
    }
}

#[test]
fn linear_share_grows_with_model_size() {
    let shares: Vec<f64> = ["opt-125m", "opt-1.3b", "opt-6.7b", "opt-13b", "opt-30b"]
        .iter()
        .map(|m| memory_breakdown(&preset_model(m), 1, 512).unwrap().fraction(MemoryCategory::Linear))
        .collect();
    assert!(shares.windows(2).all(|w| w[1] > w[0]), "{shares:?}");
    assert!(shares[3] > 0.95 && shares[4] > 0.97, "{shares:?}");
}

#[test]
fn ten_percent_of_a_large_model_validates() {
    let spec = preset_model("opt-6.7b");
    let profile = preset_profile("a10-xeon");
    let budget = pipeline::Budget::Fraction(0.1).resolve(&spec);
    let plan = plan_at(&spec, &profile, Some(budget), &Workload::default());
    assert!(planner::validate_plan(&plan).is_empty());
    assert!(plan.gpu_bytes_used <= budget);
}

#[test]
fn sweep_marks_infeasible_rows() {
    let spec = preset_model("opt-125m");
    let profile = preset_profile("a10-xeon");
    let c = curves(&spec, &profile);
    let budgets = [1000, spec.model_bytes()];
    let rows = pipeline::sweep(&spec, &profile, &c, &SolverConfig::default(), &budgets, &Workload::default(), StrategyKind::Hybrid).unwrap();
    assert!(!rows[0].feasible && rows[0].makespan.is_nan());
    assert!(rows[1].feasible && rows[1].makespan > 0.0);
}
