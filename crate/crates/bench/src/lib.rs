//! Shared inputs for the benchmarks.

use pragbench_core::{
    mock_complete, reference_counts, render_prompt, synthetic_dataset, builtin_templates, AnswerKey,
    CompletionRequest, Dataset, GenerationParams, MethodId, MockProfile, MockStyle, RunRecord,
};

/// Full-size synthetic dataset (520 instances, four options each).
pub fn reference_dataset() -> Dataset {
    synthetic_dataset("bench", &reference_counts(), 4, 7)
}

/// One mock reasoning-style response per instance and method.
pub fn mock_responses(ds: &Dataset) -> Vec<String> {
    let profile = MockProfile::uniform(0.8, MockStyle::ReasoningThenAnswer, AnswerKey::from_dataset(ds));
    let templates = builtin_templates();
    let mut out = Vec::new();
    for inst in &ds.instances {
        for m in MethodId::ALL {
            let p = render_prompt(inst, &templates[&m]);
            let req = CompletionRequest::new("bench", p.text, GenerationParams::default());
            out.push(mock_complete(&req, &profile).response_text);
        }
    }
    out
}

/// Scored records for every (instance, method) of `ds`, correct on a
/// fixed pseudo-random subset.
pub fn synthetic_records(ds: &Dataset) -> Vec<RunRecord> {
    let mut out = Vec::new();
    for (i, inst) in ds.instances.iter().enumerate() {
        for m in MethodId::ALL {
            let hit = (i * 7 + m.ordinal() * 3) % 5 != 0;
            let chosen = if hit { inst.gold_index } else { (inst.gold_index + 1) % inst.options.len() };
            out.push(RunRecord::scored(
                &inst.id,
                inst.phenomenon,
                m,
                "bench",
                Some(chosen),
                inst.gold_index,
                400 + (i as u64 % 50) * 10 + m.ordinal() as u64 * 300,
                20 + m.ordinal() as u64 * 150,
            ));
        }
    }
    out
}
