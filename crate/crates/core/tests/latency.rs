mod common;

use common::Harness;
use proptest::prelude::*;
use serde_json::json;
use wheelhouse_core::domain::DEFAULT_OVERHEAD_BUDGET_MS;
use wheelhouse_core::gateway::scripted::{Predicate, ScriptResponse, ScriptRule};
use wheelhouse_core::gateway::AgentName;

fn delayed_rules(video: u64, guidance: u64, code: u64, synth: u64) -> Vec<ScriptRule> {
    let json = |v| ScriptResponse::Json(v);
    vec![
        ScriptRule::new(
            AgentName::Video,
            Predicate::Any,
            json(json!({"relevant_segment": "s", "key_insight": "k", "coverage_gap": "none"})),
        )
        .with_delay_ms(video),
        ScriptRule::new(
            AgentName::Guidance,
            Predicate::Any,
            json(json!({"conceptual_gap": "g", "pedagogical_approach": "p", "misconception_flag": "none"})),
        )
        .with_delay_ms(guidance),
        ScriptRule::new(
            AgentName::Code,
            Predicate::Any,
            json(json!({"diagnosis": "d", "correct_components": "c", "next_step": "n", "alternative_approach": "none"})),
        )
        .with_delay_ms(code),
        ScriptRule::new(AgentName::Synthesizer, Predicate::Any, ScriptResponse::Text("Run cell c2 again.".into()))
            .with_delay_ms(synth),
    ]
}

async fn one_turn(video: u64, guidance: u64, code: u64, synth: u64) -> wheelhouse_core::domain::TurnTiming {
    let h = Harness::new(delayed_rules(video, guidance, code, synth));
    let key = h.session("stu-1", "qis-m1");
    h.orchestrator.handle_chat_turn(&key, "why?").await.unwrap().timing
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn wall_time_tracks_the_slowest_specialist() {
    let t = one_turn(300, 20, 40, 50).await;
    assert!(t.wall >= 350, "{t:?}");
    // Sequential execution would need at least 410 ms.
    assert!(t.wall < 410, "{t:?}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn wall_time_stays_inside_the_parallel_bound(
        video in 0u64..150,
        guidance in 0u64..150,
        code in 0u64..150,
        synth in 0u64..80,
    ) {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
        let t = rt.block_on(one_turn(video, guidance, code, synth));
        let floor = video.max(guidance).max(code) + synth;
        prop_assert!(t.wall >= floor, "{:?} below {}", t, floor);
        prop_assert!(t.wall <= floor + DEFAULT_OVERHEAD_BUDGET_MS, "{:?} above {}", t, floor + DEFAULT_OVERHEAD_BUDGET_MS);
        prop_assert!(t.within_budget(DEFAULT_OVERHEAD_BUDGET_MS));
    }
}
