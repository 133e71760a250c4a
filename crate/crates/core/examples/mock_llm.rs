//! LLM generation against a local scripted endpoint, including a reply that
//! breaks the output contract and is retried.

use mpq_proxy::generator::{
    generate_llm, ContextEntry, GenerationOp, GenerationRequest, LlmEndpointConfig, MockChatServer, MockReply,
};

fn main() -> mpq_proxy::Result<()> {
    let server = MockChatServer::start(vec![
        MockReply::Content("Weight spread matters most.\n```\nw_std * sqrt(n_params)\n```".into()),
        MockReply::Content("I would rather not.".into()),
        MockReply::Content("Deeper layers saturate.\n```\na_entropy / depth\n```".into()),
    ])?;
    let mut cfg = LlmEndpointConfig::new(server.base_url(), "mock-model");
    cfg.retry_backoff_ms = 0;
    cfg.max_in_flight = 1;
    let req = GenerationRequest {
        op: GenerationOp::Mutation,
        context: vec![ContextEntry::new("c000000", "w_l2 * a_entropy", 0.44)],
        count: 2,
        action: None,
        seed: 0,
        generation: 1,
        first_seq: 10,
    };
    let outcome = generate_llm(&req, &cfg)?;
    for c in &outcome.candidates {
        println!("{} {}  ({})", c.id, c.expr, c.reasoning);
    }
    for e in &outcome.events {
        println!("event {}", serde_json::to_string(e)?);
    }
    println!("{} requests served", server.requests().len());
    Ok(())
}
