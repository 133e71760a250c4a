//! Offline candidate generation and the prompt an LLM generator would see.

use mpq_proxy::dpo::Action;
use mpq_proxy::generator::{
    generate_offline, render_prompt, ContextEntry, GenerationOp, GenerationRequest, DEFAULT_TOKEN_BUDGET,
};

fn main() -> mpq_proxy::Result<()> {
    let init = generate_offline(&GenerationRequest::init(4, 1))?;
    for c in &init {
        println!("{} [{}] {}", c.id, c.reasoning, c.expr);
    }

    let context: Vec<ContextEntry> = init
        .iter()
        .map(|c| ContextEntry::new(c.id.clone(), c.expr.clone(), 0.4))
        .collect();
    let action = Action::from_id(41).expect("valid id");
    let req = GenerationRequest {
        op: GenerationOp::Crossover,
        context,
        count: 3,
        action: Some(action),
        seed: 7,
        generation: 1,
        first_seq: 4,
    };
    for c in generate_offline(&req)? {
        println!("{} parents {:?}: {}", c.id, c.parent_ids, c.expr);
    }
    println!("\n{}", render_prompt(&req, DEFAULT_TOKEN_BUDGET)?);
    Ok(())
}
