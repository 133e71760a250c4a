//! Preference updates on the action policy.

use mpq_proxy::dpo::{dpo_loss, dpo_update, mean_margin, Action, PolicyParams, PreferencePair};

fn main() -> mpq_proxy::Result<()> {
    let pairs = vec![
        PreferencePair::new(5, 60),
        PreferencePair::new(5, 17),
        PreferencePair::new(22, 60),
    ];
    let mut policy = PolicyParams::uniform(0.5, 0.1);
    println!("loss {:.6} at the reference", dpo_loss(&policy, &pairs)?);
    for round in 1..=4 {
        policy = dpo_update(&policy, &pairs, 25)?;
        println!(
            "round {round}: loss {:.6}  margin {:.4}",
            dpo_loss(&policy, &pairs)?,
            mean_margin(&policy, &pairs)
        );
    }
    let probs = policy.probabilities();
    let mut ranked: Vec<usize> = (0..probs.len()).collect();
    ranked.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    for &id in &ranked[..3] {
        println!("p = {:.4}  {:?}", probs[id], Action::from_id(id).expect("valid id"));
    }
    Ok(())
}
