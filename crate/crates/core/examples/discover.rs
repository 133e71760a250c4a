//! An offline search on the bundled CNN, written to a run directory and
//! summarized from it.

use mpq_proxy::cli::read_run_dir;
use mpq_proxy::evolve::{run, RunConfig};

fn main() -> mpq_proxy::Result<()> {
    let dir = std::env::temp_dir().join("mpq-proxy-discover-example");
    let _ = std::fs::remove_dir_all(&dir);
    let mut cfg = RunConfig::new("fixture", "calib16", "eval64");
    cfg.generations = 3;
    cfg.run_dir = Some(dir.clone());
    let result = run(&cfg)?;
    println!("best {} = {}", result.best.candidate.id, result.best.candidate.expr);
    println!("phi {:.4}  rho {:?}", result.best.phi, result.best.rho_sens);
    println!("series {:?}", result.best_phi_series);

    let report = read_run_dir(&dir)?;
    println!(
        "{}: {} generations, {} candidates, {} sentinels",
        dir.display(),
        report.generations_logged,
        report.candidates_logged,
        report.sentinels
    );
    Ok(())
}
