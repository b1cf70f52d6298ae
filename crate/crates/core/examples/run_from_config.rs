//! A configured experiment run, stopped part way and resumed from its
//! checkpoint.

use osiwae::harness::config::ExperimentConfig;
use osiwae::harness::metrics::read_metrics;
use osiwae::harness::run::{run_experiment, RunOptions, CHECKPOINT_FILE, METRICS_FILE};

fn main() -> osiwae::Result<()> {
    let dir = std::env::temp_dir().join("osiwae-example-run");
    let text = format!(
        r#"
seed = 4
horizon = 400
learner = "osiwae"

[model]
kind = "lgssm"
dim = 2
hidden = 16

[training]
particles = 64
m = 32

[training.schedule]
resample = {{ ess_threshold = 0.5 }}
backward = {{ every_k = 5 }}

[output]
dir = "{}"
metric_every = 50
checkpoint_every = 100
"#,
        dir.display()
    );
    let config = ExperimentConfig::from_toml(&text)?;
    let first = run_experiment(&config, &RunOptions { stop_at: Some(199), resume: None })?;
    println!("stopped: {:?} at {:?}", first.manifest.status, first.manifest.last_step);
    let done = run_experiment(
        &config,
        &RunOptions {
            resume: Some(dir.join(CHECKPOINT_FILE)),
            stop_at: None,
        },
    )?;
    println!("resumed: {:?} at {:?}", done.manifest.status, done.manifest.last_step);
    for row in read_metrics(&dir.join(METRICS_FILE))? {
        println!(
            "step {:>4}  mae {:.4}  filter mse {:.2e}  ess {:.1}",
            row.step,
            row.mae_model,
            row.filter_mse.unwrap_or(f64::NAN),
            row.ess
        );
    }
    Ok(())
}
