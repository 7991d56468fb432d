//! `dmdc synth`: writes a ready-to-run synthetic DED data directory.

use std::path::{Path, PathBuf};

use dmdc_core::dataset::{ExperimentManifest, ManifestEntry};
use dmdc_core::plant::{
    ded_input_channels, ded_observable_channels, ded_plant, ded_program, generate_ded, DedScenario, WORKING_DISTANCE,
    WORKING_DISTANCE_SENTINEL,
};
use dmdc_core::gcode::LASER_POWER;
use dmdc_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ImputeDirective, RunConfig};

pub struct SynthOptions {
    pub out: PathBuf,
    pub scenario: DedScenario,
    pub write_gcode: bool,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Returns the path of the generated run config.
pub fn run(opts: &SynthOptions) -> Result<PathBuf> {
    let sc = &opts.scenario;
    if sc.experiments < 2 {
        return Err(Error::Config("at least two experiments are needed for a runnable config".into()));
    }
    let sims = generate_ded(sc)?;
    std::fs::create_dir_all(&opts.out)?;
    let mut manifest = ExperimentManifest::default();
    for (i, sim) in sims.iter().enumerate() {
        let id = sim.dataset.experiment_id.clone();
        let file = format!("{id}.csv");
        sim.dataset.write_csv(&opts.out.join(&file))?;
        if opts.write_gcode {
            // same stream as the generator, so the text matches the data
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
            rng.set_stream(i as u64 + 1);
            let (text, _) = ded_program(sc.tracks_per_experiment, &mut rng);
            std::fs::write(opts.out.join(format!("{id}.gcode")), text)?;
        }
        manifest.entries.push(ManifestEntry { experiment_id: id, path: file.into(), sample_rate_hz: sc.sample_rate_hz });
    }
    manifest.save(&opts.out.join("manifest.json"))?;

    let mut schema = ded_input_channels();
    schema.extend(ded_observable_channels());
    write_json(&opts.out.join("schema.json"), &schema)?;
    write_json(&opts.out.join("plant.json"), &ded_plant(sc)?)?;
    write_json(&opts.out.join("scenario.json"), sc)?;

    let mut cfg = RunConfig::new("manifest.json".into(), "schema.json".into());
    cfg.output_dir = "pipeline_out".into();
    cfg.seed = sc.seed;
    if sc.experiments <= cfg.cv.p {
        cfg.cv.p = sc.experiments - 1;
    }
    if sc.dropout_probability > 0.0 {
        cfg.imputation.push(ImputeDirective {
            channel: WORKING_DISTANCE.into(),
            sentinel: WORKING_DISTANCE_SENTINEL,
            gate_channel: LASER_POWER.into(),
        });
    }
    let path = opts.out.join("run_config.json");
    write_json(&path, &cfg)?;
    Ok(path)
}
