//! End to end on a synthetic world: calibrate a threshold on one split, route
//! another split selectively and always-on, and compare risk and cost.

use selective_evidence::calibration::{calibrate_threshold, CalibrationInput};
use selective_evidence::pipeline::{route_dataset, summarize, PipelineConfig};
use selective_evidence::synth::{generate_world, scored_units, world_weights, WorldConfig};

fn main() -> selective_evidence::Result<()> {
    let base = WorldConfig::default();
    let weights = world_weights(&base)?;
    let cal = generate_world(&WorldConfig {
        n_samples: 150,
        seed: 1,
        ..base.clone()
    })?;
    let test = generate_world(&WorldConfig {
        n_samples: 500,
        seed: 2,
        ..base.clone()
    })?;

    let units = scored_units(&cal, &weights)?;
    let r = calibrate_threshold(&CalibrationInput::new(
        units.iter().map(|u| u.0).collect(),
        units.iter().map(|u| u.2).collect(),
        0.10,
        0.05,
    ))?;
    println!(
        "tau {:.4} from {} calibration units (bound {:.4})",
        r.tau, r.calibration_size, r.cp_upper
    );

    for (name, force_on) in [("selective", false), ("always-on", true)] {
        let cfg = PipelineConfig {
            tau: r.tau,
            force_on,
            ..PipelineConfig::default()
        };
        let outs = route_dataset(&test.samples, &weights, &cfg, None)?;
        let (mut n, mut act, mut act_err, mut err) = (0, 0, 0, 0);
        for (o, t) in outs.iter().zip(&test.truth) {
            for (tr, u) in o.traces.iter().zip(&t.units) {
                let l = u.loss(tr.gamma);
                n += 1;
                err += l as usize;
                if tr.gamma {
                    act += 1;
                    act_err += l as usize;
                }
            }
        }
        let s = summarize(&outs);
        println!(
            "{name:>9}: coverage {:.3}, activated risk {:.3}, overall risk {:.3}, cost {:.2}, region reads {}",
            act as f64 / n as f64,
            act_err as f64 / act.max(1) as f64,
            err as f64 / n as f64,
            s.mean_cost,
            s.region_reads
        );
    }
    Ok(())
}
