//! Generates a small synthetic world and summarizes its images and units.

use selective_evidence::synth::{generate_world, ImageRole, WorldConfig};

fn main() -> selective_evidence::Result<()> {
    let world = generate_world(&WorldConfig {
        n_samples: 200,
        seed: 5,
        ..WorldConfig::default()
    })?;
    let mut roles = [0usize; 3];
    for t in &world.truth {
        for r in &t.image_roles {
            roles[match r {
                ImageRole::Useful => 0,
                ImageRole::Redundant => 1,
                ImageRole::Misleading => 2,
            }] += 1;
        }
    }
    let units: Vec<_> = world.unit_truths().collect();
    let groundable = units.iter().filter(|u| u.groundable).count();
    println!(
        "{} samples, images useful/redundant/misleading = {roles:?}",
        world.samples.len()
    );
    println!("{} units, {groundable} groundable", units.len());
    let rate = |f: &dyn Fn(&&&selective_evidence::synth::UnitTruth) -> bool| {
        let sel: Vec<_> = units.iter().filter(f).collect();
        sel.iter().filter(|u| u.loss_activated).count() as f64 / sel.len().max(1) as f64
    };
    println!(
        "error with vision: groundable {:.3}, other {:.3}",
        rate(&|u| u.groundable),
        rate(&|u| !u.groundable)
    );
    println!(
        "error text only: {:.3}",
        units.iter().filter(|u| u.loss_text).count() as f64 / units.len() as f64
    );
    Ok(())
}
