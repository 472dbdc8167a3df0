//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stemflow_core::neat::{first_hidden_id, InnovationRegistry};
use stemflow_core::synth::{self, ImageConfig};
use stemflow_core::task::CONTROLLER_INPUTS;
use stemflow_core::vision::{self, SetupEnvelope, TrackerConfig};
use stemflow_core::{Genome, LstmModel, NeatParams, PlantParams, Schedule, TrackedFrame};

pub fn model(hidden: usize) -> LstmModel {
    LstmModel::new(hidden, 7).expect("valid hidden size")
}

/// Fully connected controller grown by `hidden` add-node mutations.
pub fn controller(hidden: usize) -> Genome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut reg = InnovationRegistry::new(first_hidden_id(CONTROLLER_INPUTS, 1));
    let mut g = Genome::fully_connected(CONTROLLER_INPUTS, 1, 1.0, &mut reg, &mut rng);
    let p = NeatParams::default();
    while g.hidden_count() < hidden {
        g.add_node(&mut reg, &mut rng);
        g.add_connection(&p, &mut reg, &mut rng);
    }
    g
}

pub fn frames(steps: usize) -> Vec<TrackedFrame> {
    synth::generate_dataset(&PlantParams::default(), &Schedule::open_loop_6h(), steps)
}

/// Random-dwell sequences next to the open-loop one, as the pipeline builds them.
pub fn sources(sequences: usize, steps: usize) -> Vec<Vec<TrackedFrame>> {
    let p = PlantParams::default();
    let mut out = vec![frames(steps)];
    for s in 0..sequences as u64 {
        let sched = Schedule::Random {
            min_dwell: 12,
            max_dwell: 288,
            seed: s,
        };
        out.push(synth::generate_dataset(&p, &sched, steps));
    }
    out
}

/// Rendered camera frames at the default resolution, their setup envelope
/// and a tracker config that matches the camera.
pub fn rendered(count: usize) -> (Vec<image::RgbImage>, SetupEnvelope, TrackerConfig) {
    let cfg = ImageConfig::default();
    let tracker = TrackerConfig::default();
    let setup = synth::render_setup_images(&cfg, 3, 5);
    let env = vision::build_envelope(&setup, tracker.downsample).expect("setup images");
    let images = frames(count * 40)
        .iter()
        .step_by(40)
        .map(|f| synth::render_frame(&f.stem, &setup[0], &cfg).0)
        .collect();
    (images, env, tracker)
}
