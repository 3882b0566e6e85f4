//! Scratch campaign driver for manual inspection (not part of the suite).

use iris_core::engine;
use iris_core::scenario::Scenario;
use iris_core::trace::TraceDetail;

fn main() {
    let text = std::fs::read_to_string("presets/throughput.toml").unwrap();
    let mut sc = Scenario::from_toml_str(&text).unwrap();
    sc.seed = 305;
    let trace = engine::run(&sc, TraceDetail::Summary).unwrap();
    let f = trace.formation.as_ref().unwrap();
    println!(
        "formation frame {} slot {}; frames_run {}; route {:?}",
        f.frame, f.slot, trace.frames_run, trace.route
    );
    let mut last = f.frame;
    for d in &trace.endbase_decodes {
        if d.frame <= f.frame {
            continue;
        }
        if d.frame != last + 1 {
            println!("missing decode frames {}..{}", last + 1, d.frame - 1);
        }
        if d.payload_bytes != 22 {
            println!(
                "frame {} slot {} sender {:?}: {} bytes synth {}",
                d.frame, d.slot, d.sender, d.payload_bytes, d.synthesized
            );
        }
        last = d.frame;
    }
    println!("last decode frame {last}");
}
