//! Writes a contact sheet of generated frames to the given directory.
use std::path::PathBuf;
use toolnet::data::RgbFrame;
use toolnet::synth::{generate, generate_source_task, GeneratorConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = GeneratorConfig::default();
    for (name, m) in [("target", generate(&cfg)?), ("source", generate_source_task(&cfg)?)] {
        let frames: Vec<_> = m.videos[0].frames.iter().step_by(6).take(24).collect();
        let (w, h) = (cfg.width, cfg.height);
        let cols = 6;
        let rows = frames.len().div_ceil(cols);
        let mut sheet = RgbFrame { width: w * cols, height: h * rows, pixels: vec![0; 3 * w * h * cols * rows] };
        for (i, f) in frames.iter().enumerate() {
            let img = f.image.load()?;
            let (ox, oy) = ((i % cols) * w, (i / cols) * h);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        sheet.pixels[3 * ((oy + y) * sheet.width + ox + x) + c] = img.pixels[3 * (y * w + x) + c];
                    }
                }
            }
            println!("{name} {} {:?}", f.key, f.labels.present);
        }
        sheet.save(&out.join(format!("{name}.png")))?;
    }
    Ok(())
}
