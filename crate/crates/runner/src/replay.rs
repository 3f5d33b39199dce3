//! Trace inspection: textual timeline, re-simulation check and PNG frames.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::{Rgb, RgbImage};
use tending_core::layout::{LayoutSpec, RectSpec};
use tending_core::trace::{read_trace, resimulate, timeline, Trace, TraceStep};
use tending_core::Vec2;

use crate::error::RunnerError;

pub fn load_trace(path: &Path) -> Result<Trace, RunnerError> {
    let file = File::open(path).map_err(RunnerError::io(format!("opening {}", path.display())))?;
    read_trace(BufReader::new(file)).map_err(|e| RunnerError::Data(format!("{}: {e}", path.display())))
}

pub fn timeline_lines(trace: &Trace) -> Vec<String> {
    timeline(trace)
}

/// First step whose logged outcome differs from re-running its actions, if any.
pub fn verify(trace: &Trace) -> Result<Option<usize>, RunnerError> {
    let Some(header) = &trace.header else {
        return Ok(None);
    };
    let replayed = resimulate(header, &trace.steps).map_err(|e| RunnerError::Data(e.to_string()))?;
    Ok(trace.steps.iter().zip(&replayed).find(|(a, b)| a != b).map(|(a, _)| a.t))
}

const PIXELS_PER_UNIT: f64 = 200.0;
const BACKGROUND: Rgb<u8> = Rgb([245, 245, 240]);
const WALL: Rgb<u8> = Rgb([60, 60, 60]);
const MACHINE: Rgb<u8> = Rgb([70, 110, 190]);
const MACHINE_READY: Rgb<u8> = Rgb([60, 170, 90]);
const BLOCKER: Rgb<u8> = Rgb([150, 150, 150]);
const STORAGE: Rgb<u8> = Rgb([210, 170, 60]);
const AGENT: Rgb<u8> = Rgb([200, 60, 50]);
const AGENT_LOADED: Rgb<u8> = Rgb([120, 30, 140]);

struct Canvas {
    image: RgbImage,
    origin: Vec2,
    height: u32,
}

impl Canvas {
    fn new(layout: &LayoutSpec) -> Self {
        let (lo, hi) = layout.outer_bounds();
        let width = ((hi.x - lo.x) * PIXELS_PER_UNIT).ceil() as u32;
        let height = ((hi.y - lo.y) * PIXELS_PER_UNIT).ceil() as u32;
        Self {
            image: RgbImage::from_pixel(width, height, BACKGROUND),
            origin: lo,
            height,
        }
    }

    fn to_pixel(&self, p: Vec2) -> (f64, f64) {
        let x = (p.x - self.origin.x) * PIXELS_PER_UNIT;
        let y = self.height as f64 - (p.y - self.origin.y) * PIXELS_PER_UNIT;
        (x, y)
    }

    fn rect(&mut self, r: &RectSpec, color: Rgb<u8>) {
        let (x0, y1) = self.to_pixel(r.min());
        let (x1, y0) = self.to_pixel(r.max());
        for y in y0.floor().max(0.0) as u32..(y1.ceil() as u32).min(self.image.height()) {
            for x in x0.floor().max(0.0) as u32..(x1.ceil() as u32).min(self.image.width()) {
                self.image.put_pixel(x, y, color);
            }
        }
    }

    fn disc(&mut self, c: Vec2, radius: f64, color: Rgb<u8>) {
        let (cx, cy) = self.to_pixel(c);
        let r = radius * PIXELS_PER_UNIT;
        let (w, h) = (self.image.width() as f64, self.image.height() as f64);
        for y in (cy - r).floor().max(0.0) as u32..(cy + r).ceil().min(h) as u32 {
            for x in (cx - r).floor().max(0.0) as u32..(cx + r).ceil().min(w) as u32 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.image.put_pixel(x, y, color);
                }
            }
        }
    }
}

/// Frame of one step: static layout, machines colored by readiness as far
/// as the trace reveals it, agents colored by whether they carry a part.
fn frame(layout: &LayoutSpec, step: &TraceStep, carrying: &[bool], ready: &[bool]) -> RgbImage {
    let mut canvas = Canvas::new(layout);
    for wall in layout.walls() {
        canvas.rect(&wall, WALL);
    }
    for (m, spec) in layout.machines.iter().enumerate() {
        canvas.rect(&spec.rect(), if ready[m] { MACHINE_READY } else { MACHINE });
    }
    for b in &layout.blockers {
        canvas.rect(b, BLOCKER);
    }
    canvas.rect(&layout.storage.rect(), STORAGE);
    for (a, p) in step.positions.iter().enumerate() {
        canvas.disc(*p, layout.agent_radius, if carrying[a] { AGENT_LOADED } else { AGENT });
    }
    canvas.image
}

/// Writes `frame-<t>.png` for every step into `dir`; returns the frame count.
pub fn export_frames(trace: &Trace, dir: &Path) -> Result<usize, RunnerError> {
    let Some(header) = &trace.header else {
        return Ok(0);
    };
    std::fs::create_dir_all(dir).map_err(RunnerError::io(format!("creating {}", dir.display())))?;
    let layout = &header.layout;
    let delay = header.params.production_delay;
    let mut carrying = vec![false; layout.num_agents()];
    // Machines start ready; a pick restarts the production delay.
    let mut ready_at = vec![0usize; layout.num_machines()];
    for step in &trace.steps {
        for p in &step.picks {
            carrying[p.agent] = true;
            ready_at[p.machine] = step.t + 1 + delay as usize;
        }
        for &a in &step.places {
            carrying[a] = false;
        }
        let ready: Vec<bool> = ready_at.iter().map(|&r| step.t + 1 >= r).collect();
        let path = dir.join(format!("frame-{:04}.png", step.t));
        frame(layout, step, &carrying, &ready)
            .save(&path)
            .map_err(|e| RunnerError::Data(format!("writing {}: {e}", path.display())))?;
    }
    Ok(trace.steps.len())
}
