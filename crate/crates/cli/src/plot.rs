//! Deterministic SVG of observed histories, ground truth and sampled futures.
//!
//! Elements are emitted in a fixed order (agents by id, samples by index)
//! with fixed-precision coordinates, so equal inputs give equal bytes.

use std::fmt::Write as _;

use trajectron_core::dataio::SceneTimeline;
use trajectron_core::{CoreError, Result};

use crate::records::SampleRecord;

const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;
const HISTORY_COLOR: &str = "#000000";
const TRUTH_COLOR: &str = "#7f7f7f";

/// Stroke color of latent value `z`: hues spaced by the golden angle, so
/// distinct values get distinct colors.
pub fn z_color(z: usize) -> String {
    let hue = (z as f64 * 137.507_764) % 360.0;
    let (r, g, b) = hsl_to_rgb(hue, 0.75, 0.45);
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (to(r), to(g), to(b))
}

struct Frame {
    min: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a [f64; 2]>) -> Frame {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        let span = (max[0] - min[0]).max(max[1] - min[1]).max(1e-6);
        Frame {
            min,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    /// World meters to SVG pixels, y pointing up.
    fn map(&self, p: &[f64; 2]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.min[0]) * self.scale,
            SIZE - MARGIN - (p[1] - self.min[1]) * self.scale,
        )
    }

    fn points(&self, ps: &[[f64; 2]]) -> String {
        ps.iter()
            .map(|p| {
                let (x, y) = self.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Renders `samples` over `scene`. All samples must share one observation step.
pub fn render_svg(scene: &SceneTimeline, samples: &[SampleRecord]) -> Result<String> {
    let Some(first) = samples.first() else {
        return Err(CoreError::data("no samples to plot"));
    };
    let t_obs = first.t_obs;
    if samples.iter().any(|s| s.t_obs != t_obs) {
        return Err(CoreError::data("samples come from different observation steps"));
    }
    if t_obs >= scene.n_steps {
        return Err(CoreError::data(format!(
            "samples observed at step {t_obs}, scene has {} steps",
            scene.n_steps
        )));
    }
    let horizon = samples.iter().map(|s| s.positions.len()).max().unwrap_or(0);

    let mut histories = Vec::new();
    let mut truths = Vec::new();
    for (id, track) in &scene.agents {
        let history: Vec<[f64; 2]> = (0..=t_obs).filter_map(|t| track.state_at(t)).map(|s| s.position).collect();
        if !history.is_empty() {
            histories.push((*id, history));
        }
        let truth: Vec<[f64; 2]> = (t_obs..=t_obs + horizon)
            .filter_map(|t| track.state_at(t))
            .map(|s| s.position)
            .collect();
        if truth.len() > 1 {
            truths.push((*id, truth));
        }
    }
    let mut fans = Vec::with_capacity(samples.len());
    for s in samples {
        let start = scene
            .agents
            .get(&s.agent)
            .and_then(|t| t.state_at(t_obs))
            .ok_or_else(|| CoreError::data(format!("sampled agent {} is not in the scene at step {t_obs}", s.agent)))?;
        let mut line = vec![start.position];
        line.extend_from_slice(&s.positions);
        fans.push((s.z, line));
    }

    let frame = Frame::fit(
        histories
            .iter()
            .chain(&truths)
            .flat_map(|(_, ps)| ps)
            .chain(fans.iter().flat_map(|(_, ps)| ps)),
    );
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    )
    .expect("string write");
    writeln!(svg, "<rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"#ffffff\"/>").expect("string write");
    for (z, line) in &fans {
        writeln!(
            svg,
            "<polyline class=\"sample\" data-z=\"{z}\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1\" stroke-opacity=\"0.35\"/>",
            frame.points(line),
            z_color(*z)
        )
        .expect("string write");
    }
    for (id, line) in &truths {
        writeln!(
            svg,
            "<polyline class=\"truth\" data-agent=\"{id}\" points=\"{}\" fill=\"none\" stroke=\"{TRUTH_COLOR}\" stroke-width=\"2\" stroke-dasharray=\"6 4\"/>",
            frame.points(line)
        )
        .expect("string write");
    }
    for (id, line) in &histories {
        writeln!(
            svg,
            "<polyline class=\"history\" data-agent=\"{id}\" points=\"{}\" fill=\"none\" stroke=\"{HISTORY_COLOR}\" stroke-width=\"2\"/>",
            frame.points(line)
        )
        .expect("string write");
        let (x, y) = frame.map(line.last().expect("nonempty history"));
        writeln!(svg, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{HISTORY_COLOR}\"/>").expect("string write");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn colors_are_distinct_per_latent_value() {
        let colors: BTreeSet<String> = (0..64).map(z_color).collect();
        assert_eq!(colors.len(), 64);
        assert_eq!(z_color(3), z_color(3));
    }

    #[test]
    fn pure_hues_convert() {
        assert_eq!(hsl_to_rgb(0.0, 1.0, 0.5), (255, 0, 0));
        assert_eq!(hsl_to_rgb(120.0, 1.0, 0.5), (0, 255, 0));
        assert_eq!(hsl_to_rgb(240.0, 1.0, 0.5), (0, 0, 255));
    }
}
