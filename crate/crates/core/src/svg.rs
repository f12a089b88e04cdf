//! Plan-view SVG rendering of a recording for offline inspection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::Vec2;
use crate::map::{resolve_map, LaneMap, MapError};
use crate::runner::{read_recording, Outcome, RecordingError, ScenarioRecording};
use crate::sim::ActorKind;

pub const SNAPSHOT_PERIOD: f64 = 1.0;
const MARGIN: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SvgError {
    #[error(transparent)]
    Recording(#[from] RecordingError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Indices of the frames drawn as boxes: the first frame, then the first
/// frame of every later snapshot period.
pub fn snapshot_frames(rec: &ScenarioRecording) -> Vec<usize> {
    let mut picked = Vec::new();
    let mut last_slot = i64::MIN;
    for (i, f) in rec.frames.iter().enumerate() {
        let slot = (f.sim_time / SNAPSHOT_PERIOD + 1e-9).floor() as i64;
        if slot > last_slot {
            picked.push(i);
            last_slot = slot;
        }
    }
    picked
}

struct Extent {
    min: Vec2,
    max: Vec2,
}

impl Extent {
    fn new() -> Self {
        Extent {
            min: Vec2::new(f64::INFINITY, f64::INFINITY),
            max: Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn add(&mut self, p: Vec2) {
        self.min = Vec2::new(self.min.x.min(p.x), self.min.y.min(p.y));
        self.max = Vec2::new(self.max.x.max(p.x), self.max.y.max(p.y));
    }
}

fn points_attr(points: impl IntoIterator<Item = Vec2>) -> String {
    let mut s = String::new();
    for (i, p) in points.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        // y is flipped so north points up
        let _ = write!(s, "{:.3},{:.3}", p.x, -p.y);
    }
    s
}

/// Renders lane centerlines, actor boxes at each snapshot, the ego path and
/// a marker at the ego position of a colliding frame.
pub fn render_svg(rec: &ScenarioRecording, map: &LaneMap) -> String {
    let mut extent = Extent::new();
    for lane in map.lanes() {
        lane.centerline.points().iter().for_each(|p| extent.add(*p));
    }
    for f in &rec.frames {
        for a in &f.actors {
            a.obb().corners().into_iter().for_each(|p| extent.add(p));
        }
    }
    if !extent.min.x.is_finite() {
        extent.add(Vec2::new(0.0, 0.0));
    }
    let (x0, y0) = (extent.min.x - MARGIN, -extent.max.y - MARGIN);
    let (w, h) = (extent.max.x - extent.min.x + 2.0 * MARGIN, extent.max.y - extent.min.y + 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0:.3} {y0:.3} {w:.3} {h:.3}" data-scenario="{}">"#,
        escape(&rec.scenario_id)
    );
    out.push_str("<g class=\"lanes\" fill=\"none\" stroke=\"#999\" stroke-width=\"0.3\">\n");
    for lane in map.lanes() {
        let _ = writeln!(
            out,
            r#"<polyline data-lane="{}" points="{}"/>"#,
            escape(&lane.lane_id),
            points_attr(lane.centerline.points().iter().copied())
        );
    }
    out.push_str("</g>\n<g class=\"actors\" fill=\"none\" stroke-width=\"0.2\">\n");
    for i in snapshot_frames(rec) {
        let f = &rec.frames[i];
        for a in &f.actors {
            let color = if a.kind == ActorKind::Ego { "#1f5fbf" } else { "#c0392b" };
            let _ = writeln!(
                out,
                r#"<polygon class="box" data-actor="{}" data-t="{:.3}" stroke="{color}" points="{}"/>"#,
                escape(&a.actor_id),
                f.sim_time,
                points_attr(a.obb().corners())
            );
        }
    }
    out.push_str("</g>\n");
    let ego_path: Vec<Vec2> = rec.frames.iter().filter_map(|f| f.ego()).map(|e| e.pose.position()).collect();
    let _ = writeln!(
        out,
        r##"<polyline class="ego-path" fill="none" stroke="#1f5fbf" stroke-width="0.4" points="{}"/>"##,
        points_attr(ego_path)
    );
    if rec.verdict.outcome == Outcome::CollisionViolation {
        if let Some(ego) = rec.deciding_frame().and_then(|f| f.ego()) {
            let p = ego.pose.position();
            let _ = writeln!(
                out,
                r##"<circle class="collision" cx="{:.3}" cy="{:.3}" r="2.000" fill="none" stroke="#e67e22" stroke-width="0.6"/>"##,
                p.x, -p.y
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Reads a recording file and writes `<out_dir>/<scenario_id>.svg`.
pub fn export_svg(recording: &Path, out_dir: &Path, map_dir: Option<&Path>) -> Result<PathBuf, SvgError> {
    let rec = read_recording(recording)?;
    let map = resolve_map(&rec.config_snapshot.map_name, map_dir)?;
    let io_err = |source| SvgError::Io {
        path: out_dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(out_dir).map_err(io_err)?;
    let path = out_dir.join(format!("{}.svg", rec.scenario_id));
    std::fs::write(&path, render_svg(&rec, &map)).map_err(io_err)?;
    Ok(path)
}
