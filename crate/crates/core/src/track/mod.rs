//! Race-track centerlines, timed reference trajectories and tracking errors.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{angle_diff, wrap_angle, ReferencePoint, VehicleParams, VehicleState};
use crate::error::{Error, Result};

mod spline;

pub use spline::CenterlineSpline;

/// Consecutive points closer than this are treated as duplicates.
const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub points: Vec<[f64; 2]>,
    /// `(right, left)` half widths in meters, when the source provides them.
    pub widths: Option<Vec<[f64; 2]>>,
    pub closed: bool,
}

impl Track {
    pub fn new(points: Vec<[f64; 2]>, closed: bool) -> Result<Self> {
        Self::with_widths(points, None, closed)
    }

    pub fn with_widths(points: Vec<[f64; 2]>, widths: Option<Vec<[f64; 2]>>, closed: bool) -> Result<Self> {
        if let Some(w) = &widths {
            if w.len() != points.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} widths for {} points",
                    w.len(),
                    points.len()
                )));
            }
        }
        let mut kept_points = Vec::with_capacity(points.len());
        let mut kept_widths = widths.as_ref().map(|_| Vec::with_capacity(points.len()));
        for (i, p) in points.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::invalid("track", format!("non-finite point {i}")));
            }
            let duplicate = kept_points
                .last()
                .is_some_and(|q: &[f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]) <= DUPLICATE_TOLERANCE);
            if duplicate {
                continue;
            }
            kept_points.push(*p);
            if let (Some(kw), Some(w)) = (kept_widths.as_mut(), widths.as_ref()) {
                kw.push(w[i]);
            }
        }
        if closed && kept_points.len() > 1 {
            let (first, last) = (kept_points[0], *kept_points.last().unwrap());
            if (first[0] - last[0]).hypot(first[1] - last[1]) <= DUPLICATE_TOLERANCE {
                kept_points.pop();
                if let Some(kw) = kept_widths.as_mut() {
                    kw.pop();
                }
            }
        }
        if kept_points.len() < 3 {
            return Err(Error::TooFewPoints {
                found: kept_points.len(),
            });
        }
        Ok(Self {
            points: kept_points,
            widths: kept_widths,
            closed,
        })
    }

    /// Circle of `radius` centered at the origin, traversed counter-clockwise
    /// starting at `(radius, 0)`.
    pub fn circle(radius: f64, samples: usize) -> Result<Self> {
        let points = (0..samples)
            .map(|i| {
                let a = i as f64 / samples as f64 * std::f64::consts::TAU;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self::new(points, true)
    }

    /// Stadium oval: two straights of `straight` meters joined by half circles.
    pub fn oval(straight: f64, radius: f64, spacing: f64) -> Result<Self> {
        let mut points = Vec::new();
        let n_straight = (straight / spacing).ceil().max(1.0) as usize;
        let n_arc = (std::f64::consts::PI * radius / spacing).ceil().max(2.0) as usize;
        let half = straight / 2.0;
        for i in 0..n_straight {
            points.push([-half + straight * i as f64 / n_straight as f64, -radius]);
        }
        for i in 0..n_arc {
            let a = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / n_arc as f64;
            points.push([half + radius * a.cos(), radius * a.sin()]);
        }
        for i in 0..n_straight {
            points.push([half - straight * i as f64 / n_straight as f64, radius]);
        }
        for i in 0..n_arc {
            let a = std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * i as f64 / n_arc as f64;
            points.push([-half + radius * a.cos(), radius * a.sin()]);
        }
        // start in the middle of the bottom straight
        let start = n_straight / 2;
        points.rotate_left(start);
        Self::new(points, true)
    }

    /// Segment is `(points[i], points[i + 1])`, wrapping for closed tracks.
    pub fn segment_count(&self) -> usize {
        if self.closed {
            self.points.len()
        } else {
            self.points.len() - 1
        }
    }
}

fn parse_field(field: &str, line: u64, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("{what}: `{}` is not a number", field.trim()),
    })
}

/// Reads a centerline CSV.
///
/// Accepts the racetrack-database layout (`# x_m,y_m,w_tr_right_m,w_tr_left_m`)
/// and plain two-column `x,y` files. Lines starting with `#` are comments; a
/// non-numeric first row is taken as a header.
pub fn read_track<R: Read>(reader: R, scale: f64, closed: bool) -> Result<Track> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid("scale", "must be positive and finite"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut points = Vec::new();
    let mut widths: Vec<[f64; 2]> = Vec::new();
    let mut has_widths: Option<bool> = None;
    let mut first = true;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let is_header = first && record.get(0).is_some_and(|f| f.parse::<f64>().is_err());
        first = false;
        if is_header {
            continue;
        }
        if record.len() != 2 && record.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 or 4 columns, found {}", record.len()),
            });
        }
        let four = record.len() == 4;
        match has_widths {
            None => has_widths = Some(four),
            Some(prev) if prev != four => {
                return Err(Error::Parse {
                    line,
                    message: "inconsistent column count".into(),
                })
            }
            _ => {}
        }
        let x = parse_field(&record[0], line, "x")?;
        let y = parse_field(&record[1], line, "y")?;
        points.push([x * scale, y * scale]);
        if four {
            let right = parse_field(&record[2], line, "w_tr_right")?;
            let left = parse_field(&record[3], line, "w_tr_left")?;
            widths.push([right * scale, left * scale]);
        }
    }
    let widths = has_widths.unwrap_or(false).then_some(widths);
    Track::with_widths(points, widths, closed)
}

pub fn load_track(path: impl AsRef<Path>, scale: f64, closed: bool) -> Result<Track> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_track(file, scale, closed)
}

/// Writes a track in the racetrack-database layout (zero widths when absent).
pub fn write_track<W: std::io::Write>(track: &Track, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# x_m,y_m,w_tr_right_m,w_tr_left_m")?;
    for (i, p) in track.points.iter().enumerate() {
        let w = track.widths.as_ref().map(|w| w[i]).unwrap_or([0.0, 0.0]);
        writeln!(out, "{},{},{},{}", p[0], p[1], w[0], w[1])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedProfile {
    Constant {
        speed: f64,
    },
    /// `v = min(v_cap, sqrt(a_lat_max / |kappa|))`.
    CurvatureLimited {
        v_cap: f64,
        a_lat_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    pub profile: SpeedProfile,
    /// Lowest admissible reference speed, m/s.
    #[serde(default = "default_min_speed")]
    pub min_speed: f64,
}

fn default_min_speed() -> f64 {
    0.1
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            profile: SpeedProfile::CurvatureLimited {
                v_cap: 3.0,
                a_lat_max: 2.0,
            },
            min_speed: default_min_speed(),
        }
    }
}

/// Curvature of the circle through three points, signed positive for left turns.
pub fn three_point_curvature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ab = (b[0] - a[0]).hypot(b[1] - a[1]);
    let bc = (c[0] - b[0]).hypot(c[1] - b[1]);
    let ca = (a[0] - c[0]).hypot(a[1] - c[1]);
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let denom = ab * bc * ca;
    if denom == 0.0 {
        0.0
    } else {
        2.0 * cross / denom
    }
}

/// Timed reference: consecutive points are one sampling period apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub points: Vec<ReferencePoint>,
    pub sample_time: f64,
    pub closed: bool,
}

impl ReferenceTrajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point `index`, wrapping on closed trajectories.
    pub fn point(&self, index: usize) -> Result<ReferencePoint> {
        if self.closed {
            Ok(self.points[index % self.points.len()])
        } else {
            self.points.get(index).copied().ok_or(Error::ReferenceExhausted {
                needed: index,
                len: self.points.len(),
            })
        }
    }

    /// `count` points starting at `start`, with headings unwrapped so the
    /// window is continuous.
    pub fn window(&self, start: usize, count: usize) -> Result<Vec<ReferencePoint>> {
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let mut p = self.point(start + k)?;
            if let Some(prev) = out.last() {
                let prev: &ReferencePoint = prev;
                p.theta = prev.theta + angle_diff(p.theta, prev.theta);
            }
            out.push(p);
        }
        Ok(out)
    }

    pub fn segment_count(&self) -> usize {
        if self.closed {
            self.points.len()
        } else {
            self.points.len().saturating_sub(1)
        }
    }
}

fn fine_grid_curvature(spline: &CenterlineSpline, closed: bool, ds: f64) -> (Vec<f64>, Vec<f64>) {
    let length = spline.length();
    let n = (length / ds).ceil().max(2.0) as usize;
    let step = length / n as f64;
    let count = if closed { n } else { n + 1 };
    let pos: Vec<[f64; 2]> = (0..count).map(|i| spline.eval(i as f64 * step).0).collect();
    let kappa: Vec<f64> = (0..count)
        .map(|i| {
            if closed {
                three_point_curvature(pos[(i + count - 1) % count], pos[i], pos[(i + 1) % count])
            } else {
                let c = i.clamp(1, count - 2);
                three_point_curvature(pos[c - 1], pos[c], pos[c + 1])
            }
        })
        .collect();
    let s: Vec<f64> = (0..count).map(|i| i as f64 * step).collect();
    (s, kappa)
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => ys[i],
        Err(0) => ys[0],
        Err(i) if i >= xs.len() => *ys.last().unwrap(),
        Err(i) => {
            let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            ys[i - 1] + t * (ys[i] - ys[i - 1])
        }
    }
}

/// Resamples the track centerline into a timed reference trajectory.
pub fn build_reference(track: &Track, cfg: &ReferenceConfig, params: &VehicleParams) -> Result<ReferenceTrajectory> {
    params.validate()?;
    let spline = CenterlineSpline::new(&track.points, track.closed);
    let length = spline.length();
    let period = params.sample_time;
    let (grid_s, grid_kappa) = fine_grid_curvature(&spline, track.closed, 0.02);

    let speed_at = |kappa: f64| match cfg.profile {
        SpeedProfile::Constant { speed } => speed,
        SpeedProfile::CurvatureLimited { v_cap, a_lat_max } => {
            if kappa.abs() < 1e-12 {
                v_cap
            } else {
                v_cap.min((a_lat_max / kappa.abs()).sqrt())
            }
        }
    };
    let grid_speed: Vec<f64> = grid_kappa.iter().map(|&k| speed_at(k)).collect();
    for (s, v) in grid_s.iter().zip(&grid_speed) {
        if !(*v >= cfg.min_speed) {
            return Err(Error::InfeasibleSpeed {
                speed: *v,
                arc_length: *s,
                min: cfg.min_speed,
            });
        }
    }

    // Travel time as a function of arc length; reference points are equally
    // spaced in time.
    let mut grid_time = vec![0.0; grid_s.len()];
    for i in 1..grid_s.len() {
        let ds = grid_s[i] - grid_s[i - 1];
        grid_time[i] = grid_time[i - 1] + ds * 0.5 * (1.0 / grid_speed[i - 1] + 1.0 / grid_speed[i]);
    }
    let mut total_time = *grid_time.last().unwrap();
    let mut grid_s = grid_s;
    if track.closed {
        let ds = length - grid_s.last().unwrap();
        total_time += ds * 0.5 * (1.0 / grid_speed.last().unwrap() + 1.0 / grid_speed[0]);
        grid_time.push(total_time);
        grid_s.push(length);
    }
    let (count, time_scale) = if track.closed {
        let n = (total_time / period).round().max(3.0) as usize;
        (n, total_time / (n as f64 * period))
    } else {
        ((total_time / period).floor() as usize + 1, 1.0)
    };

    let mut positions = Vec::with_capacity(count);
    let mut headings = Vec::with_capacity(count);
    let mut arc = Vec::with_capacity(count + 1);
    for k in 0..count {
        let t = k as f64 * period * time_scale;
        let s = interpolate(&grid_time, &grid_s, t);
        let (p, d) = spline.eval(s);
        positions.push(p);
        headings.push(wrap_angle(d[1].atan2(d[0])));
        arc.push(s);
    }
    if track.closed {
        arc.push(length);
    }
    // The reference advances by exactly one arc-length increment per period.
    let speeds: Vec<f64> = (0..count)
        .map(|k| {
            let k = if k + 1 < arc.len() { k } else { k - 1 };
            (arc[k + 1] - arc[k]) / period
        })
        .collect();

    let bx = params.input_box;
    let points = (0..count)
        .map(|k| {
            let kappa = if track.closed {
                three_point_curvature(
                    positions[(k + count - 1) % count],
                    positions[k],
                    positions[(k + 1) % count],
                )
            } else {
                let c = k.clamp(1, count.saturating_sub(2).max(1));
                if count < 3 {
                    0.0
                } else {
                    three_point_curvature(positions[c - 1], positions[c], positions[c + 1])
                }
            };
            ReferencePoint {
                x: positions[k][0],
                y: positions[k][1],
                theta: headings[k],
                v: speeds[k].clamp(bx.v_min, bx.v_max),
                delta: (params.wheelbase * kappa).atan().clamp(bx.delta_min, bx.delta_max),
            }
        })
        .collect();
    Ok(ReferenceTrajectory {
        points,
        sample_time: period,
        closed: track.closed,
    })
}

/// Signed tracking errors of a pose against a reference path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingErrors {
    /// Perpendicular distance to the path, positive on the left.
    pub lateral: f64,
    /// `wrap(theta - theta_ref)` at the projection.
    pub heading: f64,
    /// Start index of the segment holding the projection.
    pub index: usize,
    /// Position of the projection along that segment, in `[0, 1]`.
    pub fraction: f64,
}

fn project_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    let dist2 = (p[0] - qx).powi(2) + (p[1] - qy).powi(2);
    let cross = dx * (p[1] - qy) - dy * (p[0] - qx);
    (t, dist2, cross)
}

fn errors_on_segment(state: &VehicleState, reference: &ReferenceTrajectory, i: usize) -> (TrackingErrors, f64) {
    let n = reference.points.len();
    let a = reference.points[i];
    let b = reference.points[(i + 1) % n];
    let p = [state.x, state.y];
    let (t, dist2, cross) = project_segment(p, [a.x, a.y], [b.x, b.y]);
    let dist = dist2.sqrt();
    let lateral = if cross < 0.0 { -dist } else { dist };
    let theta_ref = a.theta + t * angle_diff(b.theta, a.theta);
    (
        TrackingErrors {
            lateral,
            heading: angle_diff(state.theta, theta_ref),
            index: i,
            fraction: t,
        },
        dist2,
    )
}

/// Closest-point projection onto the piecewise-linear reference path.
pub fn project(state: &VehicleState, reference: &ReferenceTrajectory) -> TrackingErrors {
    if reference.points.len() == 1 {
        let r = reference.points[0];
        let lateral = (state.x - r.x).hypot(state.y - r.y);
        return TrackingErrors {
            lateral,
            heading: angle_diff(state.theta, r.theta),
            index: 0,
            fraction: 0.0,
        };
    }
    (0..reference.segment_count())
        .map(|i| errors_on_segment(state, reference, i))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(e, _)| e)
        .expect("reference has at least one segment")
}

/// Projection restricted to segments `hint - behind ..= hint + ahead`.
pub fn project_near(
    state: &VehicleState,
    reference: &ReferenceTrajectory,
    hint: usize,
    behind: usize,
    ahead: usize,
) -> TrackingErrors {
    let segments = reference.segment_count();
    if segments == 0 || behind + ahead + 1 >= segments {
        return project(state, reference);
    }
    let candidates: Box<dyn Iterator<Item = usize>> = if reference.closed {
        Box::new((0..=behind + ahead).map(move |k| (hint + segments - behind + k) % segments))
    } else {
        let lo = hint.saturating_sub(behind);
        let hi = (hint + ahead).min(segments - 1);
        Box::new(lo..=hi)
    };
    candidates
        .map(|i| errors_on_segment(state, reference, i))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .map(|(e, _)| e)
        .unwrap()
}
