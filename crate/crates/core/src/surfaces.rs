//! Two-group decision surfaces: the log-odds function, its polynomial form
//! for Gaussian conditionals, and zero-contour tracing on a planar slice.
//!
//! Component 0 plays the role of group `Ω₀` and component 1 of `Ω₁`, so a
//! positive decision value means component 1 is more probable.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CwmError, Result};
use crate::linalg::{self, Cholesky};
use crate::model::{CwmModel, Dataset, Label, Marginal};

pub const DEFAULT_RESOLUTION: usize = 512;

fn require_two(model: &CwmModel) -> Result<()> {
    if model.n_components() != 2 {
        return Err(CwmError::InvalidParameter(format!(
            "decision surfaces need exactly 2 components, model has {}",
            model.n_components()
        )));
    }
    Ok(())
}

/// `ln p(Ω₁|x,y) − ln p(Ω₀|x,y)`, i.e. the logit of the component-1 posterior.
pub fn decision_value(model: &CwmModel, x: &[f64], y: f64) -> Result<f64> {
    require_two(model)?;
    let t = model.log_terms(x, y)?;
    Ok(t[1] - t[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    /// Includes the degenerate case of a constant decision function.
    Hyperplane,
    Quadric,
    /// Student-t laws: logarithms of quadratic forms do not reduce to a polynomial.
    Transcendental,
}

/// `decision(z) = z'Az + b'z + c` over `z = (x, y)`, row-major `A`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadricForm {
    pub dim: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadricForm {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let az = linalg::mat_vec(&self.a, self.dim, self.dim, z);
        linalg::dot(z, &az) + linalg::dot(&self.b, z) + self.c
    }

    /// Largest absolute entry of `A`.
    pub fn quadratic_size(&self) -> f64 {
        self.a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Relative size below which the quadratic part is treated as cancelled.
pub const HYPERPLANE_TOL: f64 = 1e-12;

/// Polynomial coefficients of the decision function; `None` for Student-t variants.
pub fn quadric_form(model: &CwmModel) -> Result<Option<QuadricForm>> {
    require_two(model)?;
    if model.variant().is_student() {
        return Ok(None);
    }
    let d = model.d();
    let q = d + 1;
    let mut a = vec![0.0; q * q];
    let mut b = vec![0.0; q];
    let mut c = 0.0;
    // sign +1 for component 1, −1 for component 0
    for (g, sign) in [(0usize, -1.0), (1, 1.0)] {
        let comp = &model.components()[g];
        if let Some(Marginal::Gaussian(m)) = &comp.x_marginal {
            // −½ δ_g − ½ ln|Σ_g| − (d/2) ln 2π, the last term cancels
            let p = m.cholesky().inverse();
            let mu = m.mean();
            let pmu = linalg::mat_vec(&p, d, d, mu);
            for i in 0..d {
                for j in 0..d {
                    a[i * q + j] -= sign * 0.5 * p[i * d + j];
                }
                b[i] += sign * pmu[i];
            }
            c -= sign * 0.5 * (linalg::dot(mu, &pmu) + m.cholesky().log_det());
        }
        if model.gating().is_none() {
            c += sign * comp.weight.ln();
        }
        // −r²/(2σ²) − ½ ln σ² with r = v'z − b₀, v = (−b, 1)
        let cond = &comp.y_conditional;
        let s2 = cond.noise_var;
        let mut v: Vec<f64> = cond.map.slope.iter().map(|s| -s).collect();
        v.push(1.0);
        let b0 = cond.map.intercept;
        for i in 0..q {
            for j in 0..q {
                a[i * q + j] -= sign * v[i] * v[j] / (2.0 * s2);
            }
            b[i] += sign * b0 * v[i] / s2;
        }
        c -= sign * (b0 * b0 / (2.0 * s2) + 0.5 * s2.ln());
    }
    if let Some(gates) = model.gating() {
        for i in 0..d {
            b[i] += gates[1].w[i] - gates[0].w[i];
        }
        c += gates[1].w0 - gates[0].w0;
    }
    Ok(Some(QuadricForm { dim: q, a, b, c }))
}

pub fn classify_surface(model: &CwmModel) -> Result<SurfaceKind> {
    let Some(form) = quadric_form(model)? else {
        return Ok(SurfaceKind::Transcendental);
    };
    let scale = model
        .components()
        .iter()
        .map(|c| {
            let mut s = 1.0 / c.y_conditional.noise_var;
            s *= 1.0 + linalg::dot(&c.y_conditional.map.slope, &c.y_conditional.map.slope);
            if let Some(Marginal::Gaussian(m)) = &c.x_marginal {
                let inv = m.cholesky().inverse();
                s = s.max(inv.iter().fold(0.0, |acc, v| acc.max(v.abs())));
            }
            s
        })
        .fold(0.0, f64::max);
    if form.quadratic_size() <= HYPERPLANE_TOL * scale {
        Ok(SurfaceKind::Hyperplane)
    } else {
        Ok(SurfaceKind::Quadric)
    }
}

/// A 2-D slice of `z = (x₁, …, x_d, y)`: coordinates `horizontal` and
/// `vertical` vary, all others are held at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub horizontal: usize,
    pub vertical: usize,
    pub base: Vec<f64>,
}

impl Plane {
    /// The `(x, y)` plane of a one-covariate model.
    pub fn xy() -> Self {
        Self { horizontal: 0, vertical: 1, base: vec![0.0, 0.0] }
    }

    /// `x₁`–`x₂` plane at fixed `y` for two covariates.
    pub fn fixed_y(y: f64) -> Self {
        Self { horizontal: 0, vertical: 1, base: vec![0.0, 0.0, y] }
    }

    /// Plane of covariate `free` against `y`, other covariate held at `value`.
    pub fn fixed_x(free: usize, value: f64) -> Self {
        let mut base = vec![value, value, 0.0];
        base[free] = 0.0;
        Self { horizontal: free, vertical: 2, base }
    }

    fn validate(&self, d: usize) -> Result<()> {
        let q = d + 1;
        if self.base.len() != q {
            return Err(CwmError::DimensionMismatch { expected: q, found: self.base.len() });
        }
        if self.horizontal >= q || self.vertical >= q || self.horizontal == self.vertical {
            return Err(CwmError::InvalidParameter("plane axes must be two distinct coordinates of (x, y)".into()));
        }
        Ok(())
    }

    fn point(&self, h: f64, v: f64) -> Vec<f64> {
        let mut z = self.base.clone();
        z[self.horizontal] = h;
        z[self.vertical] = v;
        z
    }

    /// Projects a full `z` vector to the plane coordinates.
    pub fn project(&self, z: &[f64]) -> [f64; 2] {
        [z[self.horizontal], z[self.vertical]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub h_range: [f64; 2],
    pub v_range: [f64; 2],
}

impl Window {
    pub fn new(h_range: [f64; 2], v_range: [f64; 2]) -> Result<Self> {
        for r in [h_range, v_range] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(CwmError::InvalidParameter(format!("invalid window range {r:?}")));
            }
        }
        Ok(Self { h_range, v_range })
    }

    /// Bounding box of the plane projection of a dataset, padded by `pad` of each side's span.
    pub fn around(data: &Dataset, plane: &Plane, pad: f64) -> Result<Self> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for i in 0..data.n() {
            let p = plane.project(&data.z_row(i));
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = |k: usize| {
            let w = (hi[k] - lo[k]).max(1e-9);
            [lo[k] - pad * w, hi[k] + pad * w]
        };
        Self::new(span(0), span(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceGrid {
    pub plane: Plane,
    pub window: Window,
    /// Nodes per axis `[horizontal, vertical]`.
    pub resolution: [usize; 2],
    /// `values[j][i]` at horizontal node `i`, vertical node `j`.
    pub values: Vec<Vec<f64>>,
    /// Polylines in plane coordinates; closed loops repeat their first point.
    pub contour: Vec<Vec<[f64; 2]>>,
    /// True when the zero set does not cross the window.
    pub empty: bool,
}

impl SurfaceGrid {
    pub fn cell_size(&self) -> [f64; 2] {
        [
            (self.window.h_range[1] - self.window.h_range[0]) / (self.resolution[0] - 1) as f64,
            (self.window.v_range[1] - self.window.v_range[0]) / (self.resolution[1] - 1) as f64,
        ]
    }

    fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let [dh, dv] = self.cell_size();
        [self.window.h_range[0] + i as f64 * dh, self.window.v_range[0] + j as f64 * dv]
    }

    /// `x,y,segment_id` rows, one per contour vertex.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,segment_id\n");
        for (k, line) in self.contour.iter().enumerate() {
            for p in line {
                let _ = writeln!(s, "{},{},{}", p[0], p[1], k);
            }
        }
        s
    }

    /// Standalone SVG of the contour over an optional scatter of `data`.
    pub fn to_svg(&self, data: Option<&Dataset>) -> String {
        const SIZE: f64 = 600.0;
        const MARGIN: f64 = 40.0;
        let w = &self.window;
        let sx = |h: f64| MARGIN + (h - w.h_range[0]) / (w.h_range[1] - w.h_range[0]) * SIZE;
        let sy = |v: f64| MARGIN + (w.v_range[1] - v) / (w.v_range[1] - w.v_range[0]) * SIZE;
        let total = SIZE + 2.0 * MARGIN;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
        );
        let _ = writeln!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>"#);
        if let Some(data) = data {
            const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
            for i in 0..data.n() {
                let [h, v] = self.plane.project(&data.z_row(i));
                if !(w.h_range[0]..=w.h_range[1]).contains(&h) || !(w.v_range[0]..=w.v_range[1]).contains(&v) {
                    continue;
                }
                let color = match data.labels().map(|l| l[i]) {
                    Some(Label::Group(g)) => COLORS[g % COLORS.len()],
                    Some(Label::Noise) => "#7f7f7f",
                    None => "#444444",
                };
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(h), sy(v));
            }
        }
        for line in &self.contour {
            let pts: Vec<String> = line.iter().map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1]))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#, pts.join(" "));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Evaluates the decision function on a `resolution × resolution` node grid
/// and traces its zero set by marching squares.
pub fn extract_contour(model: &CwmModel, plane: &Plane, window: Window, resolution: usize) -> Result<SurfaceGrid> {
    extract_contour_with(model, plane, window, [resolution, resolution])
}

pub fn extract_contour_with(model: &CwmModel, plane: &Plane, window: Window, resolution: [usize; 2]) -> Result<SurfaceGrid> {
    require_two(model)?;
    plane.validate(model.d())?;
    let window = Window::new(window.h_range, window.v_range)?;
    if resolution.iter().any(|&r| r < 2) {
        return Err(CwmError::InvalidParameter("resolution must be at least 2 nodes per axis".into()));
    }
    let mut grid = SurfaceGrid { plane: plane.clone(), window, resolution, values: Vec::new(), contour: Vec::new(), empty: true };
    grid.values = evaluate_rows(model, &grid)?;
    grid.contour = march(&grid);
    grid.empty = grid.contour.is_empty();
    Ok(grid)
}

fn evaluate_rows(model: &CwmModel, grid: &SurfaceGrid) -> Result<Vec<Vec<f64>>> {
    let [nh, nv] = grid.resolution;
    let d = model.d();
    let row = |j: usize| -> Result<Vec<f64>> {
        (0..nh)
            .map(|i| {
                let [h, v] = grid.node(i, j);
                let z = grid.plane.point(h, v);
                decision_value(model, &z[..d], z[d])
            })
            .collect()
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(nv);
    let chunk = nv.div_ceil(threads);
    let parts: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let row = &row;
                s.spawn(move || (t * chunk..((t + 1) * chunk).min(nv)).map(row).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("grid worker panicked")).collect()
    });
    let mut values = Vec::with_capacity(nv);
    for p in parts {
        values.extend(p?);
    }
    Ok(values)
}

/// Edge key: `(i, j, 0)` joins nodes `(i,j)`–`(i+1,j)`, `(i, j, 1)` joins `(i,j)`–`(i,j+1)`.
type EdgeKey = (usize, usize, u8);

fn march(grid: &SurfaceGrid) -> Vec<Vec<[f64; 2]>> {
    let [nh, nv] = grid.resolution;
    let val = |i: usize, j: usize| grid.values[j][i];
    let crossing = |e: EdgeKey| -> [f64; 2] {
        let (i, j, dir) = e;
        let (i2, j2) = if dir == 0 { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (val(i, j), val(i2, j2));
        let t = if a == b { 0.5 } else { (a / (a - b)).clamp(0.0, 1.0) };
        let (p, q) = (grid.node(i, j), grid.node(i2, j2));
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    };
    let mut segments: Vec<[EdgeKey; 2]> = Vec::new();
    for j in 0..nv - 1 {
        for i in 0..nh - 1 {
            let corners = [val(i, j), val(i + 1, j), val(i + 1, j + 1), val(i, j + 1)];
            if corners.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let case = corners.iter().enumerate().fold(0u8, |acc, (k, &v)| acc | (u8::from(v > 0.0) << k));
            let bottom = (i, j, 0);
            let right = (i + 1, j, 1);
            let top = (i, j + 1, 0);
            let left = (i, j, 1);
            let center_pos = corners.iter().sum::<f64>() > 0.0;
            match case {
                0 | 15 => {}
                1 | 14 => segments.push([left, bottom]),
                2 | 13 => segments.push([bottom, right]),
                3 | 12 => segments.push([left, right]),
                4 | 11 => segments.push([right, top]),
                6 | 9 => segments.push([bottom, top]),
                7 | 8 => segments.push([left, top]),
                5 => {
                    // corners 0 and 2 positive
                    if center_pos {
                        segments.push([left, top]);
                        segments.push([bottom, right]);
                    } else {
                        segments.push([left, bottom]);
                        segments.push([right, top]);
                    }
                }
                10 => {
                    if center_pos {
                        segments.push([left, bottom]);
                        segments.push([right, top]);
                    } else {
                        segments.push([left, top]);
                        segments.push([bottom, right]);
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    chain(&segments).into_iter().map(|keys| keys.into_iter().map(crossing).collect()).collect()
}

/// Joins segments sharing an edge crossing into polylines.
fn chain(segments: &[[EdgeKey; 2]]) -> Vec<Vec<EdgeKey>> {
    let mut at: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for &e in seg {
            at.entry(e).or_default().push(s);
        }
    }
    let mut used = vec![false; segments.len()];
    let other = |s: usize, e: EdgeKey| if segments[s][0] == e { segments[s][1] } else { segments[s][0] };
    let next_unused = |e: EdgeKey, used: &[bool]| at[&e].iter().copied().find(|&s| !used[s]);
    // start open chains at endpoints so they are not split
    let mut order: Vec<usize> = (0..segments.len()).filter(|&s| segments[s].iter().any(|e| at[e].len() == 1)).collect();
    order.extend(0..segments.len());
    let mut lines = Vec::new();
    for start in order {
        if used[start] {
            continue;
        }
        used[start] = true;
        let [a, b] = segments[start];
        let (first, second) = if at[&b].len() == 1 { (b, a) } else { (a, b) };
        let mut line = vec![first, second];
        let mut tail = second;
        while let Some(s) = next_unused(tail, &used) {
            used[s] = true;
            tail = other(s, tail);
            line.push(tail);
        }
        // extend backwards for chains that started mid-way
        let mut head = first;
        let mut front = Vec::new();
        while let Some(s) = next_unused(head, &used) {
            used[s] = true;
            head = other(s, head);
            front.push(head);
        }
        front.reverse();
        front.extend(line);
        lines.push(front);
    }
    lines
}

/// `w = Σ⁻¹(μ₁ − μ₀)` for Gaussian marginals sharing `Σ`.
pub fn homoscedastic_normal(model: &CwmModel) -> Result<Vec<f64>> {
    require_two(model)?;
    let [m0, m1] = [0, 1].map(|g| model.components()[g].x_marginal.as_ref());
    match (m0, m1) {
        (Some(Marginal::Gaussian(a)), Some(Marginal::Gaussian(b))) if a.cov() == b.cov() => {
            let chol = Cholesky::factor(a.cov(), a.dim())?;
            let diff: Vec<f64> = b.mean().iter().zip(a.mean()).map(|(p, q)| p - q).collect();
            Ok(chol.solve(&diff))
        }
        _ => Err(CwmError::WrongVariant { expected: "Gaussian marginals with a shared covariance", found: model.variant() }),
    }
}
