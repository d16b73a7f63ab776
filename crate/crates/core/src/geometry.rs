//! Random δ-separated ball packings inside a cubic window.
//!
//! A [`PerforatedGeometry`] is the set of closed balls `B(θ_i, r_i)` whose
//! δ-dilation meets the window `origin + [0, t]^n`. Two invariants hold for
//! every geometry produced here:
//!
//! - every radius lies in `(0, r_star)`;
//! - distinct balls satisfy `|θ_i − θ_j| > r_i + r_j + 2δ`, i.e. their
//!   δ-dilations are disjoint.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallInclusion {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallInclusion {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn distance_to(&self, point: &[f64]) -> f64 {
        dist(&self.center, point)
    }
}

/// Generator kind and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// No perforations at all.
    Empty,
    /// Balls of a fixed radius centred in the cells of the cubic lattice
    /// `spacing·Z^n`, each site occupied by an independent Bernoulli trial.
    BernoulliLattice { spacing: f64, radius: f64, occupation_prob: f64 },
    /// Sequential hard-core rejection: `round(intensity·t^n)` uniform
    /// proposals, radii uniform on `(r_min, r_max)`.
    HardcoreRejection { intensity: f64, r_min: f64, r_max: f64 },
}

/// The sample ω: an integer seed plus the generator that consumes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationSeed {
    pub seed: u64,
    pub generator: Generator,
}

impl RealizationSeed {
    pub fn new(seed: u64, generator: Generator) -> Self {
        Self { seed, generator }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            generator: self.generator.clone(),
        }
    }

    /// Realize the geometry inside `window`.
    pub fn generate(&self, domain: &DomainParams, window: &Window) -> Result<PerforatedGeometry> {
        match self.generator {
            Generator::Empty => {
                domain.validate()?;
                window.validate(domain.n)?;
                Ok(PerforatedGeometry {
                    n: domain.n,
                    t: window.side,
                    origin: window.origin.clone(),
                    delta: domain.delta,
                    r_star: domain.r_star,
                    balls: Vec::new(),
                    seed_record: self.clone(),
                })
            }
            Generator::BernoulliLattice {
                spacing,
                radius,
                occupation_prob,
            } => gen_bernoulli_lattice(self.seed, spacing, radius, occupation_prob, domain, window),
            Generator::HardcoreRejection { intensity, r_min, r_max } => {
                gen_hardcore_rejection(self.seed, intensity, (r_min, r_max), domain, window)
            }
        }
    }
}

/// Dimension and the two geometric constants δ and r_*.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub n: usize,
    pub delta: f64,
    pub r_star: f64,
}

impl DomainParams {
    pub fn new(n: usize, delta: f64, r_star: f64) -> Self {
        Self { n, delta, r_star }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 2 && self.n != 3 {
            return Err(Error::Parameter(format!("dimension must be 2 or 3, got {}", self.n)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Parameter(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.r_star > 0.0 && self.r_star.is_finite()) {
            return Err(Error::Parameter(format!("r_star must be positive, got {}", self.r_star)));
        }
        Ok(())
    }
}

/// The cube `origin + [0, side]^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub origin: Vec<f64>,
    pub side: f64,
}

impl Window {
    pub fn at_origin(n: usize, side: f64) -> Self {
        Self {
            origin: vec![0.0; n],
            side,
        }
    }

    pub fn shifted(n: usize, side: f64, origin: Vec<f64>) -> Self {
        debug_assert_eq!(origin.len(), n);
        Self { origin, side }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.origin.len() != n {
            return Err(Error::Parameter(format!(
                "window origin has {} coordinates, expected {n}",
                self.origin.len()
            )));
        }
        if !(self.side > 0.0 && self.side.is_finite()) {
            return Err(Error::Parameter(format!("window side must be positive, got {}", self.side)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerforatedGeometry {
    pub n: usize,
    pub t: f64,
    #[serde(default)]
    pub origin: Vec<f64>,
    pub delta: f64,
    pub r_star: f64,
    pub balls: Vec<BallInclusion>,
    pub seed_record: RealizationSeed,
}

impl PerforatedGeometry {
    pub fn window(&self) -> Window {
        Window {
            origin: self.origin.clone(),
            side: self.t,
        }
    }

    pub fn domain(&self) -> DomainParams {
        DomainParams::new(self.n, self.delta, self.r_star)
    }

    pub fn window_volume(&self) -> f64 {
        self.t.powi(self.n as i32)
    }

    /// A ball is interior when its closed δ-dilation lies inside the window.
    pub fn is_interior(&self, ball: &BallInclusion) -> bool {
        let reach = ball.radius + self.delta;
        ball.center
            .iter()
            .zip(&self.origin)
            .all(|(&c, &o)| c - reach >= o && c + reach <= o + self.t)
    }

    /// Balls cut by (or whose δ-annulus is cut by) the window boundary.
    pub fn boundary_flags(&self) -> Vec<bool> {
        self.balls.iter().map(|b| !self.is_interior(b)).collect()
    }

    /// The same geometry translated by `shift` (window included).
    pub fn translated(&self, shift: &[f64]) -> Self {
        let mut out = self.clone();
        for (o, s) in out.origin.iter_mut().zip(shift) {
            *o += s;
        }
        for ball in &mut out.balls {
            for (c, s) in ball.center.iter_mut().zip(shift) {
                *c += s;
            }
        }
        out
    }

    /// The geometry dilated by `lambda` about the coordinate origin.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.t *= lambda;
        out.delta *= lambda;
        out.r_star *= lambda;
        out.origin.iter_mut().for_each(|o| *o *= lambda);
        for ball in &mut out.balls {
            ball.radius *= lambda;
            ball.center.iter_mut().for_each(|c| *c *= lambda);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let geometry: Self = serde_json::from_str(text)?;
        geometry.domain().validate()?;
        geometry.window().validate(geometry.n)?;
        Ok(geometry)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from `point` to the box `[lo, lo + side]^n`.
fn dist_to_box(point: &[f64], lo: &[f64], side: f64) -> f64 {
    point
        .iter()
        .zip(lo)
        .map(|(&p, &l)| {
            let d = if p < l {
                l - p
            } else if p > l + side {
                p - l - side
            } else {
                0.0
            };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform variate in `[0, 1)` attached to one lattice site. It depends on
/// the seed and the site only, so windows placed anywhere on the lattice
/// see the same trials.
fn site_uniform(seed: u64, site: &[i64]) -> f64 {
    let mut h = splitmix64(seed);
    for &k in site {
        h = splitmix64(h ^ (k as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub fn gen_bernoulli_lattice(
    seed: u64,
    spacing: f64,
    radius: f64,
    occupation_prob: f64,
    domain: &DomainParams,
    window: &Window,
) -> Result<PerforatedGeometry> {
    domain.validate()?;
    window.validate(domain.n)?;
    if !(spacing > 0.0) {
        return Err(Error::Parameter(format!("lattice spacing must be positive, got {spacing}")));
    }
    if !(radius > 0.0 && radius < domain.r_star) {
        return Err(Error::Parameter(format!(
            "radius {radius} must lie in (0, r_star = {})",
            domain.r_star
        )));
    }
    if !(0.0..=1.0).contains(&occupation_prob) {
        return Err(Error::Parameter(format!("occupation probability {occupation_prob} outside [0, 1]")));
    }
    if radius + domain.delta >= spacing / 2.0 {
        return Err(Error::Parameter(format!(
            "radius + delta = {} must be < spacing/2 = {} for separation",
            radius + domain.delta,
            spacing / 2.0
        )));
    }

    let n = domain.n;
    let reach = radius + domain.delta;
    let lo: Vec<i64> = window
        .origin
        .iter()
        .map(|&o| ((o - reach) / spacing - 0.5).floor() as i64)
        .collect();
    let hi: Vec<i64> = window
        .origin
        .iter()
        .map(|&o| ((o + window.side + reach) / spacing - 0.5).ceil() as i64)
        .collect();

    let mut balls = Vec::new();
    let mut site = lo.clone();
    'sites: loop {
        let center: Vec<f64> = site.iter().map(|&k| (k as f64 + 0.5) * spacing).collect();
        if dist_to_box(&center, &window.origin, window.side) < reach && site_uniform(seed, &site) < occupation_prob {
            balls.push(BallInclusion::new(center, radius));
        }
        // odometer over the site box, last axis fastest
        let mut axis = n;
        loop {
            if axis == 0 {
                break 'sites;
            }
            axis -= 1;
            if site[axis] < hi[axis] {
                site[axis] += 1;
                break;
            }
            site[axis] = lo[axis];
        }
    }

    Ok(PerforatedGeometry {
        n,
        t: window.side,
        origin: window.origin.clone(),
        delta: domain.delta,
        r_star: domain.r_star,
        balls,
        seed_record: RealizationSeed::new(
            seed,
            Generator::BernoulliLattice {
                spacing,
                radius,
                occupation_prob,
            },
        ),
    })
}

/// Strict (K2) predicate for a candidate pair.
pub fn separated(a: &BallInclusion, b: &BallInclusion, delta: f64) -> bool {
    a.distance_to(&b.center) > a.radius + b.radius + 2.0 * delta
}

pub fn gen_hardcore_rejection(
    seed: u64,
    intensity: f64,
    radius_law: (f64, f64),
    domain: &DomainParams,
    window: &Window,
) -> Result<PerforatedGeometry> {
    domain.validate()?;
    window.validate(domain.n)?;
    let (r_min, r_max) = radius_law;
    if !(r_min > 0.0 && r_min <= r_max && r_max < domain.r_star) {
        return Err(Error::Parameter(format!(
            "radius law ({r_min}, {r_max}) must satisfy 0 < r_min <= r_max < r_star = {}",
            domain.r_star
        )));
    }
    if !(intensity >= 0.0 && intensity.is_finite()) {
        return Err(Error::Parameter(format!("intensity must be nonnegative, got {intensity}")));
    }

    let n = domain.n;
    let proposals = (intensity * window.side.powi(n as i32)).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut balls: Vec<BallInclusion> = Vec::new();
    for _ in 0..proposals {
        let center: Vec<f64> = window.origin.iter().map(|&o| o + window.side * rng.gen::<f64>()).collect();
        let radius = if r_min == r_max { r_min } else { rng.gen_range(r_min..r_max) };
        let candidate = BallInclusion::new(center, radius);
        if balls.iter().all(|b| separated(b, &candidate, domain.delta)) {
            balls.push(candidate);
        }
    }

    Ok(PerforatedGeometry {
        n,
        t: window.side,
        origin: window.origin.clone(),
        delta: domain.delta,
        r_star: domain.r_star,
        balls,
        seed_record: RealizationSeed::new(seed, Generator::HardcoreRejection { intensity, r_min, r_max }),
    })
}

/// Index pairs `(i, j)`, `i < j`, whose δ-dilated balls intersect.
pub fn verify_separation(g: &PerforatedGeometry) -> Vec<(usize, usize)> {
    let mut bad = Vec::new();
    for (i, a) in g.balls.iter().enumerate() {
        for (j, b) in g.balls.iter().enumerate().skip(i + 1) {
            if !separated(a, b, g.delta) {
                bad.push((i, j));
            }
        }
    }
    bad
}

/// Indices of balls violating `0 < r < r_star`.
pub fn verify_radii(g: &PerforatedGeometry) -> Vec<usize> {
    g.balls
        .iter()
        .enumerate()
        .filter(|(_, b)| !(b.radius > 0.0 && b.radius < g.r_star))
        .map(|(i, _)| i)
        .collect()
}

pub fn ball_volume(n: usize, r: f64) -> f64 {
    match n {
        2 => PI * r * r,
        3 => 4.0 / 3.0 * PI * r * r * r,
        _ => unreachable!("dimension is validated to be 2 or 3"),
    }
}

/// `∫_a^b sqrt(r² − x²) dx` for `-r <= a <= b <= r`.
fn semicircle_integral(r: f64, a: f64, b: f64) -> f64 {
    let prim = |x: f64| {
        let x = x.clamp(-r, r);
        0.5 * (x * (r * r - x * x).max(0.0).sqrt() + r * r * (x / r).clamp(-1.0, 1.0).asin())
    };
    prim(b) - prim(a)
}

/// Exact area of the disk of radius `r` centred at the origin intersected
/// with the rectangle `[x0, x1] × [y0, y1]`.
pub fn disk_rect_area(r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    if r <= 0.0 || x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let a = x0.max(-r);
    let b = x1.min(r);
    if a >= b {
        return 0.0;
    }
    // Breakpoints where the half-chord sqrt(r² − x²) equals |y0| or |y1|.
    let mut cuts = vec![a, b];
    for y in [y0, y1] {
        if y.abs() < r {
            let x = (r * r - y * y).sqrt();
            for c in [-x, x] {
                if c > a && c < b {
                    cuts.push(c);
                }
            }
        }
    }
    cuts.sort_by(|p, q| p.total_cmp(q));

    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (l, u) = (w[0], w[1]);
        if u <= l {
            continue;
        }
        let mid = 0.5 * (l + u);
        let s = (r * r - mid * mid).max(0.0).sqrt();
        let top_is_chord = s < y1;
        let bottom_is_chord = -s > y0;
        let upper = if top_is_chord { s } else { y1 };
        let lower = if bottom_is_chord { -s } else { y0 };
        if upper <= lower {
            continue;
        }
        let chord = semicircle_integral(r, l, u);
        let len = u - l;
        area += match (top_is_chord, bottom_is_chord) {
            (true, true) => 2.0 * chord,
            (true, false) => chord - y0 * len,
            (false, true) => y1 * len + chord,
            (false, false) => (y1 - y0) * len,
        };
    }
    area
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// Volume of `B(center, r) ∩ (lo + [0, side]^n)`.
///
/// Exact for `n = 2`. For `n = 3` the disk-section area is integrated
/// exactly in two variables and adaptively (Simpson) in the third, split at
/// the kinks of the section area; relative error is below 1e-9 in practice
/// and documented as < 1e-6.
pub fn ball_box_volume(center: &[f64], r: f64, lo: &[f64], side: f64) -> f64 {
    let rel: Vec<(f64, f64)> = center.iter().zip(lo).map(|(&c, &l)| (l - c, l + side - c)).collect();
    match center.len() {
        2 => disk_rect_area(r, rel[0].0, rel[0].1, rel[1].0, rel[1].1),
        3 => {
            let a = rel[0].0.max(-r);
            let b = rel[0].1.min(r);
            if a >= b {
                return 0.0;
            }
            let (y0, y1) = rel[1];
            let (z0, z1) = rel[2];
            let section = |x: f64| {
                let rho = (r * r - x * x).max(0.0).sqrt();
                disk_rect_area(rho, y0, y1, z0, z1)
            };
            // Kinks: the section circle touches a side line or a corner.
            let mut cuts = vec![a, b];
            let mut push = |d2: f64| {
                if d2 < r * r {
                    let x = (r * r - d2).sqrt();
                    for c in [-x, x] {
                        if c > a && c < b {
                            cuts.push(c);
                        }
                    }
                }
            };
            for y in [y0, y1] {
                push(y * y);
                for z in [z0, z1] {
                    push(y * y + z * z);
                }
            }
            for z in [z0, z1] {
                push(z * z);
            }
            cuts.sort_by(|p, q| p.total_cmp(q));
            let tol = 1e-13 * r * r * r;
            cuts.windows(2)
                .filter(|w| w[1] > w[0])
                .map(|w| adaptive_simpson(&section, w[0], w[1], tol, 40))
                .sum()
        }
        _ => unreachable!("dimension is validated to be 2 or 3"),
    }
}

/// `vol(window ∖ K) / vol(window)`, computed from exact ball/box
/// intersections (balls are disjoint, so their volumes add).
pub fn empirical_density(g: &PerforatedGeometry) -> f64 {
    let covered: f64 = g.balls.iter().map(|b| ball_box_volume(&b.center, b.radius, &g.origin, g.t)).sum();
    (1.0 - covered / g.window_volume()).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityBound {
    /// Hole-free volume of the δ-annuli of interior balls, normalized.
    pub annulus_term: f64,
    /// `1 − Σ vol(B_i) / vol(window)`.
    pub complement_term: f64,
    pub value: f64,
}

/// Lower bound on the hole-free volume fraction from the disjoint δ-annuli
/// `B(θ_i, r_i + δ) ∖ B(θ_i, r_i)` of interior balls, or from the total ball
/// volume, whichever is larger.
///
/// Positive whenever the window contains an interior ball or is not
/// covered by the full ball volumes.
pub fn density_lower_bound(g: &PerforatedGeometry) -> DensityBound {
    let vol = g.window_volume();
    let annulus: f64 = g
        .balls
        .iter()
        .filter(|b| g.is_interior(b))
        .map(|b| ball_volume(g.n, b.radius + g.delta) - ball_volume(g.n, b.radius))
        .sum();
    let holes: f64 = g.balls.iter().map(|b| ball_volume(g.n, b.radius)).sum();
    let annulus_term = annulus / vol;
    let complement_term = 1.0 - holes / vol;
    DensityBound {
        annulus_term,
        complement_term,
        value: annulus_term.max(complement_term).min(1.0),
    }
}

/// `(n−1)`-volume of the section of the box `[lo, lo + side]^n` by the
/// hyperplane through `x` with normal `nu` (zero if they do not meet).
pub fn plane_section_area(lo: &[f64], side: f64, x: &[f64], nu: &[f64]) -> f64 {
    let n = lo.len();
    let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nu: Vec<f64> = nu.iter().map(|v| v / norm).collect();
    let dist = |p: &[f64]| -> f64 { (0..n).map(|k| (p[k] - x[k]) * nu[k]).sum() };
    let corner = |mask: usize| -> Vec<f64> { (0..n).map(|k| lo[k] + if mask & (1 << k) != 0 { side } else { 0.0 }).collect() };
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut push = |p: Vec<f64>| {
        let dup = points.iter().any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 1e-12 * side));
        if !dup {
            points.push(p);
        }
    };
    for mask in 0..(1usize << n) {
        for k in 0..n {
            if mask & (1 << k) != 0 {
                continue;
            }
            let p0 = corner(mask);
            let p1 = corner(mask | (1 << k));
            let (d0, d1) = (dist(&p0), dist(&p1));
            if d0 == 0.0 {
                push(p0.clone());
            }
            if d1 == 0.0 {
                push(p1.clone());
            }
            if d0 * d1 < 0.0 {
                let s = d0 / (d0 - d1);
                push((0..n).map(|j| p0[j] + s * (p1[j] - p0[j])).collect());
            }
        }
    }
    if points.len() < n {
        return 0.0;
    }
    if n == 2 {
        let mut best = 0.0f64;
        for a in &points {
            for b in &points {
                best = best.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        return best;
    }
    // orthonormal basis (e1, e2) of the plane, then the shoelace formula
    let helper = if nu[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let cross = |a: &[f64], b: &[f64]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let e1 = cross(&nu, &helper);
    let l1 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let e1 = [e1[0] / l1, e1[1] / l1, e1[2] / l1];
    let e2 = cross(&nu, &e1);
    let c: Vec<f64> = (0..3)
        .map(|k| points.iter().map(|p| p[k]).sum::<f64>() / points.len() as f64)
        .collect();
    let mut planar: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
            (
                d[0] * e1[0] + d[1] * e1[1] + d[2] * e1[2],
                d[0] * e2[0] + d[1] * e2[1] + d[2] * e2[2],
            )
        })
        .collect();
    planar.sort_by(|a, b| a.1.atan2(a.0).total_cmp(&b.1.atan2(b.0)));
    let mut twice = 0.0;
    for i in 0..planar.len() {
        let (a, b) = (planar[i], planar[(i + 1) % planar.len()]);
        twice += a.0 * b.1 - a.1 * b.0;
    }
    0.5 * twice.abs()
}
