//! Object trajectories, displacement-map encoding, Gaussian filtering,
//! sparse sampling, and the ObjMC metric.
//!
//! Coordinates are continuous latent pixels: `x` in `[0, W)` columns and `y`
//! in `[0, H)` rows. A displacement map is an `L x H x W x 2` volume holding
//! per-frame `(u, v)` steps at each trajectory's current (rounded) cell and
//! zeros everywhere else, including all of frame 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_MAX_SPARSE: usize = 8;
/// Default filter width in latent pixels; spreads a delta over roughly three
/// cells at a 32x32 latent.
pub const DEFAULT_FILTER_SIGMA: f64 = 1.5;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory must contain at least one point")]
    Empty,
    #[error("trajectory set must contain at least one trajectory")]
    EmptySet,
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("point ({x}, {y}) outside the {w}x{h} map domain")]
    OutOfRange { x: f64, y: f64, w: usize, h: usize },
    #[error("sparse count {n} outside [1, {max}]")]
    BadSparseCount { n: usize, max: usize },
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("trajectory sets have different cardinality: {0} vs {1}")]
    CardinalityMismatch(usize, usize),
    #[error("bezier needs 2 to 4 control points, got {0}")]
    BadControlPoints(usize),
    #[error("bad trajectory json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, TrajectoryError>;

/// One point path through `L` frames, in latent pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        Ok(Trajectory { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check_domain(&self, height: usize, width: usize) -> Result<()> {
        for &(x, y) in &self.points {
            if !(0.0..width as f64).contains(&x) || !(0.0..height as f64).contains(&y) || !x.is_finite() || !y.is_finite() {
                return Err(TrajectoryError::OutOfRange {
                    x,
                    y,
                    w: width,
                    h: height,
                });
            }
        }
        Ok(())
    }
}

/// Equal-length trajectories plus the sparse-sampling cap `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    trajectories: Vec<Trajectory>,
    pub max_sparse: usize,
}

impl TrajectorySet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        Self::with_max_sparse(trajectories, DEFAULT_MAX_SPARSE)
    }

    pub fn with_max_sparse(trajectories: Vec<Trajectory>, max_sparse: usize) -> Result<Self> {
        let first = trajectories.first().ok_or(TrajectoryError::EmptySet)?;
        let len = first.len();
        for t in &trajectories {
            if t.len() != len {
                return Err(TrajectoryError::LengthMismatch(len, t.len()));
            }
        }
        Ok(TrajectorySet {
            trajectories,
            max_sparse,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn count(&self) -> usize {
        self.trajectories.len()
    }

    pub fn frames(&self) -> usize {
        self.trajectories[0].len()
    }
}

/// `L x H x W x 2` displacement volume. Frame 0 is all zeros.
#[derive(Debug, Clone)]
pub struct TrajectoryMap<S: Scalar = f64> {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<S>,
}

impl<S: Scalar> TrajectoryMap<S> {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        TrajectoryMap {
            frames,
            height,
            width,
            data: vec![S::zero(); frames * height * width * 2],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    fn offset(&self, frame: usize, y: usize, x: usize) -> usize {
        ((frame * self.height + y) * self.width + x) * 2
    }

    pub fn get(&self, frame: usize, y: usize, x: usize) -> (S, S) {
        let o = self.offset(frame, y, x);
        (self.data[o], self.data[o + 1])
    }

    pub fn set(&mut self, frame: usize, y: usize, x: usize, uv: (S, S)) {
        let o = self.offset(frame, y, x);
        self.data[o] = uv.0;
        self.data[o + 1] = uv.1;
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::from_vec(
            &[self.frames, self.height, self.width, 2],
            self.data.clone(),
        )
        .unwrap()
    }

    pub fn from_tensor(t: &Tensor<S>) -> Option<Self> {
        let s = t.shape();
        if s.len() != 4 || s[3] != 2 {
            return None;
        }
        Some(TrajectoryMap {
            frames: s[0],
            height: s[1],
            width: s[2],
            data: t.data().to_vec(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.as_f64().abs()))
    }
}

/// Cell placement rule: round half away from zero, then clamp into the map.
fn place(coord: f64, extent: usize) -> usize {
    (coord.round().max(0.0) as usize).min(extent - 1)
}

/// Encode trajectories into a displacement map. For each trajectory and each
/// frame `i >= 1`, the step `(x_i - x_{i-1}, y_i - y_{i-1})` lands in the
/// rounded cell of `(x_i, y_i)`; untouched cells and all of frame 0 stay
/// `(0, 0)`. When several trajectories round onto one cell the last one wins;
/// collisions are counted in the log.
pub fn encode_displacement<S: Scalar>(
    ts: &TrajectorySet,
    height: usize,
    width: usize,
) -> Result<TrajectoryMap<S>> {
    let mut map = TrajectoryMap::zeros(ts.frames(), height, width);
    let mut collisions = 0usize;
    let mut touched = vec![usize::MAX; ts.frames() * height * width];
    for (ti, traj) in ts.trajectories().iter().enumerate() {
        traj.check_domain(height, width)?;
        for i in 1..traj.len() {
            let (x, y) = traj.points[i];
            let (px, py) = traj.points[i - 1];
            let cell_x = place(x, width);
            let cell_y = place(y, height);
            let slot = (i * height + cell_y) * width + cell_x;
            if touched[slot] != usize::MAX && touched[slot] != ti {
                collisions += 1;
            }
            touched[slot] = ti;
            map.set(
                i,
                cell_y,
                cell_x,
                (S::from_f64(x - px), S::from_f64(y - py)),
            );
        }
    }
    if collisions > 0 {
        log::debug!("encode_displacement: {collisions} cell collision(s), last writer wins");
    }
    Ok(map)
}

/// Uniform sample of `n` trajectories without replacement. The selected
/// trajectories are returned unmodified.
pub fn sample_sparse<R: rand::Rng>(
    dense: &TrajectorySet,
    n: usize,
    rng: &mut R,
) -> Result<TrajectorySet> {
    let max = dense.max_sparse.min(dense.count());
    if n == 0 || n > max {
        return Err(TrajectoryError::BadSparseCount { n, max });
    }
    let picks = rand::seq::index::sample(rng, dense.count(), n);
    let trajectories = picks
        .iter()
        .map(|i| dense.trajectories()[i].clone())
        .collect();
    TrajectorySet::with_max_sparse(trajectories, dense.max_sparse)
}

/// Normalized Gaussian kernel of size `2*ceil(3*sigma) + 1`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Blur each frame and channel with a normalized 2-D Gaussian (zero padding).
/// Linear in the input; frame 0 stays all zeros because it starts that way.
pub fn gaussian_filter_map<S: Scalar>(
    map: &TrajectoryMap<S>,
    sigma: f64,
) -> Result<TrajectoryMap<S>> {
    if sigma <= 0.0 {
        return Err(TrajectoryError::NonPositiveSigma(sigma));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (frames, h, w) = (map.frames(), map.height(), map.width());
    let mut out = TrajectoryMap::zeros(frames, h, w);
    // Separable kernel: horizontal pass into a scratch buffer, then vertical.
    let mut scratch = vec![0.0f64; h * w];
    for f in 0..frames {
        for ch in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (ki, &kv) in kernel.iter().enumerate() {
                        let sx = x as i64 + ki as i64 - radius;
                        if sx >= 0 && sx < w as i64 {
                            acc += kv * map.data[map.offset(f, y, sx as usize) + ch].as_f64();
                        }
                    }
                    scratch[y * w + x] = acc;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (ki, &kv) in kernel.iter().enumerate() {
                        let sy = y as i64 + ki as i64 - radius;
                        if sy >= 0 && sy < h as i64 {
                            acc += kv * scratch[sy as usize * w + x];
                        }
                    }
                    let o = out.offset(f, y, x) + ch;
                    out.data[o] = S::from_f64(acc);
                }
            }
        }
    }
    Ok(out)
}

/// Mean over trajectories and frames of the per-point Euclidean distance, in
/// latent pixels. Trajectories are matched by index.
pub fn objmc(pred: &TrajectorySet, gt: &TrajectorySet) -> Result<f64> {
    if pred.count() != gt.count() {
        return Err(TrajectoryError::CardinalityMismatch(
            pred.count(),
            gt.count(),
        ));
    }
    if pred.frames() != gt.frames() {
        return Err(TrajectoryError::LengthMismatch(pred.frames(), gt.frames()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (tp, tg) in pred.trajectories().iter().zip(gt.trajectories()) {
        for (&(xa, ya), &(xb, yb)) in tp.points.iter().zip(&tg.points) {
            total += ((xa - xb).powi(2) + (ya - yb).powi(2)).sqrt();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Sample a Bezier curve (2 to 4 control points) at `frames` uniformly spaced
/// parameters, clamping into the `height x width` domain.
pub fn make_bezier_trajectory(
    frames: usize,
    control_points: &[(f64, f64)],
    height: usize,
    width: usize,
) -> Result<Trajectory> {
    if !(2..=4).contains(&control_points.len()) {
        return Err(TrajectoryError::BadControlPoints(control_points.len()));
    }
    if frames < 2 {
        return Err(TrajectoryError::Empty);
    }
    let clamp = |v: f64, extent: usize| v.clamp(0.0, extent as f64 - 1e-6);
    let points = (0..frames)
        .map(|i| {
            let t = i as f64 / (frames - 1) as f64;
            let (x, y) = de_casteljau(control_points, t);
            (clamp(x, width), clamp(y, height))
        })
        .collect();
    Trajectory::new(points)
}

fn de_casteljau(control: &[(f64, f64)], t: f64) -> (f64, f64) {
    let mut pts = control.to_vec();
    while pts.len() > 1 {
        for i in 0..pts.len() - 1 {
            pts[i] = (
                pts[i].0 + t * (pts[i + 1].0 - pts[i].0),
                pts[i].1 + t * (pts[i + 1].1 - pts[i].1),
            );
        }
        pts.pop();
    }
    pts[0]
}

#[derive(Serialize, Deserialize)]
struct TrajFileJson {
    length: usize,
    trajectories: Vec<Vec<[f64; 2]>>,
}

/// Trajectory JSON: `{"length":L,"trajectories":[[[x,y]...]...]}`.
pub fn trajectories_to_json(ts: &TrajectorySet) -> String {
    let file = TrajFileJson {
        length: ts.frames(),
        trajectories: ts
            .trajectories()
            .iter()
            .map(|t| t.points.iter().map(|&(x, y)| [x, y]).collect())
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("trajectory json")
}

pub fn trajectories_from_json(text: &str) -> Result<TrajectorySet> {
    let file: TrajFileJson =
        serde_json::from_str(text).map_err(|e| TrajectoryError::Json(e.to_string()))?;
    let trajectories: Vec<Trajectory> = file
        .trajectories
        .into_iter()
        .map(|pts| Trajectory::new(pts.into_iter().map(|[x, y]| (x, y)).collect()))
        .collect::<Result<_>>()?;
    let ts = TrajectorySet::new(trajectories)?;
    if ts.frames() != file.length {
        return Err(TrajectoryError::LengthMismatch(file.length, ts.frames()));
    }
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(points: &[(f64, f64)]) -> Trajectory {
        Trajectory::new(points.to_vec()).unwrap()
    }

    #[test]
    fn encode_hand_example() {
        let ts = TrajectorySet::new(vec![traj(&[(2.0, 3.0), (4.0, 6.0), (5.0, 5.0)])]).unwrap();
        let map: TrajectoryMap<f64> = encode_displacement(&ts, 8, 8).unwrap();
        assert_eq!(map.get(1, 6, 4), (2.0, 3.0));
        assert_eq!(map.get(2, 5, 5), (1.0, -1.0));
        let mut nonzero = 0;
        for f in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    if map.get(f, y, x) != (0.0, 0.0) {
                        nonzero += 1;
                    }
                }
            }
        }
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn encode_stationary_trajectory_is_all_zero() {
        let ts = TrajectorySet::new(vec![traj(&[(3.0, 3.0); 5])]).unwrap();
        let map: TrajectoryMap<f64> = encode_displacement(&ts, 8, 8).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_rejects_out_of_range_points() {
        let ts = TrajectorySet::new(vec![traj(&[(2.0, 3.0), (8.0, 1.0)])]).unwrap();
        assert!(matches!(
            encode_displacement::<f64>(&ts, 8, 8),
            Err(TrajectoryError::OutOfRange { .. })
        ));
    }

    #[test]
    fn encode_telescopes_to_endpoint_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = crate::trajectory::random_walk_for_tests(&mut rng, 8, 16, 16);
            let sum: (f64, f64) = t
                .points
                .windows(2)
                .map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1))
                .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let want = (
                t.points.last().unwrap().0 - t.points[0].0,
                t.points.last().unwrap().1 - t.points[0].1,
            );
            assert!((sum.0 - want.0).abs() < 1e-9);
            assert!((sum.1 - want.1).abs() < 1e-9);
        }
    }

    #[test]
    fn encode_read_back_reconstructs_displacements_without_collisions() {
        // Two trajectories far apart never collide on a cell.
        let a = traj(&[(2.0, 2.0), (3.0, 2.5), (4.0, 3.0)]);
        let b = traj(&[(12.0, 12.0), (11.0, 12.5), (10.5, 13.0)]);
        let ts = TrajectorySet::new(vec![a.clone(), b.clone()]).unwrap();
        let map: TrajectoryMap<f64> = encode_displacement(&ts, 16, 16).unwrap();
        for t in [&a, &b] {
            for i in 1..t.len() {
                let (x, y) = t.points[i];
                let got = map.get(i, place(y, 16), place(x, 16));
                let want = (x - t.points[i - 1].0, y - t.points[i - 1].1);
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn sample_sparse_full_is_permutation_and_unmodified() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dense = TrajectorySet::new(vec![
            traj(&[(1.0, 1.0), (2.0, 2.0)]),
            traj(&[(3.0, 3.0), (4.0, 4.0)]),
            traj(&[(5.0, 5.0), (6.0, 6.0)]),
        ])
        .unwrap();
        let out = sample_sparse(&dense, 3, &mut rng).unwrap();
        assert_eq!(out.count(), 3);
        for t in out.trajectories() {
            assert!(dense.trajectories().contains(t));
        }
        let single = sample_sparse(&dense, 1, &mut rng).unwrap();
        assert!(dense.trajectories().contains(&single.trajectories()[0]));
    }

    #[test]
    fn sample_sparse_is_deterministic_per_seed() {
        let dense = TrajectorySet::new(
            (0..10)
                .map(|i| traj(&[(i as f64, 0.0), (i as f64, 1.0)]))
                .collect(),
        )
        .unwrap();
        let a = sample_sparse(&dense, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_sparse(&dense, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_sparse_rejects_out_of_range_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dense = TrajectorySet::new(vec![traj(&[(1.0, 1.0)]); 10]).unwrap();
        assert!(sample_sparse(&dense, 0, &mut rng).is_err());
        // Capped by N = 8 even though 10 trajectories exist.
        assert!(sample_sparse(&dense, 9, &mut rng).is_err());
        assert!(sample_sparse(&dense, 8, &mut rng).is_ok());
    }

    #[test]
    fn gaussian_filter_zero_map_stays_zero() {
        let map = TrajectoryMap::<f64>::zeros(3, 8, 8);
        let out = gaussian_filter_map(&map, 1.5).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_filter_delta_stamp_sums_to_one() {
        let mut map = TrajectoryMap::<f64>::zeros(2, 32, 32);
        map.set(1, 16, 16, (1.0, 0.0));
        let out = gaussian_filter_map(&map, 1.5).unwrap();
        let mut sum_u = 0.0;
        let mut sum_v = 0.0;
        for y in 0..32 {
            for x in 0..32 {
                let (u, v) = out.get(1, y, x);
                sum_u += u;
                sum_v += v;
            }
        }
        assert!((sum_u - 1.0).abs() < 1e-6, "sum {sum_u}");
        assert!(sum_v.abs() < 1e-12);
        // Frame 0 invariant.
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(out.get(0, y, x), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn gaussian_filter_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m1 = TrajectoryMap::<f64>::zeros(2, 8, 8);
        let mut m2 = TrajectoryMap::<f64>::zeros(2, 8, 8);
        for _ in 0..10 {
            use rand::Rng;
            let y = rng.random_range(0..8);
            let x = rng.random_range(0..8);
            m1.set(1, y, x, (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let y = rng.random_range(0..8);
            let x = rng.random_range(0..8);
            m2.set(1, y, x, (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        }
        let (a, b) = (0.7, -1.3);
        let mut combo = TrajectoryMap::<f64>::zeros(2, 8, 8);
        for i in 0..combo.data.len() {
            combo.data[i] = a * m1.data[i] + b * m2.data[i];
        }
        let fc = gaussian_filter_map(&combo, 1.0).unwrap();
        let f1 = gaussian_filter_map(&m1, 1.0).unwrap();
        let f2 = gaussian_filter_map(&m2, 1.0).unwrap();
        for i in 0..fc.data.len() {
            let want = a * f1.data[i] + b * f2.data[i];
            assert!((fc.data[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_filter_rejects_nonpositive_sigma() {
        let map = TrajectoryMap::<f64>::zeros(1, 4, 4);
        assert!(matches!(
            gaussian_filter_map(&map, 0.0),
            Err(TrajectoryError::NonPositiveSigma(_))
        ));
    }

    #[test]
    fn objmc_identity_and_offset() {
        let ts = TrajectorySet::new(vec![traj(&[(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)])]).unwrap();
        assert_eq!(objmc(&ts, &ts).unwrap(), 0.0);
        let moved = TrajectorySet::new(vec![traj(&[(4.0, 6.0), (6.0, 8.0), (8.0, 10.0)])]).unwrap();
        assert!((objmc(&moved, &ts).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn objmc_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = TrajectorySet::new(vec![random_walk_for_tests(&mut rng, 6, 16, 16)]).unwrap();
            let b = TrajectorySet::new(vec![random_walk_for_tests(&mut rng, 6, 16, 16)]).unwrap();
            let c = TrajectorySet::new(vec![random_walk_for_tests(&mut rng, 6, 16, 16)]).unwrap();
            let ab = objmc(&a, &b).unwrap();
            let bc = objmc(&b, &c).unwrap();
            let ac = objmc(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn objmc_rejects_shape_mismatch() {
        let a = TrajectorySet::new(vec![traj(&[(1.0, 1.0), (2.0, 2.0)])]).unwrap();
        let b = TrajectorySet::new(vec![traj(&[(1.0, 1.0), (2.0, 2.0)]); 2]).unwrap();
        assert!(objmc(&a, &b).is_err());
    }

    #[test]
    fn bezier_straight_line_is_uniform_and_collinear() {
        let t = make_bezier_trajectory(5, &[(0.0, 0.0), (8.0, 4.0)], 16, 16).unwrap();
        for (i, &(x, y)) in t.points.iter().enumerate() {
            assert!((x - 2.0 * i as f64).abs() < 1e-12);
            assert!((y - i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn bezier_endpoints_match_control_endpoints() {
        let control = [(1.0, 2.0), (10.0, 0.0), (3.0, 12.0)];
        let t = make_bezier_trajectory(7, &control, 16, 16).unwrap();
        assert_eq!(*t.points.first().unwrap(), control[0]);
        let last = *t.points.last().unwrap();
        assert!((last.0 - control[2].0).abs() < 1e-12);
        assert!((last.1 - control[2].1).abs() < 1e-12);
    }

    #[test]
    fn bezier_samples_stay_in_domain_after_clamping() {
        let control = [(-5.0, 2.0), (20.0, -4.0), (3.0, 40.0), (15.9, 15.9)];
        let t = make_bezier_trajectory(9, &control, 16, 16).unwrap();
        t.check_domain(16, 16).unwrap();
    }

    #[test]
    fn trajectory_json_round_trip() {
        let ts = TrajectorySet::new(vec![
            traj(&[(1.5, 2.25), (3.0, 4.0)]),
            traj(&[(0.0, 0.0), (7.5, 7.5)]),
        ])
        .unwrap();
        let back = trajectories_from_json(&trajectories_to_json(&ts)).unwrap();
        assert_eq!(back, ts);
    }
}

#[cfg(test)]
pub(crate) fn random_walk_for_tests<R: rand::Rng>(
    rng: &mut R,
    frames: usize,
    height: usize,
    width: usize,
) -> Trajectory {
    let mut x = rng.random_range(2.0..width as f64 - 2.0);
    let mut y = rng.random_range(2.0..height as f64 - 2.0);
    let mut points = vec![(x, y)];
    for _ in 1..frames {
        x = (x + rng.random_range(-1.0..1.0)).clamp(0.0, width as f64 - 1e-6);
        y = (y + rng.random_range(-1.0..1.0)).clamp(0.0, height as f64 - 1e-6);
        points.push((x, y));
    }
    Trajectory::new(points).unwrap()
}
