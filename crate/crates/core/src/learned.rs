//! Dense networks with hand-derived backprop, and the two learned components:
//! the behavior-cloning planner and the gate that predicts whether the
//! classical stack will behave like the demonstrator.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    resample_plan, to_robot_frame, to_world_frame, Command, GlobalPlan, Observation, Point, Pose2D, HISTORY_LEN,
    NUM_BEAMS, OMEGA_MAX, PLAN_POINTS, V_MAX,
};

/// Beams after pairwise min-pooling.
pub const POOLED_BEAMS: usize = NUM_BEAMS / 2;
pub const FEATURE_LEN: usize = HISTORY_LEN * POOLED_BEAMS + 4;
pub const BC_WAYPOINTS: usize = 16;
pub const BC_OUTPUTS: usize = 2 * BC_WAYPOINTS;
pub const HIDDEN: usize = 128;
pub const GOAL_SCALE: f64 = 10.0;
pub const BC_LOOKAHEAD: f64 = 0.8;
pub const MODEL_VERSION: u32 = 1;

/// Robot-centric encoding of an observation: pooled scans oldest first,
/// goal in the robot frame, last command. Every entry lies in [−1, 1].
pub fn features(obs: &Observation) -> Vec<f64> {
    let mut f = Vec::with_capacity(FEATURE_LEN);
    for scan in &obs.scan_history {
        for j in 0..POOLED_BEAMS {
            let r = scan.ranges[2 * j].min(scan.ranges[2 * j + 1]);
            f.push((r / scan.max_range).clamp(0.0, 1.0));
        }
    }
    let g = to_robot_frame(obs.goal.position(), obs.pose());
    f.push((g.x / GOAL_SCALE).clamp(-1.0, 1.0));
    f.push((g.y / GOAL_SCALE).clamp(-1.0, 1.0));
    f.push((obs.last_command.v / V_MAX).clamp(-1.0, 1.0));
    f.push((obs.last_command.omega / OMEGA_MAX).clamp(-1.0, 1.0));
    f
}

/// Training target for the BC head: the demonstrated plan in the robot
/// frame, resampled to 17 points from the robot, as 16 successive
/// displacements.
pub fn bc_target(pose: &Pose2D, demo_plan: &GlobalPlan) -> Result<Vec<f64>> {
    let local = GlobalPlan::new(demo_plan.points.iter().map(|&p| to_robot_frame(p, pose)).collect())?;
    let pts = resample_plan(&local, BC_WAYPOINTS + 1)?.points;
    let mut out = Vec::with_capacity(BC_OUTPUTS);
    let mut prev = Point::default();
    for p in &pts[1..] {
        out.push(p.x - prev.x);
        out.push(p.y - prev.y);
        prev = *p;
    }
    Ok(out)
}

/// Robot-frame waypoints from displacement outputs (cumulative sum).
pub fn decode_waypoints(out: &[f64]) -> Vec<Point> {
    let mut acc = Point::default();
    out.chunks_exact(2)
        .map(|d| {
            acc = acc + Point::new(d[0], d[1]);
            acc
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    CrossEntropy,
}

/// Per-layer `(dW, db)`.
pub type Gradients = Vec<(Array2<f64>, Array1<f64>)>;

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-a..a));
                Layer { weights, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer { weights: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.ncols()];
        s.extend(self.layers.iter().map(|l| l.weights.nrows()));
        s
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.nrows())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch { expected: self.input_len(), got: x.len() });
        }
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward_batch(x)?.row(0).to_vec())
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.activations(x)?.pop().expect("at least one layer"))
    }

    /// Post-activation outputs of every layer (input first).
    fn activations(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        if x.ncols() != self.input_len() {
            return Err(Error::DimensionMismatch { expected: self.input_len(), got: x.ncols() });
        }
        let mut acts = vec![x.to_owned()];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.weights.t()) + &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        Ok(acts)
    }

    /// Mean loss over the batch (sample-weighted when `weights` is given) and
    /// its exact gradient. MSE averages over output coordinates; cross
    /// entropy expects one-hot (or probability) targets.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        weights: Option<&[f64]>,
        loss: Loss,
    ) -> Result<(f64, Gradients)> {
        let acts = self.activations(x)?;
        let out = acts.last().unwrap();
        if y.dim() != out.dim() {
            return Err(Error::DimensionMismatch { expected: out.ncols(), got: y.ncols() });
        }
        let b = out.nrows();
        let w: Vec<f64> = weights.map_or_else(|| vec![1.0; b], |w| w.to_vec());
        let wsum: f64 = w.iter().sum();
        let mut total = 0.0;
        let mut dz = Array2::zeros(out.dim());
        match loss {
            Loss::Mse => {
                let dim = out.ncols() as f64;
                for i in 0..b {
                    let mut li = 0.0;
                    for j in 0..out.ncols() {
                        let r = out[[i, j]] - y[[i, j]];
                        li += r * r;
                        dz[[i, j]] = 2.0 * r / dim * w[i] / wsum;
                    }
                    total += w[i] * li / dim;
                }
            }
            Loss::CrossEntropy => {
                for i in 0..b {
                    let row = out.row(i);
                    let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    let mut li = 0.0;
                    for j in 0..out.ncols() {
                        let p = (row[j] - lse).exp();
                        li -= y[[i, j]] * (row[j] - lse);
                        dz[[i, j]] = (p - y[[i, j]]) * w[i] / wsum;
                    }
                    total += w[i] * li;
                }
            }
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let a_prev = &acts[l];
            let dw = dz.t().dot(a_prev);
            let db = dz.sum_axis(Axis(0));
            if l > 0 {
                let mut da = dz.dot(&self.layers[l].weights);
                da.zip_mut_with(&acts[l], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                dz = da;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((total / wsum, grads))
    }
}

/// Analytic gradient of the mean batch loss.
pub fn grad(net: &Mlp, x: ArrayView2<f64>, y: ArrayView2<f64>, loss: Loss) -> Result<Gradients> {
    Ok(net.loss_and_grad(x, y, None, loss)?.1)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax cross entropy of one sample against a class index.
pub fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[class]
}

/// P(class 1) for a two-logit head, computed without overflow.
pub fn class1_probability(logits: &[f64]) -> f64 {
    let d = logits[0] - logits[1];
    if d >= 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    fn new(net: &Mlp, cfg: &TrainConfig) -> Self {
        let zeros = || net.layers.iter().map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len()))).collect();
        Self { lr: cfg.lr, b1: cfg.beta1, b2: cfg.beta2, eps: cfg.eps, t: 0, m: zeros(), v: zeros() }
    }

    fn step(&mut self, net: &mut Mlp, g: &Gradients) {
        self.t += 1;
        let (b1, b2) = (self.b1, self.b2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            ndarray::Zip::from(&mut layer.weights)
                .and(&g[k].0)
                .and(&mut self.m[k].0)
                .and(&mut self.v[k].0)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g[k].1)
                .and(&mut self.m[k].1)
                .and(&mut self.v[k].1)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, batch: 64, epochs: 50, seed: 0, train_fraction: 0.9 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 || !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("bad training config {self:?}")));
        }
        if self.epochs == 0 {
            return Err(Error::NoTrainingPerformed);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation MSE for BC, validation accuracy for the gate.
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub train_samples: usize,
    pub val_samples: usize,
}

/// Sample order is canonicalized (lexicographic on the raw values) before
/// the seeded split, so training depends on the sample set, not its order.
fn canonical_order(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    let key = |i: usize| xs[i].iter().chain(ys[i].iter()).map(|v| v.to_bits()).collect::<Vec<u64>>();
    idx.sort_by_cached_key(|&i| key(i));
    idx
}

fn stack(rows: &[&Vec<f64>]) -> Array2<f64> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut a = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        a.row_mut(i).assign(&ndarray::ArrayView1::from(r.as_slice()));
    }
    a
}

struct Split {
    train: Vec<usize>,
    val: Vec<usize>,
}

fn split(xs: &[Vec<f64>], ys: &[Vec<f64>], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Split {
    let mut idx = canonical_order(xs, ys);
    idx.shuffle(rng);
    let n_train = ((idx.len() as f64 * cfg.train_fraction).round() as usize).clamp(1, idx.len());
    let val = idx.split_off(n_train);
    Split { train: idx, val: if val.is_empty() { vec![] } else { val } }
}

/// Shared minibatch loop; `val_metric` scores a candidate (higher is
/// better), the best one is returned.
fn fit(
    mut net: Mlp,
    xs: &[Vec<f64>],
    ys: &[Vec<f64>],
    weights: Option<&[f64]>,
    loss: Loss,
    cfg: &TrainConfig,
    val_metric: impl Fn(&Mlp, &[usize]) -> f64,
) -> Result<(Mlp, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let Split { mut train, val } = split(xs, ys, cfg, &mut rng);
    // validate on the training rows when the split leaves none aside
    let val_rows = if val.is_empty() { train.clone() } else { val.clone() };
    let mut adam = Adam::new(&net, cfg);
    let mut best = (f64::NEG_INFINITY, 0usize, net.clone());
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0.0;
        for chunk in train.chunks(cfg.batch) {
            let xb = stack(&chunk.iter().map(|&i| &xs[i]).collect::<Vec<_>>());
            let yb = stack(&chunk.iter().map(|&i| &ys[i]).collect::<Vec<_>>());
            let wb: Option<Vec<f64>> = weights.map(|w| chunk.iter().map(|&i| w[i]).collect());
            let (l, g) = net.loss_and_grad(xb.view(), yb.view(), wb.as_deref(), loss)?;
            adam.step(&mut net, &g);
            sum += l * chunk.len() as f64;
            count += chunk.len() as f64;
        }
        let score = val_metric(&net, &val_rows);
        curve.push(EpochStats { epoch, train_loss: sum / count, val_metric: score });
        if score > best.0 {
            best = (score, epoch, net.clone());
        }
    }
    if !best.2.is_finite() {
        return Err(Error::NonFinite("trained weights"));
    }
    let report = TrainReport {
        best_val: best.0,
        best_epoch: best.1,
        curve,
        train_samples: train.len(),
        val_samples: val.len(),
    };
    Ok((best.2, report))
}

fn mse_on(net: &Mlp, xs: &[Vec<f64>], ys: &[Vec<f64>], rows: &[usize]) -> f64 {
    let x = stack(&rows.iter().map(|&i| &xs[i]).collect::<Vec<_>>());
    let y = stack(&rows.iter().map(|&i| &ys[i]).collect::<Vec<_>>());
    let out = net.forward_batch(x.view()).expect("shape checked at entry");
    (&out - &y).mapv(|v| v * v).mean().unwrap_or(0.0)
}

/// Behavior cloning on the non-compliant subset: features → 16 plan
/// displacements, MSE, best validation MSE kept.
pub fn train_bc(features: &[Vec<f64>], targets: &[Vec<f64>], cfg: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    if features.is_empty() {
        return Err(Error::NoNonCompliantData);
    }
    cfg.validate()?;
    check_rows(features, FEATURE_LEN)?;
    check_rows(targets, BC_OUTPUTS)?;
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), got: targets.len() });
    }
    if features.len() < cfg.batch {
        return Err(Error::InvalidArgument(format!("{} samples, fewer than one batch of {}", features.len(), cfg.batch)));
    }
    let net = Mlp::new(&[FEATURE_LEN, HIDDEN, HIDDEN, BC_OUTPUTS], cfg.seed);
    let (net, mut report) =
        fit(net, features, targets, None, Loss::Mse, cfg, |n, rows| -mse_on(n, features, targets, rows))?;
    report.best_val = -report.best_val;
    for e in &mut report.curve {
        e.val_metric = -e.val_metric;
    }
    Ok((net, report))
}

/// Gate classifier: features → 2 logits (class 1 = classical compliant),
/// inverse-frequency weighted cross entropy, best validation accuracy kept.
pub fn train_gate(features: &[Vec<f64>], labels: &[bool], cfg: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    if features.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    cfg.validate()?;
    check_rows(features, FEATURE_LEN)?;
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), got: labels.len() });
    }
    let n1 = labels.iter().filter(|&&c| c).count();
    let n0 = labels.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }
    let ys: Vec<Vec<f64>> = labels.iter().map(|&c| if c { vec![0.0, 1.0] } else { vec![1.0, 0.0] }).collect();
    let n = labels.len() as f64;
    let w: Vec<f64> = labels.iter().map(|&c| n / (2.0 * if c { n1 } else { n0 } as f64)).collect();
    let net = Mlp::new(&[FEATURE_LEN, HIDDEN, HIDDEN, 2], cfg.seed);
    fit(net, features, &ys, Some(&w), Loss::CrossEntropy, cfg, |n, rows| accuracy(n, features, labels, rows))
}

fn accuracy(net: &Mlp, xs: &[Vec<f64>], labels: &[bool], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let x = stack(&rows.iter().map(|&i| &xs[i]).collect::<Vec<_>>());
    let out = net.forward_batch(x.view()).expect("shape checked at entry");
    let hits = rows
        .iter()
        .enumerate()
        .filter(|(k, &i)| (class1_probability(&[out[[*k, 0]], out[[*k, 1]]]) >= 0.5) == labels[i])
        .count();
    hits as f64 / rows.len() as f64
}

fn check_rows(rows: &[Vec<f64>], len: usize) -> Result<()> {
    match rows.iter().find(|r| r.len() != len) {
        Some(r) => Err(Error::DimensionMismatch { expected: len, got: r.len() }),
        None => Ok(()),
    }
}

/// L_θ(S_t): the predicted plan in the world frame (robot position plus 16
/// waypoints ending at the goal, resampled to 200 points) and a
/// pure-pursuit command on it.
pub fn bc_predict(net: &Mlp, obs: &Observation) -> Result<(GlobalPlan, Command)> {
    let out = net.forward(&features(obs))?;
    bc_decode(&out, obs.pose(), obs.goal.position())
}

pub fn bc_decode(out: &[f64], pose: &Pose2D, goal: Point) -> Result<(GlobalPlan, Command)> {
    let mut local = vec![Point::default()];
    local.extend(decode_waypoints(out));
    if local.iter().all(|p| p.norm() < 1e-9) {
        return Err(Error::DegeneratePlan);
    }
    let local = GlobalPlan::new(end_at_goal(local, to_robot_frame(goal, pose)))?;
    let command = pursue_local(&local, BC_LOOKAHEAD);
    let world = GlobalPlan::new(local.points.iter().map(|&p| to_world_frame(p, pose)).collect())?;
    Ok((resample_plan(&world, PLAN_POINTS)?, command))
}

/// Cuts a waypoint chain at its closest approach to `goal` and finishes it
/// at the goal: a plan does not run past where it is headed.
fn end_at_goal(mut pts: Vec<Point>, goal: Point) -> Vec<Point> {
    let (mut best, mut cut, mut at) = (goal.dist(pts[0]), 0, pts[0]);
    for (i, w) in pts.windows(2).enumerate() {
        let d = w[1] - w[0];
        let len2 = d.dot(d);
        let u = if len2 > 0.0 { ((goal - w[0]).dot(d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let q = w[0].lerp(w[1], u);
        if goal.dist(q) < best {
            (best, cut, at) = (goal.dist(q), i, q);
        }
    }
    pts.truncate(cut + 1);
    for p in [at, goal] {
        if pts.last().is_some_and(|l| l.dist(p) > 1e-9) {
            pts.push(p);
        }
    }
    pts
}

/// Pure pursuit on a robot-frame path at full speed, reduced only by the
/// turn-rate limit; turns in place when the target is behind.
fn pursue_local(local: &GlobalPlan, lookahead: f64) -> Command {
    let target = local.point_at(lookahead);
    let d2 = target.dot(target);
    if d2 < 1e-12 {
        return Command::STOP;
    }
    if target.x <= 0.0 {
        return Command::new(0.0, target.y.signum() * OMEGA_MAX).clamped();
    }
    let kappa = 2.0 * target.y / d2;
    let mut v = V_MAX;
    if (v * kappa).abs() > OMEGA_MAX {
        v = OMEGA_MAX / kappa.abs();
    }
    Command::new(v, v * kappa).clamped()
}

/// M_φ(S_t): probability that the classical output is compliant.
pub fn gate_predict(net: &Mlp, obs: &Observation) -> Result<f64> {
    Ok(class1_probability(&net.forward(&features(obs))?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bc,
    Gate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub seed: u64,
    pub dataset_hash: String,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub best_val: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    sizes: Vec<usize>,
    layers: Vec<LayerFile>,
    meta: ModelMeta,
}

/// JSON model file: layer sizes, row-major weights, training metadata.
pub fn model_to_json(net: &Mlp, meta: &ModelMeta) -> Result<String> {
    let layers = net
        .layers
        .iter()
        .map(|l| LayerFile {
            rows: l.weights.nrows(),
            cols: l.weights.ncols(),
            weights: l.weights.iter().copied().collect(),
            bias: l.bias.to_vec(),
        })
        .collect();
    let file = ModelFile { version: MODEL_VERSION, sizes: net.sizes(), layers, meta: meta.clone() };
    Ok(serde_json::to_string(&file)?)
}

pub fn model_from_json(text: &str) -> Result<(Mlp, ModelMeta)> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.version != MODEL_VERSION {
        return Err(Error::Data(format!("unsupported model version {}", file.version)));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (k, l) in file.layers.into_iter().enumerate() {
        if file.sizes.get(k) != Some(&l.cols) || file.sizes.get(k + 1) != Some(&l.rows) || l.bias.len() != l.rows {
            return Err(Error::Data(format!("layer {k} does not match sizes {:?}", file.sizes)));
        }
        let weights = Array2::from_shape_vec((l.rows, l.cols), l.weights).map_err(|e| Error::Data(e.to_string()))?;
        layers.push(Layer { weights, bias: Array1::from(l.bias) });
    }
    if layers.is_empty() {
        return Err(Error::Data("model without layers".into()));
    }
    let net = Mlp { layers };
    if !net.is_finite() {
        return Err(Error::NonFinite("model weights"));
    }
    Ok((net, file.meta))
}

/// Owned view of a batch for callers that hold rows.
pub fn batch(rows: &[Vec<f64>]) -> Array2<f64> {
    stack(&rows.iter().collect::<Vec<_>>())
}
