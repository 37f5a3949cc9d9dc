//! Mutual information neural estimation: the Donsker–Varadhan lower bound,
//! its bias-corrected training step, and the statistics networks.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Bound, Network, NetworkSpec, ParamStore};
use crate::optim::Adam;
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

/// A statistics network `T(a, b)` returning one score per pair, `[N, 1]`.
pub trait Critic {
    fn score(&self, g: &mut Graph, bound: &mut Bound, a: Var, b: Var) -> Result<Var>;
}

/// The convolutional critic for image pairs, which sees both images
/// stacked along channels.
#[derive(Clone, Debug)]
pub struct ImageCritic {
    net: Network,
}

impl ImageCritic {
    pub fn spec(fc_width: usize) -> NetworkSpec {
        format!(
            "conv[16,3,1,0]\nlrelu[0.2]\nconv[32,3,1,0]\nlrelu[0.2]\nconv[64,3,1,0]\nlrelu[0.2]\ngpool\nfc[{fc_width}]\nlrelu[0.2]\nfc[1]"
        )
        .parse()
        .expect("static critic spec")
    }

    /// `channels` per image; the network input has twice as many.
    pub fn build(spec: &NetworkSpec, channels: usize, store: &mut ParamStore, rng: Rng) -> Result<Self> {
        let net = Network::build(spec, 2 * channels, store, "critic", rng)?;
        if net.out_width() != 1 {
            return Err(Error::Config("critic must end in one output".into()));
        }
        Ok(ImageCritic { net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }
}

impl Critic for ImageCritic {
    fn score(&self, g: &mut Graph, bound: &mut Bound, a: Var, b: Var) -> Result<Var> {
        let x = g.concat(&[a, b], 1)?;
        self.net.forward(g, bound, x, &[])
    }
}

/// A fully connected critic for vector pairs `[N, Da]`, `[N, Db]`.
#[derive(Clone, Debug)]
pub struct MlpCritic {
    net: Network,
}

impl MlpCritic {
    pub fn build(in_width: usize, hidden: usize, store: &mut ParamStore, rng: Rng) -> Result<Self> {
        let spec: NetworkSpec = format!("fc[{hidden}]\nlrelu[0.2]\nfc[{hidden}]\nlrelu[0.2]\nfc[1]").parse()?;
        Ok(MlpCritic {
            net: Network::build_vector(&spec, in_width, store, "critic", rng)?,
        })
    }
}

impl Critic for MlpCritic {
    fn score(&self, g: &mut Graph, bound: &mut Bound, a: Var, b: Var) -> Result<Var> {
        let x = g.concat(&[a, b], 1)?;
        self.net.forward(g, bound, x, &[])
    }
}

fn max_value(g: &Graph, v: Var) -> f64 {
    g.value(v).data().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log mean exp(t)`, shifted by the (constant) maximum for stability.
pub fn log_mean_exp(g: &mut Graph, t: Var) -> Result<Var> {
    let m = max_value(g, t);
    let shifted = g.add_scalar(t, -m)?;
    let e = g.exp(shifted)?;
    let mean = g.mean(e)?;
    let l = g.log(mean)?;
    g.add_scalar(l, m)
}

/// `ν = mean T(joint) − log mean exp T(marginal)`.
pub fn mine_lower_bound(g: &mut Graph, t_joint: Var, t_marginal: Var) -> Result<Var> {
    if g.shape(t_joint) != g.shape(t_marginal) || g.value(t_joint).numel() < 2 {
        return Err(Error::shape(
            "mine_lower_bound",
            format!("joint {:?} vs marginal {:?}; need equal batches of at least 2", g.shape(t_joint), g.shape(t_marginal)),
        ));
    }
    let mj = g.mean(t_joint)?;
    let lme = log_mean_exp(g, t_marginal)?;
    g.sub(mj, lme)
}

/// A uniformly random cyclic permutation: a random relabelling of the shift
/// `i → i+1`, so no index maps to itself.
pub fn derangement(n: usize, stream: &mut Stream) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Data(format!("cannot shuffle a batch of {n}")));
    }
    let pi = stream.permutation(n);
    let mut inv = vec![0; n];
    for (i, &p) in pi.iter().enumerate() {
        inv[p] = i;
    }
    Ok((0..n).map(|i| pi[(inv[i] + 1) % n]).collect())
}

/// Critic parameters with their optimizer and the moving average of
/// `mean exp T(marginal)`, held in the log domain.
#[derive(Clone, Debug)]
pub struct MineState {
    pub store: ParamStore,
    pub adam: Adam,
    /// `log` of the moving denominator; `None` before the first update.
    pub log_ema: Option<f64>,
    pub ema_rate: f64,
}

pub const EMA_RATE: f64 = 0.01;

/// Outcome of one critic update.
#[derive(Clone, Copy, Debug)]
pub struct MineStep {
    /// Lower-bound estimate on the training batch, before the update.
    pub estimate: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl MineState {
    pub fn new(store: ParamStore, adam: Adam) -> Self {
        MineState {
            store,
            adam,
            log_ema: None,
            ema_rate: EMA_RATE,
        }
    }

    pub fn ema_denominator(&self) -> Option<f64> {
        self.log_ema.map(f64::exp)
    }

    fn update_ema(&mut self, log_batch: f64) -> f64 {
        let next = match self.log_ema {
            None => log_batch,
            Some(prev) => log_add_exp((1.0 - self.ema_rate).ln() + prev, self.ema_rate.ln() + log_batch),
        };
        self.log_ema = Some(next);
        next
    }

    /// One ascent step on the bound. The marginal batch pairs `a` with a
    /// deranged `b`. The gradient of the log-mean-exp term divides by the
    /// moving average rather than the batch mean.
    pub fn train_step(&mut self, critic: &dyn Critic, a: &Tensor, b: &Tensor, stream: &mut Stream) -> Result<MineStep> {
        let n = a.shape()[0];
        let perm = derangement(n, stream)?;
        let mut g = Graph::new();
        let mut bound = self.store.bind(&mut g, true, true);
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        let b_marg = g.index_select(bv, &perm)?;
        let tj = critic.score(&mut g, &mut bound, av, bv)?;
        let tm = critic.score(&mut g, &mut bound, av, b_marg)?;
        let nu = mine_lower_bound(&mut g, tj, tm)?;
        let estimate = g.value(nu).item();
        if !estimate.is_finite() {
            return Err(Error::NonFinite(format!("MINE estimate {estimate}")));
        }
        let lme = {
            let m = max_value(&g, tm);
            let s: f64 = g.value(tm).data().iter().map(|v| (v - m).exp()).sum();
            (s / n as f64).ln() + m
        };
        let log_ema = self.update_ema(lme);
        let mj = g.mean(tj)?;
        let shifted = g.add_scalar(tm, -log_ema)?;
        let ratio = g.exp(shifted)?;
        let ratio = g.mean(ratio)?;
        let gain = g.sub(mj, ratio)?;
        let loss = g.neg(gain)?;
        g.backward(loss)?;
        let grads = bound.gradients(&g);
        self.store.commit(&bound);
        self.adam.step(&mut self.store, &grads)?;
        Ok(MineStep { estimate })
    }

    /// The bound on a batch without training.
    pub fn estimate(&self, critic: &dyn Critic, a: &Tensor, b: &Tensor, stream: &mut Stream) -> Result<f64> {
        let perm = derangement(a.shape()[0], stream)?;
        let mut g = Graph::new();
        let mut bound = self.store.bind(&mut g, false, false);
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        let b_marg = g.index_select(bv, &perm)?;
        let tj = critic.score(&mut g, &mut bound, av, bv)?;
        let tm = critic.score(&mut g, &mut bound, av, b_marg)?;
        let nu = mine_lower_bound(&mut g, tj, tm)?;
        Ok(g.value(nu).item())
    }
}

/// `−ν` for a generator: `a` is fixed data, `b` the generated batch on `g`.
/// The critic must be bound frozen so no gradient reaches it.
pub fn mi_maximization_loss(g: &mut Graph, critic: &dyn Critic, frozen: &mut Bound, a: Var, b: Var, perm: &[usize]) -> Result<Var> {
    let b_marg = g.index_select(b, perm)?;
    let tj = critic.score(g, frozen, a, b)?;
    let tm = critic.score(g, frozen, a, b_marg)?;
    let nu = mine_lower_bound(g, tj, tm)?;
    g.neg(nu)
}

/// Settings of the bivariate Gaussian benchmark.
#[derive(Clone, Debug)]
pub struct GaussianBenchmark {
    pub rho: f64,
    pub steps: usize,
    pub batch: usize,
    pub hidden: usize,
    pub lr: f64,
    /// Samples in the held-out batch used for the final estimate.
    pub eval_samples: usize,
    pub log_every: usize,
}

impl Default for GaussianBenchmark {
    fn default() -> Self {
        GaussianBenchmark {
            rho: 0.9,
            steps: 5000,
            batch: 256,
            hidden: 64,
            lr: 1e-3,
            eval_samples: 8192,
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkResult {
    /// `(step, training-batch estimate)` every `log_every` steps.
    pub trace: Vec<(usize, f64)>,
    pub final_estimate: f64,
    pub analytic: f64,
}

/// `I(x; y) = −½ ln(1 − ρ²)` for a standard bivariate Gaussian.
pub fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

fn gaussian_pairs(rho: f64, n: usize, stream: &mut Stream) -> (Tensor, Tensor) {
    let c = (1.0 - rho * rho).sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = stream.normal();
        xs.push(x);
        ys.push(rho * x + c * stream.normal());
    }
    (
        Tensor::new(vec![n, 1], xs).expect("column shape"),
        Tensor::new(vec![n, 1], ys).expect("column shape"),
    )
}

/// Trains an MLP critic on samples of a bivariate Gaussian with correlation
/// `rho` and reports the bound on a fresh batch.
pub fn run_gaussian_benchmark(cfg: &GaussianBenchmark, rng: Rng) -> Result<BenchmarkResult> {
    let mut store = ParamStore::new();
    let critic = MlpCritic::build(2, cfg.hidden, &mut store, rng.fork("critic"))?;
    let adam = Adam::new(
        &store,
        crate::optim::AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    );
    let mut state = MineState::new(store, adam);
    let mut data = rng.fork("data").stream();
    let mut shuffle = rng.fork("shuffle").stream();
    let mut trace = Vec::new();
    for step in 0..cfg.steps {
        let (x, y) = gaussian_pairs(cfg.rho, cfg.batch, &mut data);
        let s = state.train_step(&critic, &x, &y, &mut shuffle)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            trace.push((step, s.estimate));
        }
    }
    let mut eval = rng.fork("eval").stream();
    let (x, y) = gaussian_pairs(cfg.rho, cfg.eval_samples, &mut eval);
    let final_estimate = state.estimate(&critic, &x, &y, &mut eval)?;
    Ok(BenchmarkResult {
        trace,
        final_estimate,
        analytic: gaussian_mi(cfg.rho),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn bound_of(tj: &[f64], tm: &[f64]) -> f64 {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(tj.to_vec()));
        let b = g.constant(Tensor::from_vec(tm.to_vec()));
        let v = mine_lower_bound(&mut g, a, b).unwrap();
        g.value(v).item()
    }

    #[test]
    fn constant_critic_gives_zero() {
        assert_eq!(bound_of(&[0.0; 4], &[0.0; 4]), 0.0);
        assert!(bound_of(&[3.7; 4], &[3.7; 4]).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance_and_large_scores() {
        let mut s = Rng::new(1).stream();
        let tj = s.normals(16);
        let tm = s.normals(16);
        let base = bound_of(&tj, &tm);
        for c in [-500.0, -3.0, 11.0, 500.0] {
            let shifted = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
            assert!((bound_of(&shifted(&tj), &shifted(&tm)) - base).abs() < 1e-10);
        }
        let big: Vec<f64> = tm.iter().map(|v| v * 500.0).collect();
        assert!(bound_of(&tj, &big).is_finite());
    }

    #[test]
    fn batch_of_one_is_rejected() {
        let mut s = Rng::new(2).stream();
        assert!(derangement(1, &mut s).is_err());
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1.0]));
        assert!(mine_lower_bound(&mut g, a, a).is_err());
    }

    #[test]
    fn derangements_have_no_fixed_points() {
        let mut s = Rng::new(3).stream();
        for n in 2..40 {
            let p = derangement(n, &mut s).unwrap();
            let mut seen = vec![false; n];
            for (i, &j) in p.iter().enumerate() {
                assert_ne!(i, j);
                seen[j] = true;
            }
            assert!(seen.iter().all(|&b| b));
        }
    }

    #[test]
    fn critic_gradcheck() {
        let mut store = ParamStore::new();
        let critic = ImageCritic::build(&ImageCritic::spec(8), 1, &mut store, Rng::new(4)).unwrap();
        let a = Tensor::randn(&[2, 1, 7, 7], Rng::new(5));
        let b = Tensor::randn(&[2, 1, 7, 7], Rng::new(6));
        let r = grad_check(
            |g, bv| {
                let mut bound = store.bind(g, false, false);
                let av = g.constant(a.clone());
                let t = critic.score(g, &mut bound, av, bv)?;
                let t2 = g.square(t)?;
                g.sum(t2)
            },
            &b,
            1e-5,
            1e-4,
        );
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn independent_data_bound_is_not_positive_on_average() {
        let mut total = 0.0;
        let mut s = Rng::new(7).stream();
        for i in 0..50 {
            let mut store = ParamStore::new();
            let critic = MlpCritic::build(2, 16, &mut store, Rng::new(100 + i)).unwrap();
            let adam = Adam::new(&store, Default::default());
            let state = MineState::new(store, adam);
            let x = Tensor::new(vec![512, 1], s.normals(512)).unwrap();
            let y = Tensor::new(vec![512, 1], s.normals(512)).unwrap();
            total += state.estimate(&critic, &x, &y, &mut s).unwrap();
        }
        assert!(total / 50.0 <= 0.05, "{}", total / 50.0);
    }

    #[test]
    fn frozen_generator_loss_leaves_critic_alone() {
        let mut store = ParamStore::new();
        let critic = MlpCritic::build(2, 8, &mut store, Rng::new(8)).unwrap();
        let before = store.params().to_vec();
        let mut g = Graph::new();
        let mut frozen = store.bind(&mut g, false, false);
        let a = g.constant(Tensor::randn(&[6, 1], Rng::new(9)));
        let b = g.param(Tensor::randn(&[6, 1], Rng::new(10)));
        let perm = derangement(6, &mut Rng::new(11).stream()).unwrap();
        let loss = mi_maximization_loss(&mut g, &critic, &mut frozen, a, b, &perm).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(b).is_some());
        assert!(frozen.gradients(&g).iter().all(Option::is_none));
        assert_eq!(store.params(), before.as_slice());
    }

    #[test]
    fn zero_critic_sends_no_gradient() {
        let mut store = ParamStore::new();
        let critic = MlpCritic::build(2, 8, &mut store, Rng::new(12)).unwrap();
        for p in store.params_mut() {
            p.tensor = Tensor::zeros(p.tensor.shape());
        }
        let mut g = Graph::new();
        let mut frozen = store.bind(&mut g, false, false);
        let a = g.constant(Tensor::randn(&[4, 1], Rng::new(13)));
        let b = g.param(Tensor::randn(&[4, 1], Rng::new(14)));
        let loss = mi_maximization_loss(&mut g, &critic, &mut frozen, a, b, &[1, 2, 3, 0]).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(b).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ema_is_positive_after_first_update() {
        let mut store = ParamStore::new();
        let critic = MlpCritic::build(2, 8, &mut store, Rng::new(15)).unwrap();
        let adam = Adam::new(&store, Default::default());
        let mut state = MineState::new(store, adam);
        assert!(state.ema_denominator().is_none());
        let x = Tensor::randn(&[8, 1], Rng::new(16));
        state.train_step(&critic, &x, &x, &mut Rng::new(17).stream()).unwrap();
        assert!(state.ema_denominator().unwrap() > 0.0);
    }
}
