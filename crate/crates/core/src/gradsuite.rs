//! The gradient suite: central-difference checks of every differentiable
//! op on three shapes each, plus the miniature network blocks with respect
//! to their input and every parameter tensor.

use std::time::{Duration, Instant};

use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::graph::{Graph, Var};
use crate::losses::{self, FeatureExtractor};
use crate::mine::{self, Critic, ImageCritic};
use crate::models::{e_lr_spec, ModelConfig};
use crate::nn::{Bound, Network, NetworkSpec, ParamStore};
use crate::rng::Rng;
use crate::style::{self, AdaInParams};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub cases: Vec<CaseResult>,
    /// Block parameters with an identically vanishing gradient.
    pub skipped: Vec<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.report.passed)
    }

    pub fn worst(&self) -> Option<&CaseResult> {
        self.cases
            .iter()
            .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
    }
}

type Scalar = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

struct Suite {
    rng: Rng,
    counter: u64,
    cases: Vec<(String, Scalar, Tensor)>,
    skipped: Vec<String>,
}

/// `sum(y ⊙ r)` for a fixed random `r`, so every output coordinate gets a
/// distinct weight and linear ops are not checked against all-ones.
fn weighted(g: &mut Graph, y: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let p = g.mul(y, rv)?;
    g.sum(p)
}

impl Suite {
    fn fresh(&mut self) -> Rng {
        self.counter += 1;
        self.rng.fork_indexed("draw", self.counter)
    }

    fn randn(&mut self, shape: &[usize]) -> Tensor {
        Tensor::randn(shape, self.fresh())
    }

    fn positive(&mut self, shape: &[usize]) -> Tensor {
        Tensor::rand_uniform(shape, 0.5, 2.0, self.fresh())
    }

    /// Registers `f` at `input`, reduced with a random weighting sized by
    /// probing the output shape once.
    fn add<F>(&mut self, name: impl Into<String>, input: Tensor, f: F)
    where
        F: Fn(&mut Graph, Var) -> Result<Var> + 'static,
    {
        let out_shape = {
            let mut g = Graph::new();
            let x = g.constant(input.clone());
            f(&mut g, x).map(|y| g.shape(y).to_vec())
        };
        let name = name.into();
        let r = match out_shape {
            Ok(s) => self.randn(&s),
            // Left to the check itself to report.
            Err(_) => Tensor::scalar(1.0),
        };
        self.cases.push((
            name,
            Box::new(move |g, x| {
                let y = f(g, x)?;
                weighted(g, y, &r)
            }),
            input,
        ));
    }

    fn unary(&mut self, name: &str, shapes: &[&[usize]], positive: bool, op: fn(&mut Graph, Var) -> Result<Var>) {
        for s in shapes {
            let x = if positive { self.positive(s) } else { self.randn(s) };
            self.add(format!("{name} {s:?}"), x, op);
        }
    }

    /// Both operands of a binary op, each checked with the other held fixed.
    fn binary(&mut self, name: &str, shapes: &[(&[usize], &[usize])], op: fn(&mut Graph, Var, Var) -> Result<Var>, positive_rhs: bool) {
        for (sa, sb) in shapes {
            let a = self.randn(sa);
            let b = if positive_rhs { self.positive(sb) } else { self.randn(sb) };
            let bc = b.clone();
            self.add(format!("{name} lhs {sa:?} {sb:?}"), a.clone(), move |g, x| {
                let c = g.constant(bc.clone());
                op(g, x, c)
            });
            self.add(format!("{name} rhs {sa:?} {sb:?}"), b, move |g, x| {
                let c = g.constant(a.clone());
                op(g, c, x)
            });
        }
    }

    /// Checks a network-like `forward` with respect to its input and each
    /// parameter tensor of `store`, with batch norms in `training` mode or
    /// on running statistics. Parameters whose gradient vanishes
    /// identically are recorded as skipped, since relative error is
    /// meaningless there. They are the shifts some later op cancels: a conv
    /// bias feeding a training-mode batch norm, a per-channel shift ahead of
    /// an AdaIN, the `f` bias of global attention (constant along each
    /// softmax column) and the critic's output bias (the bound is shift
    /// invariant).
    fn block<F>(&mut self, name: &str, store: &ParamStore, input: &Tensor, training: bool, forward: F) -> Result<()>
    where
        F: Fn(&mut Graph, &mut Bound, Var) -> Result<Var> + Clone + 'static,
    {
        let mode = if training { "train" } else { "eval" };
        {
            let (store, fwd) = (store.clone(), forward.clone());
            self.add(format!("{name} {mode} input"), input.clone(), move |g, x| {
                let mut bound = store.bind(g, false, training);
                fwd(g, &mut bound, x)
            });
        }
        let grads = {
            let mut g = Graph::new();
            let mut bound = store.bind(&mut g, true, training);
            let x = g.constant(input.clone());
            let y = forward(&mut g, &mut bound, x)?;
            let r = Tensor::randn(g.shape(y), self.fresh());
            let l = weighted(&mut g, y, &r)?;
            g.backward(l)?;
            bound.gradients(&g)
        };
        let scale = grads
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for id in store.param_ids() {
            let vanishing = grads[id.index()]
                .as_ref()
                .is_none_or(|t| t.data().iter().all(|v| v.abs() <= 1e-9 * scale));
            let pname = store.params()[id.index()].name.clone();
            if vanishing {
                self.skipped.push(format!("{name} {mode} {pname}"));
                continue;
            }
            let (st, fwd, inp) = (store.clone(), forward.clone(), input.clone());
            self.add(format!("{name} {mode} {pname}"), store.param(id).clone(), move |g, p| {
                let mut bound = st.bind(g, false, training);
                bound.replace(id, p);
                let x = g.constant(inp.clone());
                fwd(g, &mut bound, x)
            });
        }
        Ok(())
    }

    /// [`Suite::block`] in training mode, then in inference mode when the
    /// store keeps running statistics.
    fn block_modes<F>(&mut self, name: &str, store: ParamStore, input: Tensor, forward: F) -> Result<()>
    where
        F: Fn(&mut Graph, &mut Bound, Var) -> Result<Var> + Clone + 'static,
    {
        self.block(name, &store, &input, true, forward.clone())?;
        if !store.buffers().is_empty() {
            self.block(name, &store, &input, false, forward)?;
        }
        Ok(())
    }

    fn network(&mut self, name: &str, spec: &str, in_channels: usize, input: Tensor, tweak: impl Fn(&mut ParamStore)) -> Result<()> {
        let spec: NetworkSpec = spec.parse()?;
        let mut store = ParamStore::new();
        let net = Network::build(&spec, in_channels, &mut store, name, self.fresh())?;
        tweak(&mut store);
        self.block_modes(name, store, input, move |g, b, x| net.forward(g, b, x, &[]))
    }
}

/// Sets every parameter whose name ends in `suffix` to `value`.
fn set_params(store: &mut ParamStore, suffix: &str, value: f64) {
    for p in store.params_mut().filter(|p| p.name.ends_with(suffix)) {
        p.tensor = Tensor::full(p.tensor.shape(), value);
    }
}

fn build(rng: Rng) -> Result<Suite> {
    let mut s = Suite {
        rng,
        counter: 0,
        cases: Vec::new(),
        skipped: Vec::new(),
    };
    let shapes: &[&[usize]] = &[&[5], &[2, 3], &[2, 2, 3, 3]];

    s.binary("add", &[(&[4], &[4]), (&[2, 3], &[2, 3]), (&[2, 1, 2, 2], &[2, 1, 2, 2])], Graph::add, false);
    s.binary("sub", &[(&[4], &[4]), (&[2, 3], &[2, 3]), (&[3, 2, 2], &[3, 2, 2])], Graph::sub, false);
    s.binary("mul", &[(&[4], &[4]), (&[2, 3], &[2, 3]), (&[3, 2, 2], &[3, 2, 2])], Graph::mul, false);
    s.binary("div", &[(&[4], &[4]), (&[2, 3], &[2, 3]), (&[3, 2, 2], &[3, 2, 2])], Graph::div, true);
    s.unary("add_scalar", shapes, false, |g, x| g.add_scalar(x, 0.7));
    s.unary("scale", shapes, false, |g, x| g.scale(x, -1.3));
    s.unary("neg", shapes, false, Graph::neg);
    s.unary("exp", shapes, false, Graph::exp);
    s.unary("expm1", shapes, false, Graph::expm1);
    s.unary("log", shapes, true, Graph::log);
    s.unary("sqrt", shapes, true, Graph::sqrt);
    s.unary("abs", shapes, false, Graph::abs);
    s.unary("square", shapes, false, Graph::square);
    s.unary("leaky_relu", shapes, false, |g, x| g.leaky_relu(x, 0.2));
    s.unary("sum", shapes, false, Graph::sum);
    s.unary("mean", shapes, false, Graph::mean);
    s.unary("sum_axis", &[&[3, 4], &[2, 3, 2], &[2, 2, 2, 3]], false, |g, x| g.sum_axis(x, 1));
    s.unary("mean_axis", &[&[3, 4], &[2, 3, 2], &[2, 2, 2, 3]], false, |g, x| g.mean_axis(x, 0));
    s.unary("reshape", &[&[6], &[2, 3], &[3, 2, 2]], false, |g, x| {
        let n = g.value(x).numel();
        g.reshape(x, &[n])
    });
    s.unary("narrow", &[&[5], &[3, 4], &[2, 4, 3]], false, |g, x| {
        let axis = g.shape(x).len() - 1;
        let len = g.shape(x)[axis] - 2;
        g.narrow(x, axis, 1, len)
    });
    s.unary("broadcast_to", &[&[1], &[3], &[2, 1]], false, |g, x| {
        let mut target = vec![2, 3];
        target.extend_from_slice(g.shape(x));
        g.broadcast_to(x, &target)
    });
    s.unary("concat", &[&[2, 3], &[3, 2], &[2, 2, 2, 2]], false, |g, x| {
        let twice = g.scale(x, 2.0)?;
        g.concat(&[x, twice], 1)
    });
    s.unary("index_select", &[&[4], &[3, 2], &[4, 2, 2]], false, |g, x| {
        let n = g.shape(x)[0];
        let idx: Vec<usize> = (0..n).rev().chain([0]).collect();
        g.index_select(x, &idx)
    });
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let (m, k, n) = (3, 4, 2);
        let sa = if ta { [2, k, m] } else { [2, m, k] };
        let sb = if tb { [2, n, k] } else { [2, k, n] };
        let (a, b) = (s.randn(&sa), s.randn(&sb));
        let bc = b.clone();
        s.add(format!("bmm lhs trans {ta} {tb}"), a.clone(), move |g, x| {
            let c = g.constant(bc.clone());
            g.bmm(x, c, ta, tb)
        });
        s.add(format!("bmm rhs trans {ta} {tb}"), b, move |g, x| {
            let c = g.constant(a.clone());
            g.bmm(c, x, ta, tb)
        });
    }
    s.unary("softmax", &[&[5], &[3, 4], &[2, 3, 4]], false, |g, x| {
        let axis = usize::from(g.shape(x).len() > 1);
        g.softmax(x, axis)
    });

    for (stride, pad, shape) in [(1, 1, [2, 2, 5, 5]), (2, 1, [1, 3, 6, 6]), (1, 0, [2, 1, 4, 5])] {
        let c = shape[1];
        let (w, b) = (s.randn(&[3, c, 3, 3]), s.randn(&[3]));
        let x = s.randn(&shape);
        let (wc, bc, xc) = (w.clone(), b.clone(), x.clone());
        s.add(format!("conv2d input s{stride} p{pad}"), x.clone(), move |g, x| {
            let (w, b) = (g.constant(wc.clone()), g.constant(bc.clone()));
            g.conv2d(x, w, Some(b), stride, pad)
        });
        let (bc, xc2) = (b.clone(), xc.clone());
        s.add(format!("conv2d weight s{stride} p{pad}"), w.clone(), move |g, w| {
            let (x, b) = (g.constant(xc2.clone()), g.constant(bc.clone()));
            g.conv2d(x, w, Some(b), stride, pad)
        });
        s.add(format!("conv2d bias s{stride} p{pad}"), b, move |g, b| {
            let (x, w) = (g.constant(xc.clone()), g.constant(w.clone()));
            g.conv2d(x, w, Some(b), stride, pad)
        });
    }
    for (stride, pad, k, shape) in [(2, 1, 4, [1, 2, 3, 3]), (1, 1, 3, [2, 2, 3, 3]), (2, 0, 2, [1, 3, 2, 3])] {
        let c = shape[1];
        let (w, b) = (s.randn(&[c, 2, k, k]), s.randn(&[2]));
        let x = s.randn(&shape);
        let (wc, bc, xc) = (w.clone(), b.clone(), x.clone());
        s.add(format!("conv_transpose2d input s{stride} k{k}"), x, move |g, x| {
            let (w, b) = (g.constant(wc.clone()), g.constant(bc.clone()));
            g.conv_transpose2d(x, w, Some(b), stride, pad)
        });
        let xc2 = xc.clone();
        let bc2 = b.clone();
        s.add(format!("conv_transpose2d weight s{stride} k{k}"), w.clone(), move |g, w| {
            let (x, b) = (g.constant(xc2.clone()), g.constant(bc2.clone()));
            g.conv_transpose2d(x, w, Some(b), stride, pad)
        });
        s.add(format!("conv_transpose2d bias s{stride} k{k}"), b, move |g, b| {
            let (x, w) = (g.constant(xc.clone()), g.constant(w.clone()));
            g.conv_transpose2d(x, w, Some(b), stride, pad)
        });
    }
    for (n, d, m) in [(1, 2, 2), (3, 4, 2), (2, 3, 5)] {
        let (x, w, b) = (s.randn(&[n, d]), s.randn(&[d, m]), s.randn(&[m]));
        let (wc, bc, xc) = (w.clone(), b.clone(), x.clone());
        s.add(format!("linear input {n}x{d}x{m}"), x, move |g, x| {
            let (w, b) = (g.constant(wc.clone()), g.constant(bc.clone()));
            g.linear(x, w, Some(b))
        });
        let (xc2, bc2) = (xc.clone(), b.clone());
        s.add(format!("linear weight {n}x{d}x{m}"), w.clone(), move |g, w| {
            let (x, b) = (g.constant(xc2.clone()), g.constant(bc2.clone()));
            g.linear(x, w, Some(b))
        });
        s.add(format!("linear bias {n}x{d}x{m}"), b, move |g, b| {
            let (x, w) = (g.constant(xc.clone()), g.constant(w.clone()));
            g.linear(x, w, Some(b))
        });
    }
    s.unary("pixel_shuffle", &[&[1, 4, 2, 2], &[2, 8, 1, 2], &[1, 9, 2, 1]], false, |g, x| {
        let r = if g.shape(x)[1] % 9 == 0 { 3 } else { 2 };
        g.pixel_shuffle(x, r)
    });
    s.unary("pixel_unshuffle", &[&[1, 1, 4, 4], &[2, 2, 2, 4], &[1, 1, 6, 3]], false, |g, x| {
        let r = if g.shape(x)[2] % 3 == 0 && g.shape(x)[3] % 3 == 0 { 3 } else { 2 };
        g.pixel_unshuffle(x, r)
    });
    s.unary("avg_pool2d", &[&[1, 1, 4, 4], &[2, 2, 4, 6], &[1, 3, 6, 6]], false, |g, x| {
        let k = if g.shape(x)[2] == 6 && g.shape(x)[3] == 6 { 3 } else { 2 };
        g.avg_pool2d(x, k)
    });
    for shape in [[2, 3, 4, 4], [4, 2, 2, 2], [3, 1, 3, 2]] {
        let c = shape[1];
        let (gamma, beta, x) = (s.positive(&[c]), s.randn(&[c]), s.randn(&shape));
        let (gc, bc, xc) = (gamma.clone(), beta.clone(), x.clone());
        s.add(format!("batch_norm_train input {shape:?}"), x, move |g, x| {
            let (ga, be) = (g.constant(gc.clone()), g.constant(bc.clone()));
            g.batch_norm_train(x, ga, be, 1e-5).map(|(y, _)| y)
        });
        let (xc2, bc2) = (xc.clone(), beta.clone());
        s.add(format!("batch_norm_train gamma {shape:?}"), gamma.clone(), move |g, ga| {
            let (x, be) = (g.constant(xc2.clone()), g.constant(bc2.clone()));
            g.batch_norm_train(x, ga, be, 1e-5).map(|(y, _)| y)
        });
        let (xc3, gc3) = (xc.clone(), gamma.clone());
        s.add(format!("batch_norm_train beta {shape:?}"), beta.clone(), move |g, be| {
            let (x, ga) = (g.constant(xc3.clone()), g.constant(gc3.clone()));
            g.batch_norm_train(x, ga, be, 1e-5).map(|(y, _)| y)
        });
        let mean = s.randn(&[c]).into_data();
        let var = s.positive(&[c]).into_data();
        s.add(format!("batch_norm_eval input {shape:?}"), xc, move |g, x| {
            let (ga, be) = (g.constant(gamma.clone()), g.constant(beta.clone()));
            g.batch_norm_eval(x, ga, be, &mean, &var, 1e-5)
        });
    }
    for (shape, window) in [([1, 1, 3, 3], 3), ([1, 2, 4, 4], 3), ([2, 1, 4, 3], 5)] {
        let (q, k, v) = (s.randn(&shape), s.randn(&shape), s.randn(&shape));
        for which in 0..3 {
            let (qc, kc, vc) = (q.clone(), k.clone(), v.clone());
            let input = [&q, &k, &v][which].clone();
            s.add(format!("local_attention {} {shape:?} w{window}", ["q", "k", "v"][which]), input, move |g, x| {
                let mut vars = [qc.clone(), kc.clone(), vc.clone()].map(|t| g.constant(t));
                vars[which] = x;
                g.local_attention(vars[0], vars[1], vars[2], window)
            });
        }
    }

    // Composite operations of the models.
    for shape in [[1, 2, 3, 3], [2, 3, 2, 2], [2, 1, 4, 4]] {
        let (n, c) = (shape[0], shape[1]);
        let (scale, bias, x) = (s.randn(&[n, c]), s.randn(&[n, c]), s.randn(&shape));
        let (sc, bc) = (scale.clone(), bias.clone());
        s.add(format!("adain input {shape:?}"), x.clone(), move |g, x| {
            let p = AdaInParams {
                scale: g.constant(sc.clone()),
                bias: g.constant(bc.clone()),
            };
            style::adain(g, x, p)
        });
        let (xc, bc) = (x.clone(), bias.clone());
        s.add(format!("adain scale {shape:?}"), scale.clone(), move |g, sv| {
            let x = g.constant(xc.clone());
            let p = AdaInParams {
                scale: sv,
                bias: g.constant(bc.clone()),
            };
            style::adain(g, x, p)
        });
        s.add(format!("adain bias {shape:?}"), bias, move |g, bv| {
            let x = g.constant(x.clone());
            let p = AdaInParams {
                scale: g.constant(scale.clone()),
                bias: bv,
            };
            style::adain(g, x, p)
        });
    }
    for d in [1, 3, 6] {
        let (mu, lv) = (s.randn(&[2, d]), s.randn(&[2, d]));
        let lvc = lv.clone();
        s.add(format!("kl mu d{d}"), mu.clone(), move |g, m| {
            let l = g.constant(lvc.clone());
            style::kl_divergence(g, m, l)
        });
        s.add(format!("kl log_var d{d}"), lv, move |g, l| {
            let m = g.constant(mu.clone());
            style::kl_divergence(g, m, l)
        });
    }
    s.unary("gram_matrix", &[&[1, 2, 3, 3], &[2, 3, 2, 2], &[1, 4, 2, 3]], false, losses::gram_matrix);
    for shape in [[4, 1], [7, 1], [3, 1]] {
        let t = s.randn(&shape);
        s.add(format!("log_mean_exp {shape:?}"), t, mine::log_mean_exp);
    }
    for n in [2, 4, 6] {
        let (tj, tm) = (s.randn(&[n, 1]), s.randn(&[n, 1]));
        let tmc = tm.clone();
        s.add(format!("mine_lower_bound joint n{n}"), tj.clone(), move |g, j| {
            let m = g.constant(tmc.clone());
            mine::mine_lower_bound(g, j, m)
        });
        s.add(format!("mine_lower_bound marginal n{n}"), tm, move |g, m| {
            let j = g.constant(tj.clone());
            mine::mine_lower_bound(g, j, m)
        });
    }
    let ext = FeatureExtractor::new(3, s.fresh());
    for shape in [[1, 3, 8, 8], [2, 3, 8, 8], [1, 3, 16, 8]] {
        let (y, t) = (s.positive(&shape).map(|v| v / 2.0), s.positive(&shape).map(|v| v / 2.0));
        let (e1, t1) = (ext.clone(), t.clone());
        s.add(format!("content_loss {shape:?}"), y.clone(), move |g, y| {
            let t = g.constant(t1.clone());
            losses::content_loss(g, y, t, &e1, 2)
        });
        let (e2, t2) = (ext.clone(), t.clone());
        s.add(format!("style_loss {shape:?}"), y.clone(), move |g, y| {
            let t = g.constant(t2.clone());
            losses::style_loss(g, y, t, &e2, &[1.0, 0.5, 0.25, 0.125])
        });
        s.add(format!("l1_loss {shape:?}"), y, move |g, y| {
            let t = g.constant(t.clone());
            losses::l1_loss(g, y, t)
        });
    }
    s.unary("area_resize", &[&[1, 1, 4, 4], &[2, 2, 4, 8], &[1, 3, 8, 8]], false, |g, x| losses::area_resize(g, x, 2));

    // Miniature blocks, checked against the input and every parameter.
    let with_lambda = |st: &mut ParamStore| set_params(st, ".lambda", 0.7);
    let x = s.randn(&[2, 8, 4, 4]);
    s.network("garb", "res{conv[8,3,1,1]; lrelu[0.2]; conv[8,3,1,1]; ga}*1", 8, x, with_lambda)?;
    let x = s.randn(&[2, 4, 5, 5]);
    s.network("larb", "res{conv[4,3,1,1]; lrelu[0.2]; conv[4,3,1,1]; la[3]}*1", 4, x, |_| {})?;
    let x = s.randn(&[1, 8, 3, 3]);
    s.network("global_attention", "ga", 8, x, with_lambda)?;
    let x = s.randn(&[1, 3, 4, 4]);
    s.network("local_attention_layer", "la[3]", 3, x, |_| {})?;

    {
        let spec: NetworkSpec = "res{conv[4,3,1,1]; bn; lrelu[0.2]; conv[4,3,1,1]; bn}*2\nadain".parse()?;
        let mut store = ParamStore::new();
        let net = Network::build(&spec, 4, &mut store, "group", s.fresh())?;
        let d = 3;
        let w = store.add_param("style.w", Tensor::randn(&[d, 8], s.fresh()).map(|v| v * 0.5))?;
        let b = store.add_param("style.b", Tensor::randn(&[8], s.fresh()).map(|v| v * 0.5))?;
        let z = s.randn(&[2, d]);
        let x = s.randn(&[2, 4, 3, 3]);
        let zc = z.clone();
        let (net2, store2, xc) = (net.clone(), store.clone(), x.clone());
        s.block_modes("adain_group", store, x, move |g, bound, x| {
            let zv = g.constant(zc.clone());
            let p = style::style_params_from_latent(g, zv, bound.var(w), bound.var(b))?;
            net.forward(g, bound, x, &[p])
        })?;
        s.add("adain_group z", z, move |g, zv| {
            let mut bound = store2.bind(g, false, true);
            let p = style::style_params_from_latent(g, zv, bound.var(w), bound.var(b))?;
            let x = g.constant(xc.clone());
            net2.forward(g, &mut bound, x, &[p])
        });
    }
    {
        let m = ModelConfig {
            enc_width: 4,
            enc_blocks: 1,
            code_channels: 4,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        let net = Network::build(&e_lr_spec(&m), 3, &mut store, "e_lr", s.fresh())?;
        let x = s.randn(&[2, 3, 8, 8]);
        s.block_modes("e_lr", store, x, move |g, b, x| net.forward(g, b, x, &[]))?;
    }
    {
        let mut store = ParamStore::new();
        // The image critic's layer kinds at reduced widths.
        let spec: NetworkSpec = "conv[4,3,1,0]\nlrelu[0.2]\nconv[4,3,1,0]\nlrelu[0.2]\ngpool\nfc[8]\nlrelu[0.2]\nfc[1]".parse()?;
        let critic = ImageCritic::build(&spec, 2, &mut store, s.fresh())?;
        let (a, b) = (s.randn(&[4, 2, 7, 7]), s.randn(&[4, 2, 7, 7]));
        s.block_modes("mine_critic", store, b, move |g, bound, bv| {
            let av = g.constant(a.clone());
            let marg = g.index_select(bv, &[1, 2, 3, 0])?;
            let tj = critic.score(g, bound, av, bv)?;
            let tm = critic.score(g, bound, av, marg)?;
            mine::mine_lower_bound(g, tj, tm)
        })?;
    }
    Ok(s)
}

/// Runs every case. Results depend only on `seed`.
pub fn run(seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let suite = build(Rng::new(seed).fork("gradsuite"))?;
    let skipped = suite.skipped;
    let cases = suite
        .cases
        .into_iter()
        .map(|(name, f, input)| CaseResult {
            report: grad_check(f, &input, EPS, TOL),
            name,
        })
        .collect();
    Ok(SuiteReport {
        cases,
        skipped,
        elapsed: start.elapsed(),
    })
}
