//! Central finite-difference check of reverse-mode gradients.

use novodiff::nn::{Graph, ParamId, ParamStore, Var};
use novodiff::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so gradients that are zero up to rounding compare absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel < TOLERANCE
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn eval<F>(store: &ParamStore<f64>, f: &F) -> f64
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let l = f(&mut g).expect("forward");
    g.scalar(l)
}

/// Compare analytic and numeric gradients of the scalar built by `f`.
///
/// `per_tensor` limits how many coordinates of each parameter are probed
/// (`None` checks every coordinate).
pub fn check<F>(store: &ParamStore<f64>, per_tensor: Option<usize>, seed: u64, f: F) -> GradReport
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let l = f(&mut g).expect("forward");
        assert_eq!(g.shape(l), [1, 1], "loss must be a scalar");
        g.backward(l).expect("backward").into_params()
    };
    let grad_of = |id: ParamId, k: usize| -> f64 {
        analytic
            .iter()
            .find(|(p, _)| *p == id)
            .map_or(0.0, |(_, t)| t.data()[k])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport {
        max_rel: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut work = store.clone();
    for id in store.ids() {
        let n = store.get(id).len();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < n => (0..k).map(|_| rng.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for k in coords {
            let x = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = x + STEP;
            let up = eval(&work, &f);
            work.get_mut(id).data_mut()[k] = x - STEP;
            let down = eval(&work, &f);
            work.get_mut(id).data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * STEP);
            let a = grad_of(id, k);
            let e = rel_error(a, numeric);
            report.checked += 1;
            if e >= report.max_rel {
                report.max_rel = e;
                report.worst = format!("{}[{k}]: analytic {a:.6e} numeric {numeric:.6e}", store.name(id));
            }
        }
    }
    report
}

use novodiff::losses::{cross_entropy, dinoiser_loss, weighted_entropy};
use novodiff::model::{ModelBundle, ModelConfig, Variant};
use novodiff::nn::{attention, causal_mask, FeedForward, LayerNorm, Linear, MultiHeadAttention, Tensor};
use novodiff::synth::{generate_corpus, SynthConfig};
use novodiff::{Token, Vocabulary};

fn store_with(shapes: &[(&str, [usize; 2])], seed: u64) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .map(|(name, shape)| store.add(*name, Tensor::uniform(*shape, 1.0, &mut rng)))
        .collect();
    (store, ids)
}

/// Contract an arbitrary-shape output to a scalar with fixed random weights.
fn project(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = Tensor::uniform(g.shape(y), 1.0, &mut rng);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Case = (&'static str, GradReport);

fn op_cases() -> Vec<Case> {
    let mut out = Vec::new();
    let (s, ids) = store_with(&[("a", [3, 4]), ("b", [4, 5])], 1);
    out.push(("matmul", check(&s, None, 0, |g| {
        let (a, b) = (g.param(ids[0]), g.param(ids[1]));
        let y = g.matmul(a, b)?;
        project(g, y, 1)
    })));
    let (s, ids) = store_with(&[("a", [3, 4]), ("b", [5, 4])], 2);
    out.push(("matmul_nt", check(&s, None, 0, |g| {
        let (a, b) = (g.param(ids[0]), g.param(ids[1]));
        let y = g.matmul_nt(a, b)?;
        project(g, y, 2)
    })));
    let (s, ids) = store_with(&[("a", [3, 4]), ("b", [3, 4]), ("r", [1, 4])], 3);
    out.push(("add / mul / add_row / mul_row / scale", check(&s, None, 0, |g| {
        let (a, b, r) = (g.param(ids[0]), g.param(ids[1]), g.param(ids[2]));
        let x = g.add(a, b)?;
        let x = g.mul(x, a)?;
        let x = g.add_row(x, r)?;
        let x = g.mul_row(x, r)?;
        let x = g.scale(x, 0.7);
        project(g, x, 3)
    })));
    let (s, ids) = store_with(&[("table", [6, 4])], 4);
    out.push(("embedding / gather_rows", check(&s, None, 0, |g| {
        let t = g.param(ids[0]);
        let e = g.embedding(t, &[2, 0, 2, 5])?;
        let r = g.gather_rows(e, &[3, 3, 1])?;
        let y = g.concat_rows(&[e, r])?;
        project(g, y, 4)
    })));
    let (s, ids) = store_with(&[("x", [3, 5])], 5);
    out.push(("softmax", check(&s, None, 0, |g| {
        let x = g.param(ids[0]);
        let y = g.softmax(x);
        project(g, y, 5)
    })));
    out.push(("log_softmax / pick / mean", check(&s, None, 0, |g| {
        let x = g.param(ids[0]);
        let y = g.log_softmax(x);
        let p = g.pick(y, &[0, 4, 2])?;
        Ok(g.mean(p))
    })));
    out.push(("normalize", check(&s, None, 0, |g| {
        let x = g.param(ids[0]);
        let y = g.normalize(x);
        project(g, y, 6)
    })));
    out.push(("gelu", check(&s, None, 0, |g| {
        let x = g.param(ids[0]);
        let y = g.gelu(x);
        project(g, y, 7)
    })));
    let (s, ids) = store_with(&[("a", [3, 4]), ("b", [3, 2])], 6);
    out.push(("concat_cols / slice_cols / slice_rows", check(&s, None, 0, |g| {
        let (a, b) = (g.param(ids[0]), g.param(ids[1]));
        let c = g.concat_cols(&[a, b])?;
        let l = g.slice_cols(c, 2, 3)?;
        let r = g.slice_rows(l, 1, 2)?;
        let y = g.concat_rows(&[l, r])?;
        project(g, y, 8)
    })));
    out
}

fn layer_cases() -> Vec<Case> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::uniform([3, 6], 1.0, &mut rng));
    let lin = Linear::new(&mut s, "lin", 6, 4, &mut rng);
    out.push(("linear", check(&s, None, 0, |g| {
        let xv = g.param(x);
        let y = lin.forward(g, xv)?;
        project(g, y, 10)
    })));

    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::uniform([3, 6], 2.0, &mut rng));
    let scale = s.add("scale", Tensor::uniform([1, 6], 0.5, &mut rng));
    let shift = s.add("shift", Tensor::uniform([1, 6], 0.5, &mut rng));
    let ln = LayerNorm::new(&mut s, "ln", 6);
    *s.get_mut(ln.gamma) = Tensor::uniform([1, 6], 1.0, &mut rng);
    *s.get_mut(ln.beta) = Tensor::uniform([1, 6], 1.0, &mut rng);
    out.push(("layer_norm (modulated)", check(&s, None, 0, |g| {
        let xv = g.param(x);
        let m = (g.param(scale), g.param(shift));
        let y = ln.forward_modulated(g, xv, Some(m))?;
        project(g, y, 11)
    })));

    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::uniform([3, 4], 1.0, &mut rng));
    let ff = FeedForward::new(&mut s, "ff", 4, 8, &mut rng);
    out.push(("feed_forward", check(&s, None, 0, |g| {
        let xv = g.param(x);
        let y = ff.forward(g, xv)?;
        project(g, y, 12)
    })));

    let mut s = ParamStore::new();
    let q = s.add("q", Tensor::uniform([4, 6], 1.0, &mut rng));
    let k = s.add("k", Tensor::uniform([4, 6], 1.0, &mut rng));
    let v = s.add("v", Tensor::uniform([4, 6], 1.0, &mut rng));
    let mask = causal_mask::<f64>(4);
    out.push(("attention (2 heads, causal mask)", check(&s, None, 0, |g| {
        let (qv, kv, vv) = (g.param(q), g.param(k), g.param(v));
        let y = attention(g, qv, kv, vv, Some(&mask), 2)?;
        project(g, y, 13)
    })));

    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::uniform([3, 4], 1.0, &mut rng));
    let ctx = s.add("ctx", Tensor::uniform([5, 4], 1.0, &mut rng));
    let mha = MultiHeadAttention::new(&mut s, "mha", 4, 2, &mut rng);
    out.push(("multi_head_attention (cross)", check(&s, None, 0, |g| {
        let (xv, cv) = (g.param(x), g.param(ctx));
        let y = mha.forward(g, xv, cv, None)?;
        project(g, y, 14)
    })));
    out
}

fn loss_cases() -> Vec<Case> {
    let mut out = Vec::new();
    let (s, ids) = store_with(&[("logits", [4, 6])], 20);
    let rows = [0, 2, 3];
    let targets = [Token(1), Token(5), Token(0)];
    out.push(("cross_entropy", check(&s, None, 0, |g| {
        let x = g.param(ids[0]);
        cross_entropy(g, x, &rows, &targets)
    })));
    out.push(("weighted_entropy", check(&s, None, 0, |g| {
        let x = g.param(ids[0]);
        weighted_entropy(g, x, &rows, &targets, 0.3)
    })));
    out.push(("dinoiser (fixed noise seed)", check(&s, None, 0, |g| {
        let x = g.param(ids[0]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        dinoiser_loss(g, x, &rows, &targets, 0.3, 1.0, &mut rng)
    })));
    out
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        model_dim: 8,
        heads: 2,
        ff_mult: 2,
        encoder_layers: 1,
        ar_layers: 1,
        ds_layers: 1,
        ds_dim: 4,
        dm_layers: 1,
        max_len: 5,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn model_cases() -> Vec<Case> {
    let vocab = Vocabulary::toy();
    let spectrum = generate_corpus(
        &SynthConfig {
            length_range: [3, 3],
            seed: 5,
            ..SynthConfig::default()
        },
        &vocab,
        1,
    )
    .unwrap()
    .remove(0);
    let truth = spectrum.annotation.clone().unwrap();
    let mut out = Vec::new();
    for (name, variant) in [
        ("model ar (teacher forcing)", Variant::Ar),
        ("model ds (denoise)", Variant::Ds),
        ("model dm1 (denoise)", Variant::Dm1),
        ("model dm2 (denoise)", Variant::Dm2),
    ] {
        let m: ModelBundle<f64> = ModelBundle::new(variant, tiny_model_config(), vocab.clone()).unwrap();
        let report = check(m.params(), Some(8), 7, |g| {
            let mem = m.encode_graph(g, &spectrum)?;
            let pm = spectrum.precursor_mass();
            if variant.is_diffusion() {
                let canvas = [truth.tokens()[0], Token::MASK, Token::MASK, Token::STOP, Token::MASK];
                let logits = m.denoise_graph(g, mem, pm, &canvas, 3)?;
                cross_entropy(g, logits, &[1, 2, 4], &[truth.tokens()[1], truth.tokens()[2], Token::PAD])
            } else {
                let logits = m.ar_graph(g, mem, pm, truth.tokens())?;
                let mut t = truth.tokens().to_vec();
                t.push(Token::STOP);
                cross_entropy(g, logits, &[0, 1, 2, 3], &t)
            }
        });
        out.push((name, report));
    }
    out
}

/// Every primitive op, layer, loss and the four full models.
pub fn suite() -> Vec<Case> {
    let mut all = op_cases();
    all.extend(layer_cases());
    all.extend(loss_cases());
    all.extend(model_cases());
    all
}
