//! Shared per-Stixel MLP, max-pooled global feature and segmentation head,
//! evaluated on batches of RoI samples stacked into one row matrix.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, NdFloat, Zip};
use num_traits::AsPrimitive;
use rand::Rng;

use crate::error::{Error, Result};
use crate::pointnet::arch::ArchitectureSpec;

/// Fully connected layer computing `x · weight + bias`, weight is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: NdFloat> Dense<F> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &ArrayView2<F>) -> Array2<F> {
        let mut z = x.dot(&self.weight);
        z += &self.bias;
        z
    }
}

/// Network parameters plus a fixed per-feature input standardization
/// `(x - shift) * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub arch: ArchitectureSpec,
    pub extractor: Vec<Dense<F>>,
    pub head: Vec<Dense<F>>,
    pub input_shift: Array1<F>,
    pub input_scale: Array1<F>,
}

/// Training-precision parameters.
pub type ModelState = Network<f64>;

/// A set of RoI samples stacked row-wise; sample `s` owns rows
/// `offsets[s]..offsets[s + 1]`.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub rows: Array2<F>,
    pub offsets: Vec<usize>,
}

impl<F: NdFloat> Batch<F> {
    pub fn stack<'a>(samples: impl IntoIterator<Item = ArrayView2<'a, F>>) -> Result<Self> {
        let views: Vec<ArrayView2<F>> = samples.into_iter().collect();
        let mut offsets = Vec::with_capacity(views.len() + 1);
        offsets.push(0);
        for v in &views {
            if v.nrows() == 0 {
                return Err(Error::Shape("sample without stixels".into()));
            }
            offsets.push(offsets.last().unwrap() + v.nrows());
        }
        let rows = if views.is_empty() {
            Array2::zeros((0, 0))
        } else {
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?
        };
        Ok(Batch { rows, offsets })
    }

    pub fn single(x: ArrayView2<F>) -> Result<Self> {
        Self::stack([x])
    }

    pub fn samples(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    /// Standardized input.
    pub input: Array2<F>,
    /// Post-ReLU output of every extractor layer.
    pub extractor: Vec<Array2<F>>,
    /// Global feature per sample.
    pub global: Array2<F>,
    /// Row index of the maximum per sample and global feature dimension.
    pub argmax: Array2<usize>,
    /// Output of every head layer; the last entry holds the logits.
    pub head: Vec<Array2<F>>,
    pub offsets: Vec<usize>,
}

impl<F: NdFloat> ForwardCache<F> {
    pub fn logits(&self) -> &Array2<F> {
        self.head.last().expect("head has layers")
    }
}

fn relu_inplace<F: NdFloat>(a: &mut Array2<F>) {
    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

impl<F: NdFloat> Network<F> {
    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        let shapes = arch.layer_shapes();
        let n_ext = arch.extractor.len();
        Network {
            arch: arch.clone(),
            extractor: shapes[..n_ext].iter().map(|&(i, o)| Dense::zeros(i, o)).collect(),
            head: shapes[n_ext..].iter().map(|&(i, o)| Dense::zeros(i, o)).collect(),
            input_shift: Array1::zeros(arch.input_width),
            input_scale: Array1::ones(arch.input_width),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense<F>> {
        self.extractor.iter().chain(self.head.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<F>> {
        self.extractor.iter_mut().chain(self.head.iter_mut())
    }

    /// Trainable values in canonical order: per layer (extractor first, then
    /// head) the row-major weight followed by the bias.
    pub fn tensors(&self) -> Vec<&[F]> {
        self.layers()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        self.layers_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flat_params(&self) -> Vec<F> {
        self.tensors().concat()
    }

    pub fn set_flat_params(&mut self, values: &[F]) -> Result<()> {
        let total: usize = self.tensors().iter().map(|t| t.len()).sum();
        if total != values.len() {
            return Err(Error::Shape(format!(
                "expected {total} parameters, got {}",
                values.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Network<F>) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn squared_norm(&self) -> F {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(F::zero(), |acc, &v| acc + v * v)
    }

    pub fn cast<G>(&self) -> Network<G>
    where
        G: NdFloat,
        F: AsPrimitive<G>,
    {
        let dense = |d: &Dense<F>| Dense {
            weight: d.weight.mapv(|v| v.as_()),
            bias: d.bias.mapv(|v| v.as_()),
        };
        Network {
            arch: self.arch.clone(),
            extractor: self.extractor.iter().map(dense).collect(),
            head: self.head.iter().map(dense).collect(),
            input_shift: self.input_shift.mapv(|v| v.as_()),
            input_scale: self.input_scale.mapv(|v| v.as_()),
        }
    }

    fn check_width(&self, x: &Array2<F>) -> Result<()> {
        if x.ncols() != self.arch.input_width {
            return Err(Error::Shape(format!(
                "feature width {} does not match network input width {}",
                x.ncols(),
                self.arch.input_width
            )));
        }
        Ok(())
    }

    /// Forward pass over a stacked batch, keeping every intermediate.
    pub fn forward_cached(&self, batch: &Batch<F>) -> Result<ForwardCache<F>> {
        self.check_width(&batch.rows)?;
        let mut input = &batch.rows - &self.input_shift;
        input *= &self.input_scale;

        let mut extractor: Vec<Array2<F>> = Vec::with_capacity(self.extractor.len());
        for (l, layer) in self.extractor.iter().enumerate() {
            let prev = if l == 0 { input.view() } else { extractor[l - 1usize].view() };
            let mut a = layer.apply(&prev);
            relu_inplace(&mut a);
            extractor.push(a);
        }

        let last = extractor.last().expect("extractor has layers");
        let (global, argmax) = max_pool(last, &batch.offsets);

        let tap = &extractor[self.arch.tap];
        let tap_w = self.arch.tap_width();
        let first = &self.head[0];
        let w_tap = first.weight.slice(s![..tap_w, ..]);
        let w_global = first.weight.slice(s![tap_w.., ..]);
        let mut z = tap.dot(&w_tap);
        let per_sample = global.dot(&w_global);
        for s in 0..batch.offsets.len() - 1 {
            let q = per_sample.row(s);
            let mut rows = z.slice_mut(s![batch.offsets[s]..batch.offsets[s + 1], ..]);
            rows.zip_mut_with(&q, |a, &b| *a += b);
        }
        z.zip_mut_with(&first.bias, |a, &b| *a += b);
        let n_head = self.head.len();
        if n_head > 1 {
            relu_inplace(&mut z);
        }
        let mut head = Vec::with_capacity(n_head);
        head.push(z);
        for k in 1..n_head {
            let mut a = self.head[k].apply(&head[k - 1].view());
            if k + 1 < n_head {
                relu_inplace(&mut a);
            }
            head.push(a);
        }

        Ok(ForwardCache {
            input,
            extractor,
            global,
            argmax,
            head,
            offsets: batch.offsets.clone(),
        })
    }

    /// Logits (`rows × 2`) of a stacked batch.
    pub fn logits(&self, batch: &Batch<F>) -> Result<Array2<F>> {
        Ok(self.forward_cached(batch)?.head.pop().expect("head has layers"))
    }

    /// Gradients of `Σ_ij dlogits_ij · logits_ij` with respect to every
    /// parameter, i.e. backpropagation of an upstream logit gradient.
    pub fn backward(&self, cache: &ForwardCache<F>, dlogits: &Array2<F>) -> Network<F> {
        let mut grads = Network::zeros(&self.arch);
        let n_head = self.head.len();

        let mut delta = dlogits.clone();
        for k in (1..n_head).rev() {
            let input = &cache.head[k - 1];
            grads.head[k].weight = input.t().dot(&delta);
            grads.head[k].bias = delta.sum_axis(Axis(0));
            let mut back = delta.dot(&self.head[k].weight.t());
            Zip::from(&mut back).and(input).for_each(|d, &a| {
                if a <= F::zero() {
                    *d = F::zero();
                }
            });
            delta = back;
        }

        // First head layer: split weight into tap and global parts.
        let tap_w = self.arch.tap_width();
        let tap = &cache.extractor[self.arch.tap];
        let samples = cache.offsets.len() - 1;
        let mut d_sample = Array2::<F>::zeros((samples, delta.ncols()));
        for s in 0..samples {
            let rows = delta.slice(s![cache.offsets[s]..cache.offsets[s + 1], ..]);
            d_sample.row_mut(s).assign(&rows.sum_axis(Axis(0)));
        }
        let first = &self.head[0];
        let w_tap = first.weight.slice(s![..tap_w, ..]);
        let w_global = first.weight.slice(s![tap_w.., ..]);
        grads.head[0]
            .weight
            .slice_mut(s![..tap_w, ..])
            .assign(&tap.t().dot(&delta));
        grads.head[0]
            .weight
            .slice_mut(s![tap_w.., ..])
            .assign(&cache.global.t().dot(&d_sample));
        grads.head[0].bias = delta.sum_axis(Axis(0));
        let d_tap = delta.dot(&w_tap.t());
        let d_global = d_sample.dot(&w_global.t());

        // Max-pool routes the global gradient to the arg-max rows.
        let n_ext = self.extractor.len();
        let mut d_act = Array2::<F>::zeros(cache.extractor[n_ext - 1].raw_dim());
        for s in 0..samples {
            for j in 0..d_global.ncols() {
                d_act[[cache.argmax[[s, j]], j]] += d_global[[s, j]];
            }
        }
        for l in (0..n_ext).rev() {
            if l == self.arch.tap {
                d_act += &d_tap;
            }
            let act = &cache.extractor[l];
            Zip::from(&mut d_act).and(act).for_each(|d, &a| {
                if a <= F::zero() {
                    *d = F::zero();
                }
            });
            let input = if l == 0 { &cache.input } else { &cache.extractor[l - 1] };
            grads.extractor[l].weight = input.t().dot(&d_act);
            grads.extractor[l].bias = d_act.sum_axis(Axis(0));
            if l > 0 {
                d_act = d_act.dot(&self.extractor[l].weight.t());
            }
        }
        grads
    }
}

impl Network<f64> {
    /// He-uniform weights, zero biases.
    pub fn init<R: Rng>(arch: &ArchitectureSpec, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut net = Network::zeros(arch);
        for layer in net.layers_mut() {
            let bound = (6.0 / layer.weight.nrows() as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(net)
    }
}

/// Element-wise max over the rows of every segment. Ties resolve to the
/// lowest row index.
fn max_pool<F: NdFloat>(a: &Array2<F>, offsets: &[usize]) -> (Array2<F>, Array2<usize>) {
    let samples = offsets.len() - 1;
    let width = a.ncols();
    let mut global = Array2::<F>::zeros((samples, width));
    let mut argmax = Array2::<usize>::zeros((samples, width));
    for s in 0..samples {
        let (lo, hi) = (offsets[s], offsets[s + 1]);
        let mut best = a.row(lo).to_owned();
        let mut idx = vec![lo; width];
        for r in lo + 1..hi {
            for (j, &v) in a.row(r).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    idx[j] = r;
                }
            }
        }
        global.row_mut(s).assign(&best);
        argmax.row_mut(s).assign(&Array1::from(idx));
    }
    (global, argmax)
}

/// Probability of the "object" class for every row.
pub fn object_probability<F: NdFloat>(logits: &Array2<F>) -> Vec<F> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            let m = r[0].max(r[1]);
            let e0 = (r[0] - m).exp();
            let e1 = (r[1] - m).exp();
            e1 / (e0 + e1)
        })
        .collect()
}

/// Row-wise softmax of a two-column logit matrix.
pub fn softmax<F: NdFloat>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut r in out.rows_mut() {
        let m = r.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - m).exp());
        let z = r.sum();
        r.mapv_inplace(|v| v / z);
    }
    out
}

/// Mean softmax cross-entropy of one sample, log-sum-exp stabilized.
pub fn cross_entropy<F: NdFloat>(logits: &ArrayView2<F>, targets: &[u8]) -> F {
    let n = logits.nrows();
    if n == 0 {
        return F::zero();
    }
    let mut total = F::zero();
    for (r, &t) in logits.rows().into_iter().zip(targets) {
        let m = r.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let lse = m + r.iter().fold(F::zero(), |a, &v| a + (v - m).exp()).ln();
        total += lse - r[t as usize];
    }
    total / F::from(n).unwrap()
}

/// Batch loss (mean over samples of the per-sample mean cross-entropy) and
/// its gradient with respect to the logits. `denominator` is the number of
/// samples the loss is averaged over, which may exceed the samples present
/// when a batch is split into chunks.
pub fn loss_gradient<F: NdFloat>(
    logits: &Array2<F>,
    offsets: &[usize],
    targets: &[u8],
    denominator: usize,
) -> (F, Array2<F>) {
    let probs = softmax(logits);
    let mut grad = probs;
    let mut loss = F::zero();
    let denom = F::from(denominator).unwrap();
    for s in 0..offsets.len() - 1 {
        let (lo, hi) = (offsets[s], offsets[s + 1]);
        let rows = logits.slice(s![lo..hi, ..]);
        loss += cross_entropy(&rows, &targets[lo..hi]);
        let scale = F::one() / (F::from(hi - lo).unwrap() * denom);
        for r in lo..hi {
            let t = targets[r] as usize;
            grad[[r, t]] -= F::one();
            grad[[r, 0]] *= scale;
            grad[[r, 1]] *= scale;
        }
    }
    (loss / denom, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ArchitectureSpec {
        ArchitectureSpec::new(10, vec![4, 8], vec![8, 2], 0).unwrap()
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, w), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_row_global_is_its_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(&tiny(), &mut rng).unwrap();
        let x = random_rows(&mut rng, 1, 10);
        let cache = net.forward_cached(&Batch::single(x.view()).unwrap()).unwrap();
        assert_eq!(cache.logits().dim(), (1, 2));
        assert_eq!(cache.global.row(0), cache.extractor[1].row(0));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(&tiny(), &mut rng).unwrap();
        let x = random_rows(&mut rng, 3, 9);
        assert!(matches!(net.logits(&Batch::single(x.view()).unwrap()), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Array2::<f64>::zeros((5, 2));
        let l = cross_entropy(&logits.view(), &[0, 1, 1, 0, 1]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_logits_give_zero_loss() {
        let logits = array![[50.0, -50.0], [-50.0, 50.0]];
        assert!(cross_entropy(&logits.view(), &[0, 1]) < 1e-40);
    }

    #[test]
    fn cross_entropy_matches_scalar_formula() {
        let logits: Array2<f64> = array![[0.3, -1.2], [2.0, 0.5], [-0.7, -0.1]];
        let targets = [1u8, 0, 1];
        let mut expect = 0.0f64;
        for (i, &t) in targets.iter().enumerate() {
            let (a, b) = (logits[[i, 0]], logits[[i, 1]]);
            let p = if t == 1 { b } else { a };
            expect += -(p.exp() / (a.exp() + b.exp())).ln();
        }
        expect /= 3.0;
        assert!((cross_entropy(&logits.view(), &targets) - expect).abs() < 1e-14);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = random_rows(&mut rng, 50, 2) * 30.0;
        for r in softmax(&logits).rows() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn dead_relu_weight_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Network::init(&tiny(), &mut rng).unwrap();
        // Unit 0 of the first layer never activates: huge negative bias.
        net.extractor[0].bias[0] = -1e6;
        let x = random_rows(&mut rng, 3, 10);
        let batch = Batch::single(x.view()).unwrap();
        let cache = net.forward_cached(&batch).unwrap();
        let (_, dl) = loss_gradient(cache.logits(), &batch.offsets, &[1, 0, 1], 1);
        let g = net.backward(&cache, &dl);
        for i in 0..10 {
            assert_eq!(g.extractor[0].weight[[i, 0]], 0.0);
        }
        assert_eq!(g.extractor[0].bias[0], 0.0);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Network::init(&tiny(), &mut rng).unwrap();
        let last = net.head.last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias = array![-40.0, 40.0];
        let x = random_rows(&mut rng, 4, 10);
        let batch = Batch::single(x.view()).unwrap();
        let cache = net.forward_cached(&batch).unwrap();
        let (loss, dl) = loss_gradient(cache.logits(), &batch.offsets, &[1, 1, 1, 1], 1);
        assert!(loss < 1e-16);
        assert!(net.backward(&cache, &dl).squared_norm().sqrt() < 1e-15);
    }

    #[test]
    fn batch_equals_separate_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::init(&tiny(), &mut rng).unwrap();
        let a = random_rows(&mut rng, 3, 10);
        let b = random_rows(&mut rng, 5, 10);
        let both = net.logits(&Batch::stack([a.view(), b.view()]).unwrap()).unwrap();
        let la = net.logits(&Batch::single(a.view()).unwrap()).unwrap();
        let lb = net.logits(&Batch::single(b.view()).unwrap()).unwrap();
        assert!((both.slice(s![..3, ..]).to_owned() - la).iter().all(|d| d.abs() < 1e-12));
        assert!((both.slice(s![3.., ..]).to_owned() - lb).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::init(&tiny(), &mut rng).unwrap();
        let flat = net.flat_params();
        assert_eq!(flat.len(), tiny().param_count());
        let mut other = Network::<f64>::zeros(&tiny());
        other.set_flat_params(&flat).unwrap();
        assert_eq!(other, net);
        assert!(other.set_flat_params(&flat[1..]).is_err());
    }
}
