#pragma once

// Evaluation: SSIM against ground truth and a classifier-based score in the
// Inception-Score form. The classifier is a small convnet trained on the
// synthetic dataset's identity palette classes; reports label the metric
// "proxy-IS" so it is never confused with Inception-network numbers.

#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "ggb/config.hpp"
#include "ggb/layers.hpp"
#include "ggb/synth.hpp"

namespace ggb {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;  // L of the pixel encoding
};

namespace metrics_detail {

inline std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(window));
  const double half = (window - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < window; ++i) {
    g[static_cast<std::size_t>(i)] = std::exp(-(i - half) * (i - half) / (2 * sigma * sigma));
    total += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= total;  // 2-D window = outer product, sums to 1
  return g;
}

// Horizontal then vertical pass of the separable window over one plane;
// returns the windowed means at every valid position.
inline std::vector<double> filter_valid(const std::vector<double>& plane, int H, int W,
                                        const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int OW = W - k + 1, OH = H - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(H) * OW);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < OW; ++x) {
      double acc = 0;
      for (int i = 0; i < k; ++i) acc += taps[static_cast<std::size_t>(i)] * plane[static_cast<std::size_t>(y) * W + x + i];
      rows[static_cast<std::size_t>(y) * OW + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(OH) * OW);
  for (int y = 0; y < OH; ++y)
    for (int x = 0; x < OW; ++x) {
      double acc = 0;
      for (int i = 0; i < k; ++i) acc += taps[static_cast<std::size_t>(i)] * rows[static_cast<std::size_t>(y + i) * OW + x];
      out[static_cast<std::size_t>(y) * OW + x] = acc;
    }
  return out;
}

}  // namespace metrics_detail

// Mean local SSIM over valid windows, averaged over channels (and batch
// items). Inputs must already live in [0, dynamic_range].
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& p = {}) {
  if (a.shape() != b.shape())
    throw ShapeError("ssim: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.ndim() != 4) throw ShapeError("ssim: expected (B,C,H,W), got " + shape_str(a.shape()));
  const int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (p.window > H || p.window > W)
    throw ShapeError("ssim: window " + std::to_string(p.window) + " larger than image " +
                     std::to_string(H) + "x" + std::to_string(W));
  const auto taps = metrics_detail::gaussian_taps(p.window, p.sigma);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const std::size_t plane_n = static_cast<std::size_t>(H) * W;

  double total = 0;
  long windows = 0;
  std::vector<double> pa(plane_n), pb(plane_n), paa(plane_n), pbb(plane_n), pab(plane_n);
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const T* da = a.data() + (static_cast<std::size_t>(bi) * C + c) * plane_n;
      const T* db = b.data() + (static_cast<std::size_t>(bi) * C + c) * plane_n;
      for (std::size_t i = 0; i < plane_n; ++i) {
        pa[i] = static_cast<double>(da[i]);
        pb[i] = static_cast<double>(db[i]);
        paa[i] = pa[i] * pa[i];
        pbb[i] = pb[i] * pb[i];
        pab[i] = pa[i] * pb[i];
      }
      const auto mu_a = metrics_detail::filter_valid(pa, H, W, taps);
      const auto mu_b = metrics_detail::filter_valid(pb, H, W, taps);
      const auto m_aa = metrics_detail::filter_valid(paa, H, W, taps);
      const auto m_bb = metrics_detail::filter_valid(pbb, H, W, taps);
      const auto m_ab = metrics_detail::filter_valid(pab, H, W, taps);
      for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = m_aa[i] - mu_a[i] * mu_a[i];
        const double vb = m_bb[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
        windows += 1;
      }
    }
  return total / static_cast<double>(windows);
}

// SSIM of [-1,1] images mapped onto [0,1], L = 1.
template <class T>
double ssim_unit(const Tensor<T>& a, const Tensor<T>& b) {
  auto remap = [](const Tensor<T>& t) {
    std::vector<T> v(t.vec());
    for (auto& x : v) x = (x + T(1)) / T(2);
    return Tensor<T>::from_data(t.shape(), std::move(v));
  };
  return ssim(remap(a), remap(b));
}

// ---------------------------------------------------------------------------
// proxy classifier + proxy inception score

template <class T>
struct ProxyClassifier {
  std::array<Conv2dLayer<T>, 3> convs;
  Conv2dLayer<T> head;
  int num_classes = synth::kNumPaletteClasses;

  static ProxyClassifier init(int num_classes, std::uint64_t seed) {
    ProxyClassifier c;
    c.num_classes = num_classes;
    SplitMix64 rng(derive_seed(seed, 0xc1a55eULL));
    int in_c = 3;
    for (int i = 0; i < 3; ++i) {
      const int out_c = 16 << i;
      c.convs[static_cast<std::size_t>(i)] =
          Conv2dLayer<T>::init("CLF.conv" + std::to_string(i + 1), in_c, out_c, 4, 2, 1, rng);
      in_c = out_c;
    }
    c.head = Conv2dLayer<T>::init("CLF.head", in_c, num_classes, 1, 1, 0, rng);
    return c;
  }

  Tensor<T> logits(const Tensor<T>& images) const {
    Tensor<T> h = images;
    for (const auto& c : convs) h = leaky_relu(c.forward(h), T(0.2));
    Tensor<T> l = head.forward(global_avg_pool(h));
    return reshape(l, {l.dim(0), num_classes});
  }

  // softmax rows; forward-only
  std::vector<std::vector<double>> probabilities(const Tensor<T>& images) const {
    Tensor<T> l = logits(images);
    const int B = l.dim(0), K = l.dim(1);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      const T* row = l.data() + static_cast<std::size_t>(b) * K;
      double mx = static_cast<double>(row[0]);
      for (int k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
      double z = 0;
      std::vector<double> p(static_cast<std::size_t>(K));
      for (int k = 0; k < K; ++k) {
        p[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(row[k]) - mx);
        z += p[static_cast<std::size_t>(k)];
      }
      for (auto& v : p) v /= z;
      out[static_cast<std::size_t>(b)] = std::move(p);
    }
    return out;
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& c : convs) c.collect(out);
    head.collect(out);
    return out;
  }
};

// Trains the palette classifier on the dataset's target images. Seeded and
// deterministic, so every ablation variant scores against the same frozen
// classifier.
template <class T>
ProxyClassifier<T> train_proxy_classifier(const synth::SyntheticDataset& data, std::uint64_t seed,
                                          long steps = 400, int batch_size = 16) {
  ProxyClassifier<T> clf = ProxyClassifier<T>::init(synth::kNumPaletteClasses, seed);
  AdamConfig adam{4e-3, 0.9, 0.999, 1e-8};
  auto params = clf.parameters();
  for (long s = 0; s < steps; ++s) {
    const auto idx = data.indices_for_step(s, batch_size);
    const auto batch = data.batch<T>(idx);
    GradTape<T> tape;
    typename GradTape<T>::Scope scope(tape);
    Tensor<T> loss = cross_entropy_logits(clf.logits(batch.y), batch.palette_class);
    if (!loss.all_finite()) throw std::runtime_error("proxy classifier: non-finite loss");
    GradMap<T> grads = tape.backward(loss);
    apply_updates(params, grads, adam);
  }
  return clf;
}

// exp(E KL(p(class|image) || p(class))) per split, then mean and std over
// splits. `probs` rows are per-image class distributions.
inline std::pair<double, double> proxy_inception_score(const std::vector<std::vector<double>>& probs,
                                                       int splits) {
  if (splits < 1) throw std::invalid_argument("proxy_inception_score: splits must be >= 1");
  const long n = static_cast<long>(probs.size());
  if (n < 10L * splits)
    throw std::invalid_argument("proxy_inception_score: need at least " + std::to_string(10 * splits) +
                                " images for " + std::to_string(splits) + " splits, got " +
                                std::to_string(n));
  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    const long lo = s * n / splits, hi = (s + 1) * n / splits;
    const std::size_t k = probs.front().size();
    std::vector<double> marginal(k, 0.0);
    for (long i = lo; i < hi; ++i)
      for (std::size_t c = 0; c < k; ++c) marginal[c] += probs[static_cast<std::size_t>(i)][c];
    for (auto& m : marginal) m /= static_cast<double>(hi - lo);
    double mean_kl = 0;
    for (long i = lo; i < hi; ++i) {
      double kl = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double p = probs[static_cast<std::size_t>(i)][c];
        if (p > 1e-12) kl += p * (std::log(p) - std::log(std::max(marginal[c], 1e-12)));
      }
      mean_kl += kl;
    }
    mean_kl /= static_cast<double>(hi - lo);
    scores.push_back(std::exp(mean_kl));
  }
  double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(splits);
  double var = 0;
  for (double v : scores) var += (v - mean) * (v - mean);
  const double stddev = splits > 1 ? std::sqrt(var / static_cast<double>(splits)) : 0.0;
  return {mean, stddev};
}

// ---------------------------------------------------------------------------
// evaluation report

struct EvalReport {
  int samples = 0;
  double mean_ssim = 0;
  double proxy_is_mean = 0;
  double proxy_is_std = 0;
  int is_splits = 1;

  std::string to_text() const {
    std::ostringstream os;
    os << "samples: " << samples << "\n";
    os << "mean_ssim: " << format_double(mean_ssim) << "\n";
    os << "proxy_is_mean: " << format_double(proxy_is_mean) << "\n";
    os << "proxy_is_std: " << format_double(proxy_is_std) << "\n";
    os << "proxy_is_splits: " << is_splits << "\n";
    os << "note: proxy-IS uses a synthetic-data palette classifier, not the Inception network;"
          " values are not comparable to Inception-based scores\n";
    os << "ssim_config: window=11 gaussian sigma=1.5 k1=0.01 k2=0.03 L=1 on [0,1]-mapped images\n";
    return os.str();
  }
};

// Scores a generator over a test set: per-sample SSIM (optionally written
// as `sample_id,ssim` CSV rows) plus proxy-IS over the generated images.
template <class T>
EvalReport evaluate(
    const std::function<Tensor<T>(const typename synth::SyntheticDataset::Batch<T>&)>& generate_fn,
    const synth::SyntheticDataset& test_set, const ProxyClassifier<T>& clf, int is_splits,
    const std::string& per_sample_csv = "") {
  if (test_set.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  std::ofstream csv;
  if (!per_sample_csv.empty()) {
    csv.open(per_sample_csv, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write per-sample CSV: " + per_sample_csv);
    csv << "sample_id,ssim\n";
  }
  EvalReport rep;
  rep.samples = test_set.size();
  rep.is_splits = is_splits;
  std::vector<std::vector<double>> probs;
  probs.reserve(static_cast<std::size_t>(test_set.size()));
  double ssim_sum = 0;
  const int chunk = 8;
  for (int start = 0; start < test_set.size(); start += chunk) {
    std::vector<int> idx;
    for (int i = start; i < std::min(test_set.size(), start + chunk); ++i) idx.push_back(i);
    const auto batch = test_set.batch<T>(idx);
    Tensor<T> generated = generate_fn(batch);
    const int B = static_cast<int>(idx.size());
    const std::size_t per = static_cast<std::size_t>(generated.numel() / B);
    for (int b = 0; b < B; ++b) {
      std::vector<T> gslice(generated.data() + b * per, generated.data() + (b + 1) * per);
      std::vector<T> yslice(batch.y.data() + b * per, batch.y.data() + (b + 1) * per);
      Shape single{1, 3, test_set.resolution(), test_set.resolution()};
      const double s = ssim_unit(Tensor<T>::from_data(single, std::move(gslice)),
                                 Tensor<T>::from_data(single, std::move(yslice)));
      ssim_sum += s;
      if (csv.is_open()) csv << idx[static_cast<std::size_t>(b)] << "," << format_double(s) << "\n";
    }
    for (auto& row : clf.probabilities(generated)) probs.push_back(std::move(row));
  }
  rep.mean_ssim = ssim_sum / static_cast<double>(test_set.size());
  const auto [m, sd] = proxy_inception_score(probs, is_splits);
  rep.proxy_is_mean = m;
  rep.proxy_is_std = sd;
  return rep;
}

}  // namespace ggb
