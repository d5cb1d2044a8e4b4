#include "bvxl/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bvxl/parallel.h"
#include "bvxl/rng.h"

namespace bvxl {

PredictiveOutput PredictiveOutput::from_probabilities(const Dims& dims, std::size_t classes, std::vector<float> probs) {
  const std::size_t v = dims.voxels();
  if (classes == 0 || probs.size() != classes * v)
    throw ShapeError("PredictiveOutput: " + std::to_string(probs.size()) + " probabilities for " +
                     std::to_string(classes) + " classes x " + dims.str());
  PredictiveOutput out;
  out.dims = dims;
  out.classes = classes;
  out.argmax_labels.resize(v);
  out.predictive_entropy.resize(v);
  std::vector<double> p(classes);
  for (std::size_t i = 0; i < v; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = probs[c * v + i];
      if (p[c] > p[best]) best = c;
    }
    out.argmax_labels[i] = static_cast<std::int32_t>(best);
    out.predictive_entropy[i] = static_cast<float>(voxel_entropy(p));
  }
  out.probs = std::move(probs);
  return out;
}

std::optional<double> dice_per_class(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth, int c) {
  if (pred.size() != truth.size())
    throw ShapeError("dice: prediction has " + std::to_string(pred.size()) + " voxels, truth " +
                     std::to_string(truth.size()));
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == c, t = truth[i] == c;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp + fn == 0) return std::nullopt;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

DiceSummary mean_dice(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth, int num_classes) {
  DiceSummary s;
  double total = 0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    auto d = dice_per_class(pred, truth, c);
    s.per_class.push_back(d);
    if (d) {
      total += *d;
      ++present;
    }
  }
  if (present == 0) throw DataError("mean_dice: no class is present in either segmentation");
  s.mean = total / present;
  return s;
}

double voxel_entropy(std::span<const double> probs) {
  double h = 0;
  for (double p : probs) h -= p * std::log(std::max(p, kProbabilityFloor));
  return std::max(h, 0.0);
}

double volume_uncertainty(const PredictiveOutput& out) {
  double total = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < out.argmax_labels.size(); ++i)
    if (out.argmax_labels[i] != 0) {
      total += out.predictive_entropy[i];
      ++n;
    }
  if (n == 0) throw DataError("volume_uncertainty: every voxel was classified as background");
  return total / static_cast<double>(n);
}

RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ShapeError("roc_auc: " + std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) +
                     " labels");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) pos += l != 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw DataError("roc_auc: labels contain a single class");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  // Walk groups of tied scores from highest to lowest; each group adds one point and
  // a trapezoid (ties contribute half a rectangle).
  double area = 0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i, gp = 0, gn = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0 ? gp : gn)++;
      ++j;
    }
    area += static_cast<double>(gn) * (static_cast<double>(tp) + 0.5 * static_cast<double>(gp));
    tp += gp;
    fp += gn;
    r.curve.push_back({scores[order[i]], static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
    i = j;
  }
  r.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return r;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double a = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    a += (curve[i].fpr - curve[i - 1].fpr) * 0.5 * (curve[i].tpr + curve[i - 1].tpr);
  return a;
}

std::optional<RocResult> error_prediction_analysis(const PredictiveOutput& out, std::span<const std::int32_t> truth) {
  if (truth.size() != out.argmax_labels.size()) throw ShapeError("error_prediction_analysis: extent mismatch");
  std::vector<double> scores(out.predictive_entropy.begin(), out.predictive_entropy.end());
  std::vector<int> wrong(truth.size());
  std::size_t errors = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) errors += (wrong[i] = out.argmax_labels[i] != truth[i]);
  if (errors == 0 || errors == truth.size()) return std::nullopt;
  return roc_auc(scores, wrong);
}

RocResult qc_analysis(std::span<const AnalysisRecord> records) {
  std::vector<double> scores;
  std::vector<int> bad;
  for (const auto& r : records) {
    if (r.quality_label == Quality::unlabeled) continue;
    scores.push_back(r.mean_nonbg_entropy);
    bad.push_back(r.quality_label == Quality::bad);
  }
  return roc_auc(scores, bad);
}

BootstrapResult bootstrap_auc_compare(std::span<const int> labels, const std::vector<std::vector<double>>& scores,
                                      std::size_t n_boot, std::size_t sample_size, std::uint64_t seed,
                                      std::size_t threads) {
  if (n_boot < 1) throw ConfigError("bootstrap: need at least one replicate");
  if (scores.size() < 2) throw ConfigError("bootstrap: need at least two score columns");
  for (const auto& col : scores)
    if (col.size() != labels.size()) throw ShapeError("bootstrap: score column length differs from labels");
  const std::size_t pop = labels.size();
  if (sample_size == 0) sample_size = pop;

  BootstrapResult res;
  res.replicates = n_boot;
  for (const auto& col : scores) res.point_auc.push_back(roc_auc(col, labels).auc);
  res.auc_samples.assign(scores.size(), std::vector<double>(n_boot));

  auto run = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(sample_size);
    std::vector<int> lab(sample_size);
    std::vector<double> sc(sample_size);
    for (std::size_t r = begin; r < end; ++r) {
      Rng rng = Rng(seed).split(r);
      bool ok = false;
      for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
        std::size_t pos = 0;
        for (std::size_t k = 0; k < sample_size; ++k) {
          idx[k] = rng.index(pop);
          lab[k] = labels[idx[k]];
          pos += lab[k] != 0;
        }
        ok = pos > 0 && pos < sample_size;
      }
      if (!ok) throw DataError("bootstrap: 100 consecutive single-class resamples");
      for (std::size_t m = 0; m < scores.size(); ++m) {
        for (std::size_t k = 0; k < sample_size; ++k) sc[k] = scores[m][idx[k]];
        res.auc_samples[m][r] = roc_auc(sc, lab).auc;
      }
    }
  };

  parallel_ranges(n_boot, threads, run);

  for (std::size_t a = 0; a < scores.size(); ++a)
    for (std::size_t b = a + 1; b < scores.size(); ++b) {
      double count = 0;
      for (std::size_t r = 0; r < n_boot; ++r) {
        const double x = res.auc_samples[a][r], y = res.auc_samples[b][r];
        count += x < y ? 1.0 : (x == y ? 0.5 : 0.0);
      }
      res.pairwise.push_back({a, b, count / static_cast<double>(n_boot)});
    }
  return res;
}

double sign_test_p(std::size_t successes, std::size_t trials) {
  // Sum of C(n, k) / 2^n for k >= successes, in log space.
  double p = 0;
  for (std::size_t k = successes; k <= trials; ++k) {
    const double log_c = std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) - std::lgamma(trials - k + 1.0);
    p += std::exp(log_c - static_cast<double>(trials) * std::log(2.0));
  }
  return std::min(p, 1.0);
}

}  // namespace bvxl
