#include "bvxl/evaluation.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "bvxl/parallel.h"

namespace bvxl {

namespace fs = std::filesystem;

std::string format_real(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

template <typename T>
PredictiveOutput predict_volume(const MeshNet<T>& model, const Volume& v, std::size_t n_mc, Rng& rng) {
  const auto& cfg = model.config();
  if (cfg.in_channels != 1) throw ConfigError("predict_volume: only single-channel models are supported");
  const std::size_t s = cfg.subvolume_size, C = cfg.num_classes;
  check_divisible(v.dims, s);
  const Volume z = zscore(v);
  const auto tiles = split_subvolumes<float>(z.data, 1, z.dims, s);
  std::vector<Tile<float>> prob_tiles(tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    Rng tile_rng = rng.split(i);
    BasicTensor<T> x({1, s, s, s}, std::vector<T>(tiles[i].data.begin(), tiles[i].data.end()));
    const auto p = model.predict_mc(x, n_mc, tile_rng);
    prob_tiles[i].grid = tiles[i].grid;
    prob_tiles[i].data.assign(p.begin(), p.end());
  }
  return PredictiveOutput::from_probabilities(v.dims, C, reassemble<float>(prob_tiles, C, v.dims, s));
}

template <typename T>
VolumePredictor model_predictor(const MeshNet<T>& model, std::size_t n_mc) {
  return [&model, n_mc](const LabeledVolume& v, Rng& rng) { return predict_volume(model, v.volume, n_mc, rng); };
}

VolumePredictor oracle_predictor(int num_classes) {
  return [num_classes](const LabeledVolume& v, Rng&) {
    const std::size_t n = v.labels.size(), C = static_cast<std::size_t>(num_classes);
    std::vector<float> probs(C * n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = v.labels[i];
      if (c < 0 || c >= num_classes) throw DataError("oracle_predictor: label out of range at voxel " + std::to_string(i));
      probs[static_cast<std::size_t>(c) * n + i] = 1.0f;
    }
    return PredictiveOutput::from_probabilities(v.volume.dims, C, std::move(probs));
  };
}

std::vector<double> error_curve_thresholds(int num_classes) {
  std::vector<double> t{std::numeric_limits<double>::infinity()};
  const double top = std::log(static_cast<double>(num_classes));
  for (std::size_t k = 0; k < kErrorCurvePoints; ++k)
    t.push_back(top * (1.0 - static_cast<double>(k) / static_cast<double>(kErrorCurvePoints - 1)));
  return t;
}

namespace {

// Rates at each grid threshold (descending): positive iff score >= threshold.
std::vector<RocPoint> curve_on_grid(std::span<const float> scores, const std::vector<int>& wrong,
                                    const std::vector<double>& grid) {
  std::vector<double> pos(grid.size(), 0), neg(grid.size(), 0);
  double np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = scores[i];
    const auto k = static_cast<std::size_t>(
        std::partition_point(grid.begin(), grid.end(), [s](double t) { return t > s; }) - grid.begin());
    (wrong[i] ? np : nn) += 1;
    if (k < grid.size()) (wrong[i] ? pos : neg)[k] += 1;
  }
  std::vector<RocPoint> out(grid.size());
  double tp = 0, fp = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    tp += pos[k];
    fp += neg[k];
    out[k] = {grid[k], fp / nn, tp / np};
  }
  return out;
}

VolumeResult evaluate_one(const fs::path& dir, const DatasetEntry& e, int C, const VolumePredictor& predict,
                          const std::vector<double>& grid, Rng rng) {
  const LabeledVolume v = load_entry(dir, e);
  const PredictiveOutput out = predict(v, rng);
  if (out.dims != v.volume.dims || out.classes != static_cast<std::size_t>(C))
    throw ShapeError("evaluate: prediction for " + e.id + " has the wrong geometry");

  VolumeResult r;
  r.entry = e;
  r.record.volume_id = e.id;
  r.record.quality_label = e.quality;
  const auto dice = mean_dice(out.argmax_labels, v.labels, C);
  r.record.mean_dice = dice.mean;
  r.record.per_class_dice = dice.per_class;
  r.record.mean_nonbg_entropy = std::numeric_limits<double>::quiet_NaN();
  if (std::any_of(out.argmax_labels.begin(), out.argmax_labels.end(), [](std::int32_t l) { return l != 0; }))
    r.record.mean_nonbg_entropy = volume_uncertainty(out);

  if (auto roc = error_prediction_analysis(out, v.labels)) {
    r.error_auc = roc->auc;
    std::vector<int> wrong(v.labels.size());
    for (std::size_t i = 0; i < wrong.size(); ++i) wrong[i] = out.argmax_labels[i] != v.labels[i];
    r.error_curve = curve_on_grid(out.predictive_entropy, wrong, grid);
  }
  return r;
}

}  // namespace

EvaluationReport evaluate_entries(const fs::path& dir, std::span<const DatasetEntry> entries, int num_classes,
                                  const VolumePredictor& predict, const EvaluationOptions& opt) {
  if (entries.empty()) throw DataError("evaluate: no volumes selected");
  EvaluationReport rep;
  rep.method = opt.method;
  rep.num_classes = num_classes;
  rep.volumes.resize(entries.size());
  const auto grid = error_curve_thresholds(num_classes);
  const Rng root(opt.seed);
  parallel_ranges(entries.size(), opt.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      rep.volumes[i] = evaluate_one(dir, entries[i], num_classes, predict, grid, root.split(i));
  });

  const double n = static_cast<double>(rep.volumes.size());
  double sum = 0, sq = 0;
  for (const auto& v : rep.volumes) {
    sum += v.record.mean_dice;
    sq += v.record.mean_dice * v.record.mean_dice;
  }
  rep.mean_dice = sum / n;
  rep.dice_standard_error = n > 1 ? std::sqrt(std::max(0.0, (sq - n * rep.mean_dice * rep.mean_dice) / (n - 1)) / n) : 0;

  rep.mean_dice_per_class.assign(static_cast<std::size_t>(num_classes), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < rep.mean_dice_per_class.size(); ++c) {
    double s = 0, k = 0;
    for (const auto& v : rep.volumes)
      if (v.record.per_class_dice[c]) {
        s += *v.record.per_class_dice[c];
        k += 1;
      }
    if (k > 0) rep.mean_dice_per_class[c] = s / k;
  }

  rep.mean_error_curve.assign(grid.size(), RocPoint{0, 0, 0});
  double auc_sum = 0;
  for (const auto& v : rep.volumes) {
    if (!v.error_auc) continue;
    ++rep.error_auc_defined;
    auc_sum += *v.error_auc;
    if (*v.error_auc > 0.5) ++rep.error_auc_above_half;
    if (*v.error_auc == 0.5) ++rep.error_auc_ties;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      rep.mean_error_curve[k].fpr += v.error_curve[k].fpr;
      rep.mean_error_curve[k].tpr += v.error_curve[k].tpr;
    }
  }
  for (std::size_t k = 0; k < grid.size(); ++k) {
    rep.mean_error_curve[k].threshold = grid[k];
    if (rep.error_auc_defined) {
      rep.mean_error_curve[k].fpr /= static_cast<double>(rep.error_auc_defined);
      rep.mean_error_curve[k].tpr /= static_cast<double>(rep.error_auc_defined);
    }
  }
  if (rep.error_auc_defined) {
    rep.mean_error_auc = auc_sum / static_cast<double>(rep.error_auc_defined);
    rep.error_sign_test_p = sign_test_p(rep.error_auc_above_half, rep.error_auc_defined - rep.error_auc_ties);
  } else {
    rep.mean_error_curve.clear();
  }

  std::vector<AnalysisRecord> scored;
  bool good = false, bad = false;
  for (const auto& v : rep.volumes) {
    if (v.record.quality_label == Quality::unlabeled || std::isnan(v.record.mean_nonbg_entropy)) continue;
    scored.push_back(v.record);
    (v.record.quality_label == Quality::bad ? bad : good) = true;
  }
  if (good && bad) rep.qc = qc_analysis(scored);
  return rep;
}

QcTable qc_table(std::span<const EvaluationReport> reports) {
  QcTable t;
  if (reports.empty()) return t;
  const auto& first = reports[0].volumes;
  for (const auto& r : reports)
    if (r.volumes.size() != first.size()) throw DataError("compare: reports cover different volume sets");
  t.scores.resize(reports.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    const auto& rec = first[i].record;
    if (rec.quality_label == Quality::unlabeled) continue;
    bool ok = true;
    for (const auto& r : reports) {
      if (r.volumes[i].record.volume_id != rec.volume_id)
        throw DataError("compare: volume order differs at " + rec.volume_id);
      ok = ok && !std::isnan(r.volumes[i].record.mean_nonbg_entropy);
    }
    if (!ok) continue;
    t.volume_ids.push_back(rec.volume_id);
    t.labels.push_back(rec.quality_label == Quality::bad);
    for (std::size_t m = 0; m < reports.size(); ++m) t.scores[m].push_back(reports[m].volumes[i].record.mean_nonbg_entropy);
  }
  return t;
}

namespace {

std::ofstream open_csv(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

void write_curve(const fs::path& path, std::span<const RocPoint> curve) {
  auto f = open_csv(path);
  f << kCurveHeader << "\n";
  for (const auto& p : curve) f << format_real(p.threshold) << "," << format_real(p.fpr) << "," << format_real(p.tpr) << "\n";
}

std::string optional_real(const std::optional<double>& x) { return x ? format_real(*x) : "undefined"; }

}  // namespace

std::vector<fs::path> write_evaluation(const fs::path& out, std::span<const EvaluationReport> reports,
                                       const std::optional<BootstrapResult>& compare) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create " + out.string() + ": " + ec.message());
  std::set<std::string> labels;
  for (const auto& r : reports)
    if (!labels.insert(r.method).second) throw ConfigError("evaluate: duplicate method label " + r.method);

  std::vector<fs::path> files{"records.csv", "dice_per_class.csv", "error_auc.csv", "summary.csv"};
  {
    auto f = open_csv(out / "records.csv");
    f << kRecordsHeader << "\n";
    for (const auto& r : reports)
      for (const auto& v : r.volumes)
        f << v.record.volume_id << "," << format_real(v.record.mean_dice) << ","
          << (std::isnan(v.record.mean_nonbg_entropy) ? "undefined" : format_real(v.record.mean_nonbg_entropy)) << ","
          << quality_name(v.record.quality_label) << "," << r.method << "\n";
  }
  {
    auto f = open_csv(out / "dice_per_class.csv");
    const int C = reports.empty() ? 0 : reports[0].num_classes;
    f << "volume_id,method";
    for (int c = 0; c < C; ++c) f << ",class_" << c;
    f << "\n";
    for (const auto& r : reports)
      for (const auto& v : r.volumes) {
        f << v.record.volume_id << "," << r.method;
        for (const auto& d : v.record.per_class_dice) f << "," << (d ? format_real(*d) : "absent");
        f << "\n";
      }
  }
  {
    auto f = open_csv(out / "error_auc.csv");
    f << "volume_id,method,corruption,severity,error_auc\n";
    for (const auto& r : reports)
      for (const auto& v : r.volumes)
        f << v.record.volume_id << "," << r.method << "," << v.entry.corruption << "," << format_real(v.entry.severity)
          << "," << optional_real(v.error_auc) << "\n";
  }
  {
    auto f = open_csv(out / "summary.csv");
    f << "method,volumes,mean_dice,dice_se,mean_error_auc,error_auc_volumes,error_auc_above_half,error_sign_test_p,"
         "qc_auc\n";
    for (const auto& r : reports)
      f << r.method << "," << r.volumes.size() << "," << format_real(r.mean_dice) << ","
        << format_real(r.dice_standard_error) << ","
        << (r.error_auc_defined ? format_real(r.mean_error_auc) : "undefined") << "," << r.error_auc_defined << ","
        << r.error_auc_above_half << "," << format_real(r.error_sign_test_p) << ","
        << (r.qc ? format_real(r.qc->auc) : "undefined") << "\n";
  }
  for (const auto& r : reports) {
    if (!r.mean_error_curve.empty()) {
      files.emplace_back("error_roc_" + r.method + ".csv");
      write_curve(out / files.back(), r.mean_error_curve);
    }
    if (r.qc) {
      files.emplace_back("qc_roc_" + r.method + ".csv");
      write_curve(out / files.back(), r.qc->curve);
    }
  }
  if (compare) {
    files.emplace_back("compare.csv");
    auto f = open_csv(out / files.back());
    f << "method_a,method_b,auc_a,auc_b,p_value,replicates\n";
    for (const auto& p : compare->pairwise)
      f << reports[p.a].method << "," << reports[p.b].method << "," << format_real(compare->point_auc[p.a]) << ","
        << format_real(compare->point_auc[p.b]) << "," << format_real(p.p_value) << "," << compare->replicates << "\n";
  }
  return files;
}

template PredictiveOutput predict_volume(const MeshNet<float>&, const Volume&, std::size_t, Rng&);
template PredictiveOutput predict_volume(const MeshNet<double>&, const Volume&, std::size_t, Rng&);
template VolumePredictor model_predictor(const MeshNet<float>&, std::size_t);
template VolumePredictor model_predictor(const MeshNet<double>&, std::size_t);

}  // namespace bvxl
