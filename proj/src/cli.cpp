#include "bvxl/cli.h"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "bvxl/dataset.h"
#include "bvxl/evaluation.h"
#include "bvxl/model.h"
#include "bvxl/svol.h"
#include "bvxl/trainer.h"

namespace bvxl {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

std::string sha256_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("sha256: digest initialisation failed");
  }
  std::vector<char> buf(1 << 16);
  while (f) {
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool deterministic = false;
  std::string precision = "float";
};

Json globals_json(const Globals& g) {
  return Json{{"seed", g.seed}, {"threads", g.threads}, {"deterministic", g.deterministic}, {"precision", g.precision}};
}

// Every output directory gets run.json: the command, its effective parameters and the
// SHA-256 of each artifact (paths relative to the directory, sorted).
void write_run_manifest(const fs::path& dir, const std::string& command, const Globals& g, Json params,
                        std::vector<fs::path> artifacts) {
  std::sort(artifacts.begin(), artifacts.end());
  Json hashes = Json::object();
  for (const auto& a : artifacts) hashes[a.generic_string()] = sha256_file(dir / a);
  Json j{{"schema_version", kRunManifestSchemaVersion},
         {"command", command},
         {"globals", globals_json(g)},
         {"parameters", std::move(params)},
         {"artifacts", std::move(hashes)}};
  std::ofstream f(dir / "run.json", std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + (dir / "run.json").string());
  f << j.dump(2) << "\n";
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

// ---- synth-gen -------------------------------------------------------------------

struct SynthArgs {
  fs::path out;
  std::size_t count = 200, side = 64;
  int classes = 8;
  double noise = 0.1, corrupt_frac = 0.0, severity_min = 0.5, severity_max = 2.0;
  std::string site = "in-site";
};

int cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  SynthDatasetConfig cfg;
  cfg.count = a.count;
  cfg.volume.side = a.side;
  cfg.volume.num_classes = a.classes;
  cfg.volume.noise_sigma = a.noise;
  cfg.volume.seed = g.seed;
  cfg.volume.site = a.site == "out-of-site" ? SiteProfile::out_of_site() : SiteProfile::in_site();
  cfg.corrupt_frac = a.corrupt_frac;
  cfg.severity_lo = a.severity_min;
  cfg.severity_hi = a.severity_max;
  const auto m = generate_synth_dataset(a.out, cfg);

  std::vector<fs::path> files{"manifest.json"};
  std::size_t bad = 0;
  for (const auto& e : m.entries) {
    files.emplace_back(e.image);
    files.emplace_back(e.labels);
    bad += e.quality == Quality::bad;
  }
  write_run_manifest(a.out, "synth-gen", g,
                     Json{{"out", a.out.generic_string()},
                          {"count", a.count},
                          {"side", a.side},
                          {"classes", a.classes},
                          {"noise", a.noise},
                          {"corrupt_frac", a.corrupt_frac},
                          {"severity_min", a.severity_min},
                          {"severity_max", a.severity_max},
                          {"site", a.site}},
                     files);
  const auto sizes = split_sizes(m.entries.size());
  out << "wrote " << m.entries.size() << " volumes (" << bad << " bad; split " << sizes.train << "/" << sizes.val
      << "/" << sizes.test << ") to " << a.out.string() << "\n";
  return kExitOk;
}

// ---- train / bd-sweep ------------------------------------------------------------

struct TrainArgs {
  fs::path data, out;
  std::string method = "map";
  std::string preset = "desk";
  std::size_t subvol = 0, epochs = 20, batch = 0, filters = 0;
  double lr = 1e-4;
  double keep_prob = 0.9;
  double temperature = kDefaultTemperature;
  std::optional<double> sigma_init, keep_init;
  std::vector<double> sweep{0.95, 0.9, 0.75, 0.5};
};

MeshNetConfig model_config(const TrainArgs& a, const DatasetManifest& m) {
  const Method method = parse_method(a.method);
  MeshNetConfig cfg = a.preset == "full" ? MeshNetConfig{} : MeshNetConfig::desk_scale(method);
  cfg.method = method;
  cfg.num_classes = static_cast<std::size_t>(m.num_classes);
  if (a.subvol) cfg.subvolume_size = a.subvol;
  if (a.filters) cfg.filters = a.filters;
  cfg.bd_keep_prob = a.keep_prob;
  cfg.temperature = a.temperature;
  if (a.sigma_init) cfg.sigma_init = *a.sigma_init;
  if (a.keep_init) cfg.keep_init = *a.keep_init;
  cfg.validate();
  return cfg;
}

Json train_params(const TrainArgs& a, const MeshNetConfig& cfg, std::size_t batch) {
  Json model = Json::object();
  for (const auto& [k, v] : cfg.to_key_values()) model[k] = v;
  return Json{{"data", a.data.generic_string()}, {"out", a.out.generic_string()}, {"method", a.method},
              {"preset", a.preset},               {"epochs", a.epochs},              {"batch", batch},
              {"lr", a.lr},                       {"model", std::move(model)}};
}

template <typename T>
TrainResult train_one(const TrainArgs& a, const Globals& g, const DatasetManifest& m, const MeshNetConfig& cfg,
                      std::size_t batch, const fs::path& out, std::ostream& log) {
  const auto train_set = load_split_subvolumes(a.data, m, Split::train, cfg.subvolume_size);
  const auto val_set = load_split_subvolumes(a.data, m, Split::val, cfg.subvolume_size);
  if (train_set.empty()) throw DataError("train: the training split is empty");

  Rng init = Rng(g.seed).split(1);
  auto model = MeshNet<T>::build(cfg, init);
  TrainConfig tc;
  tc.learning_rate = a.lr;
  tc.minibatch_size = batch;
  tc.epochs = a.epochs;
  tc.seed = g.seed;
  tc.checkpoint_dir = out;
  tc.deterministic = g.deterministic;
  ObjectiveConfig obj;
  obj.method = cfg.method;
  obj.dataset_size = train_set.size();
  obj.minibatch_size = batch;
  obj.prior = cfg.prior;
  return train(model, std::span<const Subvolume>(train_set), std::span<const Subvolume>(val_set), tc, obj,
               [&log](const EpochLog& row) {
                 log << "epoch " << row.epoch << " loss " << format_real(row.train_loss) << " val_dice "
                     << format_real(row.val_dice) << "\n";
                 return true;
               });
}

TrainResult dispatch_train(const TrainArgs& a, const Globals& g, const DatasetManifest& m, const MeshNetConfig& cfg,
                           std::size_t batch, const fs::path& out, std::ostream& log) {
  ensure_dir(out);
  return g.precision == "double" ? train_one<double>(a, g, m, cfg, batch, out, log)
                                 : train_one<float>(a, g, m, cfg, batch, out, log);
}

std::size_t batch_size(const TrainArgs& a) { return a.batch ? a.batch : (a.preset == "full" ? 32 : 8); }

int cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  const auto m = DatasetManifest::load(a.data);
  const auto cfg = model_config(a, m);
  const std::size_t batch = batch_size(a);
  const auto r = dispatch_train(a, g, m, cfg, batch, a.out, out);
  write_run_manifest(a.out, "train", g, train_params(a, cfg, batch),
                     {"best.ckpt", "last.ckpt", "train_log.csv"});
  out << "best epoch " << r.best_epoch << " val_dice " << format_real(r.best_val_dice) << "\n";
  return kExitOk;
}

int cmd_sweep(const TrainArgs& base, const Globals& g, std::ostream& out) {
  const auto m = DatasetManifest::load(base.data);
  ensure_dir(base.out);
  std::vector<fs::path> artifacts{"sweep.csv"};
  std::ostringstream csv;
  csv << "keep_prob,best_epoch,best_val_dice\n";
  double best = -1, best_p = 0;
  for (double p : base.sweep) {
    TrainArgs a = base;
    a.method = "bd";
    a.keep_prob = p;
    const auto cfg = model_config(a, m);
    const std::string sub = "keep_" + format_real(p);
    out << "keep_prob " << format_real(p) << "\n";
    const auto r = dispatch_train(a, g, m, cfg, batch_size(a), base.out / sub, out);
    csv << format_real(p) << "," << r.best_epoch << "," << format_real(r.best_val_dice) << "\n";
    for (const char* f : {"best.ckpt", "last.ckpt", "train_log.csv"}) artifacts.emplace_back(fs::path(sub) / f);
    if (r.best_val_dice > best) {
      best = r.best_val_dice;
      best_p = p;
    }
  }
  {
    std::ofstream f(base.out / "sweep.csv", std::ios::binary | std::ios::trunc);
    f << csv.str();
  }
  auto params = train_params(base, model_config(base, m), batch_size(base));
  params["method"] = "bd";
  params["keep_probs"] = base.sweep;
  params["selected_keep_prob"] = best_p;
  write_run_manifest(base.out, "bd-sweep", g, params, artifacts);
  out << "selected keep_prob " << format_real(best_p) << " (val_dice " << format_real(best) << ")\n";
  return kExitOk;
}

// ---- predict -----------------------------------------------------------------------

struct PredictArgs {
  fs::path ckpt, in, out;
  std::size_t n_mc = kDefaultMcSamples;
};

template <typename T>
int predict_typed(const PredictArgs& a, const Globals& g, std::ostream& out) {
  const auto model = MeshNet<T>::load(a.ckpt);
  const Volume v = load_volume(a.in);
  Rng rng(g.seed);
  const auto pred = predict_volume(model, v, a.n_mc, rng);
  ensure_dir(a.out);
  Meta meta{{"source", a.in.filename().string()}, {"n_mc", std::to_string(a.n_mc)}};
  save_probabilities(a.out / "probabilities.svol", v.dims, static_cast<std::uint32_t>(pred.classes), pred.probs, meta);
  save_labels(a.out / "labels.svol", v.dims, pred.argmax_labels, meta);
  Volume ent{v.dims, pred.predictive_entropy, meta};
  save_volume(a.out / "entropy.svol", ent);
  write_run_manifest(a.out, "predict", g,
                     Json{{"ckpt", a.ckpt.generic_string()},
                          {"ckpt_sha256", sha256_file(a.ckpt)},
                          {"in", a.in.generic_string()},
                          {"n_mc", a.n_mc},
                          {"out", a.out.generic_string()}},
                     {"probabilities.svol", "labels.svol", "entropy.svol"});
  out << "predicted " << v.dims.str() << " with " << pred.classes << " classes\n";
  return kExitOk;
}

// ---- evaluate ----------------------------------------------------------------------

struct EvaluateArgs {
  std::vector<fs::path> ckpts, compare;
  fs::path data, out;
  std::string split = "test";
  std::size_t n_mc = kDefaultMcSamples, n_boot = kDefaultBootstrapReplicates, boot_sample = 0;
  bool oracle = false;
};

std::vector<DatasetEntry> select_entries(const DatasetManifest& m, const std::string& split) {
  if (split == "out-of-site") {
    if (m.site != "out-of-site") throw DataError("evaluate: dataset site is " + m.site + ", not out-of-site");
    return m.entries;
  }
  if (split == "all") return m.entries;
  return m.in_split(parse_split(split));
}

template <typename T>
EvaluationReport evaluate_checkpoint(const fs::path& ckpt, const EvaluateArgs& a, const Globals& g,
                                     const DatasetManifest& m, const std::vector<DatasetEntry>& entries,
                                     const std::string& label) {
  const auto model = MeshNet<T>::load(ckpt);
  if (model.config().num_classes != static_cast<std::size_t>(m.num_classes))
    throw DataError("evaluate: checkpoint has " + std::to_string(model.config().num_classes) +
                    " classes, dataset has " + std::to_string(m.num_classes));
  EvaluationOptions opt{label, g.seed, g.threads};
  return evaluate_entries(a.data, entries, m.num_classes, model_predictor(model, a.n_mc), opt);
}

int cmd_evaluate(const EvaluateArgs& a, const Globals& g, std::ostream& out) {
  const auto m = DatasetManifest::load(a.data);
  const auto entries = select_entries(m, a.split);
  std::vector<fs::path> ckpts = a.ckpts;
  ckpts.insert(ckpts.end(), a.compare.begin(), a.compare.end());
  if (ckpts.empty() && !a.oracle) throw ConfigError("evaluate: give --ckpt, --compare or --oracle");

  std::vector<std::string> labels;
  std::map<std::string, int> seen;
  for (const auto& c : ckpts) labels.push_back(method_name(checkpoint_config(c).method));
  for (const auto& l : labels) ++seen[l];
  std::map<std::string, int> next;
  for (auto& l : labels)
    if (seen[l] > 1) l += "-" + std::to_string(++next[l]);

  std::vector<EvaluationReport> reports;
  if (a.oracle)
    reports.push_back(evaluate_entries(a.data, entries, m.num_classes, oracle_predictor(m.num_classes),
                                       EvaluationOptions{"oracle", g.seed, g.threads}));
  for (std::size_t i = 0; i < ckpts.size(); ++i)
    reports.push_back(g.precision == "double" ? evaluate_checkpoint<double>(ckpts[i], a, g, m, entries, labels[i])
                                              : evaluate_checkpoint<float>(ckpts[i], a, g, m, entries, labels[i]));

  std::optional<BootstrapResult> cmp;
  if (!a.compare.empty()) {
    if (reports.size() < 2) throw ConfigError("evaluate: --compare needs at least two models in total");
    const auto table = qc_table(reports);
    cmp = bootstrap_auc_compare(table.labels, table.scores, a.n_boot, a.boot_sample, g.seed, g.threads);
  }
  auto files = write_evaluation(a.out, reports, cmp);

  Json ck = Json::array();
  for (const auto& c : ckpts) ck.push_back(Json{{"path", c.generic_string()}, {"sha256", sha256_file(c)}});
  write_run_manifest(a.out, "evaluate", g,
                     Json{{"data", a.data.generic_string()},
                          {"split", a.split},
                          {"volumes", entries.size()},
                          {"checkpoints", ck},
                          {"oracle", a.oracle},
                          {"n_mc", a.n_mc},
                          {"n_boot", cmp ? a.n_boot : 0},
                          {"boot_sample", a.boot_sample},
                          {"out", a.out.generic_string()}},
                     files);
  for (const auto& r : reports) {
    out << r.method << ": mean_dice " << format_real(r.mean_dice) << " error_auc "
        << (r.error_auc_defined ? format_real(r.mean_error_auc) : "undefined") << " qc_auc "
        << (r.qc ? format_real(r.qc->auc) : "undefined") << "\n";
  }
  if (cmp)
    for (const auto& p : cmp->pairwise)
      out << reports[p.a].method << " > " << reports[p.b].method << ": p = " << format_real(p.p_value) << "\n";
  return kExitOk;
}

// ---- inspect -----------------------------------------------------------------------

struct InspectArgs {
  fs::path ckpt;
  std::size_t classes = 50, filters = 96;
  std::string method = "map";
};

template <typename T>
Json census_json(const MeshNet<T>& net) {
  const auto c = net.census();
  const auto specs = net.config().layer_specs();
  const auto rf = receptive_field(specs);
  Json layers = Json::array();
  for (const auto& p : net.parameters()) {
    Json shape = Json::array();
    for (auto d : p.tensor.shape()) shape.push_back(d);
    layers.push_back(Json{{"layer", p.layer + 1}, {"role", role_name(p.role)}, {"shape", shape}});
  }
  return Json{{"method", method_name(net.config().method)},
              {"num_classes", net.config().num_classes},
              {"filters", net.config().filters},
              {"weights", c.weights},
              {"biases", c.biases},
              {"deterministic_total", c.deterministic_total()},
              {"sigma_raw", c.sigma_raw},
              {"dropout_logits", c.dropout_logits},
              {"total", c.total()},
              {"receptive_field", Json::array({rf[0], rf[1], rf[2]})},
              {"parameters", layers}};
}

int cmd_inspect(const InspectArgs& a, const Globals& g, std::ostream& out) {
  Json j;
  if (!a.ckpt.empty()) {
    const auto net = MeshNet<double>::load(a.ckpt);
    j = census_json(net);
    // Summaries on the natural scale: sigma for sigma_raw, keep probability for logits.
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      double lo = std::numeric_limits<double>::infinity(), hi = -lo, total = 0;
      for (double x : p.tensor.values()) {
        if (p.role == ParamRole::sigma_raw) x = sigma_from_raw(x);
        if (p.role == ParamRole::dropout_logit) x = 1 / (1 + std::exp(-x));
        lo = std::min(lo, x);
        hi = std::max(hi, x);
        total += x;
      }
      j["parameters"][i]["summary"] = Json{{"min", lo}, {"mean", total / static_cast<double>(p.tensor.numel())},
                                           {"max", hi}};
    }
    j["checkpoint"] = a.ckpt.generic_string();
    j["scalar_bytes"] = checkpoint_scalar_bytes(a.ckpt);
  } else {
    MeshNetConfig cfg;
    cfg.method = parse_method(a.method);
    cfg.num_classes = a.classes;
    cfg.filters = a.filters;
    Rng rng(g.seed);
    j = census_json(MeshNet<float>::build(cfg, rng));
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian volumetric segmentation: training, prediction and uncertainty analysis"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Root random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for evaluation and bootstrap")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_flag("--deterministic", g.deterministic, "Byte-identical outputs across reruns (no wall-clock fields)");
  app.add_option("--precision", g.precision, "Scalar type for model computations")
      ->check(CLI::IsMember({"float", "double"}))
      ->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic labeled dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--count", sa.count)->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--side", sa.side)->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--classes", sa.classes)->check(CLI::Range(2, 1000))->capture_default_str();
  synth->add_option("--noise", sa.noise)->check(CLI::NonNegativeNumber)->capture_default_str();
  synth->add_option("--corrupt-frac", sa.corrupt_frac)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  synth->add_option("--severity-min", sa.severity_min)->check(CLI::NonNegativeNumber)->capture_default_str();
  synth->add_option("--severity-max", sa.severity_max)->check(CLI::NonNegativeNumber)->capture_default_str();
  synth->add_option("--site", sa.site)->check(CLI::IsMember({"in-site", "out-of-site"}))->capture_default_str();

  TrainArgs ta;
  auto add_train_opts = [&ta](CLI::App* c) {
    c->add_option("--data", ta.data, "Dataset directory")->required();
    c->add_option("--out", ta.out, "Output directory for checkpoints and log")->required();
    c->add_option("--preset", ta.preset, "desk: 16^3 tiles, 16 filters, batch 8; full: 32^3, 96 filters, batch 32")
        ->check(CLI::IsMember({"desk", "full"}))
        ->capture_default_str();
    c->add_option("--subvol", ta.subvol, "Subvolume side (overrides the preset)");
    c->add_option("--filters", ta.filters, "Filters per hidden layer (overrides the preset)");
    c->add_option("--epochs", ta.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--batch", ta.batch, "Minibatch size (overrides the preset)");
    c->add_option("--lr", ta.lr)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--temperature", ta.temperature, "Concrete temperature (ssd)")->capture_default_str();
    c->add_option("--sigma-init", ta.sigma_init, "Initial weight sigma (ssd; overrides the preset)")
        ->check(CLI::PositiveNumber);
    c->add_option("--keep-init", ta.keep_init, "Initial filter keep probability (ssd; overrides the preset)")
        ->check(CLI::Range(0.0, 1.0));
  };
  auto* train_cmd = app.add_subcommand("train", "Train a MeshNet on a dataset's train split");
  add_train_opts(train_cmd);
  train_cmd->add_option("--method", ta.method)->required()->check(CLI::IsMember({"map", "bd", "ssd"}));
  train_cmd->add_option("--keep-prob", ta.keep_prob, "Bernoulli dropout keep probability (bd)")->capture_default_str();

  auto* sweep_cmd = app.add_subcommand("bd-sweep", "Train Bernoulli dropout models over keep probabilities");
  add_train_opts(sweep_cmd);
  sweep_cmd->add_option("--keep-probs", ta.sweep, "Keep probabilities to try")->capture_default_str();

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Predict labels, probabilities and entropy for one volume");
  predict->add_option("--ckpt", pa.ckpt)->required()->check(CLI::ExistingFile);
  predict->add_option("--in", pa.in, "Intensity SVOL")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", pa.out)->required();
  predict->add_option("--n-mc", pa.n_mc)->check(CLI::PositiveNumber)->capture_default_str();

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Dice, error ROC and QC ROC over a dataset split");
  evaluate->add_option("--ckpt", ea.ckpts, "Checkpoint(s) to evaluate")->check(CLI::ExistingFile);
  evaluate->add_option("--compare", ea.compare, "Further checkpoints; enables bootstrap QC AUC comparison")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--data", ea.data)->required();
  evaluate->add_option("--split", ea.split)
      ->check(CLI::IsMember({"train", "val", "test", "out-of-site", "all"}))
      ->capture_default_str();
  evaluate->add_option("--out", ea.out)->required();
  evaluate->add_option("--n-mc", ea.n_mc)->check(CLI::PositiveNumber)->capture_default_str();
  evaluate->add_option("--n-boot", ea.n_boot)->check(CLI::PositiveNumber)->capture_default_str();
  evaluate->add_option("--boot-sample", ea.boot_sample, "Volumes per bootstrap replicate (0 = all)")
      ->capture_default_str();
  evaluate->add_flag("--oracle", ea.oracle, "Also score a predictor that returns the reference labels");

  InspectArgs ia;
  auto* inspect = app.add_subcommand("inspect", "Print parameter census and receptive field as JSON");
  inspect->add_option("--ckpt", ia.ckpt, "Checkpoint to inspect")->check(CLI::ExistingFile);
  inspect->add_option("--classes", ia.classes)->capture_default_str();
  inspect->add_option("--filters", ia.filters)->capture_default_str();
  inspect->add_option("--method", ia.method)->check(CLI::IsMember({"map", "bd", "ssd"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(sa, g, out);
    if (train_cmd->parsed()) return cmd_train(ta, g, out);
    if (sweep_cmd->parsed()) return cmd_sweep(ta, g, out);
    if (predict->parsed())
      return g.precision == "double" ? predict_typed<double>(pa, g, out) : predict_typed<float>(pa, g, out);
    if (evaluate->parsed()) return cmd_evaluate(ea, g, out);
    if (inspect->parsed()) return cmd_inspect(ia, g, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace bvxl
