#include "bvxl/dataset.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "bvxl/rng.h"
#include "bvxl/svol.h"

namespace bvxl {

using json = nlohmann::ordered_json;

std::string split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

std::vector<DatasetEntry> DatasetManifest::in_split(Split s) const {
  std::vector<DatasetEntry> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(e);
  return out;
}

void DatasetManifest::save(const std::filesystem::path& dir) const {
  json j;
  j["schema_version"] = kManifestSchemaVersion;
  j["side"] = side;
  j["num_classes"] = num_classes;
  j["noise_sigma"] = noise_sigma;
  j["seed"] = seed;
  j["site"] = site;
  json list = json::array();
  for (const auto& e : entries)
    list.push_back({{"id", e.id},
                    {"image", e.image},
                    {"labels", e.labels},
                    {"quality", quality_name(e.quality)},
                    {"split", split_name(e.split)},
                    {"corruption", e.corruption},
                    {"severity", e.severity}});
  j["entries"] = list;
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
  os << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw DataError("no manifest.json in " + dir.string());
  DatasetManifest m;
  try {
    const json j = json::parse(is);
    if (j.at("schema_version").get<int>() != kManifestSchemaVersion)
      throw DataError("unsupported manifest schema in " + dir.string());
    m.side = j.at("side").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<int>();
    m.noise_sigma = j.at("noise_sigma").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.site = j.at("site").get<std::string>();
    for (const auto& e : j.at("entries")) {
      DatasetEntry d;
      d.id = e.at("id").get<std::string>();
      d.image = e.at("image").get<std::string>();
      d.labels = e.at("labels").get<std::string>();
      d.quality = parse_quality(e.at("quality").get<std::string>());
      d.split = parse_split(e.at("split").get<std::string>());
      d.corruption = e.at("corruption").get<std::string>();
      d.severity = e.at("severity").get<double>();
      m.entries.push_back(std::move(d));
    }
  } catch (const json::exception& ex) {
    throw DataError("malformed manifest in " + dir.string() + ": " + ex.what());
  }
  return m;
}

SplitSizes split_sizes(std::size_t n) {
  const auto tenth = static_cast<std::size_t>(std::llround(static_cast<double>(n) / 10.0));
  if (2 * tenth > n) return {n, 0, 0};
  return {n - 2 * tenth, tenth, tenth};
}

DatasetManifest generate_synth_dataset(const std::filesystem::path& dir, const SynthDatasetConfig& cfg) {
  if (cfg.count < 1) throw ConfigError("synth dataset: count must be at least 1");
  if (!(cfg.corrupt_frac >= 0 && cfg.corrupt_frac <= 1)) throw ConfigError("corrupt fraction must lie in [0, 1]");
  if (!(cfg.severity_lo > 0 && cfg.severity_hi >= cfg.severity_lo)) throw ConfigError("invalid severity range");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw DataError("cannot create dataset directory " + dir.string());

  Rng root(cfg.volume.seed);
  Rng assign = root.split(0xA55167);
  const auto n_bad = static_cast<std::size_t>(std::floor(cfg.corrupt_frac * static_cast<double>(cfg.count) + 1e-9));

  std::vector<std::size_t> perm(cfg.count);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), assign.engine());
  const SplitSizes sizes = split_sizes(cfg.count);
  std::vector<Split> split(cfg.count);
  for (std::size_t k = 0; k < cfg.count; ++k)
    split[perm[k]] = k < sizes.train ? Split::train : (k < sizes.train + sizes.val ? Split::val : Split::test);

  std::shuffle(perm.begin(), perm.end(), assign.engine());
  std::vector<bool> bad(cfg.count, false);
  for (std::size_t k = 0; k < n_bad; ++k) bad[perm[k]] = true;

  DatasetManifest m;
  m.side = cfg.volume.side;
  m.num_classes = cfg.volume.num_classes;
  m.noise_sigma = cfg.volume.noise_sigma;
  m.seed = cfg.volume.seed;
  m.site = cfg.volume.site.name;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    Rng vol_rng = root.split(i);
    SynthConfig sc = cfg.volume;
    sc.seed = vol_rng.next_u64();
    LabeledVolume v = synth_generate(sc);
    DatasetEntry e;
    char id[32];
    std::snprintf(id, sizeof id, "vol%04zu", i);
    e.id = id;
    e.split = split[i];
    if (bad[i]) {
      const auto kind = static_cast<CorruptionKind>(vol_rng.index(3));
      e.severity = vol_rng.uniform(cfg.severity_lo, cfg.severity_hi);
      v = corrupt(v, kind, e.severity, vol_rng.next_u64());
      e.corruption = corruption_name(kind);
    }
    e.quality = v.quality;
    e.image = e.id + "_image.svol";
    e.labels = e.id + "_labels.svol";
    v.volume.meta["id"] = e.id;
    save_volume(dir / e.image, v.volume);
    save_labels(dir / e.labels, v.volume.dims, v.labels, {{"id", e.id}});
    m.entries.push_back(std::move(e));
  }
  m.save(dir);
  return m;
}

LabeledVolume load_entry(const std::filesystem::path& dir, const DatasetEntry& e) {
  LabeledVolume v;
  v.volume = load_volume(dir / e.image);
  Dims ld;
  v.labels = load_labels(dir / e.labels, &ld);
  if (!(ld == v.volume.dims))
    throw DataError(e.id + ": label extents " + ld.str() + " differ from image " + v.volume.dims.str());
  v.quality = e.quality;
  return v;
}

std::vector<Subvolume> make_subvolumes(const LabeledVolume& v, std::size_t side) {
  const Volume z = zscore(v.volume);
  auto images = split_subvolumes<float>(z.data, 1, z.dims, side);
  auto labels = split_subvolumes<std::int32_t>(v.labels, 1, z.dims, side);
  std::vector<Subvolume> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out[i].input = std::move(images[i].data);
    out[i].labels = std::move(labels[i].data);
  }
  return out;
}

std::vector<Subvolume> load_split_subvolumes(const std::filesystem::path& dir, const DatasetManifest& m, Split s,
                                             std::size_t side) {
  std::vector<Subvolume> out;
  for (const auto& e : m.in_split(s)) {
    auto parts = make_subvolumes(load_entry(dir, e), side);
    std::move(parts.begin(), parts.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace bvxl
