#include "bvxl/svol.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bvxl {

static_assert(std::endian::native == std::endian::little, "SVOL I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'S', 'V', 'O', 'L', '1'};

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::filesystem::path& path) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw DataError("SVOL " + path.string() + ": truncated header");
  return v;
}

}  // namespace

void write_svol(const std::filesystem::path& path, const SvolFile& file) {
  const std::size_t n = file.dims.voxels() * (file.kind == SvolKind::probability ? file.classes : 1);
  const bool ints = file.dtype() == SvolDtype::i32;
  if ((ints ? file.i32.size() : file.f32.size()) != n)
    throw ShapeError("SVOL " + path.string() + ": payload size does not match " + file.dims.str());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os.write(kMagic, 5);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(file.dims.d));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(file.dims.h));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(file.dims.w));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(file.dtype()));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(file.kind));
  if (file.kind == SvolKind::probability) put<std::uint32_t>(os, file.classes);
  std::string meta;
  for (const auto& [k, v] : file.meta) {
    if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos || v.find('\n') != std::string::npos)
      throw DataError("SVOL meta entries may not contain '=' in keys or newlines");
    meta += k + "=" + v + "\n";
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (ints)
    os.write(reinterpret_cast<const char*>(file.i32.data()), static_cast<std::streamsize>(n * 4));
  else
    os.write(reinterpret_cast<const char*>(file.f32.data()), static_cast<std::streamsize>(n * 4));
  if (!os) throw DataError("error while writing " + path.string());
}

SvolFile read_svol(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0) throw DataError("SVOL " + path.string() + ": bad magic");
  SvolFile f;
  f.dims.d = get<std::uint32_t>(is, path);
  f.dims.h = get<std::uint32_t>(is, path);
  f.dims.w = get<std::uint32_t>(is, path);
  const auto dtype = get<std::uint8_t>(is, path);
  const auto kind = get<std::uint8_t>(is, path);
  if (kind > 2) throw DataError("SVOL " + path.string() + ": unknown payload kind");
  f.kind = static_cast<SvolKind>(kind);
  if (dtype != static_cast<std::uint8_t>(f.dtype()))
    throw DataError("SVOL " + path.string() + ": dtype does not match payload kind");
  if (f.kind == SvolKind::probability) f.classes = get<std::uint32_t>(is, path);
  const auto meta_len = get<std::uint32_t>(is, path);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), meta_len);
  if (!is) throw DataError("SVOL " + path.string() + ": truncated meta block");
  std::stringstream ss(meta);
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("SVOL " + path.string() + ": malformed meta line");
    f.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const std::size_t n = f.dims.voxels() * f.classes;
  if (f.dtype() == SvolDtype::i32) {
    f.i32.resize(n);
    is.read(reinterpret_cast<char*>(f.i32.data()), static_cast<std::streamsize>(n * 4));
  } else {
    f.f32.resize(n);
    is.read(reinterpret_cast<char*>(f.f32.data()), static_cast<std::streamsize>(n * 4));
  }
  if (!is) throw DataError("SVOL " + path.string() + ": truncated payload");
  return f;
}

void save_volume(const std::filesystem::path& path, const Volume& v) {
  SvolFile f;
  f.dims = v.dims;
  f.kind = SvolKind::intensity;
  f.meta = v.meta;
  f.f32 = v.data;
  write_svol(path, f);
}

Volume load_volume(const std::filesystem::path& path) {
  SvolFile f = read_svol(path);
  if (f.kind != SvolKind::intensity) throw DataError(path.string() + " is not an intensity volume");
  return Volume{f.dims, std::move(f.f32), std::move(f.meta)};
}

void save_labels(const std::filesystem::path& path, const Dims& dims, const std::vector<std::int32_t>& labels,
                 const Meta& meta) {
  SvolFile f;
  f.dims = dims;
  f.kind = SvolKind::labels;
  f.meta = meta;
  f.i32 = labels;
  write_svol(path, f);
}

std::vector<std::int32_t> load_labels(const std::filesystem::path& path, Dims* dims) {
  SvolFile f = read_svol(path);
  if (f.kind != SvolKind::labels) throw DataError(path.string() + " is not a label volume");
  if (dims) *dims = f.dims;
  return std::move(f.i32);
}

void save_probabilities(const std::filesystem::path& path, const Dims& dims, std::uint32_t classes,
                        const std::vector<float>& probs, const Meta& meta) {
  SvolFile f;
  f.dims = dims;
  f.kind = SvolKind::probability;
  f.classes = classes;
  f.meta = meta;
  f.f32 = probs;
  write_svol(path, f);
}

}  // namespace bvxl
