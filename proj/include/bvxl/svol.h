#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bvxl/volume.h"

namespace bvxl {

// SVOL layout (little-endian):
//   "SVOL1" | u32 D | u32 H | u32 W | u8 dtype (0 = f32, 1 = i32)
//   | u8 kind (0 = intensity, 1 = labels, 2 = probability) [| u32 classes if probability]
//   | u32 meta length | meta bytes (UTF-8 "key=value\n" lines)
//   | payload, x-fastest; probability payloads store one D*H*W block per class.

enum class SvolDtype : std::uint8_t { f32 = 0, i32 = 1 };
enum class SvolKind : std::uint8_t { intensity = 0, labels = 1, probability = 2 };

struct SvolFile {
  Dims dims;
  SvolKind kind = SvolKind::intensity;
  std::uint32_t classes = 1;
  Meta meta;
  std::vector<float> f32;         // intensity / probability payloads
  std::vector<std::int32_t> i32;  // label payloads

  SvolDtype dtype() const { return kind == SvolKind::labels ? SvolDtype::i32 : SvolDtype::f32; }
};

void write_svol(const std::filesystem::path& path, const SvolFile& file);
SvolFile read_svol(const std::filesystem::path& path);

void save_volume(const std::filesystem::path& path, const Volume& v);
Volume load_volume(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const Dims& dims, const std::vector<std::int32_t>& labels,
                 const Meta& meta = {});
std::vector<std::int32_t> load_labels(const std::filesystem::path& path, Dims* dims = nullptr);
void save_probabilities(const std::filesystem::path& path, const Dims& dims, std::uint32_t classes,
                        const std::vector<float>& probs, const Meta& meta = {});

}  // namespace bvxl
