#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

namespace bvxl {

/// Process exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

inline constexpr int kRunManifestSchemaVersion = 1;

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Entry point of the `bvxl` tool; returns an ExitCode. Normal output goes to `out`,
/// diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bvxl
