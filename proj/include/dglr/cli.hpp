// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dglr {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

/// Entry point behind the `dglr` executable. `args` excludes the program
/// name. Never throws; every failure maps to an exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct ManifestCheck {
  bool ok = true;
  std::vector<std::string> problems;
};

/// Recomputes every artifact checksum listed in a manifest.json. Artifact
/// paths are relative to the manifest's directory.
ManifestCheck verify_manifest(const std::filesystem::path& manifest_path);

}  // namespace dglr
