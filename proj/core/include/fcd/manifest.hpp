#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fcd/annotation.hpp"

namespace fcd {

enum class SubjectRole { labeled, unlabeled, control };

std::string_view to_string(SubjectRole role);
SubjectRole parse_role(std::string_view text);

struct ManifestEntry {
  std::string id;
  SubjectRole role = SubjectRole::labeled;
  std::optional<Localization> localization;  // labeled subjects only
  std::filesystem::path volume;               // relative to the manifest directory
  std::optional<std::filesystem::path> annotation;
  std::string checksum;                       // generator/volume fingerprint, hex
};

/// Subject list shared by the synth, preprocess and evaluation stages.
/// Stored as JSON next to the files it references.
struct Manifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> subjects;
  std::filesystem::path root;  // directory holding the manifest; not serialized

  [[nodiscard]] std::filesystem::path resolve(const std::filesystem::path& relative) const { return root / relative; }
  [[nodiscard]] std::vector<const ManifestEntry*> with_role(SubjectRole role) const;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
/// Fingerprint of the serialized manifest.
std::uint64_t manifest_checksum(const Manifest& manifest);

}  // namespace fcd
