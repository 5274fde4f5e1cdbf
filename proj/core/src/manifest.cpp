#include "fcd/manifest.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "fcd/checksum.hpp"
#include "fcd/error.hpp"

namespace fcd {

std::string_view to_string(SubjectRole role) {
  switch (role) {
    case SubjectRole::labeled: return "labeled";
    case SubjectRole::unlabeled: return "unlabeled";
    case SubjectRole::control: return "control";
  }
  return "?";
}

SubjectRole parse_role(std::string_view text) {
  if (text == "labeled") return SubjectRole::labeled;
  if (text == "unlabeled") return SubjectRole::unlabeled;
  if (text == "control") return SubjectRole::control;
  throw InputError("unknown subject role '" + std::string(text) + "'");
}

std::vector<const ManifestEntry*> Manifest::with_role(SubjectRole role) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& s : subjects) {
    if (s.role == role) out.push_back(&s);
  }
  return out;
}

namespace {

nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["format"] = "fcd-cohort-manifest";
  j["version"] = 1;
  j["seed"] = m.seed;
  auto& subjects = j["subjects"] = nlohmann::json::array();
  for (const auto& s : m.subjects) {
    nlohmann::json e;
    e["id"] = s.id;
    e["role"] = std::string(to_string(s.role));
    e["localization"] = s.localization ? nlohmann::json(std::string(to_string(*s.localization))) : nlohmann::json();
    e["volume"] = s.volume.generic_string();
    e["annotation"] = s.annotation ? nlohmann::json(s.annotation->generic_string()) : nlohmann::json();
    e["checksum"] = s.checksum;
    subjects.push_back(std::move(e));
  }
  return j;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  try {
    const auto j = nlohmann::json::parse(in);
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& e : j.at("subjects")) {
      ManifestEntry s;
      s.id = e.at("id").get<std::string>();
      s.role = parse_role(e.at("role").get<std::string>());
      if (e.contains("localization") && !e["localization"].is_null()) {
        s.localization = parse_localization(e["localization"].get<std::string>());
      }
      s.volume = e.at("volume").get<std::string>();
      if (e.contains("annotation") && !e["annotation"].is_null()) s.annotation = e["annotation"].get<std::string>();
      s.checksum = e.value("checksum", std::string{});
      if (s.role == SubjectRole::labeled && (!s.localization || !s.annotation)) {
        throw InputError("labeled subject " + s.id + " needs localization and annotation");
      }
      m.subjects.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << to_json(manifest).dump(2) << '\n';
}

std::uint64_t manifest_checksum(const Manifest& manifest) {
  Checksum h;
  h.update(to_json(manifest).dump());
  return h.digest();
}

}  // namespace fcd
