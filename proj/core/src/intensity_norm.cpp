#include "fcd/intensity_norm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "fcd/error.hpp"

namespace fcd {

namespace {

bool strictly_increasing(std::span<const double> v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return true;
}

void require_distinct(std::span<const double> sorted, const std::string& who) {
  if (sorted.size() < 2 || sorted.front() == sorted.back()) {
    throw DataError("constant intensity: " + who);
  }
}

}  // namespace

void HistogramStandard::validate() const {
  if (landmark_percentiles.empty() || landmark_percentiles.size() != standard_scale.size()) {
    throw InputError("histogram standard needs >= 1 landmark and equal-length lists");
  }
  if (!strictly_increasing(landmark_percentiles) || landmark_percentiles.front() <= 0.0 ||
      landmark_percentiles.back() >= 100.0) {
    throw InputError("landmark percentiles must be strictly increasing inside (0, 100)");
  }
  if (!strictly_increasing(standard_scale)) {
    throw InputError("standard scale must be strictly increasing");
  }
}

std::vector<double> default_landmark_percentiles() {
  std::vector<double> p{1.0};
  for (int i = 10; i <= 90; i += 10) p.push_back(i);
  p.push_back(99.0);
  return p;
}

double percentile_sorted(std::span<const double> sorted, double percent) {
  if (sorted.empty()) throw InputError("percentile of empty set");
  const double rank = percent / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> sorted_brain_intensities(const Volume& volume, const BrainMask& mask) {
  if (!(volume.dims() == mask.dims())) throw InputError("mask dims differ from volume dims");
  std::vector<double> values;
  const auto data = volume.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (mask.test(i)) values.push_back(data[i]);
  }
  std::sort(values.begin(), values.end());
  return values;
}

std::vector<double> brain_landmarks(const Volume& volume, const BrainMask& mask, std::span<const double> percentiles) {
  const auto sorted = sorted_brain_intensities(volume, mask);
  require_distinct(sorted, volume.subject_id());
  std::vector<double> out;
  out.reserve(percentiles.size());
  for (double p : percentiles) out.push_back(percentile_sorted(sorted, p));
  return out;
}

HistogramStandard fit_histogram_standard(std::span<const MaskedVolume> volumes, std::span<const double> percentiles) {
  if (volumes.empty()) throw InputError("histogram standard: empty training set");
  HistogramStandard h;
  h.landmark_percentiles = percentiles.empty() ? default_landmark_percentiles()
                                               : std::vector<double>(percentiles.begin(), percentiles.end());
  h.standard_scale.assign(h.landmark_percentiles.size(), 0.0);
  for (const auto& mv : volumes) {
    const auto landmarks = brain_landmarks(*mv.volume, *mv.mask, h.landmark_percentiles);
    for (std::size_t i = 0; i < landmarks.size(); ++i) h.standard_scale[i] += landmarks[i];
  }
  for (double& s : h.standard_scale) s /= static_cast<double>(volumes.size());
  if (!strictly_increasing(h.standard_scale)) {
    throw DataError("fitted histogram standard is not strictly increasing; training volumes are degenerate");
  }
  h.validate();
  return h;
}

double map_intensity(double x, std::span<const double> source, std::span<const double> target) {
  if (source.size() == 1) return x - source[0] + target[0];
  // Non-degenerate segments only; ties in `source` collapse to a step.
  std::size_t first = source.size();
  std::size_t last = 0;
  for (std::size_t i = 0; i + 1 < source.size(); ++i) {
    if (source[i + 1] > source[i]) {
      if (first == source.size()) first = i;
      last = i;
    }
  }
  if (first == source.size()) throw DataError("landmarks are constant; cannot map intensities");

  auto segment = [&](std::size_t i) {
    const double t = (x - source[i]) / (source[i + 1] - source[i]);
    return target[i] + t * (target[i + 1] - target[i]);
  };
  if (x <= source[first]) return segment(first);
  if (x >= source[last + 1]) return segment(last);
  // first i with source[i] < x <= source[i+1]
  for (std::size_t i = first; i <= last; ++i) {
    if (source[i + 1] > source[i] && x <= source[i + 1]) return segment(i);
  }
  return segment(last);
}

Volume apply_histogram_standard(const Volume& volume, const BrainMask& mask, const HistogramStandard& standard) {
  standard.validate();
  const auto landmarks = brain_landmarks(volume, mask, standard.landmark_percentiles);
  std::vector<float> out(volume.data().size(), 0.0f);
  const auto data = volume.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (mask.test(i)) out[i] = static_cast<float>(map_intensity(data[i], landmarks, standard.standard_scale));
  }
  return Volume(volume.dims(), volume.spacing(), std::move(out), volume.subject_id());
}

Volume z_normalize(const Volume& volume, const BrainMask& mask) {
  if (!(volume.dims() == mask.dims())) throw InputError("mask dims differ from volume dims");
  const auto data = volume.data();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (mask.test(i)) {
      sum += data[i];
      ++n;
    }
  }
  if (n == 0) throw DataError("empty brain: " + volume.subject_id());
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (mask.test(i)) sq += (data[i] - mean) * (data[i] - mean);
  }
  const double sd = std::sqrt(sq / static_cast<double>(n));
  if (!(sd > 0.0)) throw DataError("constant intensity: " + volume.subject_id());

  std::vector<float> out(data.size(), 0.0f);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (mask.test(i)) out[i] = static_cast<float>((data[i] - mean) / sd);
  }
  return Volume(volume.dims(), volume.spacing(), std::move(out), volume.subject_id());
}

void save_histogram_standard(const HistogramStandard& standard, const std::filesystem::path& path) {
  standard.validate();
  nlohmann::json j;
  j["format"] = "fcd-histogram-standard";
  j["version"] = 1;
  j["landmark_percentiles"] = standard.landmark_percentiles;
  j["standard_scale"] = standard.standard_scale;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

HistogramStandard load_histogram_standard(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  HistogramStandard h;
  try {
    const auto j = nlohmann::json::parse(in);
    h.landmark_percentiles = j.at("landmark_percentiles").get<std::vector<double>>();
    h.standard_scale = j.at("standard_scale").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed histogram standard " + path.string() + ": " + e.what());
  }
  h.validate();
  return h;
}

}  // namespace fcd
