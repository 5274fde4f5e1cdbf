#include "fcd/annotation.hpp"

#include <algorithm>
#include <cassert>
#include <fstream>
#include <nlohmann/json.hpp>

#include "fcd/error.hpp"

namespace fcd {

std::string_view to_string(View view) {
  switch (view) {
    case View::axial: return "axial";
    case View::coronal: return "coronal";
    case View::sagittal: return "sagittal";
  }
  return "?";
}

std::string_view to_string(Localization loc) {
  return loc == Localization::temporal ? "temporal" : "non_temporal";
}

std::string_view to_string(MaskKind kind) {
  return kind == MaskKind::ellipsoid ? "ellipsoid" : "rectangular";
}

View parse_view(std::string_view text) {
  if (text == "axial") return View::axial;
  if (text == "coronal") return View::coronal;
  if (text == "sagittal") return View::sagittal;
  throw InputError("unknown view '" + std::string(text) + "'");
}

Localization parse_localization(std::string_view text) {
  if (text == "temporal") return Localization::temporal;
  if (text == "non_temporal") return Localization::non_temporal;
  throw InputError("unknown localization '" + std::string(text) + "'");
}

MaskKind parse_mask_kind(std::string_view text) {
  if (text == "ellipsoid") return MaskKind::ellipsoid;
  if (text == "rectangular") return MaskKind::rectangular;
  throw InputError("unknown mask kind '" + std::string(text) + "'");
}

Interval intersect(Interval a, Interval b) { return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)}; }

bool Parallelepiped::within(const Dims& dims) const {
  return !x_range.empty() && !y_range.empty() && !z_range.empty() && x_range.lo >= 0 && y_range.lo >= 0 &&
         z_range.lo >= 0 && x_range.hi < dims.width && y_range.hi < dims.height && z_range.hi < dims.depth;
}

Parallelepiped intersect_boxes(const Annotation& annotation) {
  const auto& axial = annotation.box(View::axial);
  const auto& coronal = annotation.box(View::coronal);
  const auto& sagittal = annotation.box(View::sagittal);
  for (const auto& b : annotation.boxes) {
    if (b.a_range.empty() || b.b_range.empty()) {
      throw InputError("inconsistent annotation: empty " + std::string(to_string(b.view)) + " box for " +
                       annotation.subject_id);
    }
  }
  Parallelepiped p{intersect(axial.a_range, coronal.a_range), intersect(axial.b_range, sagittal.a_range),
                   intersect(coronal.b_range, sagittal.b_range)};
  if (p.x_range.empty() || p.y_range.empty() || p.z_range.empty()) {
    throw InputError("inconsistent annotation: boxes do not intersect for " + annotation.subject_id);
  }
  return p;
}

namespace {

void require_within(const Parallelepiped& box, const Dims& dims) {
  if (!box.within(dims)) throw InputError("parallelepiped outside volume bounds");
}

}  // namespace

LesionMask inscribe_ellipsoid(const Parallelepiped& box, const Dims& dims) {
  require_within(box, dims);
  const std::array<Interval, 3> r{box.x_range, box.y_range, box.z_range};
  std::array<double, 3> c{};
  std::array<double, 3> a{};
  for (int d = 0; d < 3; ++d) {
    c[d] = 0.5 * (r[d].lo + r[d].hi);
    a[d] = std::max(0.5 * (r[d].hi - r[d].lo + 1), 0.5);
  }
  LesionMask out{VoxelMask(dims), MaskKind::ellipsoid};
  for (int z = r[2].lo; z <= r[2].hi; ++z) {
    const double dz = (z - c[2]) / a[2];
    for (int y = r[1].lo; y <= r[1].hi; ++y) {
      const double dy = (y - c[1]) / a[1];
      for (int x = r[0].lo; x <= r[0].hi; ++x) {
        const double dx = (x - c[0]) / a[0];
        if (dx * dx + dy * dy + dz * dz <= 1.0) out.mask.set(x, y, z);
      }
    }
  }
  // the interval midpoint (or the voxel next to it) always satisfies the test
  assert(out.mask.count() > 0);
  return out;
}

LesionMask rectangular_mask(const Parallelepiped& box, const Dims& dims) {
  require_within(box, dims);
  LesionMask out{VoxelMask(dims), MaskKind::rectangular};
  for (int z = box.z_range.lo; z <= box.z_range.hi; ++z)
    for (int y = box.y_range.lo; y <= box.y_range.hi; ++y)
      for (int x = box.x_range.lo; x <= box.x_range.hi; ++x) out.mask.set(x, y, z);
  return out;
}

LesionMask lesion_mask(const Annotation& annotation, const Dims& dims, MaskKind kind) {
  validate_annotation(annotation, dims);
  const auto box = intersect_boxes(annotation);
  return kind == MaskKind::ellipsoid ? inscribe_ellipsoid(box, dims) : rectangular_mask(box, dims);
}

void validate_annotation(const Annotation& annotation, const Dims& dims) {
  const std::array<std::array<int, 2>, 3> limits{{{dims.width, dims.height},
                                                  {dims.width, dims.depth},
                                                  {dims.height, dims.depth}}};
  for (int v = 0; v < 3; ++v) {
    const auto& b = annotation.boxes[v];
    const Interval ranges[2] = {b.a_range, b.b_range};
    for (int k = 0; k < 2; ++k) {
      if (ranges[k].empty() || ranges[k].lo < 0 || ranges[k].hi >= limits[v][k]) {
        throw InputError("annotation box out of range: " + std::string(to_string(b.view)) + " view of " +
                         annotation.subject_id);
      }
    }
  }
}

namespace {

Interval interval_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() != 2) throw InputError("interval must be [lo, hi]");
  return {v[0], v[1]};
}

nlohmann::json interval_to(Interval i) { return nlohmann::json::array({i.lo, i.hi}); }

}  // namespace

Annotation load_annotation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read annotation " + path.string());
  Annotation a;
  try {
    const auto j = nlohmann::json::parse(in);
    a.subject_id = j.at("subject_id").get<std::string>();
    a.localization = parse_localization(j.at("localization").get<std::string>());
    const auto& boxes = j.at("boxes");
    a.box(View::axial) = {View::axial, interval_from(boxes.at("axial").at("x")),
                          interval_from(boxes.at("axial").at("y"))};
    a.box(View::coronal) = {View::coronal, interval_from(boxes.at("coronal").at("x")),
                            interval_from(boxes.at("coronal").at("z"))};
    a.box(View::sagittal) = {View::sagittal, interval_from(boxes.at("sagittal").at("y")),
                             interval_from(boxes.at("sagittal").at("z"))};
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed annotation " + path.string() + ": " + e.what());
  }
  for (const auto& b : a.boxes) {
    if (b.a_range.empty() || b.b_range.empty()) throw InputError("annotation interval with lo > hi in " + path.string());
  }
  return a;
}

void save_annotation(const Annotation& a, const std::filesystem::path& path) {
  nlohmann::json j;
  j["subject_id"] = a.subject_id;
  j["localization"] = std::string(to_string(a.localization));
  j["boxes"]["axial"] = {{"x", interval_to(a.box(View::axial).a_range)},
                         {"y", interval_to(a.box(View::axial).b_range)}};
  j["boxes"]["coronal"] = {{"x", interval_to(a.box(View::coronal).a_range)},
                           {"z", interval_to(a.box(View::coronal).b_range)}};
  j["boxes"]["sagittal"] = {{"y", interval_to(a.box(View::sagittal).a_range)},
                            {"z", interval_to(a.box(View::sagittal).b_range)}};
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace fcd
