#include "fcd/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <memory>

#include "fcd/checksum.hpp"
#include "fcd/error.hpp"

namespace fcd {

namespace {

constexpr int kHeaderSize = 348;
constexpr int kVoxOffset = 352;

enum NiftiType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
  kInt64 = 1024,
  kUInt64 = 1280,
};

struct GzCloser {
  void operator()(gzFile_s* f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

bool ends_with_gz(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".gz" || ext == ".GZ";
}

/// gzread handles both compressed and plain files transparently.
std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw InputError("missing file: " + path.string());
  }
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw InputError("cannot open: " + path.string());
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f.get(), buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) throw InputError("corrupt or unreadable file: " + path.string());
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  return out;
}

void write_all(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (ends_with_gz(path)) {
    // gzopen writes a fixed header (mtime 0), so output is reproducible.
    GzHandle f(gzopen(path.string().c_str(), "wb6"));
    if (!f) throw Error("cannot write: " + path.string());
    if (gzwrite(f.get(), bytes.data(), static_cast<unsigned>(bytes.size())) != static_cast<int>(bytes.size())) {
      throw Error("write failed: " + path.string());
    }
    if (gzclose(f.release()) != Z_OK) throw Error("write failed: " + path.string());
    return;
  }
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!f) throw Error("cannot write: " + path.string());
  if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
    throw Error("write failed: " + path.string());
  }
}

class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    T value;
    std::memcpy(&value, bytes_.data() + offset, sizeof(T));
    if (swap_) value = byteswap(value);
    return value;
  }

  template <typename T>
  static T byteswap(T value) {
    std::array<unsigned char, sizeof(T)> raw;
    std::memcpy(raw.data(), &value, sizeof(T));
    std::reverse(raw.begin(), raw.end());
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

 private:
  const std::vector<unsigned char>& bytes_;
  bool swap_;
};

template <typename T>
double read_scalar(const unsigned char* p, bool swap) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if (swap) value = HeaderReader::byteswap(value);
  return static_cast<double>(value);
}

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case kUInt8:
    case kInt8:
      return 1;
    case kInt16:
    case kUInt16:
      return 2;
    case kInt32:
    case kUInt32:
    case kFloat32:
      return 4;
    case kFloat64:
    case kInt64:
    case kUInt64:
      return 8;
    default:
      throw InputError("unsupported NIfTI datatype " + std::to_string(datatype));
  }
}

double decode(std::int16_t datatype, const unsigned char* p, bool swap) {
  switch (datatype) {
    case kUInt8: return read_scalar<std::uint8_t>(p, swap);
    case kInt8: return read_scalar<std::int8_t>(p, swap);
    case kInt16: return read_scalar<std::int16_t>(p, swap);
    case kUInt16: return read_scalar<std::uint16_t>(p, swap);
    case kInt32: return read_scalar<std::int32_t>(p, swap);
    case kUInt32: return read_scalar<std::uint32_t>(p, swap);
    case kFloat32: return read_scalar<float>(p, swap);
    case kFloat64: return read_scalar<double>(p, swap);
    case kInt64: return read_scalar<std::int64_t>(p, swap);
    case kUInt64: return read_scalar<std::uint64_t>(p, swap);
    default: throw InputError("unsupported NIfTI datatype");
  }
}

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Direction matrix (world row, voxel column) from sform, qform or pixdim.
Mat3 orientation(const HeaderReader& h, const std::array<double, 3>& pixdim) {
  Mat3 m{};
  const auto sform_code = h.get<std::int16_t>(254);
  const auto qform_code = h.get<std::int16_t>(252);
  if (sform_code > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m[r][c] = h.get<float>(280 + 16 * r + 4 * c);
    return m;
  }
  if (qform_code > 0) {
    const double b = h.get<float>(256);
    const double c = h.get<float>(260);
    const double d = h.get<float>(264);
    const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    double qfac = h.get<float>(76);
    qfac = qfac < 0 ? -1.0 : 1.0;
    const Mat3 rot{{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
                    {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
                    {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b}}};
    for (int r = 0; r < 3; ++r) {
      for (int col = 0; col < 3; ++col) {
        const double scale = pixdim[col] * (col == 2 ? qfac : 1.0);
        m[r][col] = rot[r][col] * scale;
      }
    }
    return m;
  }
  for (int i = 0; i < 3; ++i) m[i][i] = pixdim[i];
  return m;
}

void put_bytes(std::vector<unsigned char>& buf, std::size_t offset, const void* src, std::size_t n) {
  std::memcpy(buf.data() + offset, src, n);
}

template <typename T>
void put(std::vector<unsigned char>& buf, std::size_t offset, T value) {
  put_bytes(buf, offset, &value, sizeof(T));
}

std::vector<unsigned char> make_header(Dims dims, Spacing spacing, std::int16_t datatype, std::int16_t bitpix) {
  std::vector<unsigned char> buf(kVoxOffset, 0);
  put<std::int32_t>(buf, 0, kHeaderSize);
  put<char>(buf, 38, 'r');
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(dims.width),
                                        static_cast<std::int16_t>(dims.height),
                                        static_cast<std::int16_t>(dims.depth), 1, 1, 1, 1};
  put_bytes(buf, 40, dim.data(), sizeof(dim));
  put<std::int16_t>(buf, 70, datatype);
  put<std::int16_t>(buf, 72, bitpix);
  const std::array<float, 8> pixdim{1.0f, static_cast<float>(spacing.x), static_cast<float>(spacing.y),
                                    static_cast<float>(spacing.z), 0.0f, 0.0f, 0.0f, 0.0f};
  put_bytes(buf, 76, pixdim.data(), sizeof(pixdim));
  put<float>(buf, 108, static_cast<float>(kVoxOffset));
  put<float>(buf, 112, 1.0f);  // scl_slope
  put<float>(buf, 116, 0.0f);
  put<char>(buf, 123, 2);  // mm
  const char descrip[] = "fcd_detect";
  put_bytes(buf, 148, descrip, sizeof(descrip));
  put<std::int16_t>(buf, 252, 1);  // qform: identity quaternion
  put<std::int16_t>(buf, 254, 1);  // sform
  const std::array<double, 3> sp{spacing.x, spacing.y, spacing.z};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      put<float>(buf, 280 + 16 * r + 4 * c, c == r ? static_cast<float>(sp[r]) : 0.0f);
    }
  }
  put_bytes(buf, 344, "n+1", 4);
  return buf;
}

void check_dims(Dims dims) {
  if (dims.width < 1 || dims.height < 1 || dims.depth < 1) {
    throw InputError("volume dims must be positive");
  }
}

}  // namespace

Volume::Volume(Dims dims, Spacing spacing, std::string subject_id)
    : dims_(dims), spacing_(spacing), subject_id_(std::move(subject_id)) {
  check_dims(dims);
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) throw InputError("voxel spacing must be positive");
  data_.assign(dims.voxel_count(), 0.0f);
}

Volume::Volume(Dims dims, Spacing spacing, std::vector<float> data, std::string subject_id)
    : dims_(dims), spacing_(spacing), data_(std::move(data)), subject_id_(std::move(subject_id)) {
  check_dims(dims);
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) throw InputError("voxel spacing must be positive");
  if (data_.size() != dims.voxel_count()) throw InputError("volume data size does not match dims");
  if (!std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); })) {
    throw InputError("volume contains non-finite intensities");
  }
}

std::uint64_t Volume::checksum() const {
  Checksum h;
  h.update_value(dims_.width).update_value(dims_.height).update_value(dims_.depth);
  h.update_value(spacing_.x).update_value(spacing_.y).update_value(spacing_.z);
  h.update(std::span<const float>(data_));
  return h.digest();
}

std::size_t VoxelMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Volume load_volume(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < kHeaderSize) throw InputError("unreadable header: " + path.string());

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != kHeaderSize) {
    if (HeaderReader::byteswap(sizeof_hdr) != kHeaderSize) throw InputError("unreadable header: " + path.string());
    swap = true;
  }
  const HeaderReader h(bytes, swap);
  if (std::memcmp(bytes.data() + 344, "n+1", 4) != 0 && std::memcmp(bytes.data() + 344, "ni1", 4) != 0) {
    throw InputError("not a NIfTI-1 file: " + path.string());
  }
  if (std::memcmp(bytes.data() + 344, "ni1", 4) == 0) {
    throw InputError("two-file NIfTI (.hdr/.img) is not supported: " + path.string());
  }

  const auto ndim = h.get<std::int16_t>(40);
  if (ndim < 3 || ndim > 7) throw InputError("non-3D volume: " + path.string());
  std::array<int, 3> n{};
  for (int i = 0; i < 3; ++i) n[i] = h.get<std::int16_t>(42 + 2 * i);
  for (int i = 3; i < ndim; ++i) {
    if (h.get<std::int16_t>(42 + 2 * i) > 1) throw InputError("non-3D volume: " + path.string());
  }
  if (n[0] < 1 || n[1] < 1 || n[2] < 1) throw InputError("unreadable header: bad dims in " + path.string());

  const auto datatype = h.get<std::int16_t>(70);
  const int bpv = bytes_per_voxel(datatype);
  const auto vox_offset = static_cast<std::size_t>(h.get<float>(108));
  const std::size_t count = static_cast<std::size_t>(n[0]) * n[1] * n[2];
  if (vox_offset < kHeaderSize || bytes.size() < vox_offset + count * bpv) {
    throw InputError("truncated image data: " + path.string());
  }

  std::array<double, 3> pixdim{};
  for (int i = 0; i < 3; ++i) {
    pixdim[i] = std::abs(h.get<float>(80 + 4 * i));
    if (!(pixdim[i] > 0)) pixdim[i] = 1.0;
  }
  double slope = h.get<float>(112);
  double inter = h.get<float>(116);
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }

  // Map each on-disk axis onto its dominant world axis.
  const Mat3 m = orientation(h, pixdim);
  std::array<int, 3> target{};
  std::array<bool, 3> flip{};
  std::array<double, 3> spacing{};
  std::array<bool, 3> used{};
  for (int col = 0; col < 3; ++col) {
    int best = 0;
    for (int r = 1; r < 3; ++r) {
      if (std::abs(m[r][col]) > std::abs(m[best][col])) best = r;
    }
    if (used[best]) throw InputError("degenerate orientation in header: " + path.string());
    used[best] = true;
    target[col] = best;
    flip[col] = m[best][col] < 0;
    spacing[best] = std::sqrt(m[0][col] * m[0][col] + m[1][col] * m[1][col] + m[2][col] * m[2][col]);
    if (!(spacing[best] > 0)) spacing[best] = 1.0;
  }

  std::array<int, 3> out_n{};
  for (int col = 0; col < 3; ++col) out_n[target[col]] = n[col];
  const Dims dims{out_n[0], out_n[1], out_n[2]};

  std::vector<float> data(count);
  const unsigned char* src = bytes.data() + vox_offset;
  std::array<int, 3> idx{};
  std::array<int, 3> out{};
  for (idx[2] = 0; idx[2] < n[2]; ++idx[2]) {
    for (idx[1] = 0; idx[1] < n[1]; ++idx[1]) {
      for (idx[0] = 0; idx[0] < n[0]; ++idx[0]) {
        for (int col = 0; col < 3; ++col) {
          out[target[col]] = flip[col] ? n[col] - 1 - idx[col] : idx[col];
        }
        const double raw = decode(datatype, src, swap);
        src += bpv;
        const double value = raw * slope + inter;
        if (!std::isfinite(value)) throw InputError("non-finite intensity in " + path.string());
        data[dims.index(out[0], out[1], out[2])] = static_cast<float>(value);
      }
    }
  }
  return Volume(dims, Spacing{spacing[0], spacing[1], spacing[2]}, std::move(data),
                path.filename().string());
}

void save_volume(const Volume& volume, const std::filesystem::path& path) {
  auto buf = make_header(volume.dims(), volume.spacing(), kFloat32, 32);
  const auto data = volume.data();
  const std::size_t offset = buf.size();
  buf.resize(offset + data.size_bytes());
  std::memcpy(buf.data() + offset, data.data(), data.size_bytes());
  write_all(path, buf);
}

void save_mask(const VoxelMask& mask, const Spacing& spacing, const std::filesystem::path& path) {
  auto buf = make_header(mask.dims(), spacing, kUInt8, 8);
  const auto bits = mask.bits();
  buf.insert(buf.end(), bits.begin(), bits.end());
  write_all(path, buf);
}

BrainMask compute_brain_mask(const Volume& volume) {
  BrainMask mask(volume.dims());
  const auto data = volume.data();
  bool any = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i] > 0.0f) {
      mask.set_linear(i);
      any = true;
    }
  }
  if (!any) throw DataError("empty brain: " + volume.subject_id());
  return mask;
}

int mirror_x(int x, int width) {
  if (width < 1 || x < 0 || x >= width) {
    throw std::out_of_range("mirror_x: index " + std::to_string(x) + " outside [0," + std::to_string(width) + ")");
  }
  return width - 1 - x;
}

Volume mirror_volume(const Volume& volume) {
  const Dims d = volume.dims();
  std::vector<float> out(d.voxel_count());
  for (int z = 0; z < d.depth; ++z)
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x) out[d.index(d.width - 1 - x, y, z)] = volume.at(x, y, z);
  return Volume(d, volume.spacing(), std::move(out), volume.subject_id());
}

}  // namespace fcd
