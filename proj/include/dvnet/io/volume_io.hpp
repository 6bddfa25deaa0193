#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/io/volume.hpp"
#include "dvnet/net/config.hpp"

namespace dvnet {

static_assert(std::endian::native == std::endian::little, "raw volume IO assumes a little-endian host");

enum class VoxelType { uint8, float32 };

inline std::string voxel_type_name(VoxelType t) { return t == VoxelType::uint8 ? "uint8" : "float32"; }
inline std::size_t voxel_bytes(VoxelType t) { return t == VoxelType::uint8 ? 1 : 4; }

template <class T>
constexpr VoxelType voxel_type_of() {
  static_assert(std::is_same_v<T, std::uint8_t> || std::is_same_v<T, float>, "volumes store uint8 or float voxels");
  return std::is_same_v<T, std::uint8_t> ? VoxelType::uint8 : VoxelType::float32;
}

/// Contents of the plain-text file that accompanies a raw voxel block.
struct VolumeHeader {
  std::array<std::int64_t, 3> extents{0, 0, 0};
  std::array<double, 3> voxel_size{1.0, 1.0, 1.0};
  VoxelType type = VoxelType::uint8;

  std::uint64_t data_bytes() const {
    return static_cast<std::uint64_t>(extents[0]) * static_cast<std::uint64_t>(extents[1]) *
           static_cast<std::uint64_t>(extents[2]) * voxel_bytes(type);
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "extents=" << extents[0] << ',' << extents[1] << ',' << extents[2] << '\n'
       << "voxel_size=" << format_real(voxel_size[0]) << ',' << format_real(voxel_size[1]) << ','
       << format_real(voxel_size[2]) << '\n'
       << "dtype=" << voxel_type_name(type) << '\n';
    return os.str();
  }

  static VolumeHeader from_text(std::string_view text) {
    const char* stage = "volume-io";
    const auto kv = parse_key_values(text, stage);
    VolumeHeader h;
    auto triple = [&](const std::string& key, auto& out) {
      auto it = kv.find(key);
      require(it != kv.end(), stage, "metadata lacks '" + key + "'");
      std::istringstream in(it->second);
      std::string item;
      std::size_t n = 0;
      try {
        while (std::getline(in, item, ',')) {
          require(n < 3, stage, "'" + key + "' needs three values");
          using V = std::decay_t<decltype(out[0])>;
          if constexpr (std::is_integral_v<V>) out[n++] = std::stoll(item);
          else out[n++] = std::stod(item);
        }
      } catch (const std::logic_error&) {
        throw Error(stage, "bad value for '" + key + "': " + it->second);
      }
      require(n == 3, stage, "'" + key + "' needs three values");
    };
    triple("extents", h.extents);
    if (kv.count("voxel_size")) triple("voxel_size", h.voxel_size);
    for (auto e : h.extents) require(e > 0, stage, "extents must be positive");
    auto it = kv.find("dtype");
    require(it != kv.end(), stage, "metadata lacks 'dtype'");
    if (it->second == "uint8") h.type = VoxelType::uint8;
    else if (it->second == "float32") h.type = VoxelType::float32;
    else throw Error(stage, "unsupported dtype '" + it->second + "'");
    return h;
  }
};

/// Metadata lives next to the raw block with an appended ".txt".
inline std::string header_path(const std::string& raw_path) { return raw_path + ".txt"; }

namespace detail {

template <class T>
void write_raw(const std::string& path, const Volume<T>& v) {
  VolumeHeader h{v.extents, v.voxel_size, voxel_type_of<T>()};
  {
    std::ofstream meta(header_path(path));
    require(static_cast<bool>(meta), "volume-io", "cannot write " + header_path(path));
    meta << h.to_text();
  }
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "volume-io", "cannot write " + path);
  out.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * sizeof(T)));
  require(static_cast<bool>(out), "volume-io", "short write to " + path);
}

template <class T, class U>
Volume<T> convert_block(const VolumeHeader& h, std::ifstream& in) {
  Volume<T> v(h.extents[0], h.extents[1], h.extents[2]);
  v.voxel_size = h.voxel_size;
  std::vector<U> buf(v.data.size());
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(U)));
  std::transform(buf.begin(), buf.end(), v.data.begin(), [](U x) { return static_cast<T>(x); });
  return v;
}

template <class T>
Volume<T> read_raw(const std::string& path) {
  const auto h = VolumeHeader::from_text(read_text_file(header_path(path), "volume-io"));
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "volume-io", "cannot open " + path);
  const auto actual = std::filesystem::file_size(path);
  require(actual == h.data_bytes(), "volume-io",
          path + ": metadata implies " + std::to_string(h.data_bytes()) + " bytes, file has " +
              std::to_string(actual));
  if (h.type == VoxelType::uint8) return convert_block<T, std::uint8_t>(h, in);
  return convert_block<T, float>(h, in);
}

/// Reads one binary 8-bit PGM (P5) image.
inline std::vector<std::uint8_t> read_pgm(const std::string& path, std::int64_t& width, std::int64_t& height) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "volume-io", "cannot open slice " + path);
  auto token = [&] {
    std::string t;
    while (in >> std::ws && in.peek() == '#') std::getline(in, t);
    in >> t;
    return t;
  };
  require(token() == "P5", "volume-io", "slice " + path + " is not a binary PGM");
  std::int64_t maxval = 0;
  try {
    width = std::stoll(token());
    height = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::logic_error&) {
    throw Error("volume-io", "slice " + path + " has a malformed header");
  }
  require(width > 0 && height > 0, "volume-io", "slice " + path + " has empty extents");
  require(maxval > 0 && maxval < 256, "volume-io", "slice " + path + " is not 8-bit");
  in.get();
  std::vector<std::uint8_t> px(static_cast<std::size_t>(width * height));
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  require(in.gcount() == static_cast<std::streamsize>(px.size()), "volume-io", "slice " + path + " is truncated");
  return px;
}

}  // namespace detail

/// Writes slice_0000.pgm, slice_0001.pgm, ... (one per z) into `dir`.
inline void save_slices(const LabelVolume& v, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto plane = static_cast<std::size_t>(v.nx() * v.ny());
  for (std::int64_t z = 0; z < v.nz(); ++z) {
    char name[32];
    std::snprintf(name, sizeof name, "slice_%04lld.pgm", static_cast<long long>(z));
    const auto path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "volume-io", "cannot write " + path);
    out << "P5\n" << v.nx() << ' ' << v.ny() << "\n255\n";
    out.write(reinterpret_cast<const char*>(v.data.data() + static_cast<std::size_t>(z) * plane),
              static_cast<std::streamsize>(plane));
  }
}

/// Stacks the .pgm files of `dir` in lexicographic name order along z.
inline LabelVolume load_slices(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path().string());
  require(!files.empty(), "volume-io", "no .pgm slices in " + dir);
  std::sort(files.begin(), files.end());
  std::int64_t w0 = 0, h0 = 0;
  std::vector<std::vector<std::uint8_t>> planes;
  for (const auto& f : files) {
    std::int64_t w = 0, h = 0;
    planes.push_back(detail::read_pgm(f, w, h));
    if (planes.size() == 1) {
      w0 = w;
      h0 = h;
    }
    require(w == w0 && h == h0, "volume-io",
            "slice " + std::filesystem::path(f).filename().string() + " is " + std::to_string(w) + "x" +
                std::to_string(h) + ", expected " + std::to_string(w0) + "x" + std::to_string(h0));
  }
  LabelVolume v(w0, h0, static_cast<std::int64_t>(planes.size()));
  for (std::size_t z = 0; z < planes.size(); ++z)
    std::copy(planes[z].begin(), planes[z].end(), v.data.begin() + static_cast<std::ptrdiff_t>(z * planes[z].size()));
  return v;
}

/// Saves a raw block plus metadata, or a slice directory when `path` is an
/// existing directory or ends with '/'. Slices hold 8-bit data only.
template <class T>
void save_volume(const Volume<T>& v, const std::string& path) {
  const bool dir = !path.empty() && (path.back() == '/' || std::filesystem::is_directory(path));
  if (dir) {
    if constexpr (std::is_same_v<T, std::uint8_t>) save_slices(v, path);
    else throw Error("volume-io", "slice directories hold 8-bit volumes only");
  } else {
    detail::write_raw(path, v);
  }
}

/// Loads a raw block (converting the stored voxel type to T) or a slice directory.
template <class T>
Volume<T> load_volume(const std::string& path) {
  require(std::filesystem::exists(path), "volume-io", "no such file or directory: " + path);
  if (std::filesystem::is_directory(path)) {
    auto s = load_slices(path);
    Volume<T> v(s.nx(), s.ny(), s.nz());
    std::transform(s.data.begin(), s.data.end(), v.data.begin(), [](std::uint8_t x) { return static_cast<T>(x); });
    return v;
  }
  return detail::read_raw<T>(path);
}

/// 8-bit intensities mapped to [0, 1].
inline Volume<float> normalized(const LabelVolume& v) {
  Volume<float> out(v.nx(), v.ny(), v.nz());
  out.voxel_size = v.voxel_size;
  std::transform(v.data.begin(), v.data.end(), out.data.begin(), [](std::uint8_t x) { return x / 255.0f; });
  return out;
}

/// Probabilities in [0, 1] quantized to round(255 p).
inline LabelVolume quantized(const Volume<float>& v) {
  LabelVolume out(v.nx(), v.ny(), v.nz());
  out.voxel_size = v.voxel_size;
  std::transform(v.data.begin(), v.data.end(), out.data.begin(), [](float p) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(static_cast<double>(p), 0.0, 1.0)));
  });
  return out;
}

}  // namespace dvnet
