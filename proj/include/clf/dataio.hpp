#pragma once

// On-disk formats: PGM images, PFM depth maps, BlendedMVS-style camera text,
// the CLFW named-tensor container, metrics CSV, dataset scanning, and the
// synthetic plane-scene generator.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "clf/error.hpp"
#include "clf/geometry.hpp"
#include "clf/random.hpp"
#include "clf/tensor.hpp"

namespace clf {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Raw file helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error(path.string() + ": cannot open");
  std::ostringstream os;
  os << in.rdbuf();
  return std::move(os).str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error(path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw format_error(path.string() + ": short write");
}

// Cursor over an in-memory file; all parse errors carry the byte offset.
struct ByteCursor {
  const std::string& buf;
  std::size_t pos = 0;
  std::string name;

  [[noreturn]] void fail(const std::string& what) const {
    throw format_error(name + ": " + what + " at byte " + std::to_string(pos));
  }

  bool eof() const { return pos >= buf.size(); }

  unsigned char peek() const {
    if (eof()) fail("unexpected end of file");
    return static_cast<unsigned char>(buf[pos]);
  }

  unsigned char take() {
    unsigned char c = peek();
    ++pos;
    return c;
  }

  // PNM-style whitespace: blanks plus '#' comments running to end of line.
  void skip_space_and_comments() {
    while (!eof()) {
      unsigned char c = peek();
      if (std::isspace(c)) {
        ++pos;
      } else if (c == '#') {
        while (!eof() && take() != '\n') {
        }
      } else {
        break;
      }
    }
  }

  std::size_t parse_uint() {
    skip_space_and_comments();
    if (eof() || !std::isdigit(peek())) fail("expected an integer");
    std::size_t v = 0;
    while (!eof() && std::isdigit(peek())) v = v * 10 + (take() - '0');
    return v;
  }
};

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(ByteCursor& c) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(c.take()) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(ByteCursor& c) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(c.take()) << (8 * i);
  return v;
}

inline void put_f32_le(std::string& s, float v) {
  put_u32(s, std::bit_cast<std::uint32_t>(v));
}

inline void put_f64_le(std::string& s, double v) {
  put_u64(s, std::bit_cast<std::uint64_t>(v));
}

inline std::string fmt_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PGM images (binary P5, 8-bit)
// ---------------------------------------------------------------------------

// Grayscale image as Tensor[1, h, w] with values in [0, 1].
template <typename T>
Tensor<T> load_image(const fs::path& path) {
  std::string buf = detail::read_file(path);
  detail::ByteCursor c{buf, 0, path.string()};
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
    c.fail("bad magic (want binary PGM 'P5')");
  c.pos = 2;
  std::size_t w = c.parse_uint();
  std::size_t h = c.parse_uint();
  std::size_t maxval = c.parse_uint();
  if (maxval != 255)
    c.fail("unsupported maxval " + std::to_string(maxval) + " (want 255)");
  if (c.eof() || !std::isspace(c.peek())) c.fail("expected whitespace before pixel data");
  c.take();  // exactly one separator byte
  if (buf.size() - c.pos < w * h)
    c.fail("truncated pixel data (need " + std::to_string(w * h) + " bytes, have " +
           std::to_string(buf.size() - c.pos) + ")");
  Tensor<T> img({1, h, w});
  T* p = img.data_mut();
  for (std::size_t i = 0; i < w * h; ++i)
    p[i] = static_cast<T>(static_cast<unsigned char>(buf[c.pos + i])) / T(255);
  return img;
}

// Values are clamped to [0, 1] and quantized to 8 bits.
template <typename T>
void save_image(const Tensor<T>& img, const fs::path& path) {
  if (img.rank() != 3 || img.shape()[0] != 1)
    throw dim_error("save_image: expects [1,h,w], got " + shape_str(img.shape()));
  std::size_t h = img.shape()[1], w = img.shape()[2];
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + w * h);
  const T* p = img.data();
  for (std::size_t i = 0; i < w * h; ++i) {
    double v = std::clamp(static_cast<double>(p[i]), 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// PFM depth maps (grayscale "Pf")
// ---------------------------------------------------------------------------

inline DepthMap load_depth(const fs::path& path) {
  std::string buf = detail::read_file(path);
  detail::ByteCursor c{buf, 0, path.string()};
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != 'f') {
    if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == 'F')
      c.fail("color PFM is unsupported (want grayscale 'Pf')");
    c.fail("bad magic (want grayscale PFM 'Pf')");
  }
  c.pos = 2;
  std::size_t w = c.parse_uint();
  std::size_t h = c.parse_uint();
  // Scale line: sign encodes endianness.
  c.skip_space_and_comments();
  std::size_t scale_start = c.pos;
  while (!c.eof() && !std::isspace(c.peek())) c.take();
  double scale = 0.0;
  {
    std::string tok = buf.substr(scale_start, c.pos - scale_start);
    std::istringstream is(tok);
    if (!(is >> scale) || scale == 0.0) {
      c.pos = scale_start;
      c.fail("expected a nonzero scale value");
    }
  }
  bool little_endian = scale < 0.0;
  if (c.eof() || !std::isspace(c.peek())) c.fail("expected whitespace before sample data");
  c.take();
  if (buf.size() - c.pos < w * h * 4)
    c.fail("truncated sample data (need " + std::to_string(w * h * 4) + " bytes, have " +
           std::to_string(buf.size() - c.pos) + ")");

  DepthMap d{w, h, std::vector<float>(w * h)};
  // PFM rows are stored bottom-up; normalize to top-down.
  for (std::size_t row = 0; row < h; ++row) {
    std::size_t src_row = h - 1 - row;
    for (std::size_t x = 0; x < w; ++x) {
      std::uint32_t bits = 0;
      const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + c.pos +
                                                             (src_row * w + x) * 4);
      if (little_endian)
        bits = b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
      else
        bits = b[3] | (b[2] << 8) | (b[1] << 16) | (std::uint32_t(b[0]) << 24);
      d.values[row * w + x] = std::bit_cast<float>(bits);
    }
  }
  return d;
}

inline void save_depth(const DepthMap& d, const fs::path& path) {
  if (d.values.size() != d.width * d.height)
    throw contract_error("save_depth: storage does not match dimensions");
  std::string out = "Pf\n" + std::to_string(d.width) + " " +
                    std::to_string(d.height) + "\n-1.0\n";
  out.reserve(out.size() + d.values.size() * 4);
  for (std::size_t row = 0; row < d.height; ++row) {
    std::size_t src_row = d.height - 1 - row;  // write bottom-up
    for (std::size_t x = 0; x < d.width; ++x)
      detail::put_f32_le(out, d.values[src_row * d.width + x]);
  }
  detail::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Camera text files
// ---------------------------------------------------------------------------

namespace detail {

// Line-oriented reader that reports 1-based line numbers on failure.
struct LineCursor {
  std::vector<std::string> lines;
  std::size_t next = 0;
  std::string name;

  explicit LineCursor(const std::string& buf, std::string fname)
      : name(std::move(fname)) {
    std::istringstream is(buf);
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
  }

  [[noreturn]] void fail(std::size_t line_no, const std::string& what) const {
    throw format_error(name + ": line " + std::to_string(line_no) + ": " + what);
  }

  // Returns the next non-blank line and its 1-based number.
  std::pair<std::string, std::size_t> next_content() {
    while (next < lines.size()) {
      std::size_t no = next + 1;
      std::string s = lines[next++];
      auto is_blank = s.find_first_not_of(" \t\r") == std::string::npos;
      if (!is_blank) {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t'))
          s.pop_back();
        return {s, no};
      }
    }
    fail(lines.size(), "unexpected end of file");
  }

  // Reads `count` doubles, consuming as many content lines as needed.
  std::vector<double> read_doubles(std::size_t count) {
    std::vector<double> out;
    while (out.size() < count) {
      auto [s, no] = next_content();
      std::istringstream is(s);
      double v;
      while (out.size() < count && is >> v) out.push_back(v);
      if (!is.eof() && is.fail()) fail(no, "expected a number");
    }
    return out;
  }
};

}  // namespace detail

inline Camera load_camera(const fs::path& path) {
  std::string buf = detail::read_file(path);
  detail::LineCursor c(buf, path.string());

  auto [head, head_no] = c.next_content();
  if (head != "extrinsic") c.fail(head_no, "expected 'extrinsic', got '" + head + "'");
  std::vector<double> e = c.read_doubles(16);

  auto [khead, khead_no] = c.next_content();
  if (khead != "intrinsic") c.fail(khead_no, "expected 'intrinsic', got '" + khead + "'");
  std::vector<double> k = c.read_doubles(9);

  Camera cam;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t col = 0; col < 3; ++col) cam.extr.R(r, col) = e[r * 4 + col];
  }
  cam.extr.t = {e[3], e[7], e[11]};
  if (k[1] != 0.0)
    throw format_error(path.string() + ": intrinsic skew K[0][1]=" +
                       detail::fmt_g9(k[1]) + " is unsupported");
  cam.intr = {k[0], k[4], k[2], k[5]};
  if (!(cam.intr.fx > 0.0) || !(cam.intr.fy > 0.0))
    throw format_error(path.string() + ": focal lengths must be positive");
  if (!is_rotation(cam.extr.R, 1e-3))
    throw format_error(path.string() + ": extrinsic rotation is not orthonormal");
  return cam;
}

inline void save_camera(const Camera& cam, const fs::path& path) {
  std::ostringstream os;
  os << "extrinsic\n";
  const double t[3] = {cam.extr.t.x, cam.extr.t.y, cam.extr.t.z};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t col = 0; col < 3; ++col)
      os << detail::fmt_g17(cam.extr.R(r, col)) << " ";
    os << detail::fmt_g17(t[r]) << "\n";
  }
  os << "0 0 0 1\n\nintrinsic\n";
  os << detail::fmt_g17(cam.intr.fx) << " 0 " << detail::fmt_g17(cam.intr.cx) << "\n";
  os << "0 " << detail::fmt_g17(cam.intr.fy) << " " << detail::fmt_g17(cam.intr.cy) << "\n";
  os << "0 0 1\n";
  detail::write_file(path, os.str());
}

// ---------------------------------------------------------------------------
// CLFW weights container
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kWeightsVersion = 1;
inline constexpr char kWeightsMagic[4] = {'C', 'L', 'F', 'W'};

// Binary layout, all integers little-endian:
//   magic "CLFW" | u32 version | u32 count
//   per entry: u32 name_len | name bytes | u8 dtype (0=f32, 1=f64)
//              | u32 rank | u64 extent per dim | raw LE values
struct WeightEntry {
  std::string name;
  int dtype = 1;  // 0 = f32, 1 = f64
  Shape shape;
  std::vector<float> f32;
  std::vector<double> f64;

  std::size_t numel() const { return shape_numel(shape); }

  template <typename T>
  std::vector<T> as() const {
    std::vector<T> out(numel());
    if (dtype == 0)
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(f32[i]);
    else
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(f64[i]);
    return out;
  }
};

struct WeightsMap {
  std::vector<WeightEntry> entries;  // file order

  const WeightEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  template <typename T>
  void add(const std::string& name, const Tensor<T>& t) {
    WeightEntry e;
    e.name = name;
    e.shape = t.shape();
    if constexpr (std::is_same_v<T, float>) {
      e.dtype = 0;
      e.f32.assign(t.data(), t.data() + t.numel());
    } else {
      e.dtype = 1;
      e.f64.assign(t.data(), t.data() + t.numel());
    }
    entries.push_back(std::move(e));
  }

  void add_scalar_meta(const std::string& name, double v) {
    WeightEntry e;
    e.name = name;
    e.dtype = 1;
    e.shape = {};
    e.f64 = {v};
    entries.push_back(std::move(e));
  }
};

inline void save_weights(const WeightsMap& map, const fs::path& path) {
  std::string out(kWeightsMagic, 4);
  detail::put_u32(out, kWeightsVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(map.entries.size()));
  for (const auto& e : map.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    out.push_back(static_cast<char>(e.dtype));
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) detail::put_u64(out, d);
    if (e.dtype == 0)
      for (float v : e.f32) detail::put_f32_le(out, v);
    else
      for (double v : e.f64) detail::put_f64_le(out, v);
  }
  detail::write_file(path, out);
}

inline WeightsMap load_weights(const fs::path& path) {
  std::string buf = detail::read_file(path);
  detail::ByteCursor c{buf, 0, path.string()};
  if (buf.size() < 4 || std::memcmp(buf.data(), kWeightsMagic, 4) != 0)
    c.fail("bad magic (want 'CLFW')");
  c.pos = 4;
  std::uint32_t version = detail::get_u32(c);
  if (version != kWeightsVersion)
    c.fail("unsupported version " + std::to_string(version));
  std::uint32_t count = detail::get_u32(c);
  WeightsMap map;
  map.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    WeightEntry e;
    std::uint32_t name_len = detail::get_u32(c);
    if (buf.size() - c.pos < name_len) c.fail("truncated entry name");
    e.name = buf.substr(c.pos, name_len);
    c.pos += name_len;
    int tag = c.take();
    if (tag != 0 && tag != 1) c.fail("unknown dtype tag " + std::to_string(tag));
    e.dtype = tag;
    std::uint32_t rank = detail::get_u32(c);
    e.shape.resize(rank);
    for (std::uint32_t d = 0; d < rank; ++d)
      e.shape[d] = static_cast<std::size_t>(detail::get_u64(c));
    std::size_t n = e.numel();
    std::size_t bytes = n * (tag == 0 ? 4 : 8);
    if (buf.size() - c.pos < bytes)
      c.fail("truncated values for entry '" + e.name + "'");
    if (tag == 0) {
      e.f32.resize(n);
      for (std::size_t v = 0; v < n; ++v) {
        std::uint32_t bits = detail::get_u32(c);
        e.f32[v] = std::bit_cast<float>(bits);
      }
    } else {
      e.f64.resize(n);
      for (std::size_t v = 0; v < n; ++v) {
        std::uint64_t bits = detail::get_u64(c);
        e.f64[v] = std::bit_cast<double>(bits);
      }
    }
    map.entries.push_back(std::move(e));
  }
  if (c.pos != buf.size()) c.fail("trailing bytes after last entry");
  return map;
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "epoch,step,loss,l_distill,l_target,mae,lr";

struct MetricsRow {
  long epoch = 0;
  long step = 0;
  double loss = 0, l_distill = 0, l_target = 0, mae = 0, lr = 0;
};

// Appends one row, writing the header on first use. An existing file must
// start with the exact header.
inline void append_metrics(const fs::path& path, const MetricsRow& row) {
  bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  if (!fresh) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    if (!first.empty() && first.back() == '\r') first.pop_back();
    if (first != kMetricsHeader)
      throw format_error(path.string() + ": metrics header mismatch, got '" +
                         first + "'");
  }
  std::ofstream out(path, std::ios::app);
  if (!out) throw format_error(path.string() + ": cannot open for append");
  if (fresh) out << kMetricsHeader << "\n";
  out << row.epoch << "," << row.step << "," << detail::fmt_g9(row.loss) << ","
      << detail::fmt_g9(row.l_distill) << "," << detail::fmt_g9(row.l_target)
      << "," << detail::fmt_g9(row.mae) << "," << detail::fmt_g9(row.lr)
      << "\n";
}

inline std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::string buf = detail::read_file(path);
  detail::LineCursor c(buf, path.string());
  auto [head, head_no] = c.next_content();
  if (head != kMetricsHeader) c.fail(head_no, "metrics header mismatch");
  std::vector<MetricsRow> rows;
  while (c.next < c.lines.size()) {
    std::string line = c.lines[c.next++];
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    for (auto& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream is(line);
    MetricsRow r;
    if (!(is >> r.epoch >> r.step >> r.loss >> r.l_distill >> r.l_target >>
          r.mae >> r.lr))
      c.fail(c.next, "malformed metrics row");
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Dataset scanning
// ---------------------------------------------------------------------------

// One stereo pair of a scene, by file path.
struct ScenePairRef {
  std::string scene;  // scene directory name
  long id_a = 0, id_b = 0;
  fs::path image_a, image_b;
  fs::path depth_a, depth_b;
  fs::path cam_a, cam_b;
};

namespace detail {
inline std::string view_id(long id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08ld", id);
  return buf;
}
}  // namespace detail

// Walks root/<scene>/{images,depths,cams,pairs.txt}; scenes ordered
// lexicographically, pairs in file order.
inline std::vector<ScenePairRef> scan_dataset(const fs::path& root) {
  std::vector<ScenePairRef> out;
  if (!fs::exists(root)) return out;
  std::vector<fs::path> scenes;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "pairs.txt"))
      scenes.push_back(entry.path());
  std::sort(scenes.begin(), scenes.end());

  for (const auto& scene : scenes) {
    std::string buf = detail::read_file(scene / "pairs.txt");
    detail::LineCursor c(buf, (scene / "pairs.txt").string());
    while (c.next < c.lines.size()) {
      std::size_t line_no = c.next + 1;
      std::string line = c.lines[c.next++];
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream is(line);
      long a, b;
      if (!(is >> a >> b)) c.fail(line_no, "expected 'idA idB'");
      ScenePairRef ref;
      ref.scene = scene.filename().string();
      ref.id_a = a;
      ref.id_b = b;
      ref.image_a = scene / "images" / (detail::view_id(a) + ".pgm");
      ref.image_b = scene / "images" / (detail::view_id(b) + ".pgm");
      ref.depth_a = scene / "depths" / (detail::view_id(a) + ".pfm");
      ref.depth_b = scene / "depths" / (detail::view_id(b) + ".pfm");
      ref.cam_a = scene / "cams" / (detail::view_id(a) + ".txt");
      ref.cam_b = scene / "cams" / (detail::view_id(b) + ".txt");
      for (const fs::path* p : {&ref.image_a, &ref.image_b, &ref.depth_a,
                                &ref.depth_b, &ref.cam_a, &ref.cam_b})
        if (!fs::exists(*p))
          throw dataset_error("scene " + ref.scene + " pair " +
                              std::to_string(a) + " " + std::to_string(b) +
                              ": missing " + p->string());
      out.push_back(std::move(ref));
    }
  }
  return out;
}

// Fully loaded stereo pair.
template <typename T>
struct LoadedPair {
  Tensor<T> image_a, image_b;  // [1,h,w]
  DepthMap depth_a, depth_b;
  Camera cam_a, cam_b;
};

template <typename T>
LoadedPair<T> load_scene_pair(const ScenePairRef& ref) {
  LoadedPair<T> p;
  p.image_a = load_image<T>(ref.image_a);
  p.image_b = load_image<T>(ref.image_b);
  p.depth_a = load_depth(ref.depth_a);
  p.depth_b = load_depth(ref.depth_b);
  p.cam_a = load_camera(ref.cam_a);
  p.cam_b = load_camera(ref.cam_b);
  auto check = [&](const Tensor<T>& img, const DepthMap& d, const fs::path& f) {
    if (img.shape()[1] != d.height || img.shape()[2] != d.width)
      throw dataset_error("scene " + ref.scene + ": image and depth sizes disagree for " +
                          f.string());
  };
  check(p.image_a, p.depth_a, ref.depth_a);
  check(p.image_b, p.depth_b, ref.depth_b);
  return p;
}

// ---------------------------------------------------------------------------
// Synthetic plane-scene generator
// ---------------------------------------------------------------------------

namespace detail {

struct PlaneScene {
  Vec3 n;       // unit plane normal
  Vec3 p0;      // plane anchor
  Vec3 e1, e2;  // in-plane texture basis
  // sinusoid + blob texture parameters
  double fa, fb, pa, pb;
  std::vector<std::array<double, 4>> blobs;  // a, b, sigma, weight

  double intensity(double a, double b) const {
    double v = 0.5 + 0.25 * std::sin(fa * a + pa) * std::sin(fb * b + pb);
    for (const auto& blob : blobs) {
      double da = a - blob[0], db = b - blob[1];
      v += blob[3] * std::exp(-(da * da + db * db) / (blob[2] * blob[2]));
    }
    return std::clamp(v, 0.0, 1.0);
  }
};

inline PlaneScene make_plane_scene(Rng& rng) {
  PlaneScene s;
  double depth0 = rng.uniform(4.0, 6.0);
  Vec3 n{rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), -1.0};
  s.n = (1.0 / norm(n)) * n;
  s.p0 = {0.0, 0.0, depth0};
  Vec3 up{0.0, 1.0, 0.0};
  Vec3 e1 = cross(up, s.n);
  s.e1 = (1.0 / norm(e1)) * e1;
  s.e2 = cross(s.n, s.e1);
  s.fa = rng.uniform(1.5, 4.0);
  s.fb = rng.uniform(1.5, 4.0);
  s.pa = rng.uniform(0.0, 6.28318530717958648);
  s.pb = rng.uniform(0.0, 6.28318530717958648);
  std::size_t n_blobs = 6 + rng.below(5);
  for (std::size_t i = 0; i < n_blobs; ++i)
    s.blobs.push_back({rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5),
                       rng.uniform(0.08, 0.4),
                       rng.uniform(0.15, 0.35) * (rng.uniform() < 0.5 ? -1.0 : 1.0)});
  return s;
}

inline Camera make_view(Rng& rng, std::size_t w, std::size_t h, bool first) {
  Camera cam;
  cam.intr.fx = cam.intr.fy = static_cast<double>(w);
  cam.intr.cx = 0.5 * static_cast<double>(w) - 0.5;
  cam.intr.cy = 0.5 * static_cast<double>(h) - 0.5;
  if (first) return cam;  // reference view: R = I, C at the origin
  double yaw = rng.uniform(-0.06, 0.06);
  double pitch = rng.uniform(-0.04, 0.04);
  Mat3 r = rotation_from_axis_angle({1, 0, 0}, pitch) *
           rotation_from_axis_angle({0, 1, 0}, yaw);
  Vec3 center{rng.uniform(-0.35, 0.35), rng.uniform(-0.2, 0.2),
              rng.uniform(-0.15, 0.15)};
  cam.extr.R = r;
  Vec3 rc = r * center;
  cam.extr.t = {-rc.x, -rc.y, -rc.z};  // t = -R*C
  return cam;
}

// Ray-plane render: exact per-pixel depth plus a texture sample.
inline void render_view(const PlaneScene& s, const Camera& cam, std::size_t w,
                        std::size_t h, Tensor<float>& img, DepthMap& depth) {
  img = Tensor<float>({1, h, w});
  depth = DepthMap{w, h, std::vector<float>(w * h)};
  Mat3 rt = cam.extr.R.transposed();
  Vec3 c = rt * Vec3{-cam.extr.t.x, -cam.extr.t.y, -cam.extr.t.z};
  double num = dot(s.n, s.p0 - c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      Vec3 dir{(static_cast<double>(x) - cam.intr.cx) / cam.intr.fx,
               (static_cast<double>(y) - cam.intr.cy) / cam.intr.fy, 1.0};
      Vec3 dw = rt * dir;
      double denom = dot(s.n, dw);
      double sdist = num / denom;  // camera-space depth: X_cam = sdist * dir
      depth.values[y * w + x] = static_cast<float>(sdist);
      Vec3 world = c + sdist * dw;
      double a = dot(world - s.p0, s.e1);
      double b = dot(world - s.p0, s.e2);
      img.data_mut()[y * w + x] = static_cast<float>(s.intensity(a, b));
    }
}

}  // namespace detail

// Writes `n_scenes` plane scenes of `h` x `w` views under `root`. Each scene
// holds three views and the pair list "0 1", "0 2", "1 2". Everything is a
// pure function of `seed`.
inline void generate_synthetic_dataset(const fs::path& root, std::size_t n_scenes,
                                       std::size_t h, std::size_t w,
                                       std::uint64_t seed) {
  if (h % 16 != 0 || w % 16 != 0)
    throw config_error("synthetic dataset: image size " + std::to_string(h) +
                       "x" + std::to_string(w) + " must be a multiple of 16");
  Rng master(seed);
  for (std::size_t si = 0; si < n_scenes; ++si) {
    Rng rng = master.fork(si);
    char name[16];
    std::snprintf(name, sizeof(name), "scene%03zu", si);
    fs::path scene = root / name;
    fs::create_directories(scene / "images");
    fs::create_directories(scene / "depths");
    fs::create_directories(scene / "cams");

    detail::PlaneScene plane = detail::make_plane_scene(rng);
    for (long vi = 0; vi < 3; ++vi) {
      Camera cam = detail::make_view(rng, w, h, vi == 0);
      Tensor<float> img;
      DepthMap depth;
      detail::render_view(plane, cam, w, h, img, depth);
      save_image(img, scene / "images" / (detail::view_id(vi) + ".pgm"));
      save_depth(depth, scene / "depths" / (detail::view_id(vi) + ".pfm"));
      save_camera(cam, scene / "cams" / (detail::view_id(vi) + ".txt"));
    }
    detail::write_file(scene / "pairs.txt", "0 1\n0 2\n1 2\n");
  }
}

}  // namespace clf
