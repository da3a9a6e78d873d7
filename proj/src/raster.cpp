#include "gvssm/raster.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "gvssm/errors.hpp"

namespace gvssm {

namespace fs = std::filesystem;

RasterStack::RasterStack(std::size_t w, std::size_t h, std::size_t b, std::size_t t, float fill, float nd)
    : width(w), height(h), bands(b), timesteps(t), nodata(nd), values(w * h * b * t, fill) {}

std::vector<std::uint8_t> RasterStack::valid_mask(std::size_t t) const {
  std::vector<std::uint8_t> mask(pixels(), 1);
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t p = 0; p < pixels(); ++p)
      if (is_nodata(values[(t * bands + b) * pixels() + p])) mask[p] = 0;
  return mask;
}

void RasterStack::validate() const {
  if (values.size() != width * height * bands * timesteps) {
    throw ShapeError("raster payload holds " + std::to_string(values.size()) + " values, header declares " +
                     std::to_string(width * height * bands * timesteps));
  }
}

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

class HeaderReader {
 public:
  explicit HeaderReader(const std::string& bytes) : bytes_(bytes) {}

  std::string line() {
    const std::size_t end = bytes_.find('\n', pos_);
    if (end == std::string::npos) throw ParseError("unterminated raster header line", pos_);
    std::string out = bytes_.substr(pos_, end - pos_);
    line_start_ = pos_;
    pos_ = end + 1;
    return out;
  }

  std::string field(const std::string& key) {
    const std::string l = line();
    if (l.size() <= key.size() + 1 || l.compare(0, key.size(), key) != 0 || l[key.size()] != ' ') {
      throw ParseError("expected raster header field '" + key + "'", line_start_);
    }
    return l.substr(key.size() + 1);
  }

  std::size_t count(const std::string& key) {
    const std::string v = field(key);
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ParseError("raster header field '" + key + "' is not a count: " + v, line_start_);
    }
    return out;
  }

  float number(const std::string& key) {
    const std::string v = field(key);
    char* end = nullptr;
    const float out = std::strtof(v.c_str(), &end);
    if (end != v.c_str() + v.size()) throw ParseError("raster header field '" + key + "' is not a number", line_start_);
    return out;
  }

  std::size_t position() const noexcept { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
};

}  // namespace

std::string serialize_raster_stack(const RasterStack& s) {
  s.validate();
  std::string out = "GVSR 1\nwidth " + std::to_string(s.width) + "\nheight " + std::to_string(s.height) +
                    "\nbands " + std::to_string(s.bands) + "\ntimesteps " + std::to_string(s.timesteps) +
                    "\nnodata " + format_float(s.nodata) + "\n";
  const std::size_t header = out.size();
  out.resize(header + s.values.size() * 4);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const std::uint32_t le = to_le(std::bit_cast<std::uint32_t>(s.values[i]));
    std::memcpy(out.data() + header + i * 4, &le, 4);
  }
  return out;
}

RasterStack parse_raster_stack(const std::string& bytes) {
  HeaderReader r(bytes);
  if (bytes.rfind("GVSR ", 0) != 0) throw ParseError("bad raster magic (expected 'GVSR')", 0);
  if (r.line() != "GVSR 1") throw ParseError("unsupported raster format version", 5);
  RasterStack s;
  s.width = r.count("width");
  s.height = r.count("height");
  s.bands = r.count("bands");
  s.timesteps = r.count("timesteps");
  s.nodata = r.number("nodata");
  const std::size_t start = r.position();
  const std::size_t n = s.width * s.height * s.bands * s.timesteps;
  const std::size_t have = bytes.size() - start;
  if (have < n * 4) {
    throw ParseError("raster payload truncated: header declares " + std::to_string(n) + " values, found " +
                         std::to_string(have / 4),
                     bytes.size());
  }
  if (have > n * 4) throw ParseError("raster payload has trailing bytes", start + n * 4);
  s.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t le = 0;
    std::memcpy(&le, bytes.data() + start + i * 4, 4);
    s.values[i] = std::bit_cast<float>(to_le(le));
  }
  return s;
}

void write_text_file(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!f) throw Error("write failed for " + path.string());
}

std::string read_binary_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_raster_stack(const RasterStack& stack, const fs::path& path) {
  write_text_file(path, serialize_raster_stack(stack));
}

RasterStack read_raster_stack(const fs::path& path) {
  try {
    return parse_raster_stack(read_binary_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void PriorRaster::validate() const {
  const std::size_t n = pixels();
  const std::size_t k = class_count();
  if (mu0.size() != n || sigma0.size() != n || p0_bp.size() != n) throw ShapeError("prior exposure rasters size mismatch");
  if (k < 2) throw ConfigError("prior needs at least 2 classes");
  if (p0_v.size() != n * k || class_mask.size() != n * k) throw ShapeError("prior vulnerability rasters size mismatch");
  for (std::size_t p = 0; p < n; ++p) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const float v = p0_v_at(c, p);
      sum += v;
      if (v > 0.0f && !allowed(c, p)) {
        throw ConfigError("prior class mask excludes class " + classes[c] + " with mass at pixel " + std::to_string(p));
      }
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("prior composition does not sum to 1 at pixel " + std::to_string(p));
  }
}

namespace {

RasterStack single(std::size_t w, std::size_t h, std::size_t bands, const std::vector<float>& v) {
  RasterStack s(w, h, bands, 1);
  s.values = v;
  return s;
}

std::vector<float> load_band(const fs::path& path, std::size_t w, std::size_t h, std::size_t bands) {
  RasterStack s = read_raster_stack(path);
  if (s.width != w || s.height != h || s.bands != bands || s.timesteps != 1) {
    throw ShapeError(path.string() + ": unexpected prior raster dimensions");
  }
  return std::move(s.values);
}

}  // namespace

void write_class_vocabulary(const std::vector<std::string>& classes, const fs::path& path) {
  std::string out;
  for (const auto& c : classes) out += c + "\n";
  write_text_file(path, out);
}

std::vector<std::string> read_class_vocabulary(const fs::path& path) {
  std::istringstream in(read_binary_file(path));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_prior(const PriorRaster& prior, const fs::path& dir) {
  prior.validate();
  const std::size_t w = prior.width, h = prior.height, k = prior.class_count();
  write_raster_stack(single(w, h, 1, prior.mu0), dir / "prior_mu0.gvsr");
  write_raster_stack(single(w, h, 1, prior.sigma0), dir / "prior_sigma0.gvsr");
  write_raster_stack(single(w, h, 1, prior.p0_bp), dir / "prior_p0_bp.gvsr");
  write_raster_stack(single(w, h, k, prior.p0_v), dir / "prior_p0_v.gvsr");
  write_raster_stack(single(w, h, k, std::vector<float>(prior.class_mask.begin(), prior.class_mask.end())),
                     dir / "prior_class_mask.gvsr");
  write_class_vocabulary(prior.classes, dir / "classes.txt");
}

PriorRaster read_prior(const fs::path& dir) {
  PriorRaster p;
  p.classes = read_class_vocabulary(dir / "classes.txt");
  const RasterStack mu = read_raster_stack(dir / "prior_mu0.gvsr");
  p.width = mu.width;
  p.height = mu.height;
  p.mu0 = mu.values;
  const std::size_t k = p.class_count();
  p.sigma0 = load_band(dir / "prior_sigma0.gvsr", p.width, p.height, 1);
  p.p0_bp = load_band(dir / "prior_p0_bp.gvsr", p.width, p.height, 1);
  p.p0_v = load_band(dir / "prior_p0_v.gvsr", p.width, p.height, k);
  for (float v : load_band(dir / "prior_class_mask.gvsr", p.width, p.height, k)) {
    p.class_mask.push_back(v != 0.0f ? 1 : 0);
  }
  p.validate();
  return p;
}

}  // namespace gvssm
