#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gvssm {

inline constexpr float kDefaultNodata = -9999.0f;

/// Time-indexed multi-band grid, values ordered [t][band][row][col].
struct RasterStack {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t bands = 0;
  std::size_t timesteps = 0;
  float nodata = kDefaultNodata;
  std::vector<float> values;

  RasterStack() = default;
  RasterStack(std::size_t width, std::size_t height, std::size_t bands, std::size_t timesteps,
              float fill = 0.0f, float nodata = kDefaultNodata);

  std::size_t pixels() const noexcept { return width * height; }
  std::size_t index(std::size_t t, std::size_t band, std::size_t row, std::size_t col) const noexcept {
    return ((t * bands + band) * height + row) * width + col;
  }
  float& at(std::size_t t, std::size_t band, std::size_t row, std::size_t col) {
    return values[index(t, band, row, col)];
  }
  float at(std::size_t t, std::size_t band, std::size_t row, std::size_t col) const {
    return values[index(t, band, row, col)];
  }
  bool is_nodata(float v) const noexcept { return v == nodata || v != v; }
  /// 1 where every band at timestep t holds data, row-major over pixels.
  std::vector<std::uint8_t> valid_mask(std::size_t t) const;
  void validate() const;
};

/// Text header (`GVSR 1`, width, height, bands, timesteps, nodata) then the
/// little-endian float32 payload.
void write_raster_stack(const RasterStack& stack, const std::filesystem::path& path);
/// Throws ParseError carrying the byte offset of the first problem.
RasterStack read_raster_stack(const std::filesystem::path& path);
RasterStack parse_raster_stack(const std::string& bytes);
std::string serialize_raster_stack(const RasterStack& stack);

/// Per-pixel coarse prior beliefs. Vector fields are row-major over pixels;
/// p0_v and class_mask are [class][row][col].
struct PriorRaster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> mu0;
  std::vector<float> sigma0;
  std::vector<float> p0_bp;
  std::vector<float> p0_v;
  std::vector<std::uint8_t> class_mask;
  std::vector<std::string> classes;

  std::size_t pixels() const noexcept { return width * height; }
  std::size_t class_count() const noexcept { return classes.size(); }
  float p0_v_at(std::size_t k, std::size_t pixel) const { return p0_v[k * pixels() + pixel]; }
  bool allowed(std::size_t k, std::size_t pixel) const { return class_mask[k * pixels() + pixel] != 0; }
  /// Sizes agree, p0_v rows sum to 1 within 1e-6, mask covers p0_v support.
  void validate() const;
};

/// Writes prior_{mu0,sigma0,p0_bp,p0_v,class_mask}.gvsr and classes.txt into `dir`.
void write_prior(const PriorRaster& prior, const std::filesystem::path& dir);
PriorRaster read_prior(const std::filesystem::path& dir);

void write_class_vocabulary(const std::vector<std::string>& classes, const std::filesystem::path& path);
std::vector<std::string> read_class_vocabulary(const std::filesystem::path& path);

/// Writes `contents` to `path` and throws Error on failure.
void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_binary_file(const std::filesystem::path& path);

}  // namespace gvssm
