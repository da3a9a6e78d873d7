#include "gvssm/export.hpp"

#include <algorithm>

#include "gvssm/errors.hpp"
#include "gvssm/keyvalue.hpp"

namespace gvssm {

namespace fs = std::filesystem;

PosteriorMaps::PosteriorMaps(std::size_t w, std::size_t h, std::size_t t, std::vector<std::string> names)
    : classes(std::move(names)),
      mu(w, h, 1, t, kDefaultNodata),
      sigma(w, h, 1, t, kDefaultNodata),
      presence(w, h, 1, t, kDefaultNodata),
      class_prob(w, h, classes.size(), t, kDefaultNodata) {}

RasterStack argmax_raster(const RasterStack& cp) {
  RasterStack out(cp.width, cp.height, 1, cp.timesteps, cp.nodata, cp.nodata);
  const std::size_t n = cp.pixels();
  for (std::size_t t = 0; t < cp.timesteps; ++t) {
    for (std::size_t p = 0; p < n; ++p) {
      std::size_t best = 0;
      float best_v = cp.values[(t * cp.bands) * n + p];
      if (cp.is_nodata(best_v)) continue;
      for (std::size_t k = 1; k < cp.bands; ++k) {
        const float v = cp.values[(t * cp.bands + k) * n + p];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out.values[t * n + p] = static_cast<float>(best);
    }
  }
  return out;
}

namespace {

RasterStack slice_timestep(const RasterStack& s, std::size_t t) {
  RasterStack out(s.width, s.height, s.bands, 1, 0.0f, s.nodata);
  const std::size_t block = s.bands * s.pixels();
  std::copy_n(s.values.begin() + static_cast<std::ptrdiff_t>(t * block), block, out.values.begin());
  return out;
}

std::string file_name(const std::string& param, std::size_t t) {
  return param + "_t" + std::to_string(t) + ".gvsr";
}

/// Mean over data cells of band `b` at timestep t; count of data cells.
std::pair<double, std::size_t> band_mean(const RasterStack& s, std::size_t t, std::size_t b) {
  double sum = 0.0;
  std::size_t count = 0;
  const std::size_t n = s.pixels();
  for (std::size_t p = 0; p < n; ++p) {
    const float v = s.values[(t * s.bands + b) * n + p];
    if (s.is_nodata(v)) continue;
    sum += v;
    ++count;
  }
  return {count ? sum / static_cast<double>(count) : 0.0, count};
}

}  // namespace

void export_posterior_maps(const PosteriorMaps& maps, const fs::path& dir) {
  fs::create_directories(dir);
  const std::size_t T = maps.mu.timesteps;
  const RasterStack argmax = argmax_raster(maps.class_prob);
  std::string csv = "timestep,mean_mu,mean_sigma,mean_presence,vulnerable_pixels";
  for (const auto& c : maps.classes) csv += ",share_" + c;
  csv += "\n";
  for (std::size_t t = 0; t < T; ++t) {
    write_raster_stack(slice_timestep(maps.mu, t), dir / file_name("mu", t));
    write_raster_stack(slice_timestep(maps.sigma, t), dir / file_name("sigma", t));
    write_raster_stack(slice_timestep(maps.presence, t), dir / file_name("presence", t));
    write_raster_stack(slice_timestep(maps.class_prob, t), dir / file_name("class_prob", t));
    write_raster_stack(slice_timestep(argmax, t), dir / file_name("argmax", t));
    csv += std::to_string(t) + "," + format_double(band_mean(maps.mu, t, 0).first) + "," +
           format_double(band_mean(maps.sigma, t, 0).first) + "," +
           format_double(band_mean(maps.presence, t, 0).first);
    const std::size_t vulnerable = band_mean(maps.class_prob, t, 0).second;
    csv += "," + std::to_string(vulnerable);
    for (std::size_t k = 0; k < maps.classes.size(); ++k) {
      csv += "," + format_double(band_mean(maps.class_prob, t, k).first);
    }
    csv += "\n";
  }
  write_text_file(dir / "summary.csv", csv);
}

RasterStack read_posterior_parameter(const fs::path& dir, const std::string& name, std::size_t timesteps) {
  RasterStack out;
  for (std::size_t t = 0; t < timesteps; ++t) {
    const RasterStack s = read_raster_stack(dir / file_name(name, t));
    if (t == 0) {
      out = RasterStack(s.width, s.height, s.bands, timesteps, 0.0f, s.nodata);
    } else if (s.width != out.width || s.height != out.height || s.bands != out.bands) {
      throw ShapeError("posterior raster " + file_name(name, t) + " differs in shape");
    }
    std::copy(s.values.begin(), s.values.end(),
              out.values.begin() + static_cast<std::ptrdiff_t>(t * s.values.size()));
  }
  return out;
}

RasterStack read_class_probabilities(const fs::path& dir, std::size_t timesteps) {
  return read_posterior_parameter(dir, "class_prob", timesteps);
}

}  // namespace gvssm
