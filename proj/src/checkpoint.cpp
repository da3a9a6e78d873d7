#include "gvssm/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>

#include "gvssm/errors.hpp"
#include "gvssm/raster.hpp"

namespace gvssm {

namespace {

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

class Writer {
 public:
  void u32(std::uint32_t v) { put(to_le(v)); }
  void f64(double v) { put(to_le(std::bit_cast<std::uint64_t>(v))); }
  std::string take() { return std::move(out_); }
  void raw(const char* s, std::size_t n) { out_.append(s, n); }

 private:
  template <typename T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out_.append(b, sizeof(T));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}
  std::uint32_t u32() { return to_le(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(to_le(get<std::uint64_t>())); }
  std::size_t pos() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == b_.size(); }

 private:
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > b_.size()) throw ParseError("checkpoint truncated", b_.size());
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

void write_dims(Writer& w, const Network& net) {
  w.u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const GcnLayer& l : net.layers) {
    w.u32(static_cast<std::uint32_t>(l.in_dim()));
    w.u32(static_cast<std::uint32_t>(l.out_dim()));
    w.u32(static_cast<std::uint32_t>(l.activation));
  }
  w.u32(static_cast<std::uint32_t>(net.head.weight.rows()));
  w.u32(static_cast<std::uint32_t>(net.head.weight.cols()));
}

Network read_dims(Reader& r) {
  constexpr std::uint32_t kMaxDim = 1u << 16;
  const std::size_t at = r.pos();
  const std::uint32_t layers = r.u32();
  if (layers > 64) throw ParseError("checkpoint declares too many layers", at);
  Network net;
  for (std::uint32_t i = 0; i < layers; ++i) {
    const std::size_t lat = r.pos();
    const std::uint32_t in = r.u32(), out = r.u32(), act = r.u32();
    if (in == 0 || out == 0 || in > kMaxDim || out > kMaxDim || act > 1) throw ParseError("bad layer dims", lat);
    if (!net.layers.empty() && net.layers.back().out_dim() != in) throw ParseError("layer dims do not chain", lat);
    net.layers.push_back({Matrix(in, out), Matrix(1, out), static_cast<Activation>(act)});
  }
  const std::size_t hat = r.pos();
  const std::uint32_t in = r.u32(), out = r.u32();
  if (in == 0 || out == 0 || in > kMaxDim || out > kMaxDim) throw ParseError("bad head dims", hat);
  if (!net.layers.empty() && net.layers.back().out_dim() != in) throw ParseError("head dims do not chain", hat);
  net.head = {Matrix(in, out), Matrix(1, out)};
  return net;
}

}  // namespace

std::string serialize_checkpoint(const ModuleParams& params) {
  Writer w;
  w.raw("GVSM", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.kind));
  write_dims(w, params.encoder);
  write_dims(w, params.decoder);
  for (const Matrix* m : params.parameters())
    for (double v : m->data()) w.f64(v);
  return w.take();
}

ModuleParams parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "GVSM") != 0) throw ParseError("bad checkpoint magic (expected 'GVSM')", 0);
  Reader r(bytes);
  r.u32();  // magic
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  const std::uint32_t kind = r.u32();
  if (kind > 3) throw ParseError("unknown module kind in checkpoint", 8);
  ModuleParams p;
  p.kind = static_cast<ModuleKind>(kind);
  p.encoder = read_dims(r);
  p.decoder = read_dims(r);
  for (Matrix* m : p.parameters())
    for (double& v : m->data()) v = r.f64();
  if (!r.done()) throw ParseError("checkpoint has trailing bytes", r.pos());
  return p;
}

void write_checkpoint(const ModuleParams& params, const std::filesystem::path& path) {
  write_text_file(path, serialize_checkpoint(params));
}

ModuleParams read_checkpoint(const std::filesystem::path& path, ModuleKind expected) {
  ModuleParams p;
  try {
    p = parse_checkpoint(read_binary_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
  if (p.kind != expected) {
    throw ConfigError(path.string() + " holds module " + to_string(p.kind) + ", expected " + to_string(expected));
  }
  return p;
}

}  // namespace gvssm
