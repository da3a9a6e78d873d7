#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "gvssm/modules.hpp"

namespace gvssm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "GVSM", u32 version, u32 module kind, then per network (encoder, decoder):
/// u32 layer count, per GCN layer (u32 in, u32 out, u32 activation), head
/// (u32 in, u32 out). The payload follows: every parameter as little-endian f64
/// in ModuleParams::parameters() order.
std::string serialize_checkpoint(const ModuleParams& params);
ModuleParams parse_checkpoint(const std::string& bytes);

void write_checkpoint(const ModuleParams& params, const std::filesystem::path& path);
/// Throws ParseError on malformed content and ConfigError when the stored kind
/// differs from `expected`.
ModuleParams read_checkpoint(const std::filesystem::path& path, ModuleKind expected);

}  // namespace gvssm
