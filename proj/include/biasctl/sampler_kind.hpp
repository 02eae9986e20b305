#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace biasctl {

enum class SamplerKind { uhmc, ulmc, ahmc, almc };

inline std::string_view to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::uhmc: return "uhmc";
    case SamplerKind::ulmc: return "ulmc";
    case SamplerKind::ahmc: return "ahmc";
    case SamplerKind::almc: return "almc";
  }
  return "?";
}

inline SamplerKind parse_sampler_kind(std::string_view s) {
  if (s == "uhmc") return SamplerKind::uhmc;
  if (s == "ulmc") return SamplerKind::ulmc;
  if (s == "ahmc") return SamplerKind::ahmc;
  if (s == "almc") return SamplerKind::almc;
  throw std::invalid_argument("unknown sampler kind '" + std::string(s) + "'");
}

inline bool is_adjusted(SamplerKind k) { return k == SamplerKind::ahmc || k == SamplerKind::almc; }
inline bool is_langevin(SamplerKind k) { return k == SamplerKind::ulmc || k == SamplerKind::almc; }

}  // namespace biasctl
