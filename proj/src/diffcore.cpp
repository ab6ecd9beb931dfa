#include "otnas/diffcore.hpp"

#include <array>

namespace otnas {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 6> kOpNames{{
    {OpKind::zero, "zero"},
    {OpKind::skip_connect, "skip_connect"},
    {OpKind::conv_3x3, "conv_3x3"},
    {OpKind::conv_1x1, "conv_1x1"},
    {OpKind::avg_pool_3x3, "avg_pool_3x3"},
    {OpKind::max_pool_3x3, "max_pool_3x3"},
}};

}  // namespace

std::string_view to_string(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

OpKind op_from_string(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown operation '" + std::string(name) + "'");
}

std::vector<OpKind> default_op_corpus() {
  std::vector<OpKind> ops;
  for (const auto& entry : kOpNames) ops.push_back(entry.first);
  return ops;
}

}  // namespace otnas
