#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace naslab {

/// Candidate operations on a cell edge. Enumeration order is the argmax tie-break order.
enum class OpKind {
  skip_connect,
  max_pool_3x3,
  avg_pool_3x3,
  sep_conv_3x3,
  sep_conv_5x5,
  sep_conv_7x7,
  dil_conv_3x3,
  dil_conv_5x5,
  conv_1x7_7x1,
  zero,
};

inline constexpr int kNumOps = 10;

inline constexpr std::array<OpKind, kNumOps> kAllOps{
    OpKind::skip_connect, OpKind::max_pool_3x3, OpKind::avg_pool_3x3, OpKind::sep_conv_3x3, OpKind::sep_conv_5x5,
    OpKind::sep_conv_7x7, OpKind::dil_conv_3x3, OpKind::dil_conv_5x5, OpKind::conv_1x7_7x1, OpKind::zero};

constexpr int op_index(OpKind op) { return static_cast<int>(op); }
constexpr OpKind op_from_index(int i) { return static_cast<OpKind>(i); }

std::string_view op_name(OpKind op);
std::optional<OpKind> parse_op(std::string_view tag);

}  // namespace naslab
