#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace ngc {

/// Weight-block kinds of one transformer layer.
enum class BlockKind { Q, K, V, O, UP, DOWN };

inline constexpr std::array<BlockKind, 6> kAllBlockKinds = {BlockKind::Q,  BlockKind::K,  BlockKind::V,
                                                            BlockKind::O,  BlockKind::UP, BlockKind::DOWN};

std::string_view to_string(BlockKind kind);
std::optional<BlockKind> parse_block_kind(std::string_view text);

enum class Side { In, Out };

std::string_view to_string(Side side);
std::optional<Side> parse_side(std::string_view text);

struct BlockId {
  std::size_t layer = 0;
  BlockKind kind = BlockKind::Q;

  auto operator<=>(const BlockId&) const = default;
  std::string name() const;  // e.g. "L0.Q"
};

/// One side of one block: the unit that owns an activation trace and a
/// neuronal-state matrix.
struct SideKey {
  BlockId block;
  Side side = Side::In;

  auto operator<=>(const SideKey&) const = default;
  std::string name() const;  // e.g. "L0.Q.in"
};

std::optional<BlockId> parse_block_id(std::string_view text);
std::optional<SideKey> parse_side_key(std::string_view text);

struct BlockDims {
  std::size_t n_out = 0;
  std::size_t n_in = 0;

  std::size_t on(Side side) const { return side == Side::In ? n_in : n_out; }
};

/// Layer geometry needed by policies and budgets.
struct ModelShape {
  std::size_t layers = 2;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;

  BlockDims dims(BlockKind kind) const;
  bool contains(const BlockId& id) const { return id.layer < layers; }
};

}  // namespace ngc
