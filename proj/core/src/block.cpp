#include "ngc/block.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

namespace ngc {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

std::optional<std::size_t> parse_layer(std::string_view text) {
  if (text.size() < 2 || (text[0] != 'L' && text[0] != 'l')) return std::nullopt;
  std::size_t value = 0;
  const auto* first = text.data() + 1;
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

}  // namespace

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::Q: return "Q";
    case BlockKind::K: return "K";
    case BlockKind::V: return "V";
    case BlockKind::O: return "O";
    case BlockKind::UP: return "UP";
    case BlockKind::DOWN: return "DOWN";
  }
  return "?";
}

std::optional<BlockKind> parse_block_kind(std::string_view text) {
  const std::string u = upper(text);
  for (BlockKind k : kAllBlockKinds)
    if (u == to_string(k)) return k;
  return std::nullopt;
}

std::string_view to_string(Side side) { return side == Side::In ? "in" : "out"; }

std::optional<Side> parse_side(std::string_view text) {
  const std::string u = upper(text);
  if (u == "IN") return Side::In;
  if (u == "OUT") return Side::Out;
  return std::nullopt;
}

std::string BlockId::name() const { return "L" + std::to_string(layer) + "." + std::string(to_string(kind)); }

std::string SideKey::name() const { return block.name() + "." + std::string(to_string(side)); }

std::optional<BlockId> parse_block_id(std::string_view text) {
  const auto dot = text.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  auto layer = parse_layer(text.substr(0, dot));
  auto kind = parse_block_kind(text.substr(dot + 1));
  if (!layer || !kind) return std::nullopt;
  return BlockId{*layer, *kind};
}

std::optional<SideKey> parse_side_key(std::string_view text) {
  const auto dot = text.rfind('.');
  if (dot == std::string_view::npos) return std::nullopt;
  auto block = parse_block_id(text.substr(0, dot));
  auto side = parse_side(text.substr(dot + 1));
  if (!block || !side) return std::nullopt;
  return SideKey{*block, *side};
}

BlockDims ModelShape::dims(BlockKind kind) const {
  switch (kind) {
    case BlockKind::UP: return {d_ff, d_model};
    case BlockKind::DOWN: return {d_model, d_ff};
    default: return {d_model, d_model};
  }
}

}  // namespace ngc
