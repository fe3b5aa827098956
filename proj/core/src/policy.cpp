#include "ngc/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"
#include "ngc/error.hpp"
#include "ngc/rng.hpp"

namespace ngc {
namespace {

using nlohmann::json;

constexpr std::array<BlockKind, 3> kAttentionKinds = {BlockKind::Q, BlockKind::K, BlockKind::V};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::size_t parse_count(std::string_view s, const char* what) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc{} && ptr == s.data() + s.size() && !s.empty(), ErrorCode::ParseError,
          std::string("bad ") + what + " '" + std::string(s) + "'");
  return v;
}

double parse_ratio(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc{} && ptr == s.data() + s.size() && !s.empty(), ErrorCode::ParseError,
          "bad ratio '" + std::string(s) + "'");
  return v;
}

std::string format_ratio(double r) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, r);
  return std::string(buf, ptr);
}

char kind_letter(BlockKind k) {
  switch (k) {
    case BlockKind::Q: return 'q';
    case BlockKind::K: return 'k';
    case BlockKind::V: return 'v';
    case BlockKind::O: return 'o';
    default: return '?';
  }
}

std::optional<BlockKind> letter_kind(char c) {
  switch (c) {
    case 'q': return BlockKind::Q;
    case 'k': return BlockKind::K;
    case 'v': return BlockKind::V;
    case 'o': return BlockKind::O;
    default: return std::nullopt;
  }
}

// Input-side merge of `kind` over disjoint adjacent layer pairs.
std::vector<MergeSet> same_kind_sets(BlockKind kind, std::size_t layers) {
  std::vector<MergeSet> sets;
  for (std::size_t l = 0; l + 1 < layers; l += 2) {
    sets.push_back({SideKey{{l, kind}, Side::In}, SideKey{{l + 1, kind}, Side::In}});
  }
  return sets;
}

std::vector<BlockKind> canonical_scope(std::set<BlockKind> kinds) {
  std::vector<BlockKind> out;
  for (BlockKind k : kAllBlockKinds)
    if (kinds.count(k)) out.push_back(k);
  return out;
}

std::vector<InterLink> parse_links(std::string_view text) {
  std::vector<InterLink> links;
  if (text.empty()) return links;
  for (std::string_view group : split(text, '!')) {
    if (group.empty()) continue;
    const std::size_t gt = group.find('>');
    require(gt != std::string_view::npos, ErrorCode::ParseError, "link needs '>': " + std::string(group));
    InterLink link;
    link.src = parse_count(group.substr(0, gt), "link source");
    const auto rest = split(group.substr(gt + 1), ':');
    require(rest.size() <= 3, ErrorCode::ParseError, "too many link fields: " + std::string(group));
    link.dst = parse_count(rest[0], "link destination");
    if (rest.size() > 1) link.delay = parse_count(rest[1], "link delay");
    if (rest.size() > 2) link.hold_period = parse_count(rest[2], "link hold period");
    links.push_back(link);
  }
  return links;
}

Policy parse_named(std::string_view body, const ModelShape& shape) {
  Policy p;
  p.form = PolicyForm::Named;
  std::set<BlockKind> scope;
  std::set<BlockKind> merged;
  for (std::string_view tok : split(body, '-')) {
    require(!tok.empty() && tok.size() <= 3, ErrorCode::ParseError, "bad policy token '" + std::string(tok) + "'");
    std::vector<BlockKind> kinds;
    for (char c : tok) {
      const auto k = letter_kind(c);
      require(k.has_value(), ErrorCode::ParseError, "unknown kind letter in '" + std::string(tok) + "'");
      kinds.push_back(*k);
    }
    const bool doubled = kinds.size() == 2 && kinds[0] == kinds[1];
    if (doubled) kinds.resize(1);
    for (BlockKind k : kinds) {
      require(scope.insert(k).second, ErrorCode::ParseError,
              "kind '" + std::string(1, kind_letter(k)) + "' listed twice");
      if (doubled) merged.insert(k);
    }
  }
  p.scope = canonical_scope(scope);
  for (BlockKind k : p.scope)
    if (merged.count(k))
      for (auto& s : same_kind_sets(k, shape.layers)) p.merge_sets.push_back(std::move(s));
  return p;
}

Policy parse_hybrid(std::string_view body) {
  Policy p;
  p.form = PolicyForm::Hybrid;
  std::set<BlockKind> scope(kAttentionKinds.begin(), kAttentionKinds.end());
  if (!body.empty()) {
    for (std::string_view set_text : split(body, ';')) {
      MergeSet set;
      for (std::string_view item : split(set_text, ',')) {
        const auto key = parse_side_key(item);
        require(key.has_value(), ErrorCode::ParseError, "bad side key '" + std::string(item) + "'");
        set.push_back(*key);
        scope.insert(key->block.kind);
      }
      p.merge_sets.push_back(std::move(set));
    }
  }
  p.scope = canonical_scope(scope);
  return p;
}

// Rendering as a named policy is possible only when the merge sets are
// exactly the doubled-kind pairs.
std::optional<std::string> try_render_named(const Policy& p) {
  if (p.form != PolicyForm::Named) return std::nullopt;
  std::string out;
  std::set<BlockKind> merged;
  for (const auto& s : p.merge_sets) {
    if (s.empty()) return std::nullopt;
    merged.insert(s.front().block.kind);
  }
  for (BlockKind k : p.scope) {
    const char c = kind_letter(k);
    if (c == '?') return std::nullopt;
    if (!out.empty()) out += '-';
    out += c;
    if (merged.count(k)) out += c;
  }
  return out;
}

void check_links(const Policy& p) {
  for (const auto& l : p.links) {
    require(l.src < p.merge_sets.size() && l.dst < p.merge_sets.size(), ErrorCode::ParseError,
            "link references a missing merge set");
    require(l.src != l.dst, ErrorCode::ParseError, "link must join two different merge sets");
    require(l.hold_period >= 1, ErrorCode::ParseError, "hold period must be at least 1");
  }
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

std::vector<BlockId> Policy::replaced_blocks(const ModelShape& shape) const {
  std::vector<BlockId> out;
  for (std::size_t l = 0; l < shape.layers; ++l)
    for (BlockKind k : scope) out.push_back({l, k});
  return out;
}

std::optional<std::size_t> Policy::merge_set_of(const SideKey& key) const {
  for (std::size_t i = 0; i < merge_sets.size(); ++i)
    if (std::find(merge_sets[i].begin(), merge_sets[i].end(), key) != merge_sets[i].end()) return i;
  return std::nullopt;
}

void normalize(Policy& p, const ModelShape& shape) {
  require(p.ratio > 0.0 && p.ratio <= 1.0, ErrorCode::ParseError, "ratio must lie in (0, 1]");
  p.scope = canonical_scope(std::set<BlockKind>(p.scope.begin(), p.scope.end()));
  std::set<SideKey> seen;
  for (auto& set : p.merge_sets) {
    require(set.size() >= 2, ErrorCode::ParseError, "a merge set needs at least two members");
    for (const auto& key : set) {
      require(shape.contains(key.block), ErrorCode::UnknownBlock, "no block " + key.block.name());
      require(std::find(p.scope.begin(), p.scope.end(), key.block.kind) != p.scope.end(),
              ErrorCode::UnknownBlock, key.block.name() + " is not replaced by this policy");
      require(seen.insert(key).second, ErrorCode::ParseError, key.name() + " appears in two merge sets");
    }
    std::sort(set.begin(), set.end());
    if (p.form == PolicyForm::Named) {
      const bool mixed = std::any_of(set.begin(), set.end(), [&](const SideKey& k) { return k.side != set[0].side; });
      require(!mixed, ErrorCode::InvalidMerge, "named policies merge a single side");
    }
  }
  // Links index merge sets, so only reorder when there are none.
  if (p.links.empty()) std::sort(p.merge_sets.begin(), p.merge_sets.end());
  check_links(p);
}

Policy parse_policy(std::string_view spec, const ModelShape& shape, double default_ratio) {
  std::string text = lower(spec);
  text.erase(std::remove_if(text.begin(), text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }),
             text.end());
  require(!text.empty(), ErrorCode::ParseError, "empty policy");
  std::string_view rest = text;

  double ratio = default_ratio;
  if (const auto at = rest.rfind('@'); at != std::string_view::npos) {
    ratio = parse_ratio(rest.substr(at + 1));
    rest = rest.substr(0, at);
  }
  std::string_view links_text;
  if (const auto bang = rest.find('!'); bang != std::string_view::npos) {
    links_text = rest.substr(bang + 1);
    rest = rest.substr(0, bang);
  }

  constexpr std::string_view kHybrid = "hybrid:";
  Policy p = rest.substr(0, kHybrid.size()) == kHybrid ? parse_hybrid(rest.substr(kHybrid.size()))
                                                        : parse_named(rest, shape);
  p.links = parse_links(links_text);
  p.ratio = ratio;
  normalize(p, shape);
  return p;
}

std::string render_policy(const Policy& p) {
  std::string out;
  if (auto named = try_render_named(p)) {
    out = *named;
  } else {
    out = "hybrid:";
    for (std::size_t i = 0; i < p.merge_sets.size(); ++i) {
      if (i) out += ';';
      for (std::size_t j = 0; j < p.merge_sets[i].size(); ++j) {
        if (j) out += ',';
        out += p.merge_sets[i][j].name();
      }
    }
  }
  for (const auto& l : p.links) {
    out += '!' + std::to_string(l.src) + '>' + std::to_string(l.dst) + ':' + std::to_string(l.delay) + ':' +
           std::to_string(l.hold_period);
  }
  out += '@' + format_ratio(p.ratio);
  return out;
}

std::string policy_to_json(const Policy& p) {
  json j;
  j["form"] = p.form == PolicyForm::Named ? "named" : "hybrid";
  j["scope"] = json::array();
  for (BlockKind k : p.scope) j["scope"].push_back(std::string(to_string(k)));
  j["merge_sets"] = json::array();
  for (const auto& s : p.merge_sets) {
    json items = json::array();
    for (const auto& k : s) items.push_back(k.name());
    j["merge_sets"].push_back(items);
  }
  j["links"] = json::array();
  for (const auto& l : p.links)
    j["links"].push_back({{"src", l.src}, {"dst", l.dst}, {"delay", l.delay}, {"hold_period", l.hold_period}});
  j["ratio"] = p.ratio;
  j["spec"] = render_policy(p);
  return j.dump(2);
}

Policy policy_from_json(const std::string& text, const ModelShape& shape) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("policy json: ") + e.what());
  }
  try {
    Policy p;
    const std::string form = j.at("form").get<std::string>();
    require(form == "named" || form == "hybrid", ErrorCode::ParseError, "unknown policy form '" + form + "'");
    p.form = form == "named" ? PolicyForm::Named : PolicyForm::Hybrid;
    for (const auto& k : j.at("scope")) {
      const auto kind = parse_block_kind(k.get<std::string>());
      require(kind.has_value(), ErrorCode::ParseError, "unknown kind in scope");
      p.scope.push_back(*kind);
    }
    for (const auto& s : j.at("merge_sets")) {
      MergeSet set;
      for (const auto& item : s) {
        const auto key = parse_side_key(item.get<std::string>());
        require(key.has_value(), ErrorCode::ParseError, "bad side key in merge set");
        set.push_back(*key);
      }
      p.merge_sets.push_back(std::move(set));
    }
    if (j.contains("links"))
      for (const auto& l : j.at("links"))
        p.links.push_back({l.at("src").get<std::size_t>(), l.at("dst").get<std::size_t>(),
                           l.value("delay", std::size_t{0}), l.value("hold_period", std::size_t{1})});
    p.ratio = j.value("ratio", 1.0);
    normalize(p, shape);
    return p;
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("policy json: ") + e.what());
  }
}

std::optional<PolicyFamily> parse_policy_family(std::string_view text) {
  const std::string t = lower(text);
  if (t == "none") return PolicyFamily::None;
  if (t == "adjacent_same_kind") return PolicyFamily::AdjacentSameKind;
  if (t == "adjacent_cross_kind") return PolicyFamily::AdjacentCrossKind;
  if (t == "hybrid_bank") return PolicyFamily::HybridBank;
  return std::nullopt;
}

std::string_view to_string(PolicyFamily family) {
  switch (family) {
    case PolicyFamily::None: return "none";
    case PolicyFamily::AdjacentSameKind: return "adjacent_same_kind";
    case PolicyFamily::AdjacentCrossKind: return "adjacent_cross_kind";
    case PolicyFamily::HybridBank: return "hybrid_bank";
  }
  return "?";
}

std::vector<std::string> hybrid_bank_specs(const ModelShape& shape) {
  auto key = [](std::size_t l, char k) { return "L" + std::to_string(l) + "." + std::string(1, k) + ".in"; };
  auto join = [](const std::vector<std::string>& sets) {
    std::string out = "hybrid:";
    for (std::size_t i = 0; i < sets.size(); ++i) out += (i ? ";" : "") + sets[i];
    return out;
  };
  std::vector<std::string> k_qv, k_cross, per_layer;
  for (std::size_t l = 0; l + 1 < shape.layers; l += 2) {
    k_qv.push_back(key(l, 'K') + "," + key(l + 1, 'K'));
    k_qv.push_back(key(l, 'Q') + "," + key(l, 'V'));
    k_qv.push_back(key(l + 1, 'Q') + "," + key(l + 1, 'V'));
    k_cross.push_back(key(l, 'K') + "," + key(l + 1, 'K'));
    k_cross.push_back(key(l, 'Q') + "," + key(l + 1, 'V'));
  }
  for (std::size_t l = 0; l < shape.layers; ++l)
    per_layer.push_back(key(l, 'Q') + "," + key(l, 'K') + "," + key(l, 'V'));
  std::vector<std::string> out;
  if (!k_qv.empty()) out.push_back(join(k_qv));
  if (!k_cross.empty()) out.push_back(join(k_cross));
  out.push_back(join(per_layer));
  return out;
}

std::vector<Policy> enumerate_policies(const ModelShape& shape, PolicyFamily family, double ratio) {
  const std::string suffix = "@" + format_ratio(ratio);
  std::vector<Policy> out{parse_policy("q-k-v" + suffix, shape)};
  if (family == PolicyFamily::None || shape.layers < 2) {
    if (family == PolicyFamily::HybridBank)
      for (const auto& s : hybrid_bank_specs(shape)) out.push_back(parse_policy(s + suffix, shape));
    return out;
  }
  switch (family) {
    case PolicyFamily::AdjacentSameKind:
      for (unsigned mask = 1; mask < 8; ++mask) {
        std::string spec;
        for (unsigned b = 0; b < 3; ++b) {
          if (!spec.empty()) spec += '-';
          const char c = kind_letter(kAttentionKinds[b]);
          spec += c;
          if (mask & (1u << b)) spec += c;
        }
        out.push_back(parse_policy(spec + suffix, shape));
      }
      break;
    case PolicyFamily::AdjacentCrossKind: {
      // Partial matchings between the kinds of layer ℓ and layer ℓ+1 with
      // differing kinds, enumerated depth-first over source kinds.
      std::vector<std::pair<BlockKind, BlockKind>> current;
      std::vector<std::vector<std::pair<BlockKind, BlockKind>>> matchings;
      auto rec = [&](auto&& self, std::size_t i, unsigned used) -> void {
        if (i == kAttentionKinds.size()) {
          if (!current.empty()) matchings.push_back(current);
          return;
        }
        self(self, i + 1, used);
        for (std::size_t j = 0; j < kAttentionKinds.size(); ++j) {
          if (j == i || (used & (1u << j))) continue;
          current.emplace_back(kAttentionKinds[i], kAttentionKinds[j]);
          self(self, i + 1, used | (1u << j));
          current.pop_back();
        }
      };
      rec(rec, 0, 0);
      for (const auto& m : matchings) {
        Policy p;
        p.form = PolicyForm::Hybrid;
        p.scope = {kAttentionKinds.begin(), kAttentionKinds.end()};
        p.ratio = ratio;
        for (std::size_t l = 0; l + 1 < shape.layers; l += 2)
          for (const auto& [a, b] : m)
            p.merge_sets.push_back({SideKey{{l, a}, Side::In}, SideKey{{l + 1, b}, Side::In}});
        normalize(p, shape);
        out.push_back(std::move(p));
      }
      break;
    }
    case PolicyFamily::HybridBank:
      for (const auto& s : hybrid_bank_specs(shape)) out.push_back(parse_policy(s + suffix, shape));
      break;
    case PolicyFamily::None:
      break;
  }
  return out;
}

std::size_t MetricSpec::r_tilde(std::size_t r) const {
  return static_cast<std::size_t>(std::ceil(r_tilde_factor * static_cast<double>(r) - 1e-12));
}

std::size_t MetricSpec::parameters(std::size_t r) const {
  switch (kind) {
    case MetricKind::DotProduct: return 0;
    case MetricKind::SharedBilinear: return r * r_tilde(r);
    case MetricKind::Bilinear: return 2 * r * r_tilde(r);
  }
  return 0;
}

IntraMetric MetricSpec::instantiate(std::size_t r, std::uint64_t stream) const {
  if (kind == MetricKind::DotProduct) return IntraMetric::dot_product();
  return IntraMetric::random(kind, r, r_tilde(r), activation, seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
}

bool RankAllocation::within_budget() const {
  if (ratio >= 1.0) return true;
  // Compare ngc ≤ ratio·dense without rounding the product.
  return static_cast<double>(ngc_parameters) <= ratio * static_cast<double>(dense_parameters);
}

RankAllocation rank_for_budget(const Policy& policy, const ModelShape& shape, const MetricSpec& metric) {
  require(policy.ratio > 0.0 && policy.ratio <= 1.0, ErrorCode::InvalidInput, "ratio must lie in (0, 1]");
  const auto blocks = policy.replaced_blocks(shape);
  require(!blocks.empty(), ErrorCode::InvalidInput, "policy replaces no blocks");
  std::map<BlockId, std::size_t> index;
  for (std::size_t i = 0; i < blocks.size(); ++i) index[blocks[i]] = i;

  UnionFind uf(blocks.size());
  for (const auto& set : policy.merge_sets) {
    for (const auto& key : set)
      require(index.count(key.block), ErrorCode::UnknownBlock, key.block.name() + " is not replaced");
    for (std::size_t i = 1; i < set.size(); ++i) uf.unite(index[set[0].block], index[set[i].block]);
  }

  RankAllocation alloc;
  alloc.ratio = policy.ratio;
  alloc.merge_set_rank.assign(policy.merge_sets.size(), 0);

  std::map<std::size_t, std::vector<std::size_t>> components;
  for (std::size_t i = 0; i < blocks.size(); ++i) components[uf.find(i)].push_back(i);

  for (const auto& [root, members] : components) {
    std::size_t dense = 0, rows = 0, cap = 0;
    bool first = true;
    for (std::size_t i : members) {
      const BlockDims d = shape.dims(blocks[i].kind);
      dense += d.n_out * d.n_in;
      cap = first ? std::min(d.n_out, d.n_in) : std::min(cap, std::min(d.n_out, d.n_in));
      first = false;
      for (Side side : {Side::Out, Side::In})
        if (!policy.merge_set_of({blocks[i], side})) rows += d.on(side);
    }
    for (std::size_t m = 0; m < policy.merge_sets.size(); ++m) {
      const auto& set = policy.merge_sets[m];
      if (uf.find(index[set[0].block]) != root) continue;
      std::size_t widest = 0;
      for (const auto& key : set) widest = std::max(widest, shape.dims(key.block.kind).on(key.side));
      rows += widest;
    }
    const std::size_t n_blocks = members.size();
    const auto cost = [&](std::size_t r) { return rows * r + n_blocks * metric.parameters(r); };

    std::size_t r = 0;
    if (policy.ratio >= 1.0) {
      r = cap;
    } else {
      const double budget = policy.ratio * static_cast<double>(dense);
      r = static_cast<std::size_t>(std::floor(budget / static_cast<double>(rows)));
      r = std::min(r, cap);
      while (r > 0 && static_cast<double>(cost(r)) > budget) --r;
    }
    if (r < 1)
      fail(ErrorCode::BudgetTooSmall, "ratio " + format_ratio(policy.ratio) + " cannot afford rank 1 for " +
                                          blocks[members.front()].name());

    for (std::size_t i : members) alloc.block_rank[blocks[i]] = r;
    for (std::size_t m = 0; m < policy.merge_sets.size(); ++m)
      if (uf.find(index[policy.merge_sets[m][0].block]) == root) alloc.merge_set_rank[m] = r;
    alloc.dense_parameters += dense;
    alloc.ngc_parameters += cost(r);
  }
  return alloc;
}

StateBlock SharedStates::view(const BlockId& id) const {
  const auto it = bindings.find(id);
  require(it != bindings.end(), ErrorCode::UnknownBlock, "no states bound for " + id.name());
  const StateBinding& b = it->second;
  StateBlock block{states[b.out_state].top_rows(b.out_rows), states[b.in_state].top_rows(b.in_rows),
                   metrics.at(id), id.name()};
  return block;
}

std::size_t SharedStates::state_of(const SideKey& key) const {
  const auto it = bindings.find(key.block);
  require(it != bindings.end(), ErrorCode::UnknownBlock, "no states bound for " + key.block.name());
  return key.side == Side::In ? it->second.in_state : it->second.out_state;
}

std::size_t SharedStates::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : states) n += s.size();
  for (const auto& [id, m] : metrics) n += m.parameter_count();
  return n;
}

SharedStates merge_states(const Policy& policy, const RankAllocation& allocation,
                          const std::map<BlockId, Matrix>& targets, const MetricSpec& metric) {
  require(allocation.merge_set_rank.size() == policy.merge_sets.size(), ErrorCode::PolicyMismatch,
          "allocation does not match the policy's merge sets");
  for (const auto& [id, r] : allocation.block_rank)
    require(targets.count(id), ErrorCode::PolicyMismatch, "missing target for " + id.name());

  SharedStates out;
  std::map<SideKey, std::size_t> shared_index;

  for (std::size_t m = 0; m < policy.merge_sets.size(); ++m) {
    const auto& set = policy.merge_sets[m];
    if (policy.form == PolicyForm::Named) {
      for (const auto& key : set)
        require(key.side == set[0].side, ErrorCode::InvalidMerge, "named policies merge a single side");
    }
    const std::size_t r = allocation.merge_set_rank[m];
    std::size_t width = 0, height = 0;
    std::vector<Matrix> parts;
    for (const auto& key : set) {
      const auto it = targets.find(key.block);
      require(it != targets.end(), ErrorCode::PolicyMismatch, "missing target for " + key.block.name());
      // Rows index the neurons of the other side; columns index the shared ones.
      Matrix part = key.side == Side::In ? it->second : it->second.transpose();
      width = std::max(width, part.cols());
      height += part.rows();
      parts.push_back(std::move(part));
    }
    Matrix stacked(height, width);
    std::size_t row = 0;
    for (const auto& part : parts) {
      stacked.set_block(row, 0, part);
      row += part.rows();
    }
    require(r <= std::min(height, width), ErrorCode::RankError, "merge rank exceeds the stacked matrix");
    const Factorization f = truncate_factor(svd(stacked), r);
    std::string name;
    for (const auto& key : set) name += (name.empty() ? "" : "+") + key.name();
    out.states.push_back(f.b);
    out.state_names.push_back(name);
    for (const auto& key : set) shared_index[key] = out.states.size() - 1;
  }

  std::uint64_t stream = 0;
  for (const auto& [id, r] : allocation.block_rank) {
    const Matrix& w = targets.at(id);
    const SideKey in_key{id, Side::In}, out_key{id, Side::Out};
    const auto in_it = shared_index.find(in_key);
    const auto out_it = shared_index.find(out_key);
    StateBinding bind{0, 0, w.rows(), w.cols()};

    auto push = [&](Matrix s, const std::string& name) {
      out.states.push_back(std::move(s));
      out.state_names.push_back(name);
      return out.states.size() - 1;
    };

    if (in_it == shared_index.end() && out_it == shared_index.end()) {
      const StateBlock b = factorize_block(w, r, id.name());
      bind.out_state = push(b.q_out, out_key.name());
      bind.in_state = push(b.q_in, in_key.name());
    } else if (out_it == shared_index.end()) {
      bind.in_state = in_it->second;
      const Matrix q_in = out.states[bind.in_state].top_rows(w.cols());
      bind.out_state = push(least_squares(q_in, w.transpose(), 0.0).transpose(), out_key.name());
    } else if (in_it == shared_index.end()) {
      bind.out_state = out_it->second;
      const Matrix q_out = out.states[bind.out_state].top_rows(w.rows());
      bind.in_state = push(least_squares(q_out, w, 0.0).transpose(), in_key.name());
    } else {
      bind.out_state = out_it->second;
      bind.in_state = in_it->second;
    }
    require(out.states[bind.in_state].cols() == r && out.states[bind.out_state].cols() == r, ErrorCode::RankError,
            "state rank disagrees with the allocation for " + id.name());
    out.bindings[id] = bind;
    out.metrics[id] = metric.instantiate(r, stream++);
  }
  return out;
}

AugmentedSharing::AugmentedSharing(std::size_t delay, std::size_t hold_period, std::size_t signal_dim)
    : delay_(delay), hold_(hold_period), dim_(signal_dim) {
  require(hold_period >= 1, ErrorCode::InvalidInput, "hold period must be at least 1");
  require(signal_dim >= 1, ErrorCode::InvalidInput, "signal dimension must be positive");
  const std::size_t reg = (delay_ + 1) * dim_;
  shift_ = Matrix(reg, reg);
  for (std::size_t j = 0; j < delay_; ++j)
    for (std::size_t c = 0; c < dim_; ++c) shift_(j * dim_ + c, (j + 1) * dim_ + c) = 1.0;
  inject_ = Matrix(dim_, reg);
  readout_ = Matrix(reg, dim_);
  for (std::size_t c = 0; c < dim_; ++c) {
    inject_(c, c) = 1.0;
    readout_(delay_ * dim_ + c, c) = 1.0;
  }
}

std::size_t AugmentedSharing::state_dim() const { return (delay_ + 1) * dim_ + (hold_ > 1 ? dim_ : 0); }

Matrix AugmentedSharing::run(const Matrix& signal) const {
  require(signal.cols() == dim_, ErrorCode::ShapeError, "signal width does not match the link");
  Matrix out(signal.rows(), dim_);
  Matrix reg(1, (delay_ + 1) * dim_);
  Matrix held(1, dim_);
  for (std::size_t t = 0; t < signal.rows(); ++t) {
    reg = matmul(reg, shift_) + matmul(Matrix::row_vector(signal.row(t)), inject_);
    Matrix y = matmul(reg, readout_);
    if (hold_ > 1) {
      if (t % hold_ == 0) held = y;
      y = held;
    }
    out.set_block(t, 0, y);
  }
  return out;
}

AugmentedSharing compile_delayed_link(const InterLink& link, std::size_t signal_dim) {
  return AugmentedSharing(link.delay, link.hold_period, signal_dim);
}

}  // namespace ngc
