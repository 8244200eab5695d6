#include "eeg2rep/masking.hpp"

#include <algorithm>
#include <cmath>

namespace eeg2rep {

std::string_view to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::ssp: return "ssp";
    case MaskStrategy::random: return "random";
    case MaskStrategy::block: return "block";
  }
  return "unknown";
}

MaskStrategy parse_mask_strategy(std::string_view name) {
  for (auto s : {MaskStrategy::ssp, MaskStrategy::random, MaskStrategy::block}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown masking strategy '" + std::string(name) + "'");
}

int MaskConfig::resolved_target_width(int l) const {
  const int w = target_block_width > 0 ? target_block_width : static_cast<int>(std::ceil(0.15 * l));
  return std::clamp(w, 1, std::max(l, 1));
}

void validate(const MaskConfig& cfg) {
  if (!(cfg.rho > 0.0 && cfg.rho < 1.0)) throw ConfigError("masking: rho must lie in (0, 1)");
  if (cfg.beta < 1) throw ConfigError("masking: beta must be >= 1");
  if (cfg.num_targets < 1) throw ConfigError("masking: num_targets must be >= 1");
  if (cfg.num_views < 1) throw ConfigError("masking: num_views must be >= 1");
  if (cfg.target_block_width < 0) throw ConfigError("masking: target_block_width must be >= 1 (or 0 for default)");
}

int preserved_count(int l, double rho) { return l - static_cast<int>(std::lround(rho * l)); }

int ssp_block_size(int l, double rho, int beta) {
  return static_cast<int>(std::ceil((1.0 - rho) * static_cast<double>(l) / static_cast<double>(beta)));
}

IndexList expand_block(int l, int start, int width) {
  const int lo = std::max(0, start - width / 2);
  const int hi = std::min(l - 1, start + (width - 1) / 2);
  IndexList out;
  for (int i = lo; i <= hi; ++i) out.push_back(i);
  return out;
}

namespace {

IndexList members(const std::vector<char>& in) {
  IndexList out;
  for (int i = 0; i < static_cast<int>(in.size()); ++i)
    if (in[i]) out.push_back(i);
  return out;
}

/// Removes and returns a uniformly chosen element of `pool`.
int take_random(IndexList& pool, Rng& rng) {
  const auto j = uniform_index(rng, pool.size());
  const int v = pool[j];
  pool[j] = pool.back();
  pool.pop_back();
  return v;
}

void check_count(int l, int target) {
  if (target < 1 || target > l) {
    throw ConfigError("masking: preserved count " + std::to_string(target) + " is invalid for l = " +
                      std::to_string(l));
  }
}

std::vector<IndexList> draw_target_blocks(int l, const MaskConfig& cfg, Rng& rng) {
  const int w = cfg.resolved_target_width(l);
  std::vector<IndexList> blocks;
  blocks.reserve(cfg.num_targets);
  for (int i = 0; i < cfg.num_targets; ++i) {
    const int start = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(l - w + 1)));
    IndexList b(w);
    for (int j = 0; j < w; ++j) b[j] = start + j;
    blocks.push_back(std::move(b));
  }
  return blocks;
}

MaskPlan finish_plan(int l, IndexList preserved, std::vector<IndexList> targets) {
  std::sort(preserved.begin(), preserved.end());
  std::vector<char> in(l, 0);
  for (int i : preserved) in[i] = 1;
  MaskPlan plan;
  plan.loss_indices.reserve(targets.size());
  for (const auto& b : targets) {
    IndexList loss;
    for (int j : b)
      if (!in[j]) loss.push_back(j);
    plan.loss_indices.push_back(std::move(loss));
  }
  plan.preserved = std::move(preserved);
  plan.target_blocks = std::move(targets);
  return plan;
}

IndexList preserve_ssp(int l, const MaskConfig& cfg, Rng& rng) {
  const int target = preserved_count(l, cfg.rho);
  check_count(l, target);
  if (target < cfg.beta) {
    throw ConfigError("masking: SSP cannot place " + std::to_string(cfg.beta) + " blocks in " +
                      std::to_string(target) + " preserved patches");
  }
  const int width = ssp_block_size(l, cfg.rho, cfg.beta);
  if (width > l) throw ConfigError("masking: SSP block size exceeds sequence length");
  IndexList pool(l);
  for (int i = 0; i < l; ++i) pool[i] = i;
  IndexList starts;
  for (int b = 0; b < cfg.beta; ++b) starts.push_back(take_random(pool, rng));
  return ssp_preserve_from_starts(l, width, starts, target, rng);
}

IndexList preserve_random(int l, const MaskConfig& cfg, Rng& rng) {
  const int target = preserved_count(l, cfg.rho);
  check_count(l, target);
  IndexList order(l);
  for (int i = 0; i < l; ++i) order[i] = i;
  shuffle(order.begin(), order.end(), rng);
  order.resize(target);
  return order;
}

IndexList preserve_block(int l, const MaskConfig& cfg, Rng& rng) {
  const int target = preserved_count(l, cfg.rho);
  check_count(l, target);
  const int masked = l - target;
  const int start = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(l - masked + 1)));
  IndexList out;
  for (int i = 0; i < l; ++i)
    if (i < start || i >= start + masked) out.push_back(i);
  return out;
}

IndexList preserve(int l, const MaskConfig& cfg, Rng& rng) {
  switch (cfg.strategy) {
    case MaskStrategy::ssp: return preserve_ssp(l, cfg, rng);
    case MaskStrategy::random: return preserve_random(l, cfg, rng);
    case MaskStrategy::block: return preserve_block(l, cfg, rng);
  }
  throw ConfigError("masking: unknown strategy");
}

MaskPlan plan_with(int l, const MaskConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (l < 1) throw ConfigError("masking: sequence length must be >= 1");
  Rng rng(seed);
  IndexList preserved = preserve(l, cfg, rng);
  auto targets = draw_target_blocks(l, cfg, rng);
  return finish_plan(l, std::move(preserved), std::move(targets));
}

}  // namespace

IndexList ssp_preserve_from_starts(int l, int block_size, std::span<const int> starts, int target, Rng& rng) {
  check_count(l, target);
  std::vector<char> in(l, 0);
  for (int s : starts) {
    if (s < 0 || s >= l) throw ConfigError("masking: SSP start point out of range");
    for (int i : expand_block(l, s, block_size)) in[i] = 1;
  }
  int count = static_cast<int>(std::count(in.begin(), in.end(), 1));
  if (count > target) {
    // Locate the (first) longest run; it is shielded from interior removals.
    int best_lo = 0, best_len = 0;
    for (int i = 0; i < l;) {
      if (!in[i]) {
        ++i;
        continue;
      }
      int j = i;
      while (j < l && in[j]) ++j;
      if (j - i > best_len) {
        best_len = j - i;
        best_lo = i;
      }
      i = j;
    }
    int lo = best_lo, hi = best_lo + best_len - 1;
    IndexList outside;
    for (int i = 0; i < l; ++i)
      if (in[i] && (i < lo || i > hi)) outside.push_back(i);
    while (count > target && !outside.empty()) {
      in[take_random(outside, rng)] = 0;
      --count;
    }
    while (count > target) {
      if (uniform_index(rng, 2) == 0) {
        in[lo++] = 0;
      } else {
        in[hi--] = 0;
      }
      --count;
    }
  } else if (count < target) {
    IndexList outside;
    for (int i = 0; i < l; ++i)
      if (!in[i]) outside.push_back(i);
    while (count < target) {
      in[take_random(outside, rng)] = 1;
      ++count;
    }
  }
  return members(in);
}

MaskPlan make_ssp_plan(int l, const MaskConfig& cfg, std::uint64_t seed) {
  MaskConfig c = cfg;
  c.strategy = MaskStrategy::ssp;
  return plan_with(l, c, seed);
}

MaskPlan make_random_plan(int l, const MaskConfig& cfg, std::uint64_t seed) {
  MaskConfig c = cfg;
  c.strategy = MaskStrategy::random;
  return plan_with(l, c, seed);
}

MaskPlan make_block_plan(int l, const MaskConfig& cfg, std::uint64_t seed) {
  MaskConfig c = cfg;
  c.strategy = MaskStrategy::block;
  return plan_with(l, c, seed);
}

MaskPlan make_plan(int l, const MaskConfig& cfg, std::uint64_t seed) { return plan_with(l, cfg, seed); }

std::vector<MaskPlan> make_views(int l, const MaskConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (l < 1) throw ConfigError("masking: sequence length must be >= 1");
  Rng target_rng(derive_seed(seed, {0}));
  const auto targets = draw_target_blocks(l, cfg, target_rng);
  std::vector<MaskPlan> views;
  views.reserve(cfg.num_views);
  for (int q = 0; q < cfg.num_views; ++q) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(q) + 1}));
    views.push_back(finish_plan(l, preserve(l, cfg, rng), targets));
  }
  return views;
}

int boundary_count(std::span<const int> preserved, int l) {
  std::vector<char> in(l, 0);
  for (int i : preserved) in[i] = 1;
  int n = 0;
  for (int i = 1; i < l; ++i) n += in[i] != in[i - 1];
  return n;
}

std::vector<int> preserved_runs(std::span<const int> preserved, int l) {
  std::vector<char> in(l, 0);
  for (int i : preserved) in[i] = 1;
  std::vector<int> runs;
  for (int i = 0; i < l;) {
    if (!in[i]) {
      ++i;
      continue;
    }
    int j = i;
    while (j < l && in[j]) ++j;
    runs.push_back(j - i);
    i = j;
  }
  return runs;
}

MaskStats mask_statistics(int l, const MaskConfig& cfg, int trials, std::uint64_t seed) {
  MaskStats stats;
  stats.strategy = cfg.strategy;
  for (int t = 0; t < trials; ++t) {
    const auto plan = make_plan(l, cfg, derive_seed(seed, {static_cast<std::uint64_t>(t)}));
    const auto runs = preserved_runs(plan.preserved, l);
    stats.mean_boundaries += boundary_count(plan.preserved, l);
    stats.mean_longest_run += runs.empty() ? 0 : *std::max_element(runs.begin(), runs.end());
    stats.mean_preserved += static_cast<double>(plan.preserved.size());
    for (int r : runs) ++stats.run_length_histogram[r];
  }
  if (trials > 0) {
    stats.mean_boundaries /= trials;
    stats.mean_longest_run /= trials;
    stats.mean_preserved /= trials;
  }
  return stats;
}

}  // namespace eeg2rep
