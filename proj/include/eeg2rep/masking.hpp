#pragma once

#include "eeg2rep/rng.hpp"
#include "eeg2rep/types.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string_view>
#include <vector>

namespace eeg2rep {

enum class MaskStrategy { ssp, random, block };

std::string_view to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(std::string_view name);

struct MaskConfig {
  double rho = 0.5;  // fraction of patches hidden from the context encoder
  int beta = 3;      // preserved blocks (SSP)
  MaskStrategy strategy = MaskStrategy::ssp;
  int num_targets = 4;         // target blocks per sample (M)
  int num_views = 2;           // masked views per sample (N)
  int target_block_width = 0;  // 0 selects ceil(0.15 l)

  int resolved_target_width(int l) const;
};

void validate(const MaskConfig& cfg);

struct MaskPlan {
  IndexList preserved;                   // sorted, visible to the context encoder
  std::vector<IndexList> target_blocks;  // contiguous, sorted
  std::vector<IndexList> loss_indices;   // target_blocks[i] minus preserved
};

/// Number of patches kept visible: l - round(rho * l).
int preserved_count(int l, double rho);

/// ceil((1 - rho) * l / beta).
int ssp_block_size(int l, double rho, int beta);

/// The window [s - floor(w/2), s + floor((w-1)/2)] clipped to [0, l-1].
IndexList expand_block(int l, int start, int width);

/// Steps (2)-(4) of SSP preservation given explicit start points: expand,
/// union, then trim or top up to exactly `target` indices using `rng`.
/// Trimming never removes from the longest run of the union until every
/// other index is gone, and then only from that run's ends.
IndexList ssp_preserve_from_starts(int l, int block_size, std::span<const int> starts, int target, Rng& rng);

MaskPlan make_ssp_plan(int l, const MaskConfig& cfg, std::uint64_t seed);
MaskPlan make_random_plan(int l, const MaskConfig& cfg, std::uint64_t seed);
MaskPlan make_block_plan(int l, const MaskConfig& cfg, std::uint64_t seed);
/// Dispatches on cfg.strategy.
MaskPlan make_plan(int l, const MaskConfig& cfg, std::uint64_t seed);

/// N views of one sample. Target blocks are drawn once per sample and shared
/// by every view; each view draws its own preserved set.
std::vector<MaskPlan> make_views(int l, const MaskConfig& cfg, std::uint64_t seed);

/// Number of preserved <-> masked transitions along the sequence.
int boundary_count(std::span<const int> preserved, int l);

/// Lengths of maximal runs of consecutive preserved indices.
std::vector<int> preserved_runs(std::span<const int> preserved, int l);

struct MaskStats {
  MaskStrategy strategy;
  double mean_boundaries = 0.0;
  double mean_longest_run = 0.0;
  double mean_preserved = 0.0;
  std::map<int, long> run_length_histogram;
};

/// Aggregates boundary and run statistics over `trials` seeded plans.
MaskStats mask_statistics(int l, const MaskConfig& cfg, int trials, std::uint64_t seed);

}  // namespace eeg2rep
