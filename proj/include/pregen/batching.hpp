#ifndef PREGEN_BATCHING_HPP
#define PREGEN_BATCHING_HPP

#include "pregen/manifest.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace pregen {

struct BatchPlan {
  bool hard_negatives = true;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> batches;  // triplet indices
  std::vector<std::size_t> dropped;               // trailing singleton, if any

  bool operator==(const BatchPlan&) const = default;
};

/// Source-based hard-negative batching.
///
/// Hard mode buckets triplets by group_key, shuffles bucket order and the order
/// inside each bucket, then fills batches with whole buckets: the first pending
/// bucket that fits the remaining capacity goes in next, and a bucket is split
/// only when no pending bucket fits. Random mode is a single global shuffle.
/// Either way batches are chunked to `batch_size`; a trailing batch of one is
/// dropped.
BatchPlan build_batches(const std::vector<TripletRecord>& triplets, std::size_t batch_size, std::uint64_t seed,
                        bool hard_negatives);

/// Number of unordered in-batch triplet pairs that share a group_key.
std::size_t same_group_pairs(const BatchPlan& plan, const std::vector<TripletRecord>& triplets);

/// Text form: '#'-prefixed metadata lines, then one line of indices per batch.
std::string format_batch_plan(const BatchPlan& plan);
BatchPlan parse_batch_plan(std::istream& in);

}  // namespace pregen

#endif  // PREGEN_BATCHING_HPP
