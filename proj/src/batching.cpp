#include "pregen/batching.hpp"

#include <algorithm>
#include <deque>
#include <istream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace pregen {

BatchPlan build_batches(const std::vector<TripletRecord>& triplets, std::size_t batch_size, std::uint64_t seed,
                        bool hard_negatives) {
  if (batch_size < 2) throw Error("build_batches: batch size must be >= 2");
  if (triplets.size() < 2) throw Error("build_batches: need at least 2 triplets");

  BatchPlan plan;
  plan.hard_negatives = hard_negatives;
  plan.batch_size = batch_size;
  plan.seed = seed;
  std::mt19937_64 rng(seed);

  std::vector<std::size_t> order;
  order.reserve(triplets.size());
  if (hard_negatives) {
    // Buckets in order of first appearance, so all-singleton groups shuffle exactly like random mode.
    std::map<std::string, std::size_t> bucket_of;
    std::vector<std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < triplets.size(); ++i) {
      const auto [it, fresh] = bucket_of.emplace(triplets[i].group_key, buckets.size());
      if (fresh) buckets.emplace_back();
      buckets[it->second].push_back(i);
    }
    std::shuffle(buckets.begin(), buckets.end(), rng);
    for (auto& b : buckets) std::shuffle(b.begin(), b.end(), rng);

    std::deque<std::vector<std::size_t>> pending(buckets.begin(), buckets.end());
    std::size_t room = batch_size;
    while (!pending.empty()) {
      auto fit = std::find_if(pending.begin(), pending.end(), [&](const auto& b) { return b.size() <= room; });
      if (fit != pending.end()) {
        order.insert(order.end(), fit->begin(), fit->end());
        room -= fit->size();
        pending.erase(fit);
      } else {
        auto& head = pending.front();
        order.insert(order.end(), head.begin(), head.begin() + static_cast<std::ptrdiff_t>(room));
        head.erase(head.begin(), head.begin() + static_cast<std::ptrdiff_t>(room));
        room = 0;
      }
      if (room == 0) room = batch_size;
    }
  } else {
    order.resize(triplets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
  }

  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
    if (batch.size() == 1) {
      plan.dropped = std::move(batch);
    } else {
      plan.batches.push_back(std::move(batch));
    }
  }
  return plan;
}

std::size_t same_group_pairs(const BatchPlan& plan, const std::vector<TripletRecord>& triplets) {
  std::size_t pairs = 0;
  for (const auto& batch : plan.batches) {
    std::map<std::string, std::size_t> counts;
    for (auto i : batch) counts[triplets.at(i).group_key]++;
    for (const auto& [key, n] : counts) pairs += n * (n - 1) / 2;
  }
  return pairs;
}

std::string format_batch_plan(const BatchPlan& plan) {
  std::ostringstream out;
  out << "# pregen batch plan v1\n";
  out << "# mode " << (plan.hard_negatives ? "hard" : "random") << '\n';
  out << "# batch_size " << plan.batch_size << '\n';
  out << "# seed " << plan.seed << '\n';
  out << "# dropped";
  for (auto i : plan.dropped) out << ' ' << i;
  out << '\n';
  for (const auto& batch : plan.batches) {
    for (std::size_t k = 0; k < batch.size(); ++k) out << (k ? " " : "") << batch[k];
    out << '\n';
  }
  return out.str();
}

BatchPlan parse_batch_plan(std::istream& in) {
  BatchPlan plan;
  std::string line;
  int number = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::istringstream fields(line);
    if (line[0] == '#') {
      std::string hash, key;
      fields >> hash >> key;
      if (key == "pregen") {
        header = true;
      } else if (key == "mode") {
        std::string mode;
        fields >> mode;
        if (mode != "hard" && mode != "random") throw Error("batch plan line " + std::to_string(number) + ": bad mode");
        plan.hard_negatives = mode == "hard";
      } else if (key == "batch_size") {
        fields >> plan.batch_size;
      } else if (key == "seed") {
        fields >> plan.seed;
      } else if (key == "dropped") {
        for (std::size_t i; fields >> i;) plan.dropped.push_back(i);
      }
      continue;
    }
    std::vector<std::size_t> batch;
    for (std::size_t i; fields >> i;) batch.push_back(i);
    if (!fields.eof() || batch.empty()) throw Error("batch plan line " + std::to_string(number) + ": expected indices");
    plan.batches.push_back(std::move(batch));
  }
  if (!header) throw Error("batch plan: missing header line");
  return plan;
}

}  // namespace pregen
