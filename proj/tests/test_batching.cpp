#include "pregen/batching.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace pregen;

namespace {

std::vector<TripletRecord> triplets_with_groups(const std::vector<std::string>& groups) {
  std::vector<TripletRecord> out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    out.push_back({"q" + std::to_string(i), "t" + std::to_string(i), "", groups[i]});
  }
  return out;
}

std::vector<std::size_t> covered(const BatchPlan& plan) {
  std::vector<std::size_t> all;
  for (const auto& b : plan.batches) all.insert(all.end(), b.begin(), b.end());
  all.insert(all.end(), plan.dropped.begin(), plan.dropped.end());
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

TEST_CASE("hard mode keeps a group that fits in one batch together") {
  const auto t = triplets_with_groups({"A", "B", "A", "C", "B", "A"});
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto plan = build_batches(t, 3, seed, true);
    bool together = false;
    for (const auto& b : plan.batches) {
      together = together || std::set<std::size_t>(b.begin(), b.end()) == std::set<std::size_t>{0, 2, 5};
    }
    CHECK(together);
    CHECK(covered(plan) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  }
}

TEST_CASE("a trailing singleton batch is dropped") {
  const auto t = triplets_with_groups({"a", "b", "c", "d", "e", "f", "g"});
  for (bool hard : {true, false}) {
    const auto plan = build_batches(t, 3, 1, hard);
    REQUIRE(plan.batches.size() == 2);
    CHECK(plan.batches[0].size() == 3);
    CHECK(plan.batches[1].size() == 3);
    CHECK(plan.dropped.size() == 1);
    CHECK(covered(plan).size() == 7);
  }
}

TEST_CASE("plans are deterministic and seed dependent") {
  std::vector<std::string> groups;
  for (int i = 0; i < 40; ++i) groups.push_back("g" + std::to_string(i % 13));
  const auto t = triplets_with_groups(groups);
  for (bool hard : {true, false}) {
    CHECK(build_batches(t, 8, 5, hard) == build_batches(t, 8, 5, hard));
    CHECK(build_batches(t, 8, 5, hard) != build_batches(t, 8, 6, hard));
  }
}

TEST_CASE("oversized groups are split across batches") {
  const auto t = triplets_with_groups({"big", "big", "big", "big", "big", "x", "y"});
  const auto plan = build_batches(t, 2, 3, true);
  CHECK(covered(plan).size() == 7);
  for (const auto& b : plan.batches) CHECK(b.size() <= 2);
}

TEST_CASE("all-singleton groups make both modes coincide") {
  std::vector<std::string> groups;
  for (int i = 0; i < 30; ++i) groups.push_back("k" + std::to_string(29 - i));
  const auto t = triplets_with_groups(groups);
  const auto hard = build_batches(t, 4, 9, true);
  const auto random = build_batches(t, 4, 9, false);
  CHECK(hard.batches == random.batches);
  CHECK(hard.dropped == random.dropped);
}

TEST_CASE("hard mode puts more same-group pairs in a batch than random mode") {
  std::vector<std::string> groups;
  for (int i = 0; i < 192; ++i) groups.push_back("c" + std::to_string(i / 3));
  const auto t = triplets_with_groups(groups);
  double random_mean = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    random_mean += static_cast<double>(same_group_pairs(build_batches(t, 32, seed, false), t)) / 20.0;
  }
  const auto hard = same_group_pairs(build_batches(t, 32, 0, true), t);
  CHECK(static_cast<double>(hard) > random_mean);
  CHECK(hard >= 180);  // at most one group per batch boundary is split
}

TEST_CASE("plan text round trip") {
  const auto t = triplets_with_groups({"a", "a", "b", "c", "c", "c", "d"});
  for (bool hard : {true, false}) {
    const auto plan = build_batches(t, 3, 42, hard);
    const auto text = format_batch_plan(plan);
    std::istringstream in(text);
    CHECK(parse_batch_plan(in) == plan);
    CHECK(text.find(hard ? "# mode hard" : "# mode random") != std::string::npos);
  }
  std::istringstream bad("# pregen batch plan v1\n1 2 x\n");
  CHECK_THROWS_AS(parse_batch_plan(bad), Error);
  std::istringstream headerless("1 2\n");
  CHECK_THROWS_AS(parse_batch_plan(headerless), Error);
}

TEST_CASE("degenerate inputs") {
  CHECK_THROWS_AS(build_batches(triplets_with_groups({"a"}), 4, 0, true), Error);
  CHECK_THROWS_AS(build_batches(triplets_with_groups({"a", "b"}), 1, 0, true), Error);
}
