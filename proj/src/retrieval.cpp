#include "pregen/retrieval.hpp"

#include "pregen/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace pregen {

namespace {

// Strict "ranks before": higher score, then smaller id.
struct RankOrder {
  const Vector<double>& scores;
  const std::vector<std::string>& ids;
  bool operator()(std::size_t a, std::size_t b) const {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return ids[a] < ids[b];
  }
};

void check_compatible(Variant trained, Variant requested) {
  if (trained == requested) return;
  if (trained == Variant::single_layer || requested == Variant::single_layer) {
    throw Error("cannot evaluate variant '" + to_string(requested) + "' with a '" + to_string(trained) +
                "' checkpoint: single_layer needs its own checkpoint");
  }
}

}  // namespace

EmbeddingMatrix embed_corpus(const Dataset& data, Role role, const ModelParams<float>& params,
                             const ModelConfig& config, int threads) {
  const auto& m = data.manifest();
  if (m.num_layers != config.num_layers || m.dim != config.dim) {
    throw Error("embed: dataset stacks are " + std::to_string(m.num_layers) + "x" + std::to_string(m.dim) +
                ", checkpoint expects " + std::to_string(config.num_layers) + "x" + std::to_string(config.dim));
  }
  EmbeddingMatrix out;
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    if (m.samples[i].role == role) {
      indices.push_back(i);
      out.ids.push_back(m.samples[i].sample_id);
    }
  }
  const Eigen::Index dim = config.resolved().output_dim;
  out.rows.resize(static_cast<Eigen::Index>(indices.size()), dim);
  std::vector<Vector<double>> rows(indices.size());
  parallel_for(indices.size(), threads > 0 ? threads : default_thread_count(), [&](std::size_t k) {
    const Matrix<float> input = data.stacks()[indices[k]].data;
    const Vector<double> e = forward(input, params, config, Mode::eval).cast<double>();
    const double norm = e.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw Error("embed: sample '" + out.ids[k] + "' has a zero-norm or non-finite embedding");
    }
    rows[k] = e / norm;
  });
  for (std::size_t k = 0; k < rows.size(); ++k) out.rows.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
  return out;
}

std::vector<std::size_t> rank(const Vector<double>& query, const EmbeddingMatrix& targets) {
  if (query.size() != targets.rows.cols()) {
    throw Error("rank: query has dimension " + std::to_string(query.size()) + ", targets have " +
                std::to_string(targets.rows.cols()));
  }
  const Vector<double> scores = targets.rows * query;
  std::vector<std::size_t> order(targets.ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), RankOrder{scores, targets.ids});
  return order;
}

std::map<int, double> recall_at_k(std::span<const std::size_t> ranks, std::span<const int> ks) {
  if (ranks.empty()) throw Error("recall_at_k: empty query set");
  std::map<int, double> out;
  for (int k : ks) {
    if (k < 1) throw Error("recall_at_k: k must be >= 1");
    std::size_t hits = 0;
    for (auto r : ranks) {
      if (r < 1) throw Error("recall_at_k: ranks are 1-based");
      if (r <= static_cast<std::size_t>(k)) ++hits;
    }
    out[k] = static_cast<double>(hits) / static_cast<double>(ranks.size());
  }
  return out;
}

RetrievalReport evaluate_embeddings(const Manifest& manifest, const EmbeddingMatrix& queries,
                                    const EmbeddingMatrix& targets, const EvalOptions& options) {
  if (manifest.triplets.empty()) throw Error("evaluate: manifest has no triplets (no ground truth)");
  if (queries.rows.cols() != targets.rows.cols()) throw Error("evaluate: query and target dimensions differ");
  std::unordered_map<std::string, std::size_t> query_index, target_index;
  for (std::size_t i = 0; i < queries.ids.size(); ++i) query_index.emplace(queries.ids[i], i);
  for (std::size_t i = 0; i < targets.ids.size(); ++i) target_index.emplace(targets.ids[i], i);

  RetrievalReport report;
  report.ks = options.ks;
  report.num_targets = targets.ids.size();
  report.queries.resize(manifest.triplets.size());
  std::vector<std::size_t> ranks(manifest.triplets.size());
  const int threads = options.threads > 0 ? options.threads : default_thread_count();
  parallel_for(manifest.triplets.size(), threads, [&](std::size_t n) {
    const auto& t = manifest.triplets[n];
    const auto qi = query_index.find(t.query_id);
    const auto ti = target_index.find(t.target_id);
    if (qi == query_index.end()) throw Error("evaluate: query '" + t.query_id + "' was not embedded");
    if (ti == target_index.end()) throw Error("evaluate: ground truth '" + t.target_id + "' is not in the gallery");
    const Vector<double> scores = targets.rows * queries.rows.row(static_cast<Eigen::Index>(qi->second)).transpose();
    const RankOrder before{scores, targets.ids};

    std::vector<std::size_t> gallery;
    gallery.reserve(targets.ids.size());
    for (std::size_t j = 0; j < targets.ids.size(); ++j) {
      if (options.exclude_self && j != ti->second && targets.ids[j] == t.group_key) continue;
      gallery.push_back(j);
    }
    std::size_t ahead = 0;
    for (auto j : gallery) ahead += before(j, ti->second) ? 1 : 0;

    const std::size_t top_n = std::min(options.top_n, gallery.size());
    std::partial_sort(gallery.begin(), gallery.begin() + static_cast<std::ptrdiff_t>(top_n), gallery.end(), before);
    QueryResult& q = report.queries[n];
    q.query_id = t.query_id;
    q.target_id = t.target_id;
    q.rank = ahead + 1;
    for (std::size_t k = 0; k < top_n; ++k) q.top.push_back(targets.ids[gallery[k]]);
    ranks[n] = q.rank;
  });
  report.recall = recall_at_k(ranks, options.ks);
  return report;
}

RetrievalReport evaluate(const Dataset& test, const ModelParams<float>& params, const ModelConfig& config,
                         const EvalOptions& options) {
  ModelConfig effective = config.resolved();
  if (options.variant_override) {
    check_compatible(effective.variant, *options.variant_override);
    effective.variant = *options.variant_override;
  }
  check_shapes(params, effective);
  const auto queries = embed_corpus(test, Role::query, params, effective, options.threads);
  const auto targets = embed_corpus(test, Role::target, params, effective, options.threads);
  return evaluate_embeddings(test.manifest(), queries, targets, options);
}

std::string format_report_jsonl(const RetrievalReport& report) {
  using nlohmann::ordered_json;
  std::ostringstream out;
  for (const auto& q : report.queries) {
    out << ordered_json{{"query_id", q.query_id}, {"target_id", q.target_id}, {"rank", q.rank}, {"top", q.top}}.dump()
        << '\n';
  }
  ordered_json recall = ordered_json::object();
  for (const auto& [k, r] : report.recall) recall[std::to_string(k)] = r;
  out << ordered_json{{"aggregate", true},
                      {"num_queries", report.queries.size()},
                      {"num_targets", report.num_targets},
                      {"recall", recall}}
             .dump()
      << '\n';
  return out.str();
}

std::string format_report_table(const RetrievalReport& report) {
  std::ostringstream out;
  out << "queries: " << report.queries.size() << "  targets: " << report.num_targets << '\n';
  char cell[32];
  for (const auto& [k, r] : report.recall) {
    std::snprintf(cell, sizeof(cell), "%9s", ("R@" + std::to_string(k)).c_str());
    out << cell;
  }
  out << '\n';
  for (const auto& [k, r] : report.recall) {
    std::snprintf(cell, sizeof(cell), "%9.2f", 100.0 * r);
    out << cell;
  }
  out << '\n';
  return out.str();
}

std::string format_embeddings_jsonl(const EmbeddingMatrix& embeddings) {
  std::ostringstream out;
  for (std::size_t i = 0; i < embeddings.ids.size(); ++i) {
    std::vector<double> row(embeddings.rows.cols());
    for (Eigen::Index j = 0; j < embeddings.rows.cols(); ++j) row[j] = embeddings.rows(static_cast<Eigen::Index>(i), j);
    out << nlohmann::ordered_json{{"sample_id", embeddings.ids[i]}, {"embedding", row}}.dump() << '\n';
  }
  return out.str();
}

}  // namespace pregen
