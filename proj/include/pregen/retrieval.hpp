#ifndef PREGEN_RETRIEVAL_HPP
#define PREGEN_RETRIEVAL_HPP

#include "pregen/manifest.hpp"
#include "pregen/model.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pregen {

/// Unit-norm embeddings, one row per sample id. Normalization and scoring run
/// in double so rankings do not hinge on float rounding.
struct EmbeddingMatrix {
  std::vector<std::string> ids;
  Matrix<double> rows;  // N x D
};

/// Eval-mode forward of every `role` sample in manifest order, L2-normalized.
EmbeddingMatrix embed_corpus(const Dataset& data, Role role, const ModelParams<float>& params,
                             const ModelConfig& config, int threads = 0);

/// Indices into targets.ids by descending dot product; ties by ascending id.
std::vector<std::size_t> rank(const Vector<double>& query, const EmbeddingMatrix& targets);

/// Fraction of queries with 1-based ground-truth rank <= k, for each k.
std::map<int, double> recall_at_k(std::span<const std::size_t> ranks, std::span<const int> ks);

struct QueryResult {
  std::string query_id;
  std::string target_id;  // ground truth
  std::size_t rank = 0;   // 1-based
  std::vector<std::string> top;

  bool operator==(const QueryResult&) const = default;
};

struct RetrievalReport {
  std::vector<int> ks;
  std::size_t num_targets = 0;
  std::map<int, double> recall;
  std::vector<QueryResult> queries;

  bool operator==(const RetrievalReport&) const = default;
};

struct EvalOptions {
  std::vector<int> ks{1, 5, 10, 50};
  /// Evaluate a different variant with the same weights; single_layer only pairs with itself.
  std::optional<Variant> variant_override;
  /// Drop targets whose sample_id equals the query's group_key (its reference video) from that query's gallery.
  bool exclude_self = false;
  std::size_t top_n = 10;  // ids recorded per query
  int threads = 0;
};

/// Ranks every triplet's query against the full target corpus.
RetrievalReport evaluate(const Dataset& test, const ModelParams<float>& params, const ModelConfig& config,
                         const EvalOptions& options = {});

/// Same ranking from precomputed embeddings.
RetrievalReport evaluate_embeddings(const Manifest& manifest, const EmbeddingMatrix& queries,
                                    const EmbeddingMatrix& targets, const EvalOptions& options = {});

/// One JSON record per query, then an aggregate record.
std::string format_report_jsonl(const RetrievalReport& report);
std::string format_report_table(const RetrievalReport& report);

std::string format_embeddings_jsonl(const EmbeddingMatrix& embeddings);

}  // namespace pregen

#endif  // PREGEN_RETRIEVAL_HPP
