#ifndef PREGEN_SYNTH_HPP
#define PREGEN_SYNTH_HPP

// Synthetic layer-stack datasets with a known combinatorial structure.
//
// Every concept is a code of L symbols over an alphabet of size A; layer l of a
// stack holds the embedding of symbol code[l] at that layer plus Gaussian noise.
// Concepts have distinct (L-1)-prefixes, and each concept yields g targets that
// replace its last symbol, so targets from one source differ in one layer only.
// Any single layer is ambiguous across concepts; the full stack identifies the
// target uniquely.

#include "pregen/manifest.hpp"

#include <cstdint>
#include <vector>

namespace pregen {

struct SynthConfig {
  int num_layers = 4;
  int dim = 32;
  int alphabet_size = 4;
  int num_concepts = 64;
  int group_size = 3;
  double noise_sigma = 0.05;
  std::uint64_t seed = 7;
};

/// Throws Error naming the violated constraint.
void validate(const SynthConfig& config);

using SymbolCode = std::vector<int>;

/// Per layer, `alphabet_size` unit vectors in R^dim with pairwise cosine <= kMaxSymbolCosine.
struct SymbolCodebook {
  static constexpr double kMaxSymbolCosine = 0.5;
  std::vector<Matrix<double>> layers;  // layers[l] is A x d, row a = symbol a
};

struct SyntheticDataset {
  Dataset dataset;
  SymbolCodebook codebook;
  std::vector<SymbolCode> concept_codes;
  /// Codes keyed by sample_id order of the manifest's samples.
  std::vector<SymbolCode> sample_codes;
};

/// Pure function of (config, split): the split only selects the noise stream,
/// so train and test share codebook, codes and sample ids.
SyntheticDataset generate_synthetic_dataset(const SynthConfig& config, Split split = Split::train);

/// Exact cosine nearest-neighbour Recall@1 on the concatenation of the selected
/// rows (1-based layers), ranking every query against all targets.
double oracle_nn_recall(const Dataset& dataset, const std::vector<int>& layer_subset);

}  // namespace pregen

#endif  // PREGEN_SYNTH_HPP
