#include "pregen/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace pregen {

namespace {

// A^n, saturating at `cap`.
std::uint64_t saturating_pow(std::uint64_t base, int n, std::uint64_t cap) {
  std::uint64_t v = 1;
  for (int i = 0; i < n; ++i) {
    if (v > cap / base) return cap;
    v *= base;
  }
  return v;
}

constexpr std::uint64_t kEnumerationLimit = std::uint64_t{1} << 22;

SymbolCodebook make_codebook(const SynthConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  SymbolCodebook book;
  for (int l = 0; l < c.num_layers; ++l) {
    Matrix<double> symbols(c.alphabet_size, c.dim);
    for (int a = 0; a < c.alphabet_size; ++a) {
      bool placed = false;
      for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
        Vector<double> v(c.dim);
        for (int j = 0; j < c.dim; ++j) v(j) = normal(rng);
        v.normalize();
        placed = true;
        for (int b = 0; b < a && placed; ++b) {
          placed = symbols.row(b).dot(v) <= SymbolCodebook::kMaxSymbolCosine;
        }
        if (placed) symbols.row(a) = v.transpose();
      }
      if (!placed) {
        throw Error("synth: cannot place " + std::to_string(c.alphabet_size) +
                    " symbols with pairwise cosine <= 0.5 in dimension " + std::to_string(c.dim));
      }
    }
    book.layers.push_back(std::move(symbols));
  }
  return book;
}

std::vector<SymbolCode> candidate_prefixes(const SynthConfig& c, std::mt19937_64& rng) {
  const int len = c.num_layers - 1;
  const auto total = saturating_pow(static_cast<std::uint64_t>(c.alphabet_size), len, kEnumerationLimit + 1);
  std::vector<SymbolCode> out;
  if (total <= kEnumerationLimit) {
    out.reserve(total);
    for (std::uint64_t idx = 0; idx < total; ++idx) {
      SymbolCode code(len);
      auto rest = idx;
      for (int p = len - 1; p >= 0; --p) {
        code[p] = static_cast<int>(rest % c.alphabet_size);
        rest /= c.alphabet_size;
      }
      out.push_back(std::move(code));
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  }
  std::uniform_int_distribution<int> symbol(0, c.alphabet_size - 1);
  std::set<SymbolCode> seen;
  while (out.size() < static_cast<std::size_t>(4 * c.num_concepts)) {
    SymbolCode code(len);
    for (auto& s : code) s = symbol(rng);
    if (seen.insert(code).second) out.push_back(std::move(code));
  }
  return out;
}

// Greedily takes distinct prefixes keeping every (position, symbol) count <= ceil(C/A).
std::vector<SymbolCode> pick_balanced_prefixes(const SynthConfig& c, const std::vector<SymbolCode>& candidates) {
  const int len = c.num_layers - 1;
  const int cap = (c.num_concepts + c.alphabet_size - 1) / c.alphabet_size;
  std::vector<std::vector<int>> counts(len, std::vector<int>(c.alphabet_size, 0));
  std::vector<SymbolCode> picked;
  for (const auto& code : candidates) {
    if (static_cast<int>(picked.size()) == c.num_concepts) break;
    bool fits = true;
    for (int p = 0; p < len && fits; ++p) fits = counts[p][code[p]] < cap;
    if (!fits) continue;
    for (int p = 0; p < len; ++p) counts[p][code[p]]++;
    picked.push_back(code);
  }
  if (static_cast<int>(picked.size()) < c.num_concepts) {
    // Balance is best-effort; fill with the remaining candidates in order.
    std::set<SymbolCode> taken(picked.begin(), picked.end());
    for (const auto& code : candidates) {
      if (static_cast<int>(picked.size()) == c.num_concepts) break;
      if (!taken.count(code)) picked.push_back(code);
    }
  }
  return picked;
}

// Every symbol used at a position is shared by at least two concepts.
bool single_layers_ambiguous(const std::vector<SymbolCode>& codes, int alphabet_size) {
  const std::size_t len = codes.front().size();
  for (std::size_t p = 0; p < len; ++p) {
    std::vector<int> counts(alphabet_size, 0);
    for (const auto& code : codes) counts[code[p]]++;
    for (int n : counts) {
      if (n == 1) return false;
    }
  }
  return true;
}

std::string padded(char prefix, std::size_t value, int width) {
  auto digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

}  // namespace

void validate(const SynthConfig& c) {
  if (c.num_layers < 1) throw Error("synth.num_layers must be >= 1");
  if (c.dim < 2 || c.dim % 2 != 0) throw Error("synth.dim must be even and >= 2");
  if (c.alphabet_size < 2) throw Error("synth.alphabet_size must be >= 2");
  if (c.num_concepts < 1) throw Error("synth.num_concepts must be >= 1");
  if (c.group_size < 1) throw Error("synth.group_size must be >= 1");
  if (c.group_size >= c.alphabet_size) {
    throw Error("synth.group_size (" + std::to_string(c.group_size) + ") must be < synth.alphabet_size (" +
                std::to_string(c.alphabet_size) + "): each variant needs a distinct replacement symbol");
  }
  if (!(c.noise_sigma >= 0.0) || !std::isfinite(c.noise_sigma)) throw Error("synth.noise_sigma must be finite and >= 0");
  const auto a = static_cast<std::uint64_t>(c.alphabet_size);
  const auto n = static_cast<std::uint64_t>(c.num_concepts);
  if (saturating_pow(a, c.num_layers, n + 1) < n) {
    throw Error("synth.num_concepts (" + std::to_string(c.num_concepts) +
                ") exceeds alphabet_size^num_layers distinct codes");
  }
  if (saturating_pow(a, c.num_layers - 1, n + 1) < n) {
    throw Error("synth.num_concepts (" + std::to_string(c.num_concepts) +
                ") exceeds alphabet_size^(num_layers-1): concepts need distinct prefixes so their targets stay distinct");
  }
}

SyntheticDataset generate_synthetic_dataset(const SynthConfig& c, Split split) {
  validate(c);
  std::mt19937_64 rng(c.seed);
  SyntheticDataset out;
  out.codebook = make_codebook(c, rng);

  // Concept codes: balanced distinct prefixes plus a round-robin last symbol.
  const bool check_ambiguity = c.num_concepts >= 2 * c.alphabet_size;
  for (int attempt = 0;; ++attempt) {
    auto prefixes = pick_balanced_prefixes(c, candidate_prefixes(c, rng));
    std::vector<int> last(c.num_concepts);
    for (int i = 0; i < c.num_concepts; ++i) last[i] = i % c.alphabet_size;
    std::shuffle(last.begin(), last.end(), rng);
    out.concept_codes.clear();
    for (int i = 0; i < c.num_concepts; ++i) {
      auto code = prefixes[i];
      code.push_back(last[i]);
      out.concept_codes.push_back(std::move(code));
    }
    if (!check_ambiguity || single_layers_ambiguous(out.concept_codes, c.alphabet_size)) break;
    if (attempt == 100) throw Error("synth: could not draw concept codes where every layer symbol is shared");
  }

  std::vector<SymbolCode> target_codes;
  for (const auto& code : out.concept_codes) {
    std::vector<int> others;
    for (int a = 0; a < c.alphabet_size; ++a) {
      if (a != code.back()) others.push_back(a);
    }
    std::shuffle(others.begin(), others.end(), rng);
    for (int k = 0; k < c.group_size; ++k) {
      auto variant = code;
      variant.back() = others[k];
      target_codes.push_back(std::move(variant));
    }
  }

  std::seed_seq noise_seed{c.seed, std::uint64_t{1} + static_cast<std::uint64_t>(split)};
  std::mt19937_64 noise_rng(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto make_stack = [&](std::string id, const SymbolCode& code) {
    LayerStack s;
    s.sample_id = std::move(id);
    s.data.resize(c.num_layers, c.dim);
    for (int l = 0; l < c.num_layers; ++l) {
      for (int j = 0; j < c.dim; ++j) {
        const double noise = c.noise_sigma > 0.0 ? c.noise_sigma * normal(noise_rng) : 0.0;
        s.data(l, j) = static_cast<float>(out.codebook.layers[l](code[l], j) + noise);
      }
    }
    return s;
  };

  const std::size_t n = target_codes.size();
  const int width = std::max(5, static_cast<int>(std::to_string(n).size()));
  Manifest m;
  m.num_layers = c.num_layers;
  m.dim = c.dim;
  m.split = split;
  std::vector<LayerStack> stacks;
  stacks.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    auto id = padded('q', i, width);
    m.samples.push_back({id, Role::query, "stacks/" + id + ".pgstack"});
    stacks.push_back(make_stack(id, target_codes[i]));
    out.sample_codes.push_back(target_codes[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto id = padded('t', i, width);
    m.samples.push_back({id, Role::target, "stacks/" + id + ".pgstack"});
    stacks.push_back(make_stack(id, target_codes[i]));
    out.sample_codes.push_back(target_codes[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t concept_index = i / static_cast<std::size_t>(c.group_size);
    m.triplets.push_back({padded('q', i, width), padded('t', i, width),
                          "set the last symbol to " + std::to_string(target_codes[i].back()),
                          padded('c', concept_index, 4)});
  }
  out.dataset = Dataset(std::move(m), std::move(stacks));
  return out;
}

double oracle_nn_recall(const Dataset& dataset, const std::vector<int>& layer_subset) {
  if (layer_subset.empty()) throw Error("oracle_nn_recall: empty layer subset");
  const auto& m = dataset.manifest();
  for (int l : layer_subset) {
    if (l < 1 || l > m.num_layers) throw Error("oracle_nn_recall: layer " + std::to_string(l) + " out of range");
  }
  if (m.triplets.empty()) throw Error("oracle_nn_recall: manifest has no triplets");

  auto features = [&](const LayerStack& s) {
    Vector<double> v(static_cast<Eigen::Index>(layer_subset.size()) * m.dim);
    for (std::size_t k = 0; k < layer_subset.size(); ++k) {
      v.segment(static_cast<Eigen::Index>(k) * m.dim, m.dim) = s.data.row(layer_subset[k] - 1).cast<double>().transpose();
    }
    return v;
  };

  // Targets sorted by id so the first maximum wins ties by ascending id.
  auto target_ids = m.ids_with_role(Role::target);
  std::sort(target_ids.begin(), target_ids.end());
  std::vector<Vector<double>> targets;
  for (const auto& id : target_ids) targets.push_back(features(dataset.stack(id)));

  std::size_t hits = 0;
  for (const auto& t : m.triplets) {
    const auto q = features(dataset.stack(t.query_id));
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_index = 0;
    for (std::size_t j = 0; j < targets.size(); ++j) {
      const double cosine = q.dot(targets[j]) / (q.norm() * targets[j].norm());
      if (cosine > best) {
        best = cosine;
        best_index = j;
      }
    }
    if (target_ids[best_index] == t.target_id) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(m.triplets.size());
}

}  // namespace pregen
