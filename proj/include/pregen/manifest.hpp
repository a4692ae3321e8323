#ifndef PREGEN_MANIFEST_HPP
#define PREGEN_MANIFEST_HPP

// Dataset manifests: JSON Lines. The first record is the header
//   {"version":1,"num_layers":L,"dim":d,"split":"train"}
// followed by one record per sample
//   {"sample_id":..., "role":"query"|"target", "path":...}
// and then one record per triplet
//   {"query_id":..., "target_id":..., "text":..., "group_key":...}
// Sample paths are relative to the manifest's directory.

#include "pregen/feature_store.hpp"

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace pregen {

inline constexpr int kManifestVersion = 1;

enum class Role { query, target };
enum class Split { train, test };

std::string to_string(Role role);
std::string to_string(Split split);

struct SampleRecord {
  std::string sample_id;
  Role role = Role::query;
  std::string path;

  bool operator==(const SampleRecord&) const = default;
};

/// One (v_q, t_m, v_t) triplet; group_key identifies the reference video of the query.
struct TripletRecord {
  std::string query_id;
  std::string target_id;
  std::string modification_text;
  std::string group_key;

  bool operator==(const TripletRecord&) const = default;
};

struct Manifest {
  int version = kManifestVersion;
  int num_layers = 0;
  int dim = 0;
  Split split = Split::train;
  std::vector<SampleRecord> samples;
  std::vector<TripletRecord> triplets;

  bool operator==(const Manifest&) const = default;

  std::optional<std::size_t> find_sample(const std::string& sample_id) const;
  /// Sample ids of the given role, in manifest order.
  std::vector<std::string> ids_with_role(Role role) const;
};

class ManifestError : public Error {
 public:
  enum class Kind { syntax, duplicate_sample, dangling_reference, role_mismatch, shape_mismatch, invalid };

  ManifestError(Kind kind, const std::string& what, int line = 0) : Error(what), kind_(kind), line_(line) {}
  Kind kind() const { return kind_; }
  /// 1-based line of the offending record, 0 when not tied to a line.
  int line() const { return line_; }

 private:
  Kind kind_;
  int line_;
};

/// Structural checks: unique ids, resolvable triplet references with compatible roles, non-empty group keys.
void validate_manifest(const Manifest& manifest);

Manifest parse_manifest(std::istream& in);
Manifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct DatasetIssue {
  std::string sample_id;
  std::string message;
};

struct DatasetStats {
  std::size_t samples = 0;
  std::size_t queries = 0;
  std::size_t targets = 0;
  std::size_t triplets = 0;
  std::size_t group_keys = 0;
  std::map<std::size_t, std::size_t> group_size_histogram;  // triplets per group -> number of groups
  std::vector<DatasetIssue> errors;

  bool ok() const { return errors.empty(); }
};

/// Opens every stack referenced by `manifest` (paths relative to `root`) and aggregates per-sample failures.
DatasetStats validate_dataset(const Manifest& manifest, const std::filesystem::path& root);

/// A manifest together with its stacks, aligned with manifest.samples.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Manifest manifest, std::vector<LayerStack> stacks);

  const Manifest& manifest() const { return manifest_; }
  const std::vector<LayerStack>& stacks() const { return stacks_; }
  const LayerStack& stack(const std::string& sample_id) const;
  std::size_t index_of(const std::string& sample_id) const;

 private:
  Manifest manifest_;
  std::vector<LayerStack> stacks_;
  std::unordered_map<std::string, std::size_t> index_;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);
/// Writes every stack to `dir/<sample path>` and the manifest to `dir/manifest_name`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                   const std::string& manifest_name = "manifest.jsonl");

}  // namespace pregen

#endif  // PREGEN_MANIFEST_HPP
