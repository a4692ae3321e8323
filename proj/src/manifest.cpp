#include "pregen/manifest.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace pregen {

using nlohmann::ordered_json;

std::string to_string(Role role) { return role == Role::query ? "query" : "target"; }
std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::optional<std::size_t> Manifest::find_sample(const std::string& sample_id) const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].sample_id == sample_id) return i;
  }
  return std::nullopt;
}

std::vector<std::string> Manifest::ids_with_role(Role role) const {
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    if (s.role == role) ids.push_back(s.sample_id);
  }
  return ids;
}

void validate_manifest(const Manifest& m) {
  using Kind = ManifestError::Kind;
  if (m.version != kManifestVersion) {
    throw ManifestError(Kind::invalid, "unsupported manifest version " + std::to_string(m.version));
  }
  if (m.num_layers < 1 || m.dim < 2 || m.dim % 2 != 0) {
    throw ManifestError(Kind::invalid, "invalid manifest shape num_layers=" + std::to_string(m.num_layers) +
                                           " dim=" + std::to_string(m.dim));
  }
  std::unordered_map<std::string, Role> roles;
  for (const auto& s : m.samples) {
    if (s.sample_id.empty()) throw ManifestError(Kind::invalid, "empty sample_id");
    if (!roles.emplace(s.sample_id, s.role).second) {
      throw ManifestError(Kind::duplicate_sample, "duplicate sample_id '" + s.sample_id + "'");
    }
  }
  auto require = [&](const std::string& id, Role role) {
    const auto it = roles.find(id);
    if (it == roles.end()) {
      throw ManifestError(Kind::dangling_reference, "triplet references unknown sample '" + id + "'");
    }
    if (it->second != role) {
      throw ManifestError(Kind::role_mismatch, "triplet uses '" + id + "' as " + to_string(role) +
                                                   " but it is declared " + to_string(it->second));
    }
  };
  for (const auto& t : m.triplets) {
    require(t.query_id, Role::query);
    require(t.target_id, Role::target);
    if (t.group_key.empty()) {
      throw ManifestError(Kind::invalid, "triplet (" + t.query_id + ", " + t.target_id + ") has an empty group_key");
    }
  }
}

namespace {

std::string require_string(const ordered_json& rec, const char* key, int line) {
  const auto it = rec.find(key);
  if (it == rec.end() || !it->is_string()) {
    throw ManifestError(ManifestError::Kind::syntax,
                        "line " + std::to_string(line) + ": missing string field '" + key + "'", line);
  }
  return it->get<std::string>();
}

int require_int(const ordered_json& rec, const char* key, int line) {
  const auto it = rec.find(key);
  if (it == rec.end() || !it->is_number_integer()) {
    throw ManifestError(ManifestError::Kind::syntax,
                        "line " + std::to_string(line) + ": missing integer field '" + key + "'", line);
  }
  return it->get<int>();
}

void reject_unknown_fields(const ordered_json& rec, std::initializer_list<const char*> allowed, int line) {
  for (const auto& item : rec.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) {
      throw ManifestError(ManifestError::Kind::syntax,
                          "line " + std::to_string(line) + ": unknown field '" + item.key() + "'", line);
    }
  }
}

}  // namespace

Manifest parse_manifest(std::istream& in) {
  using Kind = ManifestError::Kind;
  Manifest m;
  bool have_header = false;
  bool in_triplets = false;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json rec;
    try {
      rec = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ManifestError(Kind::syntax, "line " + std::to_string(line) + ": " + e.what(), line);
    }
    if (!rec.is_object()) throw ManifestError(Kind::syntax, "line " + std::to_string(line) + ": expected an object", line);

    if (!have_header) {
      if (!rec.contains("version")) {
        throw ManifestError(Kind::syntax, "line " + std::to_string(line) + ": first record must be the header", line);
      }
      reject_unknown_fields(rec, {"version", "num_layers", "dim", "split"}, line);
      m.version = require_int(rec, "version", line);
      m.num_layers = require_int(rec, "num_layers", line);
      m.dim = require_int(rec, "dim", line);
      const auto split = require_string(rec, "split", line);
      if (split == "train") {
        m.split = Split::train;
      } else if (split == "test") {
        m.split = Split::test;
      } else {
        throw ManifestError(Kind::syntax, "line " + std::to_string(line) + ": split must be train or test", line);
      }
      have_header = true;
    } else if (rec.contains("sample_id")) {
      if (in_triplets) {
        throw ManifestError(Kind::syntax, "line " + std::to_string(line) + ": sample record after triplets", line);
      }
      reject_unknown_fields(rec, {"sample_id", "role", "path"}, line);
      SampleRecord s;
      s.sample_id = require_string(rec, "sample_id", line);
      const auto role = require_string(rec, "role", line);
      if (role == "query") {
        s.role = Role::query;
      } else if (role == "target") {
        s.role = Role::target;
      } else {
        throw ManifestError(Kind::syntax, "line " + std::to_string(line) + ": role must be query or target", line);
      }
      s.path = require_string(rec, "path", line);
      m.samples.push_back(std::move(s));
    } else if (rec.contains("query_id")) {
      in_triplets = true;
      reject_unknown_fields(rec, {"query_id", "target_id", "text", "group_key"}, line);
      TripletRecord t;
      t.query_id = require_string(rec, "query_id", line);
      t.target_id = require_string(rec, "target_id", line);
      t.modification_text = require_string(rec, "text", line);
      t.group_key = require_string(rec, "group_key", line);
      m.triplets.push_back(std::move(t));
    } else {
      throw ManifestError(Kind::syntax, "line " + std::to_string(line) + ": unrecognized record", line);
    }
  }
  if (!have_header) throw ManifestError(Kind::syntax, "manifest is empty", 1);
  validate_manifest(m);
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  return parse_manifest(in);
}

std::string format_manifest(const Manifest& m) {
  std::ostringstream out;
  out << ordered_json{{"version", m.version}, {"num_layers", m.num_layers}, {"dim", m.dim}, {"split", to_string(m.split)}}
             .dump()
      << '\n';
  for (const auto& s : m.samples) {
    out << ordered_json{{"sample_id", s.sample_id}, {"role", to_string(s.role)}, {"path", s.path}}.dump() << '\n';
  }
  for (const auto& t : m.triplets) {
    out << ordered_json{{"query_id", t.query_id},
                        {"target_id", t.target_id},
                        {"text", t.modification_text},
                        {"group_key", t.group_key}}
               .dump()
        << '\n';
  }
  return out.str();
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  validate_manifest(manifest);
  write_file_atomic(path, format_manifest(manifest));
}

DatasetStats validate_dataset(const Manifest& m, const std::filesystem::path& root) {
  DatasetStats stats;
  stats.samples = m.samples.size();
  stats.triplets = m.triplets.size();
  for (const auto& s : m.samples) {
    (s.role == Role::query ? stats.queries : stats.targets)++;
    try {
      const auto stack = load_stack(root / s.path);
      if (stack.num_layers() != m.num_layers || stack.dim() != m.dim) {
        stats.errors.push_back({s.sample_id, "shape " + std::to_string(stack.num_layers()) + "x" +
                                                 std::to_string(stack.dim()) + " does not match manifest " +
                                                 std::to_string(m.num_layers) + "x" + std::to_string(m.dim)});
      } else if (stack.sample_id != s.sample_id) {
        stats.errors.push_back({s.sample_id, "stack file carries sample_id '" + stack.sample_id + "'"});
      }
    } catch (const Error& e) {
      stats.errors.push_back({s.sample_id, e.what()});
    }
  }
  std::map<std::string, std::size_t> group_sizes;
  for (const auto& t : m.triplets) group_sizes[t.group_key]++;
  stats.group_keys = group_sizes.size();
  for (const auto& [key, size] : group_sizes) stats.group_size_histogram[size]++;
  return stats;
}

Dataset::Dataset(Manifest manifest, std::vector<LayerStack> stacks)
    : manifest_(std::move(manifest)), stacks_(std::move(stacks)) {
  validate_manifest(manifest_);
  if (stacks_.size() != manifest_.samples.size()) {
    throw Error("dataset has " + std::to_string(stacks_.size()) + " stacks for " +
                std::to_string(manifest_.samples.size()) + " samples");
  }
  for (std::size_t i = 0; i < stacks_.size(); ++i) {
    const auto& s = stacks_[i];
    if (s.num_layers() != manifest_.num_layers || s.dim() != manifest_.dim) {
      throw ManifestError(ManifestError::Kind::shape_mismatch,
                          "sample '" + manifest_.samples[i].sample_id + "': stack shape " +
                              std::to_string(s.num_layers()) + "x" + std::to_string(s.dim()) +
                              " does not match manifest " + std::to_string(manifest_.num_layers) + "x" +
                              std::to_string(manifest_.dim));
    }
    index_.emplace(manifest_.samples[i].sample_id, i);
  }
}

std::size_t Dataset::index_of(const std::string& sample_id) const {
  const auto it = index_.find(sample_id);
  if (it == index_.end()) throw Error("unknown sample_id '" + sample_id + "'");
  return it->second;
}

const LayerStack& Dataset::stack(const std::string& sample_id) const { return stacks_[index_of(sample_id)]; }

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  auto manifest = load_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  std::vector<LayerStack> stacks;
  stacks.reserve(manifest.samples.size());
  for (const auto& s : manifest.samples) stacks.push_back(load_stack(root / s.path));
  return Dataset(std::move(manifest), std::move(stacks));
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir, const std::string& manifest_name) {
  const auto& m = dataset.manifest();
  for (std::size_t i = 0; i < m.samples.size(); ++i) save_stack(dataset.stacks()[i], dir / m.samples[i].path);
  save_manifest(m, dir / manifest_name);
}

}  // namespace pregen
