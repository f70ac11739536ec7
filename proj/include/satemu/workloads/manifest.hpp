#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satemu/errors.hpp"
#include "satemu/json_parse.hpp"

namespace satemu::workloads {

struct ObjectSpec {
  std::string id;
  std::uint64_t size_bytes = 0;
  bool render_critical = false;
  std::optional<std::string> discovered_by;  // empty for the root
};

/// Objects of a web page and who references them. Object order is the fetch
/// order among objects discovered together.
class PageManifest {
 public:
  PageManifest() = default;
  explicit PageManifest(std::vector<ObjectSpec> objects) : objects_(std::move(objects)) { validate(); }

  const std::vector<ObjectSpec>& objects() const noexcept { return objects_; }
  std::size_t size() const noexcept { return objects_.size(); }
  const ObjectSpec& at(std::size_t i) const { return objects_.at(i); }

  std::uint64_t total_bytes() const {
    std::uint64_t n = 0;
    for (const auto& o : objects_) n += o.size_bytes;
    return n;
  }
  std::size_t render_critical_count() const {
    std::size_t n = 0;
    for (const auto& o : objects_) n += o.render_critical ? 1 : 0;
    return n;
  }
  std::size_t root_index() const {
    for (std::size_t i = 0; i < objects_.size(); ++i)
      if (!objects_[i].discovered_by) return i;
    throw ValidationError("objects", "no root object");
  }
  /// Indices of the objects referenced by object `i`, in manifest order.
  std::vector<std::size_t> discovered_by(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < objects_.size(); ++j)
      if (objects_[j].discovered_by == objects_.at(i).id) out.push_back(j);
    return out;
  }

  void validate() const {
    if (objects_.empty()) throw ValidationError("objects", "manifest is empty");
    std::map<std::string, std::size_t> index;
    std::size_t roots = 0;
    for (std::size_t i = 0; i < objects_.size(); ++i) {
      const auto& o = objects_[i];
      if (o.id.empty()) throw ValidationError("objects[" + std::to_string(i) + "].id", "must not be empty");
      if (o.size_bytes == 0) throw ValidationError("objects[" + std::to_string(i) + "].size_bytes", "must be > 0");
      if (!index.emplace(o.id, i).second) throw ValidationError("objects[" + std::to_string(i) + "].id", "duplicate id '" + o.id + "'");
      if (!o.discovered_by) ++roots;
    }
    if (roots != 1) throw ValidationError("objects", "expected exactly one root, found " + std::to_string(roots));
    for (std::size_t i = 0; i < objects_.size(); ++i) {
      const auto& o = objects_[i];
      if (o.discovered_by && !index.count(*o.discovered_by))
        throw ValidationError("objects[" + std::to_string(i) + "].discovered_by", "unknown object '" + *o.discovered_by + "'");
    }
    // Every chain of discovered_by links must end at the root.
    for (std::size_t i = 0; i < objects_.size(); ++i) {
      std::set<std::size_t> seen{i};
      std::size_t cur = i;
      while (objects_[cur].discovered_by) {
        cur = index.at(*objects_[cur].discovered_by);
        if (!seen.insert(cur).second) throw ValidationError("objects", "discovery cycle through '" + objects_[i].id + "'");
      }
    }
  }

 private:
  std::vector<ObjectSpec> objects_;
};

inline void to_json(nlohmann::ordered_json& j, const ObjectSpec& o) {
  j = nlohmann::ordered_json{{"id", o.id}, {"size_bytes", o.size_bytes}, {"render_critical", o.render_critical}};
  j["discovered_by"] = o.discovered_by ? nlohmann::ordered_json(*o.discovered_by) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json manifest_to_json(const PageManifest& m) {
  return nlohmann::ordered_json{{"objects", m.objects()}};
}

inline PageManifest manifest_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("objects") || !j["objects"].is_array())
    throw ValidationError("objects", "expected an object with an 'objects' array");
  std::vector<ObjectSpec> objs;
  for (std::size_t i = 0; i < j["objects"].size(); ++i) {
    const auto& e = j["objects"][i];
    const std::string where = "objects[" + std::to_string(i) + "]";
    try {
      ObjectSpec o;
      o.id = e.at("id").get<std::string>();
      o.size_bytes = e.at("size_bytes").get<std::uint64_t>();
      o.render_critical = e.value("render_critical", false);
      if (e.contains("discovered_by") && !e["discovered_by"].is_null())
        o.discovered_by = e["discovered_by"].get<std::string>();
      objs.push_back(std::move(o));
    } catch (const nlohmann::json::exception& ex) {
      throw ValidationError(where, ex.what());
    }
  }
  return PageManifest(std::move(objs));
}

inline PageManifest load_manifest(const std::string& path) { return manifest_from_json(parse_json_file(path)); }

inline void save_manifest(const PageManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest '" + path + "'");
  out << manifest_to_json(m).dump(2) << '\n';
}

/// Sizes of the 72 non-critical objects: a fixed descending heavy tail.
inline constexpr std::array<std::uint64_t, 72> kDefaultTailSizes = {
    123220, 68350, 48420, 37920, 31370, 26860, 23560, 21040, 19030, 17400, 16050, 14900, 13920, 13070, 12330,
    11670,  11080, 10560, 10080, 9650,  9260,  8900,  8570,  8270,  7990,  7720,  7480,  7250,  7040,  6840,
    6650,   6470,  6310,  6150,  6000,  5860,  5720,  5590,  5470,  5360,  5240,  5140,  5040,  4940,  4850,
    4760,   4670,  4590,  4510,  4430,  4360,  4290,  4220,  4150,  4090,  4020,  3960,  3910,  3850,  3790,
    3740,   3690,  3640,  3590,  3550,  3500,  3450,  3410,  3370,  3330,  3290,  3250};

/// Stand-in for the reference page: 75 objects, 880,000 bytes, three of them
/// needed for first paint.
inline PageManifest default_manifest() {
  std::vector<ObjectSpec> objs;
  objs.push_back({"index.html", 30'000, true, std::nullopt});
  objs.push_back({"style-main.css", 20'000, true, "index.html"});
  objs.push_back({"style-layout.css", 20'000, true, "index.html"});
  for (std::size_t i = 0; i < kDefaultTailSizes.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "asset-%02zu", i + 1);
    objs.push_back({id, kDefaultTailSizes[i], false, "index.html"});
  }
  return PageManifest(std::move(objs));
}

}  // namespace satemu::workloads
