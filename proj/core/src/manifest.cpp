#include "treefield/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "treefield/errors.hpp"

namespace treefield {

namespace {
constexpr const char* kFormat = "treefield-manifest-v1";
}

std::string parent_dir(const std::string& path) {
  return std::filesystem::path(path).parent_path().string();
}

std::string join_path(const std::string& dir, const std::string& name) {
  if (dir.empty()) return name;
  return (std::filesystem::path(dir) / name).string();
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  nlohmann::json j;
  j["format"] = kFormat;
  j["arch"] = {{"d", manifest.arch.d}, {"D", manifest.arch.D}, {"L", manifest.arch.L}};
  j["master_seed"] = manifest.master_seed;
  j["wiggle"] = manifest.wiggle;
  j["items"] = nlohmann::json::array();
  for (const ManifestItem& item : manifest.items) {
    nlohmann::json stats = {
        {"bifurcation_count", item.stats.bifurcation_count},
        {"total_length", item.stats.total_length},
        {"average_radius", item.stats.average_radius},
        {"tortuosity_per_branch", item.stats.tortuosity_per_branch},
    };
    j["items"].push_back({
        {"tree_file", item.tree_file},
        {"checkpoint_file", item.checkpoint_file},
        {"seed", item.seed},
        {"bifurcations", item.bifurcations},
        {"fit_loss", item.fit_loss},
        {"stats", std::move(stats)},
    });
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw DataError("failed writing " + path);
}

DatasetManifest load_manifest(const std::string& path, bool check_files) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }

  DatasetManifest manifest;
  try {
    if (j.at("format").get<std::string>() != kFormat)
      throw DataError(path + ": unsupported manifest format");
    manifest.arch.d = j.at("arch").at("d").get<int>();
    manifest.arch.D = j.at("arch").at("D").get<int>();
    manifest.arch.L = j.at("arch").at("L").get<int>();
    manifest.master_seed = j.at("master_seed").get<uint64_t>();
    manifest.wiggle = j.at("wiggle").get<double>();
    for (const nlohmann::json& ji : j.at("items")) {
      ManifestItem item;
      item.tree_file = ji.at("tree_file").get<std::string>();
      item.checkpoint_file = ji.at("checkpoint_file").get<std::string>();
      item.seed = ji.at("seed").get<uint64_t>();
      item.bifurcations = ji.at("bifurcations").get<int>();
      item.fit_loss = ji.at("fit_loss").get<double>();
      const nlohmann::json& js = ji.at("stats");
      item.stats.bifurcation_count = js.at("bifurcation_count").get<int>();
      item.stats.total_length = js.at("total_length").get<double>();
      item.stats.average_radius = js.at("average_radius").get<double>();
      item.stats.tortuosity_per_branch =
          js.at("tortuosity_per_branch").get<std::vector<double>>();
      manifest.items.push_back(std::move(item));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": manifest schema error: " + e.what());
  }

  if (check_files) {
    const std::string dir = parent_dir(path);
    for (const ManifestItem& item : manifest.items) {
      if (!std::filesystem::exists(join_path(dir, item.tree_file)))
        throw DataError(path + ": missing tree file " + item.tree_file);
      if (item.checkpoint_file.empty()) continue;
      const std::string ckpt_path = join_path(dir, item.checkpoint_file);
      if (!std::filesystem::exists(ckpt_path))
        throw DataError(path + ": missing checkpoint " + item.checkpoint_file);
      const InrCheckpoint ckpt = load_checkpoint(ckpt_path);
      if (!(ckpt.arch == manifest.arch))
        throw DataError(path + ": checkpoint " + item.checkpoint_file +
                        " arch does not match manifest arch");
    }
  }
  return manifest;
}

}  // namespace treefield
