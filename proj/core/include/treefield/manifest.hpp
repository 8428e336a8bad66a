#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treefield/inr.hpp"
#include "treefield/tree.hpp"

namespace treefield {

// One corpus entry. File paths are stored relative to the manifest's
// directory; checkpoint_file stays empty until the fit stage fills it in.
struct ManifestItem {
  std::string tree_file;
  std::string checkpoint_file;
  uint64_t seed = 0;
  int bifurcations = 0;
  double fit_loss = -1.0;  // < 0 means not fitted yet
  TreeStats stats;
};

struct DatasetManifest {
  InrArch arch;
  uint64_t master_seed = 0;
  double wiggle = 0.0;
  std::vector<ManifestItem> items;
};

// JSON on disk. Loading validates the schema; when check_files is set it
// also requires every non-empty referenced file to exist relative to the
// manifest's directory and every checkpoint to match the manifest arch.
void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path, bool check_files = true);

// Directory part of a path ("" for bare filenames), and path join that
// ignores an empty directory.
std::string parent_dir(const std::string& path);
std::string join_path(const std::string& dir, const std::string& name);

}  // namespace treefield
