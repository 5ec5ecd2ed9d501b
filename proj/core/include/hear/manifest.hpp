#pragma once

#include <string>
#include <vector>

#include "hear/common.hpp"

namespace hear {

struct ManifestRow {
    std::string path;
    int label = 0;
    std::string split; // train | test | (free-form)
    int fold = 0;      // 0 = no fold column
};

// CSV with header `path,label,split,fold` (fold column optional). Paths are
// resolved against data_root and must exist; labels must be dense in
// [0, num_classes).
struct DatasetManifest {
    std::vector<ManifestRow> rows;
    int num_classes = 0;
    bool has_folds = false;

    std::vector<int> folds_present() const;
};

DatasetManifest load_manifest(const std::string& path, const std::string& data_root = "");
void save_manifest(const std::string& path, const DatasetManifest& m);

} // namespace hear
