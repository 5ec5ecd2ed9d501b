#include "hear/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace hear {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

DatasetManifest load_manifest(const std::string& path, const std::string& data_root) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("manifest: empty file " + path);
    const auto header = split_csv(line);
    const bool with_fold = header.size() == 4 && header[3] == "fold";
    if (!(header.size() >= 3 && header[0] == "path" && header[1] == "label" &&
          header[2] == "split") ||
        (header.size() == 4 && !with_fold) || header.size() > 4)
        throw DataError("manifest: expected header path,label,split[,fold] in " + path);

    DatasetManifest m;
    m.has_folds = with_fold;
    const auto base = data_root.empty() ? std::filesystem::path(path).parent_path()
                                        : std::filesystem::path(data_root);
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cols = split_csv(line);
        if (cols.size() != header.size())
            throw DataError("manifest: " + path + ":" + std::to_string(line_no) +
                            ": wrong column count");
        ManifestRow row;
        std::filesystem::path p(cols[0]);
        row.path = p.is_absolute() ? p.string() : (base / p).string();
        try {
            row.label = std::stoi(cols[1]);
        } catch (const std::exception&) {
            throw DataError("manifest: bad label '" + cols[1] + "' at line " +
                            std::to_string(line_no));
        }
        row.split = cols[2];
        if (with_fold) {
            try {
                row.fold = std::stoi(cols[3]);
            } catch (const std::exception&) {
                throw DataError("manifest: bad fold '" + cols[3] + "' at line " +
                                std::to_string(line_no));
            }
        }
        if (!std::filesystem::exists(row.path))
            throw DataError("manifest: missing audio file " + row.path);
        if (row.label < 0) throw DataError("manifest: negative label at line " + std::to_string(line_no));
        m.rows.push_back(std::move(row));
    }
    if (m.rows.empty()) throw DataError("manifest: no rows in " + path);

    std::set<int> labels;
    for (const auto& r : m.rows) labels.insert(r.label);
    m.num_classes = *labels.rbegin() + 1;
    for (int c = 0; c < m.num_classes; ++c)
        if (!labels.count(c))
            throw DataError("manifest: labels not dense, missing class " + std::to_string(c));
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream out(path);
    if (!out) throw DataError("manifest: cannot write " + path);
    out << (m.has_folds ? "path,label,split,fold\n" : "path,label,split\n");
    for (const auto& r : m.rows) {
        out << r.path << ',' << r.label << ',' << r.split;
        if (m.has_folds) out << ',' << r.fold;
        out << '\n';
    }
}

std::vector<int> DatasetManifest::folds_present() const {
    std::set<int> folds;
    for (const auto& r : rows)
        if (r.fold > 0) folds.insert(r.fold);
    return {folds.begin(), folds.end()};
}

} // namespace hear
