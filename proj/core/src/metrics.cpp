#include "hear/metrics.hpp"

namespace hear {

std::vector<nlohmann::json> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("metrics: cannot open " + path);
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(nlohmann::json::parse(line));
    }
    return out;
}

} // namespace hear
