#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "hear/common.hpp"

namespace hear {

// Append-only JSONL metrics stream, one object per step/epoch. nlohmann
// objects keep sorted keys, so with fixed seeds the emitted bytes are
// reproducible run to run.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path, bool append = false)
        : out_(path, append ? std::ios::app : std::ios::trunc) {
        if (!out_) throw DataError("metrics: cannot open " + path);
    }

    void write(const nlohmann::json& j) {
        out_ << j.dump() << '\n';
        out_.flush();
        if (!out_) throw DataError("metrics: write failed");
    }

private:
    std::ofstream out_;
};

std::vector<nlohmann::json> read_metrics(const std::string& path);

} // namespace hear
