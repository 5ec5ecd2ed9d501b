#include "hear/rng.hpp"

#include <algorithm>

namespace hear {

std::vector<int> Rng::sample_without_replacement(int n, int k) {
    std::vector<int> pool(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
    // partial Fisher-Yates: first k slots end up holding the sample
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(below(static_cast<uint64_t>(n - i)));
        std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    pool.resize(static_cast<size_t>(k));
    std::sort(pool.begin(), pool.end());
    return pool;
}

} // namespace hear
