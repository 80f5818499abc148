#pragma once

#include <string>
#include <vector>

namespace kvx2l {

// Partition of the chunk set for re-loading: `selected` chunks come back at
// the low-compression level, `complement` at the high level. Both lists are
// sorted by chunk index and disjoint, together covering every chunk.
struct ReloadPlan {
    std::vector<int> selected;
    std::vector<int> complement;
    int k = 0;
    std::string oracle_name;
};

}  // namespace kvx2l
