#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "v2lab/train.hpp"

namespace v2lab {

/// One serialized expert plus how many optimizer steps produced it
/// (steps_done lets a resumed run continue its log numbering).
struct SavedExpert {
    Expert expert;
    std::int64_t steps_done = 0;
};

/// Everything one training run needs to be reopened: the experts trained so
/// far, the feature-backend seeds they assume, and a hash of the config that
/// produced them.
struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::uint64_t visual_backend_seed = 0;
    std::uint64_t anchor_backend_seed = 0;
    std::vector<SavedExpert> experts;

    SavedExpert* find(ExpertKind kind);
    const SavedExpert* find(ExpertKind kind) const;
    /// Replaces the expert of the same kind or appends a new entry.
    void upsert(SavedExpert entry);
};

/// Versioned little-endian binary file; parameter tensors are stored by name
/// in float64. Round trips are byte-exact.
void save_checkpoint(const Checkpoint& ck, const std::string& path);

struct CheckpointLoadResult {
    Checkpoint checkpoint;
    bool config_hash_mismatch = false;
};

/// Loads a checkpoint, verifying magic and version. When expected_config_hash
/// is nonzero and differs from the stored hash, the mismatch flag is set so
/// callers can warn. Corruption errors name the section that failed.
CheckpointLoadResult load_checkpoint(const std::string& path,
                                     std::uint64_t expected_config_hash = 0);

}  // namespace v2lab
