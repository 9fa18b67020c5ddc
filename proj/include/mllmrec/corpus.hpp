#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mllmrec::corpus {

struct Interaction {
    std::string user_key;
    std::string item_key;
    std::optional<int64_t> timestamp;
};

struct RawInteractions {
    std::vector<Interaction> records;
};

// Sparse boolean user x item matrix with both orientations. Immutable once
// built; safe to share read-only across threads.
struct InteractionMatrix {
    size_t n_users = 0;
    size_t n_items = 0;
    std::vector<std::vector<uint32_t>> by_user;  // sorted item indices per user
    std::vector<std::vector<uint32_t>> by_item;  // sorted user indices per item
    // Parallel to by_user when has_timestamps; used for behavior ordering.
    std::vector<std::vector<int64_t>> ts_by_user;
    bool has_timestamps = false;

    std::vector<std::string> user_keys;  // index -> key
    std::vector<std::string> item_keys;
    std::unordered_map<std::string, uint32_t> user_index;
    std::unordered_map<std::string, uint32_t> item_index;

    size_t n_pairs() const;
    bool has(uint32_t user, uint32_t item) const;
    size_t user_degree(uint32_t user) const { return by_user[user].size(); }
    size_t item_degree(uint32_t item) const { return by_item[item].size(); }
};

struct DatasetSplit {
    InteractionMatrix train;
    std::vector<std::vector<uint32_t>> valid;  // per-user held-out items, sorted
    std::vector<std::vector<uint32_t>> test;
    std::array<double, 3> ratios{0.8, 0.1, 0.1};
    uint64_t seed = 0;
};

// Parses tab-separated `user_key<TAB>item_key[<TAB>timestamp]` lines.
// Duplicate (user, item) pairs collapse to one record keeping the
// first-seen timestamp.
RawInteractions load_interactions(const std::filesystem::path& path);

// Iteratively removes users and items with fewer than k interactions until
// a fixpoint. Record order of survivors is preserved.
RawInteractions kcore_filter(const RawInteractions& raw, int k = 5);

// Assigns contiguous indices in order of first appearance.
InteractionMatrix index(const RawInteractions& raw);

// Per-user random partition into train/valid/test. Cut points are
// floor(r0*n) and floor((r0+r1)*n) over a seeded shuffle of the user's
// items, so train is never empty for users with >= 2 interactions.
DatasetSplit split(const InteractionMatrix& matrix, std::array<double, 3> ratios, uint64_t seed);

void write_interactions(const std::filesystem::path& path, const InteractionMatrix& m);
void write_heldout(const std::filesystem::path& path, const InteractionMatrix& full,
                   const std::vector<std::vector<uint32_t>>& heldout);
void write_id_map(const std::filesystem::path& path, const std::vector<std::string>& keys);

}  // namespace mllmrec::corpus
