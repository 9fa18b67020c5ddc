#pragma once

// Shared synthetic fixtures for the test and acceptance suites.

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "mllmrec/corpus.hpp"
#include "mllmrec/embedding.hpp"
#include "mllmrec/rng.hpp"

namespace fixtures {

inline std::filesystem::path fresh_dir(const std::string& tag) {
    static std::atomic<uint64_t> counter{0};
    auto dir = std::filesystem::temp_directory_path() /
               ("mllmrec_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Two clusters of users and items; inside each cluster a user's interactions
// cover a contiguous window on an item ring, so audience overlap decays with
// ring distance. Every user has 10-12 interactions, every item is covered by
// ~20 user windows, so the data is 5-core by construction. Timestamps follow
// the window position.
inline mllmrec::corpus::RawInteractions two_cluster_interactions(size_t users_per_cluster = 100,
                                                                 size_t items_per_cluster = 50) {
    mllmrec::corpus::RawInteractions raw;
    for (size_t cluster = 0; cluster < 2; ++cluster) {
        for (size_t cu = 0; cu < users_per_cluster; ++cu) {
            const size_t user = cluster * users_per_cluster + cu;
            const size_t start = cu % items_per_cluster;
            const size_t deg = 10 + user % 3;
            for (size_t j = 0; j < deg; ++j) {
                const size_t item = cluster * items_per_cluster + (start + j) % items_per_cluster;
                raw.records.push_back({"u" + std::to_string(user), "i" + std::to_string(item),
                                       static_cast<int64_t>(j)});
            }
        }
    }
    return raw;
}

inline void write_interactions_tsv(const std::filesystem::path& path,
                                   const mllmrec::corpus::RawInteractions& raw) {
    std::ofstream out(path);
    for (const auto& r : raw.records) {
        out << r.user_key << '\t' << r.item_key;
        if (r.timestamp) out << '\t' << *r.timestamp;
        out << '\n';
    }
}

inline void write_item_metadata_jsonl(const std::filesystem::path& path, size_t n_items,
                                      bool drop_image_for_item = false, size_t dropped_item = 0) {
    std::ofstream out(path);
    for (size_t i = 0; i < n_items; ++i) {
        std::string image = (drop_image_for_item && i == dropped_item)
                                ? ""
                                : "img://item" + std::to_string(i);
        out << R"({"item_key": "i)" << i << R"(", "text_meta": "catalog entry )" << i
            << R"(", "image_ref": ")" << image << "\"}\n";
    }
}

// Embeddings planted around two orthogonal centroids with small noise:
// within-cluster cosine stays high, cross-cluster cosine stays low.
inline mllmrec::embed::EmbeddingMatrix two_cluster_embeddings(size_t n_rows, size_t dim,
                                                              double noise, uint64_t seed) {
    mllmrec::embed::EmbeddingMatrix m(n_rows, dim);
    mllmrec::Rng rng(seed);
    for (size_t r = 0; r < n_rows; ++r) {
        const size_t axis = (r < n_rows / 2) ? 0 : 1;
        for (size_t j = 0; j < dim; ++j) m.at(r, j) = noise * rng.normal();
        m.at(r, axis) += 1.0;
    }
    return m;
}

inline mllmrec::embed::EmbeddingMatrix random_embeddings(size_t rows, size_t dim, uint64_t seed) {
    mllmrec::embed::EmbeddingMatrix m(rows, dim);
    mllmrec::Rng rng(seed);
    for (double& v : m.data) v = rng.normal();
    return m;
}

// Random bipartite interactions; every user gets at least one item.
inline mllmrec::corpus::InteractionMatrix random_interactions(size_t n_users, size_t n_items,
                                                              size_t max_deg, uint64_t seed) {
    mllmrec::corpus::RawInteractions raw;
    mllmrec::Rng rng(seed);
    std::vector<bool> item_used(n_items, false);
    for (size_t u = 0; u < n_users; ++u) {
        const size_t deg = 1 + rng.uniform_below(max_deg);
        std::set<size_t> chosen;
        while (chosen.size() < std::min(deg, n_items)) chosen.insert(rng.uniform_below(n_items));
        for (size_t i : chosen) {
            item_used[i] = true;
            raw.records.push_back({"u" + std::to_string(u), "i" + std::to_string(i), std::nullopt});
        }
    }
    // keep every item index alive so n_items is stable
    for (size_t i = 0; i < n_items; ++i)
        if (!item_used[i]) {
            const size_t u = rng.uniform_below(n_users);
            raw.records.push_back({"u" + std::to_string(u), "i" + std::to_string(i), std::nullopt});
        }
    return mllmrec::corpus::index(raw);
}

}  // namespace fixtures
