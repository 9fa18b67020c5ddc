#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mllmrec/corpus.hpp"

namespace mllmrec::desc {

struct ItemRecord {
    std::string image_ref;   // file path or URL
    std::string text_meta;   // textual metadata
    std::optional<std::string> semantic_desc;    // generated from the image
    std::optional<std::string> multimodal_desc;  // text_meta fused with semantic_desc
};

struct ItemCatalog {
    std::vector<ItemRecord> items;  // indexed like the interaction matrix
};

struct UserRecord {
    std::vector<std::string> behavior_list;
    std::optional<std::string> preference_text;
};

struct UserCatalog {
    std::vector<UserRecord> users;
};

struct MllmClientConfig {
    std::string endpoint;  // e.g. http://localhost:11434/v1/chat/completions
    std::string model_name = "gemma3-27b";
    std::string api_key;
    double timeout_s = 30.0;
    int max_retries = 2;
    double temperature = 0.0;    // greedy by default, for reproducibility
    std::string image_mode = "url";  // "url" or "base64"
    int concurrency = 1;
};

// Prompt for converting an item image into a semantic description.
std::string render_prompt1(const std::string& dataset_name);

// Prompt for reasoning about user preferences from a behavior list,
// serialized as a numbered sequence of quoted descriptions.
std::string serialize_behavior_list(const std::vector<std::string>& behavior_list);
std::string render_prompt2(const std::vector<std::string>& behavior_list);

class MllmClient {
public:
    virtual ~MllmClient() = default;
    virtual const std::string& model_name() const = 0;
    // image_ref is empty for text-only requests.
    virtual std::string complete(const std::string& prompt, const std::string& image_ref) = 0;
};

// Pure function of (prompt, payload, seed); output "stub-desc <hex>".
class StubMllmClient : public MllmClient {
public:
    explicit StubMllmClient(uint64_t seed = 0) : seed_(seed) {}
    const std::string& model_name() const override { return name_; }
    std::string complete(const std::string& prompt, const std::string& image_ref) override;

private:
    uint64_t seed_;
    std::string name_ = "stub";
};

// Chat-completions style HTTP client. A failed transport attempt is retried
// up to max_retries times; a blank completion raises EmptyResponse.
class HttpMllmClient : public MllmClient {
public:
    struct Response {
        bool ok = false;
        int status = 0;
        std::string body;
        std::string error;
    };
    using Transport = std::function<Response(const std::string& endpoint, const std::string& json_body)>;

    explicit HttpMllmClient(MllmClientConfig cfg);
    HttpMllmClient(MllmClientConfig cfg, Transport transport);

    const std::string& model_name() const override { return cfg_.model_name; }
    std::string complete(const std::string& prompt, const std::string& image_ref) override;

    std::string build_request_body(const std::string& prompt, const std::string& image_ref) const;
    static std::string extract_text(const std::string& response_body);

private:
    MllmClientConfig cfg_;
    Transport transport_;
};

struct CacheEntry {
    std::string kind;  // "item" | "user"
    uint32_t index = 0;
    std::string model;
    std::string prompt_hash;
    std::string text;
};

// Append-only JSONL response cache with an in-memory read index.
// Single-writer append; lookups are lock-protected and cheap.
class DescriptionCache {
public:
    DescriptionCache() = default;  // memory-only
    explicit DescriptionCache(std::filesystem::path path);

    std::optional<std::string> lookup(const std::string& kind, uint32_t index,
                                      const std::string& model, const std::string& prompt_hash) const;
    void insert(const CacheEntry& entry);
    size_t size() const;

private:
    static std::string key(const std::string& kind, uint32_t index, const std::string& model,
                           const std::string& prompt_hash);
    std::filesystem::path path_;
    bool file_backed_ = false;
    mutable std::mutex mu_;
    std::unordered_map<std::string, std::string> entries_;
};

std::string prompt_hash_hex(const std::string& prompt);

// Cache-through generation; a hit performs no client call.
std::string generate_item_description(MllmClient& client, DescriptionCache& cache,
                                      const std::string& prompt, uint32_t item_index,
                                      const std::string& image_ref);
std::string generate_user_preference(MllmClient& client, DescriptionCache& cache,
                                     const std::vector<std::string>& behavior_list,
                                     uint32_t user_index);

// text_meta ⊕ separator ⊕ semantic_desc; an empty side drops the separator.
std::string fuse_descriptions(const std::string& text_meta, const std::string& semantic_desc,
                              const std::string& separator = ". ");

// Multimodal descriptions of the user's TRAIN items ordered by timestamp
// ascending (item index as fallback), truncated to the most recent `cap`.
std::vector<std::string> build_behavior_list(uint32_t user, const corpus::InteractionMatrix& train,
                                             const ItemCatalog& catalog, size_t cap);

// Item metadata JSONL: {"item_key": ..., "text_meta": ..., "image_ref": ...}.
// Items of the matrix with no metadata line get empty fields.
ItemCatalog load_item_metadata(const std::filesystem::path& path,
                               const corpus::InteractionMatrix& matrix);

}  // namespace mllmrec::desc
