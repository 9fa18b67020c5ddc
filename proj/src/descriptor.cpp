#include "mllmrec/descriptor.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mllmrec/errors.hpp"
#include "mllmrec/rng.hpp"

#ifndef MLLMREC_NO_HTTPLIB
#include <httplib.h>
#endif

namespace mllmrec::desc {

using nlohmann::json;

namespace {

constexpr const char* kPrompt1 =
    "Please convert the given image into an accurate and concise textual description "
    "relevant to the {dataset name}, focusing on extracting key attributes that can "
    "influence the buying behavior of users, such as color, material, style, "
    "functionality, etc. To generate the textual description using a one-paragraph "
    "natural language overview in no more than 100 words.";

constexpr const char* kPrompt2 =
    "Please reason about the user preferences based on the following list of item "
    "descriptions that he or she has interacted with. The list is: {behavioral description}. "
    "To generate the user preferences using a one-paragraph natural language in no "
    "more than 100 words.";

std::string replace_once(std::string tmpl, const std::string& token, const std::string& value) {
    size_t pos = tmpl.find(token);
    tmpl.replace(pos, token.size(), value);
    return tmpl;
}

std::string base64_encode(const std::string& bytes) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 3 <= bytes.size()) {
        uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) |
                     (static_cast<uint8_t>(bytes[i + 1]) << 8) | static_cast<uint8_t>(bytes[i + 2]);
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += alphabet[(v >> 6) & 63];
        out += alphabet[v & 63];
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        uint32_t v = static_cast<uint8_t>(bytes[i]) << 16;
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == bytes.size()) {
        uint32_t v = (static_cast<uint8_t>(bytes[i]) << 16) | (static_cast<uint8_t>(bytes[i + 1]) << 8);
        out += alphabet[(v >> 18) & 63];
        out += alphabet[(v >> 12) & 63];
        out += alphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

}  // namespace

std::string render_prompt1(const std::string& dataset_name) {
    if (dataset_name.empty()) throw std::invalid_argument("render_prompt1: empty dataset name");
    return replace_once(kPrompt1, "{dataset name}", dataset_name);
}

std::string serialize_behavior_list(const std::vector<std::string>& behavior_list) {
    std::string out;
    for (size_t i = 0; i < behavior_list.size(); ++i) {
        if (i > 0) out += ' ';
        out += std::to_string(i + 1);
        out += ". \"";
        out += behavior_list[i];
        out += '"';
    }
    return out;
}

std::string render_prompt2(const std::vector<std::string>& behavior_list) {
    if (behavior_list.empty()) throw std::invalid_argument("render_prompt2: empty behavior list");
    return replace_once(kPrompt2, "{behavioral description}", serialize_behavior_list(behavior_list));
}

std::string StubMllmClient::complete(const std::string& prompt, const std::string& image_ref) {
    uint64_t h = fnv1a64(prompt, fnv1a64(image_ref, mix64(seed_)));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "stub-desc %016llx", static_cast<unsigned long long>(h));
    return buf;
}

HttpMllmClient::HttpMllmClient(MllmClientConfig cfg) : cfg_(std::move(cfg)) {
#ifndef MLLMREC_NO_HTTPLIB
    transport_ = [this](const std::string& endpoint, const std::string& body) -> Response {
        // split endpoint into scheme://host[:port] and path
        std::string rest = endpoint;
        std::string scheme_host;
        size_t scheme = rest.find("://");
        size_t path_pos = rest.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        std::string path = "/v1/chat/completions";
        if (path_pos != std::string::npos) {
            scheme_host = rest.substr(0, path_pos);
            if (path_pos + 1 < rest.size()) path = rest.substr(path_pos);
        } else {
            scheme_host = rest;
        }
        httplib::Client cli(scheme_host);
        const auto secs = static_cast<time_t>(cfg_.timeout_s);
        cli.set_connection_timeout(secs, 0);
        cli.set_read_timeout(secs, 0);
        httplib::Headers headers;
        if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
        auto res = cli.Post(path, headers, body, "application/json");
        if (!res) return {false, 0, "", httplib::to_string(res.error())};
        return {res->status >= 200 && res->status < 300, res->status, res->body, ""};
    };
#else
    transport_ = [](const std::string&, const std::string&) -> Response {
        return {false, 0, "", "http transport compiled out"};
    };
#endif
}

HttpMllmClient::HttpMllmClient(MllmClientConfig cfg, Transport transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)) {}

std::string HttpMllmClient::build_request_body(const std::string& prompt,
                                               const std::string& image_ref) const {
    json body;
    body["model"] = cfg_.model_name;
    body["temperature"] = cfg_.temperature;
    if (image_ref.empty()) {
        body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
    } else {
        std::string url = image_ref;
        if (cfg_.image_mode == "base64") {
            std::ifstream img(image_ref, std::ios::binary);
            if (!img) throw IoError("cannot read image for base64 inlining: " + image_ref);
            std::string bytes((std::istreambuf_iterator<char>(img)),
                              std::istreambuf_iterator<char>());
            url = "data:image/jpeg;base64," + base64_encode(bytes);
        }
        json content = json::array();
        content.push_back({{"type", "text"}, {"text", prompt}});
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
        body["messages"] = json::array({json{{"role", "user"}, {"content", content}}});
    }
    return body.dump();
}

std::string HttpMllmClient::extract_text(const std::string& response_body) {
    json doc = json::parse(response_body, nullptr, false);
    if (doc.is_discarded()) throw TransportError("unparseable completion response");
    // chat-completions shape first, bare message shape as fallback
    const json* msg = nullptr;
    if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty())
        msg = &doc["choices"][0]["message"];
    else if (doc.contains("message"))
        msg = &doc["message"];
    if (msg == nullptr || !msg->contains("content"))
        throw TransportError("completion response carries no message content");
    const json& content = (*msg)["content"];
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
        for (const auto& part : content)
            if (part.contains("text")) return part["text"].get<std::string>();
    }
    throw TransportError("completion response carries no text part");
}

std::string HttpMllmClient::complete(const std::string& prompt, const std::string& image_ref) {
    const std::string body = build_request_body(prompt, image_ref);
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        Response res = transport_(cfg_.endpoint, body);
        if (res.ok) return extract_text(res.body);
        last_error = res.error.empty() ? "http status " + std::to_string(res.status) : res.error;
    }
    throw TransportError("MLLM request failed after " + std::to_string(cfg_.max_retries + 1) +
                         " attempts: " + last_error);
}

// ---- cache ----

std::string prompt_hash_hex(const std::string& prompt) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(prompt)));
    return buf;
}

std::string DescriptionCache::key(const std::string& kind, uint32_t index, const std::string& model,
                                  const std::string& prompt_hash) {
    return kind + '\x1f' + std::to_string(index) + '\x1f' + model + '\x1f' + prompt_hash;
}

DescriptionCache::DescriptionCache(std::filesystem::path path)
    : path_(std::move(path)), file_backed_(true) {
    std::ifstream in(path_);
    if (!in) return;  // nothing cached yet
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded()) throw ParseError(line_no, "bad cache line in " + path_.string());
        entries_[key(doc.at("kind"), doc.at("index"), doc.at("model"), doc.at("prompt_hash"))] =
            doc.at("text").get<std::string>();
    }
}

std::optional<std::string> DescriptionCache::lookup(const std::string& kind, uint32_t index,
                                                    const std::string& model,
                                                    const std::string& prompt_hash) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key(kind, index, model, prompt_hash));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void DescriptionCache::insert(const CacheEntry& entry) {
    std::lock_guard lock(mu_);
    entries_[key(entry.kind, entry.index, entry.model, entry.prompt_hash)] = entry.text;
    if (file_backed_) {
        std::ofstream out(path_, std::ios::app);
        if (!out) throw IoError("cannot append to cache: " + path_.string());
        json doc{{"kind", entry.kind},
                 {"index", entry.index},
                 {"model", entry.model},
                 {"prompt_hash", entry.prompt_hash},
                 {"text", entry.text}};
        out << doc.dump() << '\n';
    }
}

size_t DescriptionCache::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

// ---- generation ----

std::string generate_item_description(MllmClient& client, DescriptionCache& cache,
                                      const std::string& prompt, uint32_t item_index,
                                      const std::string& image_ref) {
    if (image_ref.empty())
        throw std::invalid_argument("generate_item_description: item " + std::to_string(item_index) +
                                    " has no image_ref");
    const std::string hash = prompt_hash_hex(prompt);
    if (auto hit = cache.lookup("item", item_index, client.model_name(), hash)) return *hit;
    std::string text = client.complete(prompt, image_ref);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos)
        throw EmptyResponse("blank description for item " + std::to_string(item_index));
    cache.insert({"item", item_index, client.model_name(), hash, text});
    return text;
}

std::string generate_user_preference(MllmClient& client, DescriptionCache& cache,
                                     const std::vector<std::string>& behavior_list,
                                     uint32_t user_index) {
    const std::string prompt = render_prompt2(behavior_list);  // throws on empty list
    const std::string hash = prompt_hash_hex(prompt);
    if (auto hit = cache.lookup("user", user_index, client.model_name(), hash)) return *hit;
    std::string text = client.complete(prompt, "");
    if (text.find_first_not_of(" \t\r\n") == std::string::npos)
        throw EmptyResponse("blank preference for user " + std::to_string(user_index));
    cache.insert({"user", user_index, client.model_name(), hash, text});
    return text;
}

std::string fuse_descriptions(const std::string& text_meta, const std::string& semantic_desc,
                              const std::string& separator) {
    if (text_meta.empty()) return semantic_desc;
    if (semantic_desc.empty()) return text_meta;
    return text_meta + separator + semantic_desc;
}

std::vector<std::string> build_behavior_list(uint32_t user, const corpus::InteractionMatrix& train,
                                             const ItemCatalog& catalog, size_t cap) {
    const auto& items = train.by_user[user];
    std::vector<size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    if (train.has_timestamps) {
        const auto& ts = train.ts_by_user[user];
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (ts[a] != ts[b]) return ts[a] < ts[b];
            return items[a] < items[b];
        });
    }
    // keep the most recent `cap` entries
    size_t start = order.size() > cap ? order.size() - cap : 0;

    std::vector<std::string> list;
    list.reserve(order.size() - start);
    for (size_t p = start; p < order.size(); ++p) {
        uint32_t item = items[order[p]];
        const auto& desc = catalog.items.at(item).multimodal_desc;
        if (!desc) throw MissingDescription(item);
        list.push_back(*desc);
    }
    return list;
}

ItemCatalog load_item_metadata(const std::filesystem::path& path,
                               const corpus::InteractionMatrix& matrix) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open item metadata: " + path.string());

    ItemCatalog catalog;
    catalog.items.resize(matrix.n_items);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded()) throw ParseError(line_no, "bad metadata line");
        const std::string item_key = doc.at("item_key");
        auto it = matrix.item_index.find(item_key);
        if (it == matrix.item_index.end()) continue;  // filtered out by k-core
        ItemRecord& rec = catalog.items[it->second];
        rec.text_meta = doc.value("text_meta", "");
        rec.image_ref = doc.value("image_ref", "");
    }
    return catalog;
}

}  // namespace mllmrec::desc
