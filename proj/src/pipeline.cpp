#include "mllmrec/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "mllmrec/errors.hpp"
#include "mllmrec/rng.hpp"

namespace mllmrec::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- config ----

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (...) {
        throw ConfigError("config: bad number for " + key + ": " + v);
    }
}

long long to_int(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        long long d = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (...) {
        throw ConfigError("config: bad integer for " + key + ": " + v);
    }
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: bad boolean for " + key + ": " + v);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

}  // namespace

PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));

        if (key == "dataset") cfg.dataset = value;
        else if (key == "interactions") cfg.interactions = value;
        else if (key == "item_meta") cfg.item_meta = value;
        else if (key == "workdir") cfg.workdir = value;
        else if (key == "kcore") cfg.kcore = static_cast<int>(to_int(value, key));
        else if (key == "seed") cfg.seed = static_cast<uint64_t>(to_int(value, key));
        else if (key == "ratios") {
            auto parts = split_list(value);
            if (parts.size() != 3) throw ConfigError("config: ratios needs three values");
            for (size_t i = 0; i < 3; ++i) cfg.ratios[i] = to_double(parts[i], key);
        }
        else if (key == "mllm.endpoint") cfg.mllm.endpoint = value;
        else if (key == "mllm.model") cfg.mllm.model_name = value;
        else if (key == "mllm.api_key") cfg.mllm.api_key = value;
        else if (key == "mllm.timeout") cfg.mllm.timeout_s = to_double(value, key);
        else if (key == "mllm.max_retries") cfg.mllm.max_retries = static_cast<int>(to_int(value, key));
        else if (key == "mllm.temperature") cfg.mllm.temperature = to_double(value, key);
        else if (key == "mllm.image_mode") cfg.mllm.image_mode = value;
        else if (key == "mllm.concurrency") cfg.mllm.concurrency = static_cast<int>(to_int(value, key));
        else if (key == "behavior_cap") cfg.behavior_cap = static_cast<size_t>(to_int(value, key));
        else if (key == "encoder") cfg.encoder = value;
        else if (key == "encoder.dim") cfg.encoder_dim = static_cast<size_t>(to_int(value, key));
        else if (key == "encoder.items_file") cfg.encoder_items_file = value;
        else if (key == "encoder.users_file") cfg.encoder_users_file = value;
        else if (key == "graph.k_semantic") cfg.graph.k_semantic = static_cast<int>(to_int(value, key));
        else if (key == "graph.alpha") cfg.graph.alpha = to_double(value, key);
        else if (key == "graph.k_cooccur") cfg.graph.k_cooccur = static_cast<int>(to_int(value, key));
        else if (key == "graph.layers") cfg.graph.layers = static_cast<int>(to_int(value, key));
        else if (key == "graph.symmetrize") cfg.graph.symmetrize = to_bool(value, key);
        else if (key == "train.batch_size") cfg.train.batch_size = static_cast<size_t>(to_int(value, key));
        else if (key == "train.lr") cfg.train.learning_rate = to_double(value, key);
        else if (key == "train.d") cfg.train.d = static_cast<size_t>(to_int(value, key));
        else if (key == "train.d1") cfg.train.d1 = static_cast<size_t>(to_int(value, key));
        else if (key == "train.max_epochs") cfg.train.max_epochs = static_cast<size_t>(to_int(value, key));
        else if (key == "train.patience") cfg.train.patience = static_cast<size_t>(to_int(value, key));
        else if (key == "train.leaky_slope") cfg.train.leaky_slope = to_double(value, key);
        else if (key == "train.weight_decay") cfg.train.weight_decay = to_double(value, key);
        else if (key == "eval.ks") {
            cfg.eval_ks.clear();
            for (const auto& p : split_list(value))
                cfg.eval_ks.push_back(static_cast<size_t>(to_int(p, key)));
        }
        else if (key == "eval.topn_dump") cfg.topn_dump = to_bool(value, key);
        else throw ConfigError("config: unknown key: " + key);
    }
    cfg.train.seed = cfg.seed;
    validate_config(cfg);
    return cfg;
}

void validate_config(const PipelineConfig& cfg) {
    if (cfg.kcore < 1) throw ConfigError("config: kcore must be >= 1");
    if (cfg.graph.k_semantic < 1) throw ConfigError("config: graph.k_semantic must be >= 1");
    if (cfg.graph.k_cooccur < 1) throw ConfigError("config: graph.k_cooccur must be >= 1");
    if (cfg.graph.alpha < 0.0 || cfg.graph.alpha > 1.0)
        throw ConfigError("config: graph.alpha must lie in [0, 1]");
    if (cfg.graph.layers < 0) throw ConfigError("config: graph.layers must be >= 0");
    if (cfg.train.batch_size < 1 || cfg.train.d < 1 || cfg.train.d1 < 1 ||
        cfg.train.max_epochs < 1 || cfg.train.patience < 1)
        throw ConfigError("config: train counts must be >= 1");
    if (cfg.train.learning_rate <= 0.0) throw ConfigError("config: train.lr must be positive");
    if (cfg.train.leaky_slope <= 0.0 || cfg.train.leaky_slope >= 1.0)
        throw ConfigError("config: train.leaky_slope must lie in (0, 1)");
    if (cfg.mllm.timeout_s <= 0.0) throw ConfigError("config: mllm.timeout must be positive");
    if (cfg.mllm.max_retries < 0) throw ConfigError("config: mllm.max_retries must be >= 0");
    if (cfg.mllm.concurrency < 1) throw ConfigError("config: mllm.concurrency must be >= 1");
    if (cfg.encoder != "stub" && cfg.encoder != "file")
        throw ConfigError("config: encoder must be stub or file");
    if (cfg.eval_ks.empty()) throw ConfigError("config: eval.ks must name at least one cutoff");
}

PipelineConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    PipelineConfig cfg = parse_config_text(ss.str());
    apply_env_overrides(cfg);
    return cfg;
}

void apply_env_overrides(PipelineConfig& cfg) {
    if (const char* e = std::getenv("MLLMREC_ENDPOINT")) cfg.mllm.endpoint = e;
    if (const char* k = std::getenv("MLLMREC_API_KEY")) cfg.mllm.api_key = k;
}

std::string config_hash_hex(const PipelineConfig& cfg) {
    std::ostringstream s;
    s << cfg.dataset << '|' << cfg.interactions.string() << '|' << cfg.item_meta.string() << '|'
      << cfg.kcore << '|' << cfg.seed << '|' << cfg.ratios[0] << ',' << cfg.ratios[1] << ','
      << cfg.ratios[2] << '|' << cfg.mllm.model_name << '|' << cfg.mllm.temperature << '|'
      << cfg.behavior_cap << '|' << cfg.encoder << '|' << cfg.encoder_dim << '|'
      << cfg.encoder_items_file.string() << '|' << cfg.encoder_users_file.string() << '|'
      << cfg.graph.k_semantic << '|' << cfg.graph.alpha << '|' << cfg.graph.k_cooccur << '|'
      << cfg.graph.layers << '|' << cfg.graph.symmetrize << '|' << cfg.train.batch_size << '|'
      << cfg.train.learning_rate << '|' << cfg.train.d << '|' << cfg.train.d1 << '|'
      << cfg.train.max_epochs << '|' << cfg.train.patience << '|' << cfg.train.leaky_slope << '|'
      << cfg.train.weight_decay;
    for (size_t k : cfg.eval_ks) s << '|' << k;
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(s.str())));
    return buf;
}

std::string config_help() {
    return
        "Config file: one `key = value` per line, `#` starts a comment.\n"
        "  dataset              dataset name substituted into the image prompt\n"
        "  interactions         TSV `user<TAB>item[<TAB>timestamp]`\n"
        "  item_meta            JSONL {item_key, text_meta, image_ref}\n"
        "  workdir              stage artifact directory\n"
        "  kcore                minimum interactions per user/item (default 5)\n"
        "  seed                 pipeline seed (split, init, sampling)\n"
        "  ratios               train,valid,test shares (default 0.8,0.1,0.1)\n"
        "  mllm.endpoint        chat-completions URL (env MLLMREC_ENDPOINT overrides)\n"
        "  mllm.model           model identifier (default gemma3-27b)\n"
        "  mllm.api_key         bearer token (env MLLMREC_API_KEY overrides)\n"
        "  mllm.timeout         request timeout seconds (default 30)\n"
        "  mllm.max_retries     transport retries (default 2)\n"
        "  mllm.temperature     sampling temperature (default 0)\n"
        "  mllm.image_mode      url | base64 (default url)\n"
        "  mllm.concurrency     in-flight requests in describe (default 1)\n"
        "  behavior_cap         max behavior-list length (default 50)\n"
        "  encoder              stub | file (default stub)\n"
        "  encoder.dim          stub encoder width (default 32)\n"
        "  encoder.items_file   precomputed item embedding store (encoder=file)\n"
        "  encoder.users_file   precomputed user embedding store (encoder=file)\n"
        "  graph.k_semantic     semantic KNN size K_s (default 10)\n"
        "  graph.alpha          similarity threshold (default 0.5)\n"
        "  graph.k_cooccur      co-occurrence KNN size K_c (default 10)\n"
        "  graph.layers         propagation depth L (default 1)\n"
        "  graph.symmetrize     symmetrize the merged graph (default false)\n"
        "  train.batch_size     default 2048\n"
        "  train.lr             default 0.001\n"
        "  train.d              output dim (default 64)\n"
        "  train.d1             hidden dim (default 256)\n"
        "  train.max_epochs     default 1000\n"
        "  train.patience       early-stop patience on valid R@20 (default 20)\n"
        "  train.leaky_slope    LeakyReLU slope (default 0.01)\n"
        "  train.weight_decay   L2 coefficient (default 0)\n"
        "  eval.ks              metric cutoffs (default 10,20)\n"
        "  eval.topn_dump       write per-user top-N TSV (default false)\n";
}

// ---- workdir plumbing ----

namespace {

struct WorkdirLock {
    explicit WorkdirLock(const fs::path& workdir) : path_(workdir / ".lock") {
        fs::create_directories(workdir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw Error("workdir is locked by another invocation (remove " + path_.string() +
                        " if stale)");
    }
    ~WorkdirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    WorkdirLock(const WorkdirLock&) = delete;
    WorkdirLock& operator=(const WorkdirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

std::string hash_file_hex(const std::vector<fs::path>& paths) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : paths) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot hash missing file: " + p.string());
        char buf[1 << 16];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
            h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    }
    char out[24];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

json read_manifest(const fs::path& workdir) {
    std::ifstream in(workdir / "manifest.json");
    if (!in) return json::object();
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ParseError(0, "corrupt manifest.json");
    return doc;
}

void write_manifest(const fs::path& workdir, const json& manifest) {
    std::ofstream out(workdir / "manifest.json");
    out << manifest.dump(2) << '\n';
}

// Relative artifact files per stage, used for hashing and freshness.
std::vector<fs::path> stage_files(const fs::path& workdir, const std::string& stage) {
    if (stage == "prepare")
        return {workdir / "split/train.tsv", workdir / "split/valid.tsv",
                workdir / "split/test.tsv", workdir / "split/user_map.tsv",
                workdir / "split/item_map.tsv"};
    if (stage == "describe") return {workdir / "describe/cache.jsonl"};
    if (stage == "encode") return {workdir / "encode/items.emb", workdir / "encode/users.emb"};
    if (stage == "graph") return {workdir / "graph/merged.tsv", workdir / "graph/features.emb"};
    if (stage == "train") return {workdir / "train/checkpoint.bin", workdir / "train/history.csv"};
    if (stage == "evaluate") return {workdir / "eval/metrics.json"};
    throw std::invalid_argument("unknown stage: " + stage);
}

bool stage_files_exist(const fs::path& workdir, const std::string& stage) {
    for (const auto& p : stage_files(workdir, stage))
        if (!fs::exists(p)) return false;
    return true;
}

// Returns true when the stage should be skipped as a no-op (fresh), throws
// when artifacts exist under a different config and --force is absent.
bool stage_guard(const json& manifest, const fs::path& workdir, const std::string& stage,
                 const std::string& cfg_hash, bool force) {
    if (force) return false;
    if (!manifest.contains(stage)) return false;
    if (!stage_files_exist(workdir, stage)) return false;
    if (manifest[stage].value("config_hash", "") == cfg_hash) {
        std::cerr << "[mllmrec] " << stage << ": up-to-date, skipping (use --force to redo)\n";
        return true;
    }
    throw ConfigError(stage + ": artifacts exist with a different config hash; rerun with --force");
}

void require_stage(const json& manifest, const fs::path& workdir, const std::string& stage) {
    if (!manifest.contains(stage) || !stage_files_exist(workdir, stage)) throw StageMissing(stage);
}

void record_stage(json& manifest, const fs::path& workdir, const std::string& stage,
                  const std::string& cfg_hash, const std::string& upstream, json extra) {
    extra["config_hash"] = cfg_hash;
    extra["artifact_hash"] = hash_file_hex(stage_files(workdir, stage));
    extra["upstream_hash"] = upstream;
    manifest[stage] = std::move(extra);
    write_manifest(workdir, manifest);
}

std::string stage_artifact_hash(const json& manifest, const std::string& stage) {
    if (!manifest.contains(stage)) throw StageMissing(stage);
    return manifest[stage].value("artifact_hash", "");
}

// Walks prepare -> describe -> encode -> graph -> train verifying that each
// stage consumed the upstream artifact it now sits next to.
void verify_chain(const json& manifest, const fs::path& workdir,
                  const std::vector<std::string>& chain) {
    for (size_t i = 0; i < chain.size(); ++i) {
        require_stage(manifest, workdir, chain[i]);
        const std::string current = hash_file_hex(stage_files(workdir, chain[i]));
        if (current != manifest[chain[i]].value("artifact_hash", ""))
            throw ChainMismatch("stage " + chain[i] + " artifacts changed after being recorded");
        if (i > 0) {
            const std::string up = manifest[chain[i]].value("upstream_hash", "");
            if (up != manifest[chain[i - 1]].value("artifact_hash", ""))
                throw ChainMismatch("stage " + chain[i] + " was built against a different " +
                                    chain[i - 1] + " artifact; rerun downstream stages");
        }
    }
}

uint64_t effective_seed(const PipelineConfig& cfg, const StageOptions& opts) {
    return opts.seed.value_or(cfg.seed);
}

PipelineConfig with_seed(PipelineConfig cfg, uint64_t seed) {
    cfg.seed = seed;
    cfg.train.seed = seed;
    return cfg;
}

std::vector<std::string> read_id_map(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open id map: " + path.string());
    std::vector<std::string> keys;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(line_no, "bad id map line");
        size_t idx = static_cast<size_t>(std::stoull(line.substr(tab + 1)));
        if (idx != keys.size()) throw ParseError(line_no, "id map out of order");
        keys.push_back(line.substr(0, tab));
    }
    return keys;
}

corpus::InteractionMatrix read_matrix_with_maps(const fs::path& path,
                                                const std::vector<std::string>& user_keys,
                                                const std::vector<std::string>& item_keys) {
    corpus::InteractionMatrix m;
    m.n_users = user_keys.size();
    m.n_items = item_keys.size();
    m.user_keys = user_keys;
    m.item_keys = item_keys;
    for (uint32_t u = 0; u < user_keys.size(); ++u) m.user_index[user_keys[u]] = u;
    for (uint32_t i = 0; i < item_keys.size(); ++i) m.item_index[item_keys[i]] = i;
    m.by_user.resize(m.n_users);
    m.by_item.resize(m.n_items);

    corpus::RawInteractions raw = corpus::load_interactions(path);
    bool any_ts = false;
    for (const auto& r : raw.records)
        if (r.timestamp) any_ts = true;
    m.has_timestamps = any_ts;
    if (any_ts) m.ts_by_user.resize(m.n_users);

    std::vector<std::vector<std::pair<uint32_t, int64_t>>> rows(m.n_users);
    for (const auto& r : raw.records) {
        auto uit = m.user_index.find(r.user_key);
        auto iit = m.item_index.find(r.item_key);
        if (uit == m.user_index.end() || iit == m.item_index.end())
            throw ParseError(0, "interaction key not present in persisted id maps: " + r.user_key +
                                    "/" + r.item_key);
        rows[uit->second].emplace_back(iit->second, r.timestamp.value_or(0));
        m.by_item[iit->second].push_back(uit->second);
    }
    for (size_t u = 0; u < m.n_users; ++u) {
        std::sort(rows[u].begin(), rows[u].end());
        for (auto& [i, ts] : rows[u]) {
            m.by_user[u].push_back(i);
            if (any_ts) m.ts_by_user[u].push_back(ts);
        }
    }
    for (auto& col : m.by_item) std::sort(col.begin(), col.end());
    return m;
}

std::vector<std::vector<uint32_t>> read_heldout_with_maps(const fs::path& path,
                                                          const corpus::InteractionMatrix& train) {
    std::vector<std::vector<uint32_t>> held(train.n_users);
    corpus::RawInteractions raw = corpus::load_interactions(path);
    for (const auto& r : raw.records) {
        auto uit = train.user_index.find(r.user_key);
        auto iit = train.item_index.find(r.item_key);
        if (uit == train.user_index.end() || iit == train.item_index.end())
            throw ParseError(0, "held-out key not present in persisted id maps");
        held[uit->second].push_back(iit->second);
    }
    for (auto& row : held) std::sort(row.begin(), row.end());
    return held;
}

std::unique_ptr<desc::MllmClient> make_client(const PipelineConfig& cfg, const StageOptions& opts) {
    if (opts.stub) return std::make_unique<desc::StubMllmClient>(effective_seed(cfg, opts));
    if (cfg.mllm.endpoint.empty())
        throw Error("mllm.endpoint is not configured; pass --stub for the offline provider");
    return std::make_unique<desc::HttpMllmClient>(cfg.mllm);
}

// Rebuilds item multimodal descriptions and user preference texts from the
// describe-stage cache without touching any client.
struct Texts {
    std::vector<std::string> item_multimodal;
    std::vector<std::string> user_preference;
};

Texts texts_from_cache(const PipelineConfig& cfg, const StageOptions& opts,
                       const corpus::DatasetSplit& split) {
    const fs::path cache_path = cfg.workdir / "describe/cache.jsonl";
    desc::DescriptionCache cache(cache_path);
    desc::ItemCatalog catalog = desc::load_item_metadata(cfg.item_meta, split.train);
    const std::string model = opts.stub ? "stub" : cfg.mllm.model_name;
    const std::string p1_hash = desc::prompt_hash_hex(desc::render_prompt1(cfg.dataset));

    Texts t;
    t.item_multimodal.resize(split.train.n_items);
    for (uint32_t i = 0; i < split.train.n_items; ++i) {
        auto hit = cache.lookup("item", i, model, p1_hash);
        if (!hit) throw MissingDescription(i);
        catalog.items[i].semantic_desc = *hit;
        catalog.items[i].multimodal_desc = desc::fuse_descriptions(catalog.items[i].text_meta, *hit);
        t.item_multimodal[i] = *catalog.items[i].multimodal_desc;
    }
    t.user_preference.resize(split.train.n_users);
    for (uint32_t u = 0; u < split.train.n_users; ++u) {
        auto list = desc::build_behavior_list(u, split.train, catalog, cfg.behavior_cap);
        const std::string p2_hash = desc::prompt_hash_hex(desc::render_prompt2(list));
        auto hit = cache.lookup("user", u, model, p2_hash);
        if (!hit)
            throw StageMissing("describe (user " + std::to_string(u) + " has no cached preference)");
        t.user_preference[u] = *hit;
    }
    return t;
}

}  // namespace

corpus::DatasetSplit load_split(const PipelineConfig& cfg) {
    const fs::path dir = cfg.workdir / "split";
    if (!fs::exists(dir / "train.tsv")) throw StageMissing("prepare");
    auto user_keys = read_id_map(dir / "user_map.tsv");
    auto item_keys = read_id_map(dir / "item_map.tsv");

    corpus::DatasetSplit split;
    split.train = read_matrix_with_maps(dir / "train.tsv", user_keys, item_keys);
    split.valid = read_heldout_with_maps(dir / "valid.tsv", split.train);
    split.test = read_heldout_with_maps(dir / "test.tsv", split.train);

    std::ifstream mf(dir / "split_manifest.json");
    if (mf) {
        json doc = json::parse(mf, nullptr, false);
        if (!doc.is_discarded()) {
            split.seed = doc.value("seed", static_cast<uint64_t>(0));
            if (doc.contains("ratios") && doc["ratios"].size() == 3)
                for (size_t i = 0; i < 3; ++i) split.ratios[i] = doc["ratios"][i];
        }
    }
    return split;
}

// ---- stages ----

int cmd_prepare(const PipelineConfig& base, const StageOptions& opts) {
    PipelineConfig cfg = with_seed(base, effective_seed(base, opts));
    WorkdirLock lock(cfg.workdir);
    json manifest = read_manifest(cfg.workdir);
    const std::string cfg_hash = config_hash_hex(cfg);
    if (stage_guard(manifest, cfg.workdir, "prepare", cfg_hash, opts.force)) return kExitOk;

    corpus::RawInteractions raw = corpus::load_interactions(cfg.interactions);
    corpus::RawInteractions filtered = corpus::kcore_filter(raw, cfg.kcore);
    corpus::InteractionMatrix matrix = corpus::index(filtered);
    corpus::DatasetSplit split = corpus::split(matrix, cfg.ratios, cfg.seed);

    const fs::path dir = cfg.workdir / "split";
    fs::create_directories(dir);
    corpus::write_interactions(dir / "train.tsv", split.train);
    corpus::write_heldout(dir / "valid.tsv", split.train, split.valid);
    corpus::write_heldout(dir / "test.tsv", split.train, split.test);
    corpus::write_id_map(dir / "user_map.tsv", matrix.user_keys);
    corpus::write_id_map(dir / "item_map.tsv", matrix.item_keys);

    size_t n_valid = 0, n_test = 0;
    for (const auto& v : split.valid) n_valid += v.size();
    for (const auto& v : split.test) n_test += v.size();
    json sm{{"seed", cfg.seed},
            {"ratios", cfg.ratios},
            {"n_users", matrix.n_users},
            {"n_items", matrix.n_items},
            {"n_train", split.train.n_pairs()},
            {"n_valid", n_valid},
            {"n_test", n_test},
            {"kcore", cfg.kcore}};
    std::ofstream(dir / "split_manifest.json") << sm.dump(2) << '\n';

    record_stage(manifest, cfg.workdir, "prepare", cfg_hash, "", sm);
    std::cout << "prepare: " << matrix.n_users << " users, " << matrix.n_items << " items, "
              << split.train.n_pairs() << " train pairs after " << cfg.kcore << "-core\n";
    return kExitOk;
}

int cmd_describe(const PipelineConfig& base, const StageOptions& opts) {
    PipelineConfig cfg = with_seed(base, effective_seed(base, opts));
    WorkdirLock lock(cfg.workdir);
    json manifest = read_manifest(cfg.workdir);
    require_stage(manifest, cfg.workdir, "prepare");
    const std::string cfg_hash = config_hash_hex(cfg);
    if (stage_guard(manifest, cfg.workdir, "describe", cfg_hash, opts.force)) return kExitOk;

    corpus::DatasetSplit split = load_split(cfg);
    desc::ItemCatalog catalog = desc::load_item_metadata(cfg.item_meta, split.train);
    auto client = make_client(cfg, opts);
    fs::create_directories(cfg.workdir / "describe");
    desc::DescriptionCache cache(cfg.workdir / "describe/cache.jsonl");

    const std::string prompt1 = desc::render_prompt1(cfg.dataset);
    std::vector<std::string> failures;

    const auto n_items = static_cast<long long>(split.train.n_items);
    const int threads = std::max(1, cfg.mllm.concurrency);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (long long i = 0; i < n_items; ++i) {
        const auto idx = static_cast<uint32_t>(i);
        try {
            std::string sdesc = desc::generate_item_description(*client, cache, prompt1, idx,
                                                                catalog.items[idx].image_ref);
#pragma omp critical(catalog_update)
            {
                catalog.items[idx].semantic_desc = sdesc;
                catalog.items[idx].multimodal_desc =
                    desc::fuse_descriptions(catalog.items[idx].text_meta, sdesc);
            }
        } catch (const std::exception& e) {
#pragma omp critical(failure_log)
            failures.push_back("item " + std::to_string(idx) + ": " + e.what());
        }
    }

    size_t users_done = 0;
    for (uint32_t u = 0; u < split.train.n_users; ++u) {
        try {
            auto list = desc::build_behavior_list(u, split.train, catalog, cfg.behavior_cap);
            desc::generate_user_preference(*client, cache, list, u);
            ++users_done;
        } catch (const std::exception& e) {
            failures.push_back("user " + std::to_string(u) + ": " + e.what());
        }
    }

    if (!failures.empty()) {
        std::ofstream flog(cfg.workdir / "describe/failures.log");
        for (const auto& f : failures) flog << f << '\n';
        std::cerr << "describe: " << failures.size() << " failures (see describe/failures.log); "
                  << "stage left incomplete\n";
        return kExitPartial;
    }

    record_stage(manifest, cfg.workdir, "describe", cfg_hash,
                 stage_artifact_hash(manifest, "prepare"),
                 json{{"n_items", split.train.n_items}, {"n_users", users_done},
                      {"model", client->model_name()}});
    std::cout << "describe: " << split.train.n_items << " item descriptions, " << users_done
              << " user preferences cached\n";
    return kExitOk;
}

int cmd_encode(const PipelineConfig& base, const StageOptions& opts) {
    PipelineConfig cfg = with_seed(base, effective_seed(base, opts));
    WorkdirLock lock(cfg.workdir);
    json manifest = read_manifest(cfg.workdir);
    require_stage(manifest, cfg.workdir, "prepare");
    require_stage(manifest, cfg.workdir, "describe");
    const std::string cfg_hash = config_hash_hex(cfg);
    if (stage_guard(manifest, cfg.workdir, "encode", cfg_hash, opts.force)) return kExitOk;

    corpus::DatasetSplit split = load_split(cfg);
    embed::EmbeddingMatrix items, users;
    if (cfg.encoder == "stub") {
        Texts texts = texts_from_cache(cfg, opts, split);
        embed::StubEncoder enc(cfg.encoder_dim, 0);
        items = embed::encode_texts(enc, texts.item_multimodal);
        users = embed::encode_texts(enc, texts.user_preference);
    } else if (cfg.encoder == "file") {
        items = embed::store_read(cfg.encoder_items_file);
        users = embed::store_read(cfg.encoder_users_file);
        if (items.rows != split.train.n_items)
            throw DimMismatch("encoder.items_file rows != item count");
        if (users.rows != split.train.n_users)
            throw DimMismatch("encoder.users_file rows != user count");
        if (items.dim != users.dim) throw DimMismatch("item/user embedding dims differ");
        if (!items.all_finite() || !users.all_finite())
            throw Error("precomputed embeddings carry non-finite values");
    } else {
        throw ConfigError("config: unknown encoder: " + cfg.encoder);
    }

    fs::create_directories(cfg.workdir / "encode");
    embed::store_write(items, cfg.workdir / "encode/items.emb");
    embed::store_write(users, cfg.workdir / "encode/users.emb");
    record_stage(manifest, cfg.workdir, "encode", cfg_hash,
                 stage_artifact_hash(manifest, "describe"),
                 json{{"rows_items", items.rows}, {"rows_users", users.rows}, {"dim", items.dim}});
    std::cout << "encode: items " << items.rows << "x" << items.dim << ", users " << users.rows
              << "x" << users.dim << '\n';
    return kExitOk;
}

GraphBuild build_variant_graph(const corpus::InteractionMatrix& train,
                               const embed::EmbeddingMatrix& items, graph::GraphConfig gcfg,
                               const std::string& variant) {
    if (variant != "full" && variant != "no_gd" && variant != "no_te" && variant != "no_gcn")
        throw ConfigError("unknown ablation variant: " + variant);
    if (variant == "no_gd") gcfg.alpha = -1.0;

    GraphBuild out;
    graph::SparseGraph semantic = graph::semantic_graph(items, gcfg.k_semantic, gcfg.alpha);
    if (variant == "no_te") {
        out.merged = semantic;
        out.merged.stage = graph::Stage::merged;
    } else {
        graph::SparseGraph cooc = graph::cooccur_graph(train, gcfg.k_cooccur);
        out.merged = graph::merge(semantic, cooc);
    }
    if (gcfg.symmetrize) out.merged = graph::symmetrize(out.merged);

    if (variant == "no_gcn") {
        out.features = items;  // raw encoder features, no propagation
    } else {
        auto [normalized, degrees] = graph::normalize(out.merged);
        out.features = graph::propagate(normalized, items, gcfg.layers);
    }
    return out;
}

int cmd_build_graph(const PipelineConfig& base, const StageOptions& opts) {
    PipelineConfig cfg = with_seed(base, effective_seed(base, opts));
    WorkdirLock lock(cfg.workdir);
    json manifest = read_manifest(cfg.workdir);
    require_stage(manifest, cfg.workdir, "encode");
    const std::string cfg_hash = config_hash_hex(cfg);
    if (stage_guard(manifest, cfg.workdir, "graph", cfg_hash, opts.force)) return kExitOk;

    corpus::DatasetSplit split = load_split(cfg);
    embed::EmbeddingMatrix items = embed::store_read(cfg.workdir / "encode/items.emb");
    GraphBuild gb = build_variant_graph(split.train, items, cfg.graph, "full");

    fs::create_directories(cfg.workdir / "graph");
    graph::export_graph(gb.merged, cfg.workdir / "graph/merged.tsv");
    embed::store_write(gb.features, cfg.workdir / "graph/features.emb");
    if (opts.histogram) {
        graph::Histogram h = graph::edge_similarity_histogram(items, cfg.graph.k_semantic, 40);
        std::ofstream hf(cfg.workdir / "graph/histogram.tsv");
        hf << "bin_lo\tbin_hi\tcount\n";
        for (size_t b = 0; b < h.counts.size(); ++b)
            hf << h.lo + static_cast<double>(b) * h.bin_width() << '\t'
               << h.lo + static_cast<double>(b + 1) * h.bin_width() << '\t' << h.counts[b] << '\n';
    }

    record_stage(manifest, cfg.workdir, "graph", cfg_hash, stage_artifact_hash(manifest, "encode"),
                 json{{"edges", gb.merged.edges.size()},
                      {"k_semantic", cfg.graph.k_semantic},
                      {"alpha", cfg.graph.alpha},
                      {"k_cooccur", cfg.graph.k_cooccur},
                      {"layers", cfg.graph.layers}});
    std::cout << "build-graph: " << gb.merged.edges.size() << " merged edges\n";
    return kExitOk;
}

namespace {

struct TrainOutcome {
    model::TrainResult result;
    model::AdamState state;
};

void write_train_artifacts(const PipelineConfig& cfg, const model::TrainResult& r,
                           const model::AdamState& state) {
    fs::create_directories(cfg.workdir / "train");
    model::save_checkpoint(cfg.workdir / "train/checkpoint.bin", r.best_params, state, r.best_epoch);
    std::ofstream hist(cfg.workdir / "train/history.csv");
    hist << model::history_csv(r.history);
}

}  // namespace

int cmd_train(const PipelineConfig& base, const StageOptions& opts) {
    PipelineConfig cfg = with_seed(base, effective_seed(base, opts));
    WorkdirLock lock(cfg.workdir);
    json manifest = read_manifest(cfg.workdir);
    require_stage(manifest, cfg.workdir, "encode");

    corpus::DatasetSplit split = load_split(cfg);
    embed::EmbeddingMatrix items = embed::store_read(cfg.workdir / "encode/items.emb");
    embed::EmbeddingMatrix users = embed::store_read(cfg.workdir / "encode/users.emb");

    if (opts.grid) {
        // Repeated build-graph/train over the alpha and K_c grids, selected
        // by best validation R@20.
        const std::vector<double> alphas{0.4, 0.5, 0.6, 0.7};
        const std::vector<int> kcs{5, 10, 15, 20};
        json report = json::array();
        double best_r20 = -1.0;
        PipelineConfig best_cfg = cfg;
        for (double a : alphas) {
            for (int kc : kcs) {
                PipelineConfig trial = cfg;
                trial.graph.alpha = a;
                trial.graph.k_cooccur = kc;
                GraphBuild gb = build_variant_graph(split.train, items, trial.graph, "full");
                model::TrainResult r = model::train(split, users, gb.features, trial.train);
                const double r20 = r.history.empty() ? 0.0 : r.history[r.best_epoch - 1].recall20;
                report.push_back(json{{"alpha", a}, {"k_cooccur", kc}, {"valid_r20", r20},
                                      {"best_epoch", r.best_epoch}});
                std::cout << "grid: alpha=" << a << " k_cooccur=" << kc << " valid R@20=" << r20
                          << '\n';
                if (r20 > best_r20) {
                    best_r20 = r20;
                    best_cfg = trial;
                }
            }
        }
        fs::create_directories(cfg.workdir / "train");
        std::ofstream(cfg.workdir / "train/grid_report.json") << report.dump(2) << '\n';
        cfg = best_cfg;
        std::cout << "grid: selected alpha=" << cfg.graph.alpha
                  << " k_cooccur=" << cfg.graph.k_cooccur << " (valid R@20=" << best_r20 << ")\n";
    }

    const std::string cfg_hash = config_hash_hex(cfg);
    if (!opts.grid && stage_guard(manifest, cfg.workdir, "train", cfg_hash, opts.force))
        return kExitOk;

    if (opts.grid || !manifest.contains("graph") ||
        manifest["graph"].value("config_hash", "") != cfg_hash) {
        // (re)build graph artifacts so the persisted chain matches this config
        GraphBuild gb = build_variant_graph(split.train, items, cfg.graph, "full");
        fs::create_directories(cfg.workdir / "graph");
        graph::export_graph(gb.merged, cfg.workdir / "graph/merged.tsv");
        embed::store_write(gb.features, cfg.workdir / "graph/features.emb");
        record_stage(manifest, cfg.workdir, "graph", cfg_hash,
                     stage_artifact_hash(manifest, "encode"),
                     json{{"edges", gb.merged.edges.size()}});
    }
    require_stage(manifest, cfg.workdir, "graph");
    embed::EmbeddingMatrix features = embed::store_read(cfg.workdir / "graph/features.emb");

    model::TrainResult r = model::train(split, users, features, cfg.train);
    write_train_artifacts(cfg, r, r.state);
    const double best_r20 = r.best_epoch > 0 ? r.history[r.best_epoch - 1].recall20 : 0.0;
    record_stage(manifest, cfg.workdir, "train", cfg_hash, stage_artifact_hash(manifest, "graph"),
                 json{{"epochs", r.history.size()},
                      {"best_epoch", r.best_epoch},
                      {"best_valid_r20", best_r20}});
    std::cout << "train: " << r.history.size() << " epochs, best epoch " << r.best_epoch
              << " valid R@20=" << best_r20 << '\n';
    return kExitOk;
}

int cmd_evaluate(const PipelineConfig& base, const StageOptions& opts) {
    PipelineConfig cfg = with_seed(base, effective_seed(base, opts));
    WorkdirLock lock(cfg.workdir);
    json manifest = read_manifest(cfg.workdir);
    verify_chain(manifest, cfg.workdir, {"prepare", "describe", "encode", "graph", "train"});
    const std::string cfg_hash = config_hash_hex(cfg);
    if (stage_guard(manifest, cfg.workdir, "evaluate", cfg_hash, opts.force)) return kExitOk;

    corpus::DatasetSplit split = load_split(cfg);
    embed::EmbeddingMatrix users = embed::store_read(cfg.workdir / "encode/users.emb");
    embed::EmbeddingMatrix features = embed::store_read(cfg.workdir / "graph/features.emb");
    model::Checkpoint ck = model::load_checkpoint(cfg.workdir / "train/checkpoint.bin");

    eval::MetricsReport report = eval::evaluate(ck.params, split, users, features, cfg.eval_ks,
                                                /*use_test=*/true, cfg.train.leaky_slope);

    json out{{"dataset", cfg.dataset},
             {"seed", cfg.seed},
             {"config_hash", cfg_hash},
             {"split", "test"},
             {"n_users_evaluated", report.n_users_evaluated}};
    for (auto& [k, v] : report.recall) out["recall"][std::to_string(k)] = v;
    for (auto& [k, v] : report.ndcg) out["ndcg"][std::to_string(k)] = v;

    fs::create_directories(cfg.workdir / "eval");
    std::ofstream(cfg.workdir / "eval/metrics.json") << out.dump(2) << '\n';
    std::cout << out.dump(2) << '\n';

    if (cfg.topn_dump) {
        size_t n_top = 0;
        for (size_t k : cfg.eval_ks) n_top = std::max(n_top, k);
        std::vector<uint32_t> eval_users;
        for (uint32_t u = 0; u < split.train.n_users; ++u)
            if (!split.test[u].empty()) eval_users.push_back(u);
        eval::RankingResult ranked = eval::rank_all(ck.params, users, features, split.train,
                                                    eval_users, n_top, cfg.train.leaky_slope);
        std::ofstream tout(cfg.workdir / "eval/topn.tsv");
        for (size_t idx = 0; idx < ranked.users.size(); ++idx) {
            tout << split.train.user_keys[ranked.users[idx]];
            for (uint32_t i : ranked.topn[idx]) tout << '\t' << split.train.item_keys[i];
            tout << '\n';
        }
    }

    json extra{{"n_users_evaluated", report.n_users_evaluated}};
    record_stage(manifest, cfg.workdir, "evaluate", cfg_hash,
                 stage_artifact_hash(manifest, "train"), extra);
    return kExitOk;
}

int cmd_export_graph(const PipelineConfig& base, const StageOptions& opts,
                     const std::filesystem::path& out) {
    PipelineConfig cfg = with_seed(base, effective_seed(base, opts));
    WorkdirLock lock(cfg.workdir);
    json manifest = read_manifest(cfg.workdir);
    require_stage(manifest, cfg.workdir, "graph");

    graph::SparseGraph g = graph::import_graph(cfg.workdir / "graph/merged.tsv");
    fs::path dest = out.empty() ? cfg.workdir / "export/graph.tsv" : out;
    if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
    graph::export_graph(g, dest);
    std::cout << "export-graph: " << g.edges.size() << " edges -> " << dest.string() << '\n';
    return kExitOk;
}

std::map<std::string, eval::MetricsReport> run_ablation(const PipelineConfig& cfg,
                                                        const std::vector<std::string>& variants,
                                                        uint64_t seed) {
    json manifest = read_manifest(cfg.workdir);
    require_stage(manifest, cfg.workdir, "encode");
    corpus::DatasetSplit split = load_split(cfg);
    embed::EmbeddingMatrix items = embed::store_read(cfg.workdir / "encode/items.emb");
    embed::EmbeddingMatrix users = embed::store_read(cfg.workdir / "encode/users.emb");

    std::map<std::string, eval::MetricsReport> out;
    for (const std::string& variant : variants) {
        if (variant != "full" && variant != "no_gd" && variant != "no_te" && variant != "no_gcn")
            throw ConfigError("unknown ablation variant: " + variant);
        GraphBuild gb = build_variant_graph(split.train, items, cfg.graph, variant);
        model::TrainConfig tcfg = cfg.train;
        tcfg.seed = seed;
        model::TrainResult r = model::train(split, users, gb.features, tcfg);
        out[variant] = eval::evaluate(r.best_params, split, users, gb.features, cfg.eval_ks,
                                      /*use_test=*/true, tcfg.leaky_slope);
    }
    return out;
}

int cmd_ablate(const PipelineConfig& base, const StageOptions& opts,
               const std::vector<std::string>& variants) {
    PipelineConfig cfg = with_seed(base, effective_seed(base, opts));
    WorkdirLock lock(cfg.workdir);
    std::vector<std::string> vs =
        variants.empty() ? std::vector<std::string>{"full", "no_gd", "no_te", "no_gcn"} : variants;

    auto results = run_ablation(cfg, vs, cfg.seed);

    json table = json::object();
    std::cout << "variant";
    for (size_t k : cfg.eval_ks) std::cout << "\tR@" << k << "\tN@" << k;
    std::cout << '\n';
    for (const std::string& v : vs) {
        const auto& rep = results.at(v);
        std::cout << v;
        for (size_t k : cfg.eval_ks) {
            std::cout << '\t' << rep.recall.at(k) << '\t' << rep.ndcg.at(k);
            table[v]["recall"][std::to_string(k)] = rep.recall.at(k);
            table[v]["ndcg"][std::to_string(k)] = rep.ndcg.at(k);
        }
        std::cout << '\n';
    }
    fs::create_directories(cfg.workdir / "eval");
    std::ofstream(cfg.workdir / "eval/ablate.json") << table.dump(2) << '\n';
    return kExitOk;
}

}  // namespace mllmrec::pipeline
