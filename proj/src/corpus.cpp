#include "mllmrec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>

#include "mllmrec/errors.hpp"
#include "mllmrec/rng.hpp"

namespace mllmrec::corpus {

size_t InteractionMatrix::n_pairs() const {
    size_t n = 0;
    for (const auto& row : by_user) n += row.size();
    return n;
}

bool InteractionMatrix::has(uint32_t user, uint32_t item) const {
    const auto& row = by_user[user];
    return std::binary_search(row.begin(), row.end(), item);
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

}  // namespace

RawInteractions load_interactions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open interactions file: " + path.string());

    RawInteractions raw;
    std::unordered_map<std::string, size_t> seen;  // "user\titem" -> record slot
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split_fields(line);
        if (fields.size() < 2 || fields.size() > 3)
            throw MalformedLine(line_no, "expected 2 or 3 tab-separated fields");
        if (fields[0].empty() || fields[1].empty())
            throw MalformedLine(line_no, "empty user or item key");

        std::optional<int64_t> ts;
        if (fields.size() == 3) {
            int64_t v = 0;
            auto [ptr, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), v);
            if (ec != std::errc{} || ptr != fields[2].data() + fields[2].size())
                throw MalformedLine(line_no, "bad timestamp");
            ts = v;
        }

        std::string key;
        key.reserve(fields[0].size() + 1 + fields[1].size());
        key.append(fields[0]).push_back('\t');
        key.append(fields[1]);
        auto [it, inserted] = seen.emplace(std::move(key), raw.records.size());
        if (inserted) {
            raw.records.push_back({std::string(fields[0]), std::string(fields[1]), ts});
        }
        // duplicates keep the first-seen timestamp
    }
    return raw;
}

RawInteractions kcore_filter(const RawInteractions& raw, int k) {
    if (k < 1) throw std::invalid_argument("kcore_filter: k must be >= 1");

    // Temporary contiguous ids for counting.
    std::unordered_map<std::string, uint32_t> umap, imap;
    std::vector<uint32_t> rec_user(raw.records.size()), rec_item(raw.records.size());
    for (size_t r = 0; r < raw.records.size(); ++r) {
        auto [uit, _u] = umap.emplace(raw.records[r].user_key, static_cast<uint32_t>(umap.size()));
        auto [iit, _i] = imap.emplace(raw.records[r].item_key, static_cast<uint32_t>(imap.size()));
        rec_user[r] = uit->second;
        rec_item[r] = iit->second;
    }
    size_t nu = umap.size(), ni = imap.size();
    std::vector<std::vector<uint32_t>> user_recs(nu), item_recs(ni);
    for (size_t r = 0; r < raw.records.size(); ++r) {
        user_recs[rec_user[r]].push_back(static_cast<uint32_t>(r));
        item_recs[rec_item[r]].push_back(static_cast<uint32_t>(r));
    }

    std::vector<int> udeg(nu), ideg(ni);
    std::vector<char> u_dead(nu, 0), i_dead(ni, 0), rec_dead(raw.records.size(), 0);
    for (size_t u = 0; u < nu; ++u) udeg[u] = static_cast<int>(user_recs[u].size());
    for (size_t i = 0; i < ni; ++i) ideg[i] = static_cast<int>(item_recs[i].size());

    // Queue-based pruning to the joint k-core fixpoint.
    std::deque<std::pair<char, uint32_t>> q;  // ('u'|'i', id)
    for (size_t u = 0; u < nu; ++u)
        if (udeg[u] < k) { u_dead[u] = 1; q.emplace_back('u', u); }
    for (size_t i = 0; i < ni; ++i)
        if (ideg[i] < k) { i_dead[i] = 1; q.emplace_back('i', i); }

    auto kill_record = [&](uint32_t r) {
        if (rec_dead[r]) return;
        rec_dead[r] = 1;
        uint32_t u = rec_user[r], i = rec_item[r];
        if (!u_dead[u] && --udeg[u] < k) { u_dead[u] = 1; q.emplace_back('u', u); }
        if (!i_dead[i] && --ideg[i] < k) { i_dead[i] = 1; q.emplace_back('i', i); }
    };

    while (!q.empty()) {
        auto [kind, id] = q.front();
        q.pop_front();
        const auto& recs = (kind == 'u') ? user_recs[id] : item_recs[id];
        for (uint32_t r : recs) kill_record(r);
    }

    RawInteractions out;
    for (size_t r = 0; r < raw.records.size(); ++r)
        if (!rec_dead[r]) out.records.push_back(raw.records[r]);
    if (out.records.empty()) throw EmptyAfterFilter("no interactions survive " + std::to_string(k) + "-core filtering");
    return out;
}

InteractionMatrix index(const RawInteractions& raw) {
    if (raw.records.empty()) throw std::invalid_argument("index: no interactions");

    InteractionMatrix m;
    bool any_ts = false;
    for (const auto& rec : raw.records) {
        if (rec.timestamp) any_ts = true;
        if (m.user_index.emplace(rec.user_key, static_cast<uint32_t>(m.user_keys.size())).second)
            m.user_keys.push_back(rec.user_key);
        if (m.item_index.emplace(rec.item_key, static_cast<uint32_t>(m.item_keys.size())).second)
            m.item_keys.push_back(rec.item_key);
    }
    m.n_users = m.user_keys.size();
    m.n_items = m.item_keys.size();
    m.has_timestamps = any_ts;
    m.by_user.resize(m.n_users);
    m.by_item.resize(m.n_items);
    if (any_ts) m.ts_by_user.resize(m.n_users);

    std::vector<std::vector<std::pair<uint32_t, int64_t>>> rows(m.n_users);
    for (const auto& rec : raw.records) {
        uint32_t u = m.user_index.at(rec.user_key);
        uint32_t i = m.item_index.at(rec.item_key);
        rows[u].emplace_back(i, rec.timestamp.value_or(0));
    }
    for (size_t u = 0; u < m.n_users; ++u) {
        std::sort(rows[u].begin(), rows[u].end());
        // the matrix is boolean: a repeated pair collapses to one entry
        rows[u].erase(std::unique(rows[u].begin(), rows[u].end(),
                                  [](const auto& a, const auto& b) { return a.first == b.first; }),
                      rows[u].end());
        m.by_user[u].reserve(rows[u].size());
        for (auto& [i, ts] : rows[u]) {
            m.by_user[u].push_back(i);
            m.by_item[i].push_back(static_cast<uint32_t>(u));
        }
        if (any_ts) {
            m.ts_by_user[u].reserve(rows[u].size());
            for (auto& [i, ts] : rows[u]) m.ts_by_user[u].push_back(ts);
        }
    }
    for (auto& col : m.by_item) std::sort(col.begin(), col.end());
    return m;
}

DatasetSplit split(const InteractionMatrix& matrix, std::array<double, 3> ratios, uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::fabs(sum - 1.0) > 1e-9) throw BadRatios("split ratios must sum to 1");
    if (ratios[0] <= 0.0 || ratios[1] < 0.0 || ratios[2] < 0.0)
        throw BadRatios("split ratios must be nonnegative with positive train share");

    DatasetSplit out;
    out.ratios = ratios;
    out.seed = seed;

    InteractionMatrix& tr = out.train;
    tr.n_users = matrix.n_users;
    tr.n_items = matrix.n_items;
    tr.user_keys = matrix.user_keys;
    tr.item_keys = matrix.item_keys;
    tr.user_index = matrix.user_index;
    tr.item_index = matrix.item_index;
    tr.has_timestamps = matrix.has_timestamps;
    tr.by_user.resize(matrix.n_users);
    tr.by_item.resize(matrix.n_items);
    if (tr.has_timestamps) tr.ts_by_user.resize(matrix.n_users);
    out.valid.resize(matrix.n_users);
    out.test.resize(matrix.n_users);

    for (uint32_t u = 0; u < matrix.n_users; ++u) {
        const auto& items = matrix.by_user[u];
        size_t n = items.size();
        std::vector<uint32_t> order(n);
        for (size_t j = 0; j < n; ++j) order[j] = static_cast<uint32_t>(j);
        Rng rng(mix64(seed, u));
        rng.shuffle(order);

        size_t cut1 = static_cast<size_t>(std::floor(ratios[0] * static_cast<double>(n)));
        size_t cut2 = static_cast<size_t>(std::floor((ratios[0] + ratios[1]) * static_cast<double>(n)));
        cut1 = std::max<size_t>(cut1, 1);  // train never empty
        cut2 = std::max(cut2, cut1);

        std::vector<std::pair<uint32_t, int64_t>> train_pairs;
        for (size_t j = 0; j < n; ++j) {
            uint32_t pos = order[j];
            uint32_t item = items[pos];
            if (j < cut1) {
                int64_t ts = matrix.has_timestamps ? matrix.ts_by_user[u][pos] : 0;
                train_pairs.emplace_back(item, ts);
            } else if (j < cut2) {
                out.valid[u].push_back(item);
            } else {
                out.test[u].push_back(item);
            }
        }
        std::sort(train_pairs.begin(), train_pairs.end());
        for (auto& [item, ts] : train_pairs) {
            tr.by_user[u].push_back(item);
            if (tr.has_timestamps) tr.ts_by_user[u].push_back(ts);
            tr.by_item[item].push_back(u);
        }
        std::sort(out.valid[u].begin(), out.valid[u].end());
        std::sort(out.test[u].begin(), out.test[u].end());
    }
    for (auto& col : tr.by_item) std::sort(col.begin(), col.end());
    return out;
}

void write_interactions(const std::filesystem::path& path, const InteractionMatrix& m) {
    std::ofstream outf(path);
    if (!outf) throw IoError("cannot write " + path.string());
    for (uint32_t u = 0; u < m.n_users; ++u) {
        for (size_t j = 0; j < m.by_user[u].size(); ++j) {
            uint32_t i = m.by_user[u][j];
            outf << m.user_keys[u] << '\t' << m.item_keys[i];
            if (m.has_timestamps) outf << '\t' << m.ts_by_user[u][j];
            outf << '\n';
        }
    }
}

void write_heldout(const std::filesystem::path& path, const InteractionMatrix& full,
                   const std::vector<std::vector<uint32_t>>& heldout) {
    std::ofstream outf(path);
    if (!outf) throw IoError("cannot write " + path.string());
    for (uint32_t u = 0; u < heldout.size(); ++u)
        for (uint32_t i : heldout[u])
            outf << full.user_keys[u] << '\t' << full.item_keys[i] << '\n';
}

void write_id_map(const std::filesystem::path& path, const std::vector<std::string>& keys) {
    std::ofstream outf(path);
    if (!outf) throw IoError("cannot write " + path.string());
    for (size_t i = 0; i < keys.size(); ++i) outf << keys[i] << '\t' << i << '\n';
}

}  // namespace mllmrec::corpus
