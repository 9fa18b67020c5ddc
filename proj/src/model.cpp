#include "mllmrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "mllmrec/errors.hpp"

namespace mllmrec::model {

void MlpParams::fill(double v) {
    std::fill(w1.begin(), w1.end(), v);
    std::fill(b1.begin(), b1.end(), v);
    std::fill(w2.begin(), w2.end(), v);
    std::fill(b2.begin(), b2.end(), v);
}

bool MlpParams::all_finite() const {
    auto ok = [](const std::vector<double>& v) {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    };
    return ok(w1) && ok(b1) && ok(w2) && ok(b2);
}

double& MlpParams::flat(size_t i) {
    if (i < w1.size()) return w1[i];
    i -= w1.size();
    if (i < b1.size()) return b1[i];
    i -= b1.size();
    if (i < w2.size()) return w2[i];
    i -= w2.size();
    return b2[i];
}

double MlpParams::flat(size_t i) const { return const_cast<MlpParams*>(this)->flat(i); }

uint64_t ModelParams::checksum() const {
    auto h = fnv1a64(user_mlp.w1.data(), user_mlp.w1.size() * sizeof(double));
    h = fnv1a64(user_mlp.b1.data(), user_mlp.b1.size() * sizeof(double), h);
    h = fnv1a64(user_mlp.w2.data(), user_mlp.w2.size() * sizeof(double), h);
    h = fnv1a64(user_mlp.b2.data(), user_mlp.b2.size() * sizeof(double), h);
    h = fnv1a64(item_mlp.w1.data(), item_mlp.w1.size() * sizeof(double), h);
    h = fnv1a64(item_mlp.b1.data(), item_mlp.b1.size() * sizeof(double), h);
    h = fnv1a64(item_mlp.w2.data(), item_mlp.w2.size() * sizeof(double), h);
    h = fnv1a64(item_mlp.b2.data(), item_mlp.b2.size() * sizeof(double), h);
    return h;
}

namespace {

void xavier_fill(std::vector<double>& w, size_t fan_in, size_t fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& x : w) x = rng.uniform(-bound, bound);
}

}  // namespace

ModelParams xavier_init(size_t d_t, size_t d1, size_t d, uint64_t seed) {
    if (d_t == 0 || d1 == 0 || d == 0) throw std::invalid_argument("xavier_init: zero dimension");
    ModelParams p;
    p.user_mlp = MlpParams(d_t, d1, d);
    p.item_mlp = MlpParams(d_t, d1, d);
    Rng rng(mix64(seed, 0x1a17u));
    xavier_fill(p.user_mlp.w1, d_t, d1, rng);
    xavier_fill(p.user_mlp.w2, d1, d, rng);
    xavier_fill(p.item_mlp.w1, d_t, d1, rng);
    xavier_fill(p.item_mlp.w2, d1, d, rng);
    // biases stay zero
    return p;
}

namespace {

// z = x W1 + b1 ; a = LeakyReLU(z) ; h = a W2 + b2
void forward_with_scratch(const MlpParams& p, const double* x, double* z, double* a, double* h,
                          double slope) {
    for (size_t j = 0; j < p.d_hidden; ++j) z[j] = p.b1[j];
    for (size_t i = 0; i < p.d_in; ++i) {
        const double xi = x[i];
        const double* w = p.w1.data() + i * p.d_hidden;
        for (size_t j = 0; j < p.d_hidden; ++j) z[j] += xi * w[j];
    }
    for (size_t j = 0; j < p.d_hidden; ++j) a[j] = z[j] >= 0.0 ? z[j] : slope * z[j];
    for (size_t o = 0; o < p.d_out; ++o) h[o] = p.b2[o];
    for (size_t j = 0; j < p.d_hidden; ++j) {
        const double aj = a[j];
        const double* w = p.w2.data() + j * p.d_out;
        for (size_t o = 0; o < p.d_out; ++o) h[o] += aj * w[o];
    }
}

// Accumulates parameter gradients for one example given dL/dh.
void backward_into(const MlpParams& p, const double* x, const double* z, const double* a,
                   const double* dh, double slope, MlpParams& grad, double* dz_scratch) {
    for (size_t j = 0; j < p.d_hidden; ++j) {
        const double aj = a[j];
        double* gw = grad.w2.data() + j * p.d_out;
        const double* w = p.w2.data() + j * p.d_out;
        double da = 0.0;
        for (size_t o = 0; o < p.d_out; ++o) {
            gw[o] += aj * dh[o];
            da += w[o] * dh[o];
        }
        dz_scratch[j] = da * (z[j] >= 0.0 ? 1.0 : slope);
    }
    for (size_t o = 0; o < p.d_out; ++o) grad.b2[o] += dh[o];
    for (size_t i = 0; i < p.d_in; ++i) {
        const double xi = x[i];
        double* gw = grad.w1.data() + i * p.d_hidden;
        for (size_t j = 0; j < p.d_hidden; ++j) gw[j] += xi * dz_scratch[j];
    }
    for (size_t j = 0; j < p.d_hidden; ++j) grad.b1[j] += dz_scratch[j];
}

// log(1 + exp(-x)) without overflow
double softplus_neg(double x) {
    if (x >= 0.0) return std::log1p(std::exp(-x));
    return -x + std::log1p(std::exp(x));
}

void add_scaled(std::vector<double>& dst, const std::vector<double>& src, double s) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

void accumulate(MlpParams& dst, const MlpParams& src) {
    add_scaled(dst.w1, src.w1, 1.0);
    add_scaled(dst.b1, src.b1, 1.0);
    add_scaled(dst.w2, src.w2, 1.0);
    add_scaled(dst.b2, src.b2, 1.0);
}

}  // namespace

void mlp_forward(const MlpParams& p, const double* x, double* h, double leaky_slope) {
    std::vector<double> z(p.d_hidden), a(p.d_hidden);
    forward_with_scratch(p, x, z.data(), a.data(), h, leaky_slope);
}

std::vector<double> mlp_forward(const MlpParams& p, const std::vector<double>& x, double leaky_slope) {
    if (x.size() != p.d_in) throw ShapeMismatch("mlp_forward: input dim != d_in");
    std::vector<double> h(p.d_out);
    mlp_forward(p, x.data(), h.data(), leaky_slope);
    return h;
}

double score(const std::vector<double>& h_user, const std::vector<double>& h_item) {
    if (h_user.size() != h_item.size()) throw ShapeMismatch("score: dims differ");
    double s = 0.0;
    for (size_t i = 0; i < h_user.size(); ++i) s += h_user[i] * h_item[i];
    return s;
}

embed::EmbeddingMatrix project_all(const MlpParams& p, const embed::EmbeddingMatrix& inputs,
                                   double leaky_slope) {
    if (inputs.dim != p.d_in) throw ShapeMismatch("project_all: input dim != d_in");
    embed::EmbeddingMatrix out(inputs.rows, p.d_out);
#pragma omp parallel
    {
        std::vector<double> z(p.d_hidden), a(p.d_hidden);
#pragma omp for schedule(static)
        for (long long r = 0; r < static_cast<long long>(inputs.rows); ++r) {
            forward_with_scratch(p, inputs.row(static_cast<size_t>(r)), z.data(), a.data(),
                                 out.row(static_cast<size_t>(r)), leaky_slope);
        }
    }
    return out;
}

double bpr_loss_and_grads(const ModelParams& params, const embed::EmbeddingMatrix& user_embeds,
                          const embed::EmbeddingMatrix& item_embeds, const TripletBatch& batch,
                          double leaky_slope, double weight_decay, Gradients& out) {
    if (user_embeds.dim != params.user_mlp.d_in || item_embeds.dim != params.item_mlp.d_in)
        throw ShapeMismatch("bpr_loss_and_grads: embedding dim != MLP input dim");
    if (params.user_mlp.d_out != params.item_mlp.d_out)
        throw ShapeMismatch("bpr_loss_and_grads: user/item output dims differ");

    const size_t d1 = params.user_mlp.d_hidden, d = params.user_mlp.d_out;
    out.user_mlp = MlpParams(params.user_mlp.d_in, d1, d);
    out.item_mlp = MlpParams(params.item_mlp.d_in, d1, d);

    // Fixed-size blocks keep the reduction order independent of threading.
    constexpr size_t kBlock = 64;
    const size_t n_blocks = (batch.size() + kBlock - 1) / kBlock;
    std::vector<Gradients> block_grads(n_blocks);
    std::vector<double> block_loss(n_blocks, 0.0);

#pragma omp parallel
    {
        std::vector<double> zu(d1), au(d1), zp(d1), ap(d1), zn(d1), an(d1), dz(d1);
        std::vector<double> hu(d), hp(d), hn(d), dh(d);
#pragma omp for schedule(dynamic, 1)
        for (long long bb = 0; bb < static_cast<long long>(n_blocks); ++bb) {
            const size_t blk = static_cast<size_t>(bb);
            Gradients& g = block_grads[blk];
            g.user_mlp = MlpParams(params.user_mlp.d_in, d1, d);
            g.item_mlp = MlpParams(params.item_mlp.d_in, d1, d);
            double loss = 0.0;
            const size_t lo = blk * kBlock, hi = std::min(batch.size(), lo + kBlock);
            for (size_t t = lo; t < hi; ++t) {
                const Triplet& tr = batch[t];
                const double* xu = user_embeds.row(tr.user);
                const double* xp = item_embeds.row(tr.pos);
                const double* xn = item_embeds.row(tr.neg);
                forward_with_scratch(params.user_mlp, xu, zu.data(), au.data(), hu.data(), leaky_slope);
                forward_with_scratch(params.item_mlp, xp, zp.data(), ap.data(), hp.data(), leaky_slope);
                forward_with_scratch(params.item_mlp, xn, zn.data(), an.data(), hn.data(), leaky_slope);

                double diff = 0.0;
                for (size_t o = 0; o < d; ++o) diff += hu[o] * (hp[o] - hn[o]);
                loss += softplus_neg(diff);

                // dL/ddiff = sigmoid(diff) - 1
                const double gd = -1.0 / (1.0 + std::exp(diff));

                for (size_t o = 0; o < d; ++o) dh[o] = gd * (hp[o] - hn[o]);
                backward_into(params.user_mlp, xu, zu.data(), au.data(), dh.data(), leaky_slope,
                              g.user_mlp, dz.data());
                for (size_t o = 0; o < d; ++o) dh[o] = gd * hu[o];
                backward_into(params.item_mlp, xp, zp.data(), ap.data(), dh.data(), leaky_slope,
                              g.item_mlp, dz.data());
                for (size_t o = 0; o < d; ++o) dh[o] = -gd * hu[o];
                backward_into(params.item_mlp, xn, zn.data(), an.data(), dh.data(), leaky_slope,
                              g.item_mlp, dz.data());
            }
            block_loss[blk] = loss;
        }
    }

    double loss = 0.0;
    for (size_t blk = 0; blk < n_blocks; ++blk) {
        loss += block_loss[blk];
        accumulate(out.user_mlp, block_grads[blk].user_mlp);
        accumulate(out.item_mlp, block_grads[blk].item_mlp);
    }

    if (weight_decay != 0.0) {
        auto decay = [&](MlpParams& g, const MlpParams& p) {
            auto one = [&](std::vector<double>& gv, const std::vector<double>& pv) {
                for (size_t i = 0; i < gv.size(); ++i) {
                    loss += weight_decay * pv[i] * pv[i];
                    gv[i] += 2.0 * weight_decay * pv[i];
                }
            };
            one(g.w1, p.w1);
            one(g.b1, p.b1);
            one(g.w2, p.w2);
            one(g.b2, p.b2);
        };
        decay(out.user_mlp, params.user_mlp);
        decay(out.item_mlp, params.item_mlp);
    }

    if (!std::isfinite(loss) || !out.user_mlp.all_finite() || !out.item_mlp.all_finite())
        throw NonFinite("bpr_loss_and_grads: non-finite loss or gradient");
    return loss;
}

namespace {

void adam_tensor(std::vector<double>& theta, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, double lr, double bc1, double bc2) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    for (size_t i = 0; i < theta.size(); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void adam_mlp(MlpParams& p, const MlpParams& g, MlpParams& m, MlpParams& v, double lr, double bc1,
              double bc2) {
    adam_tensor(p.w1, g.w1, m.w1, v.w1, lr, bc1, bc2);
    adam_tensor(p.b1, g.b1, m.b1, v.b1, lr, bc1, bc2);
    adam_tensor(p.w2, g.w2, m.w2, v.w2, lr, bc1, bc2);
    adam_tensor(p.b2, g.b2, m.b2, v.b2, lr, bc1, bc2);
}

}  // namespace

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr, size_t t) {
    if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
    if (grads.user_mlp.n_params() != params.user_mlp.n_params() ||
        grads.item_mlp.n_params() != params.item_mlp.n_params())
        throw ShapeMismatch("adam_step: gradient shape != parameter shape");
    if (state.m_user.n_params() == 0) {
        state.m_user = MlpParams(params.user_mlp.d_in, params.user_mlp.d_hidden, params.user_mlp.d_out);
        state.v_user = state.m_user;
        state.m_item = MlpParams(params.item_mlp.d_in, params.item_mlp.d_hidden, params.item_mlp.d_out);
        state.v_item = state.m_item;
    }
    const double bc1 = 1.0 - std::pow(0.9, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(0.999, static_cast<double>(t));
    adam_mlp(params.user_mlp, grads.user_mlp, state.m_user, state.v_user, lr, bc1, bc2);
    adam_mlp(params.item_mlp, grads.item_mlp, state.m_item, state.v_item, lr, bc1, bc2);
    state.t = t;
}

TripletBatch sample_triplets(const corpus::InteractionMatrix& train, size_t batch_size, Rng& rng) {
    const size_t n_pairs = train.n_pairs();
    if (n_pairs == 0) throw std::invalid_argument("sample_triplets: empty train matrix");

    std::vector<size_t> offsets(train.n_users + 1, 0);
    for (size_t u = 0; u < train.n_users; ++u)
        offsets[u + 1] = offsets[u] + train.by_user[u].size();

    TripletBatch batch;
    batch.reserve(batch_size);
    for (size_t s = 0; s < batch_size; ++s) {
        const size_t pair = static_cast<size_t>(rng.uniform_below(n_pairs));
        const auto it = std::upper_bound(offsets.begin(), offsets.end(), pair);
        const uint32_t u = static_cast<uint32_t>(it - offsets.begin() - 1);
        const uint32_t pos = train.by_user[u][pair - offsets[u]];
        uint32_t neg;
        do {
            neg = static_cast<uint32_t>(rng.uniform_below(train.n_items));
        } while (train.has(u, neg));
        batch.push_back({u, pos, neg});
    }
    return batch;
}

std::string history_csv(const std::vector<EpochStat>& history) {
    std::string out = "epoch,loss,recall20\n";
    char buf[96];
    for (const EpochStat& e : history) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", e.epoch, e.loss, e.recall20);
        out += buf;
    }
    return out;
}

// ---- checkpoint container ----

namespace {

struct Section {
    std::string name;
    std::string bytes;
};

std::string matrix_blob(const std::vector<double>& v) {
    std::string blob;
    blob.reserve(13 + v.size() * 8);
    blob.append("EMB1", 4);
    uint32_t rows = 1, dim = static_cast<uint32_t>(v.size());
    uint8_t prec = 1;
    blob.append(reinterpret_cast<const char*>(&rows), 4);
    blob.append(reinterpret_cast<const char*>(&dim), 4);
    blob.append(reinterpret_cast<const char*>(&prec), 1);
    blob.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    return blob;
}

std::vector<double> matrix_unblob(const std::string& blob) {
    if (blob.size() < 13 || blob.compare(0, 4, "EMB1") != 0)
        throw BadMagic("checkpoint section is not a matrix blob");
    uint32_t rows = 0, dim = 0;
    std::memcpy(&rows, blob.data() + 4, 4);
    std::memcpy(&dim, blob.data() + 8, 4);
    size_t count = static_cast<size_t>(rows) * dim;
    if (blob.size() != 13 + count * sizeof(double))
        throw DimMismatch("checkpoint section payload size mismatch");
    std::vector<double> v(count);
    std::memcpy(v.data(), blob.data() + 13, count * sizeof(double));
    return v;
}

void append_mlp_sections(std::vector<Section>& sections, const std::string& prefix,
                         const MlpParams& p) {
    sections.push_back({prefix + ".w1", matrix_blob(p.w1)});
    sections.push_back({prefix + ".b1", matrix_blob(p.b1)});
    sections.push_back({prefix + ".w2", matrix_blob(p.w2)});
    sections.push_back({prefix + ".b2", matrix_blob(p.b2)});
}

MlpParams read_mlp_sections(const std::unordered_map<std::string, std::string>& sec,
                            const std::string& prefix, size_t d_in, size_t d1, size_t d) {
    MlpParams p(d_in, d1, d);
    p.w1 = matrix_unblob(sec.at(prefix + ".w1"));
    p.b1 = matrix_unblob(sec.at(prefix + ".b1"));
    p.w2 = matrix_unblob(sec.at(prefix + ".w2"));
    p.b2 = matrix_unblob(sec.at(prefix + ".b2"));
    if (p.w1.size() != d_in * d1 || p.b1.size() != d1 || p.w2.size() != d1 * d || p.b2.size() != d)
        throw DimMismatch("checkpoint MLP shapes inconsistent with meta");
    return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const AdamState& state, size_t epoch) {
    std::vector<Section> sections;
    {
        uint64_t meta[7] = {static_cast<uint64_t>(params.user_mlp.d_in),
                            static_cast<uint64_t>(params.user_mlp.d_hidden),
                            static_cast<uint64_t>(params.user_mlp.d_out),
                            static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(state.t),
                            0,
                            0};
        Section s;
        s.name = "meta";
        s.bytes.assign(reinterpret_cast<const char*>(meta), sizeof(meta));
        sections.push_back(std::move(s));
    }
    append_mlp_sections(sections, "user", params.user_mlp);
    append_mlp_sections(sections, "item", params.item_mlp);
    if (state.m_user.n_params() > 0) {
        append_mlp_sections(sections, "adam.m_user", state.m_user);
        append_mlp_sections(sections, "adam.v_user", state.v_user);
        append_mlp_sections(sections, "adam.m_item", state.m_item);
        append_mlp_sections(sections, "adam.v_item", state.v_item);
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out.write("CKP1", 4);
    uint32_t count = static_cast<uint32_t>(sections.size());
    out.write(reinterpret_cast<const char*>(&count), 4);
    // section table: name_len, name, byte_len
    for (const Section& s : sections) {
        uint32_t nl = static_cast<uint32_t>(s.name.size());
        uint64_t bl = s.bytes.size();
        out.write(reinterpret_cast<const char*>(&nl), 4);
        out.write(s.name.data(), nl);
        out.write(reinterpret_cast<const char*>(&bl), 8);
    }
    for (const Section& s : sections) out.write(s.bytes.data(), static_cast<std::streamsize>(s.bytes.size()));
    if (!out) throw IoError("short write: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    if (!in || std::memcmp(magic, "CKP1", 4) != 0) throw BadMagic("not a checkpoint file");

    std::vector<std::pair<std::string, uint64_t>> table;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t nl = 0;
        in.read(reinterpret_cast<char*>(&nl), 4);
        std::string name(nl, '\0');
        in.read(name.data(), nl);
        uint64_t bl = 0;
        in.read(reinterpret_cast<char*>(&bl), 8);
        if (!in) throw BadMagic("truncated checkpoint section table");
        table.emplace_back(std::move(name), bl);
    }
    std::unordered_map<std::string, std::string> sec;
    for (auto& [name, len] : table) {
        std::string bytes(len, '\0');
        in.read(bytes.data(), static_cast<std::streamsize>(len));
        if (!in) throw BadMagic("truncated checkpoint payload");
        sec.emplace(name, std::move(bytes));
    }

    const std::string& meta_bytes = sec.at("meta");
    if (meta_bytes.size() != 7 * sizeof(uint64_t)) throw DimMismatch("bad checkpoint meta section");
    uint64_t meta[7];
    std::memcpy(meta, meta_bytes.data(), sizeof(meta));
    const size_t d_in = meta[0], d1 = meta[1], d = meta[2];

    Checkpoint ck;
    ck.epoch = meta[3];
    ck.params.user_mlp = read_mlp_sections(sec, "user", d_in, d1, d);
    ck.params.item_mlp = read_mlp_sections(sec, "item", d_in, d1, d);
    ck.state.t = meta[4];
    if (sec.count("adam.m_user.w1")) {
        ck.state.m_user = read_mlp_sections(sec, "adam.m_user", d_in, d1, d);
        ck.state.v_user = read_mlp_sections(sec, "adam.v_user", d_in, d1, d);
        ck.state.m_item = read_mlp_sections(sec, "adam.m_item", d_in, d1, d);
        ck.state.v_item = read_mlp_sections(sec, "adam.v_item", d_in, d1, d);
    }
    return ck;
}

}  // namespace mllmrec::model
