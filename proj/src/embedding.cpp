#include "mllmrec/embedding.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "mllmrec/errors.hpp"
#include "mllmrec/rng.hpp"

namespace mllmrec::embed {

bool EmbeddingMatrix::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

uint64_t EmbeddingMatrix::checksum() const {
    uint64_t h = fnv1a64(&rows, sizeof(rows));
    h = fnv1a64(&dim, sizeof(dim), h);
    return fnv1a64(data.data(), data.size() * sizeof(double), h);
}

void StubEncoder::encode(std::string_view text, double* out) {
    Rng rng(mix64(fnv1a64(text), seed_));
    double norm_sq = 0.0;
    for (size_t j = 0; j < dim_; ++j) {
        out[j] = rng.normal();
        norm_sq += out[j] * out[j];
    }
    double inv = 1.0 / std::sqrt(norm_sq);
    for (size_t j = 0; j < dim_; ++j) out[j] *= inv;
}

EmbeddingMatrix encode_texts(TextEncoder& encoder, const std::vector<std::string>& texts) {
    for (size_t i = 0; i < texts.size(); ++i)
        if (texts[i].empty())
            throw std::invalid_argument("encode_texts: empty text at index " + std::to_string(i));

    EmbeddingMatrix m(texts.size(), encoder.dim());
    std::exception_ptr failure;
    size_t failure_index = 0;
#pragma omp parallel for schedule(dynamic, 64)
    for (long long i = 0; i < static_cast<long long>(texts.size()); ++i) {
        try {
            encoder.encode(texts[static_cast<size_t>(i)], m.row(static_cast<size_t>(i)));
        } catch (...) {
#pragma omp critical
            if (!failure) {
                failure = std::current_exception();
                failure_index = static_cast<size_t>(i);
            }
        }
    }
    if (failure) {
        try {
            std::rethrow_exception(failure);
        } catch (const std::exception& e) {
            throw EncoderFailure(failure_index, e.what());
        }
    }
    return m;
}

namespace {
constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
}

void store_write(const EmbeddingMatrix& m, const std::filesystem::path& path, Precision precision) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write embedding store: " + path.string());
    out.write(kMagic, 4);
    uint32_t rows = static_cast<uint32_t>(m.rows), dim = static_cast<uint32_t>(m.dim);
    uint8_t prec = static_cast<uint8_t>(precision);
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    out.write(reinterpret_cast<const char*>(&prec), 1);
    if (precision == Precision::f64) {
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    } else {
        std::vector<float> buf(m.data.begin(), m.data.end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write: " + path.string());
}

EmbeddingMatrix store_read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embedding store: " + path.string());
    char magic[4];
    uint32_t rows = 0, dim = 0;
    uint8_t prec = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&dim), 4);
    in.read(reinterpret_cast<char*>(&prec), 1);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw BadMagic("not an embedding store: " + path.string());
    if (prec > 1) throw BadMagic("unknown precision flag");

    EmbeddingMatrix m(rows, dim);
    size_t count = static_cast<size_t>(rows) * dim;
    if (prec == static_cast<uint8_t>(Precision::f64)) {
        in.read(reinterpret_cast<char*>(m.data.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
    } else {
        std::vector<float> buf(count);
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        for (size_t i = 0; i < count; ++i) m.data[i] = static_cast<double>(buf[i]);
    }
    if (static_cast<size_t>(in.gcount()) != count * (prec ? sizeof(double) : sizeof(float)))
        throw DimMismatch("payload shorter than header rows x dim");
    // trailing bytes mean the header lied about the shape
    char extra;
    if (in.read(&extra, 1)) throw DimMismatch("payload longer than header rows x dim");
    return m;
}

}  // namespace mllmrec::embed
