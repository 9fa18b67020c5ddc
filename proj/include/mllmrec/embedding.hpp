#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mllmrec::embed {

// Row-major dense matrix of text embeddings, 64-bit in memory.
struct EmbeddingMatrix {
    size_t rows = 0;
    size_t dim = 0;
    std::vector<double> data;

    EmbeddingMatrix() = default;
    EmbeddingMatrix(size_t r, size_t d) : rows(r), dim(d), data(r * d, 0.0) {}

    double* row(size_t r) { return data.data() + r * dim; }
    const double* row(size_t r) const { return data.data() + r * dim; }
    double& at(size_t r, size_t c) { return data[r * dim + c]; }
    double at(size_t r, size_t c) const { return data[r * dim + c]; }
    bool all_finite() const;
    uint64_t checksum() const;
};

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual size_t dim() const = 0;
    // Writes dim() doubles to out.
    virtual void encode(std::string_view text, double* out) = 0;
};

// Deterministic offline encoder: the text hash seeds a pseudo-random
// normal vector which is then L2-normalized.
class StubEncoder : public TextEncoder {
public:
    explicit StubEncoder(size_t dim = 32, uint64_t seed = 0) : dim_(dim), seed_(seed) {}
    size_t dim() const override { return dim_; }
    void encode(std::string_view text, double* out) override;

private:
    size_t dim_;
    uint64_t seed_;
};

// One row per text, in input order. Parallel over disjoint index ranges.
EmbeddingMatrix encode_texts(TextEncoder& encoder, const std::vector<std::string>& texts);

enum class Precision : uint8_t { f32 = 0, f64 = 1 };

// Binary store: magic "EMB1", u32 rows, u32 dim, u8 precision flag,
// row-major payload, all little-endian.
void store_write(const EmbeddingMatrix& m, const std::filesystem::path& path,
                 Precision precision = Precision::f64);
EmbeddingMatrix store_read(const std::filesystem::path& path);

}  // namespace mllmrec::embed
