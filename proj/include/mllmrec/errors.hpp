#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mllmrec {

// Base class for all library errors. Preconditions documented on each
// operation throw std::invalid_argument instead.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : Error {
    using Error::Error;
};

struct MalformedLine : Error {
    size_t line_no;
    explicit MalformedLine(size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_no(line) {}
};

struct EmptyAfterFilter : Error {
    using Error::Error;
};

struct BadRatios : Error {
    using Error::Error;
};

struct TransportError : Error {
    using Error::Error;
};

struct EmptyResponse : Error {
    using Error::Error;
};

struct MissingDescription : Error {
    size_t item;
    explicit MissingDescription(size_t item_index)
        : Error("item " + std::to_string(item_index) + " has no multimodal description"),
          item(item_index) {}
};

struct EncoderFailure : Error {
    size_t index;
    EncoderFailure(size_t text_index, const std::string& what)
        : Error("text " + std::to_string(text_index) + ": " + what), index(text_index) {}
};

struct BadMagic : Error {
    using Error::Error;
};

struct DimMismatch : Error {
    using Error::Error;
};

struct ZeroNormRow : Error {
    size_t index;
    explicit ZeroNormRow(size_t row)
        : Error("row " + std::to_string(row) + " has zero norm"), index(row) {}
};

struct ParseError : Error {
    size_t line_no;
    ParseError(size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_no(line) {}
};

struct ShapeMismatch : Error {
    using Error::Error;
};

struct NonFinite : Error {
    using Error::Error;
};

struct StageMissing : Error {
    std::string stage;
    explicit StageMissing(const std::string& stage_name)
        : Error("stage artifact missing: " + stage_name), stage(stage_name) {}
};

struct ChainMismatch : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace mllmrec
