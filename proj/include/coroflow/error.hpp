#pragma once

#include <stdexcept>
#include <string>

namespace coroflow {

/// Broad failure class; the CLI maps each one onto a process exit code.
enum class ErrorKind {
    Usage,    ///< bad arguments or configuration (exit 1)
    Data,     ///< malformed or inconsistent input data (exit 2)
    Numeric,  ///< non-finite values, failed gradient checks (exit 3)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

class FrameMismatchError : public DataError {
public:
    explicit FrameMismatchError(const std::string& what) : DataError("frame mismatch: " + what) {}
};

/// Tensor shape disagreement. `layer` is the index within a layer stack, or -1.
class ShapeError : public DataError {
public:
    ShapeError(int layer, const std::string& what)
        : DataError(layer >= 0 ? "shape mismatch at layer " + std::to_string(layer) + ": " + what
                               : "shape mismatch: " + what),
          layer_(layer) {}
    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

enum class ParseErrc {
    Io,
    BadMagic,
    BadHeaderSize,
    UnsupportedDatatype,
    UnsupportedOrientation,
    Truncated,
    MalformedXml,
    Malformed,
    UnsupportedEncoding,
    MissingElement,
    LengthMismatch,
    VersionMismatch,
    CountMismatch,
};

inline const char* to_string(ParseErrc code) {
    switch (code) {
        case ParseErrc::Io: return "io";
        case ParseErrc::BadMagic: return "bad-magic";
        case ParseErrc::BadHeaderSize: return "bad-header-size";
        case ParseErrc::UnsupportedDatatype: return "unsupported-datatype";
        case ParseErrc::UnsupportedOrientation: return "unsupported-orientation";
        case ParseErrc::Truncated: return "truncated";
        case ParseErrc::MalformedXml: return "malformed-xml";
        case ParseErrc::Malformed: return "malformed";
        case ParseErrc::UnsupportedEncoding: return "unsupported-encoding";
        case ParseErrc::MissingElement: return "missing-element";
        case ParseErrc::LengthMismatch: return "length-mismatch";
        case ParseErrc::VersionMismatch: return "version-mismatch";
        case ParseErrc::CountMismatch: return "count-mismatch";
    }
    return "unknown";
}

class ParseError : public DataError {
public:
    ParseError(ParseErrc code, const std::string& what)
        : DataError(std::string(to_string(code)) + ": " + what), code_(code) {}
    ParseErrc code() const noexcept { return code_; }

private:
    ParseErrc code_;
};

}  // namespace coroflow
