#pragma once

#include <stdexcept>
#include <string>

namespace kcm {

/// An input object violates the contract of an operation (wrong process
/// kind, clock provenance mismatch, corrupted trajectory).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// No admissible renormalisation geometry for the given inputs.
class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration; the message starts with the field path.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& path, const std::string& what)
        : std::runtime_error(path + ": " + what), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace kcm
