#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace xbert {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed YAML, unknown key, or type mismatch in a pipeline configuration.
class ConfigError : public Error {
public:
    ConfigError(std::string key_path, const std::string& what)
        : Error(what), key_path_(std::move(key_path)) {}
    const std::string& key_path() const noexcept { return key_path_; }

private:
    std::string key_path_;
};

/// Missing corpus directory or invalid UTF-8 in a corpus file.
class IngestError : public Error {
public:
    using Error::Error;
};

class FetchError : public Error {
public:
    FetchError(const std::string& what, bool retryable) : Error(what), retryable_(retryable) {}
    /// True for transport failures and 5xx replies; false for unknown datasets.
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

class VocabError : public Error {
public:
    using Error::Error;
};

class ShardError : public Error {
public:
    using Error::Error;
};

/// Instance file I/O and decode failures. `offset` is the byte offset of the failure.
class InstanceError : public Error {
public:
    InstanceError(const std::string& what, std::uint64_t offset = 0) : Error(what), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class ScheduleError : public Error {
public:
    using Error::Error;
};

class PipelineError : public Error {
public:
    using Error::Error;
};

class CollectionError : public Error {
public:
    using Error::Error;
};

}  // namespace xbert
