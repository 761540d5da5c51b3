#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace convo {

// Malformed or inconsistent input data (topic files, runs, qrels, indexes).
// The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// A string that does not match its declared format.
class ParseError : public DataError {
public:
    explicit ParseError(const std::string& what) : DataError(what) {}
};

// Completion backend failures (transport, protocol, exhausted retries).
// The CLI maps this to exit code 3.
class BackendError : public std::runtime_error {
public:
    explicit BackendError(const std::string& what) : std::runtime_error(what) {}
};

using WarnHandler = std::function<void(const std::string&)>;

// Replaces the process-wide warning sink and returns the previous one.
// The default sink writes "warning: <message>" to stderr.
WarnHandler set_warn_handler(WarnHandler handler);

void warn(const std::string& message);

}  // namespace convo
