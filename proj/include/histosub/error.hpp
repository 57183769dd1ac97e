#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace histosub {

/// Malformed or inconsistent input. Maps to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A statistic is undefined for the given data (zero variance, single class, ...). Exit code 3.
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure; the message carries the offending path. Exit code 4.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string join(const std::vector<std::string>& items, std::string_view sep = ", ") {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

}  // namespace histosub
