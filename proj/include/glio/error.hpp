#pragma once

#include <stdexcept>
#include <string>

namespace glio {

// Error categories map onto process exit codes: usage=1, data=2, runtime=3.
enum class ErrorKind { Usage = 1, Data = 2, Runtime = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    int exit_code() const { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

inline Error usage_error(const std::string& msg) { return Error(ErrorKind::Usage, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::Data, msg); }
inline Error runtime_error(const std::string& msg) { return Error(ErrorKind::Runtime, msg); }

} // namespace glio
