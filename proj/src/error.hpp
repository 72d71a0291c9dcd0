#pragma once

#include <stdexcept>
#include <string>

namespace traceprune {

// Error categories mirrored one-to-one by the tp_status codes of the C API.
enum class Status {
    Ok = 0,
    InvalidArgument,  // bad shapes, bad config, out-of-range values
    Io,               // file open/read/write failures
    Format,           // malformed checkpoint / container data
    State,            // operation called on an object in the wrong state
    Diverged,         // non-finite loss during training
    Internal,
};

class Error : public std::runtime_error {
  public:
    Error(Status status, const std::string& message)
        : std::runtime_error(message), status_(status) {}

    Status status() const { return status_; }

  private:
    Status status_;
};

[[noreturn]] inline void fail(Status status, const std::string& message) {
    throw Error(status, message);
}

}  // namespace traceprune
