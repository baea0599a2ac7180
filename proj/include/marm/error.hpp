#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace marm {

// Raised when a caller breaks a documented precondition (shape mismatch,
// invalid configuration, ...). These are programming errors, not data errors.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Raised on malformed or inconsistent bitstreams. `kind()` lets callers
// distinguish the failure without parsing the message.
class BitstreamError : public std::runtime_error {
 public:
  enum class Kind {
    truncated,
    bad_magic,
    bad_version,
    bad_checksum,
    bad_length,
    bad_header,
    corrupt_payload,
    out_of_range_symbol,
    model_mismatch,
  };

  BitstreamError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline std::string_view to_string(BitstreamError::Kind k) {
  switch (k) {
    case BitstreamError::Kind::truncated: return "truncated";
    case BitstreamError::Kind::bad_magic: return "bad_magic";
    case BitstreamError::Kind::bad_version: return "bad_version";
    case BitstreamError::Kind::bad_checksum: return "bad_checksum";
    case BitstreamError::Kind::bad_length: return "bad_length";
    case BitstreamError::Kind::bad_header: return "bad_header";
    case BitstreamError::Kind::corrupt_payload: return "corrupt_payload";
    case BitstreamError::Kind::out_of_range_symbol: return "out_of_range_symbol";
    case BitstreamError::Kind::model_mismatch: return "model_mismatch";
  }
  return "unknown";
}

// Raised by the encoder when optimization diverges.
class EncodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void contract_fail(Args&&... args) {
  throw ContractViolation(detail::concat(std::forward<Args>(args)...));
}

#define MARM_REQUIRE(cond, ...)                 \
  do {                                          \
    if (!(cond)) ::marm::contract_fail(__VA_ARGS__); \
  } while (0)

}  // namespace marm
