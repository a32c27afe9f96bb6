#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace fedet {

// All rejected preconditions and malformed inputs surface as fedet::Error.
// The CLI maps uncaught Errors to a nonzero exit code with the diagnostic.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedet

// Streams the message only on failure; cond is evaluated exactly once.
#define FEDET_CHECK(cond, msg)                  \
  do {                                          \
    if (!(cond)) {                              \
      std::ostringstream oss_;                  \
      oss_ << msg;                              \
      throw ::fedet::Error(oss_.str());         \
    }                                           \
  } while (0)
