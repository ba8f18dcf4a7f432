#pragma once

#include <iosfwd>

namespace kgrg {

// Exit codes: 0 success, 1 usage, 2 data or format error, 3 numeric failure.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kgrg
